//! Per-document quality filters, pool-level dedup and classifier thresholding,
//! and the declarative pipeline that chains them.

mod pipeline;
pub mod repetition;
mod scorer;

use std::collections::{BTreeMap, HashSet};
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Pool};
use crate::text::normalized_words;

pub use pipeline::{
    run_pipeline, run_pipeline_with_outcomes, write_stats_csv, PipelineConfig, PipelineReport,
    Scorers, Stage, StageReport,
};
pub use repetition::repetition_fractions;
pub use scorer::{DocumentScorer, HeuristicQualityScorer, WordlistScorer};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("no repetition threshold for granularity `{0}`")]
    MissingThreshold(String),
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),
    #[error("pipeline has no stages")]
    EmptyPipeline,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub const DEFAULT_STOPWORDS: [&str; 8] = ["the", "be", "to", "of", "and", "that", "have", "with"];

/// How stop-word hits are counted against `stopword_min_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopwordMode {
    /// Every occurrence counts.
    #[default]
    Total,
    /// Each list word counts at most once.
    Distinct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub english_threshold: f64,
    pub stopword_list: Vec<String>,
    pub stopword_min_count: usize,
    pub stopword_mode: StopwordMode,
    pub repetition_thresholds: BTreeMap<String, f64>,
    pub quality_keep_fraction: f64,
    pub dedup_enabled: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            english_threshold: 0.5,
            stopword_list: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
            stopword_min_count: 2,
            stopword_mode: StopwordMode::Total,
            repetition_thresholds: repetition::gopher_thresholds(),
            // 2.1% of the pool out of the 13% RefinedWeb keeps.
            quality_keep_fraction: 0.16,
            dedup_enabled: true,
        }
    }
}

impl FilterConfig {
    pub const PROFILES: [&'static str; 3] = ["gopher", "strict", "lenient"];

    /// Named threshold profiles. `gopher` is the default.
    pub fn profile(name: &str) -> Result<Self, FilterError> {
        let base = FilterConfig::default();
        match name {
            "gopher" | "default" => Ok(base),
            "strict" => Ok(FilterConfig {
                english_threshold: 0.65,
                repetition_thresholds: scale_thresholds(&base.repetition_thresholds, 0.75),
                quality_keep_fraction: 0.10,
                ..base
            }),
            "lenient" => Ok(FilterConfig {
                english_threshold: 0.35,
                stopword_min_count: 1,
                repetition_thresholds: scale_thresholds(&base.repetition_thresholds, 1.5),
                quality_keep_fraction: 0.30,
                ..base
            }),
            other => Err(FilterError::UnknownProfile(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        let bad = |msg: String| Err(FilterError::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.english_threshold) {
            return bad(format!("english_threshold {} outside [0,1]", self.english_threshold));
        }
        if self.stopword_list.is_empty() {
            return bad("stopword_list is empty".into());
        }
        for (name, t) in &self.repetition_thresholds {
            if !(0.0..=1.0).contains(t) {
                return bad(format!("repetition threshold {name}={t} outside [0,1]"));
            }
        }
        if !(self.quality_keep_fraction > 0.0 && self.quality_keep_fraction <= 1.0) {
            return bad(format!(
                "quality_keep_fraction {} outside (0,1]",
                self.quality_keep_fraction
            ));
        }
        Ok(())
    }
}

fn scale_thresholds(t: &BTreeMap<String, f64>, factor: f64) -> BTreeMap<String, f64> {
    t.iter()
        .map(|(k, v)| (k.clone(), (v * factor).min(1.0)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub doc_id: String,
    pub kept: bool,
    pub failed_rules: Vec<String>,
    pub scores: BTreeMap<String, f64>,
}

impl FilterOutcome {
    fn new(doc_id: &str, failed_rules: Vec<String>, scores: BTreeMap<String, f64>) -> Self {
        FilterOutcome {
            doc_id: doc_id.to_string(),
            kept: failed_rules.is_empty(),
            failed_rules,
            scores,
        }
    }

    fn single(doc: &Document, rule: &str, score: f64, pass: bool) -> Self {
        let failed = if pass { vec![] } else { vec![rule.to_string()] };
        FilterOutcome::new(&doc.id, failed, BTreeMap::from([(rule.to_string(), score)]))
    }
}

/// Raw counts behind a [`FilterStats`]. Merging is associative and commutative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub docs_in: u64,
    pub docs_kept: u64,
    pub tokens_in: u64,
    pub tokens_kept: u64,
}

impl Tally {
    pub fn of(doc: &Document, kept: bool) -> Self {
        Tally {
            docs_in: 1,
            docs_kept: u64::from(kept),
            tokens_in: doc.token_count,
            tokens_kept: if kept { doc.token_count } else { 0 },
        }
    }
}

impl Add for Tally {
    type Output = Tally;

    fn add(self, o: Tally) -> Tally {
        Tally {
            docs_in: self.docs_in + o.docs_in,
            docs_kept: self.docs_kept + o.docs_kept,
            tokens_in: self.tokens_in + o.tokens_in,
            tokens_kept: self.tokens_kept + o.tokens_kept,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub docs_in: u64,
    pub docs_kept: u64,
    pub tokens_in: u64,
    pub tokens_kept: u64,
    pub retention_docs: f64,
    pub retention_tokens: f64,
}

impl From<Tally> for FilterStats {
    fn from(t: Tally) -> Self {
        let ratio = |kept: u64, total: u64| {
            if total == 0 {
                1.0
            } else {
                kept as f64 / total as f64
            }
        };
        FilterStats {
            docs_in: t.docs_in,
            docs_kept: t.docs_kept,
            tokens_in: t.tokens_in,
            tokens_kept: t.tokens_kept,
            retention_docs: ratio(t.docs_kept, t.docs_in),
            retention_tokens: ratio(t.tokens_kept, t.tokens_in),
        }
    }
}

impl FilterStats {
    pub fn between(before: &Pool, after: &Pool) -> Self {
        Tally {
            docs_in: before.len() as u64,
            docs_kept: after.len() as u64,
            tokens_in: before.total_tokens,
            tokens_kept: after.total_tokens,
        }
        .into()
    }
}

pub const RULE_STOPWORDS: &str = "stopwords";
pub const RULE_ENGLISH: &str = "english";
pub const RULE_WORD_COUNT: &str = "word_count";
pub const RULE_MEAN_WORD_LENGTH: &str = "mean_word_length";

pub fn stopword_hits(text: &str, cfg: &FilterConfig) -> usize {
    let list: HashSet<String> = cfg.stopword_list.iter().map(|s| s.to_lowercase()).collect();
    let hits = normalized_words(text).filter(|w| list.contains(w));
    match cfg.stopword_mode {
        StopwordMode::Total => hits.count(),
        StopwordMode::Distinct => hits.collect::<HashSet<_>>().len(),
    }
}

pub fn stopword_filter(doc: &Document, cfg: &FilterConfig) -> FilterOutcome {
    let hits = stopword_hits(&doc.text, cfg);
    FilterOutcome::single(doc, RULE_STOPWORDS, hits as f64, hits >= cfg.stopword_min_count)
}

pub fn english_filter(doc: &Document, scorer: &dyn DocumentScorer, threshold: f64) -> FilterOutcome {
    let score = scorer.score(&doc.text);
    FilterOutcome::single(doc, RULE_ENGLISH, score, score >= threshold)
}

/// Drops documents with any duplicate fraction above its threshold.
pub fn repetition_filter(doc: &Document, cfg: &FilterConfig) -> Result<FilterOutcome, FilterError> {
    let fractions = repetition_fractions(&doc.text);
    let mut failed = Vec::new();
    for (name, value) in &fractions {
        let threshold = cfg
            .repetition_thresholds
            .get(name)
            .ok_or_else(|| FilterError::MissingThreshold(name.clone()))?;
        if value > threshold {
            failed.push(name.clone());
        }
    }
    Ok(FilterOutcome::new(&doc.id, failed, fractions))
}

/// Keeps documents whose whitespace word count lies in `[min, max]`.
pub fn word_count_filter(doc: &Document, min: usize, max: usize) -> FilterOutcome {
    let n = doc.text.split_whitespace().count();
    FilterOutcome::single(doc, RULE_WORD_COUNT, n as f64, (min..=max).contains(&n))
}

/// Keeps documents whose mean word length (characters) lies in `[min, max]`.
pub fn mean_word_length_filter(doc: &Document, min: f64, max: f64) -> FilterOutcome {
    let words: Vec<&str> = doc.text.split_whitespace().collect();
    let mean = if words.is_empty() {
        0.0
    } else {
        words.iter().map(|w| w.chars().count()).sum::<usize>() as f64 / words.len() as f64
    };
    FilterOutcome::single(doc, RULE_MEAN_WORD_LENGTH, mean, mean >= min && mean <= max)
}

/// Keeps the first occurrence of each text after trimming outer whitespace.
pub fn exact_dedup(pool: &Pool) -> Pool {
    let mut seen = HashSet::new();
    let docs = pool
        .documents
        .iter()
        .filter(|d| seen.insert(d.text.trim()))
        .cloned()
        .collect();
    Pool::from_documents(docs, pool.seed, pool.label.clone())
}

/// Number of documents `quality_filter` keeps out of `n`.
pub fn quality_keep_count(n: usize, keep_fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    // Tolerance absorbs products like 0.7 * 10 = 7.000000000000001.
    let k = (keep_fraction * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

/// Keeps the `ceil(keep_fraction * n)` best-scoring documents (ties to the lower
/// id), preserving their pool order.
pub fn quality_filter(
    pool: &Pool,
    scorer: &dyn DocumentScorer,
    keep_fraction: f64,
) -> Result<Pool, FilterError> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(FilterError::InvalidConfig(format!(
            "keep_fraction {keep_fraction} outside (0,1]"
        )));
    }
    let scores: Vec<f64> = pool.documents.iter().map(|d| scorer.score(&d.text)).collect();
    let keep = quality_keep_count(pool.len(), keep_fraction);

    let mut ranked: Vec<usize> = (0..pool.len()).collect();
    ranked.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| pool.documents[a].id.cmp(&pool.documents[b].id))
    });
    let mut selected = vec![false; pool.len()];
    for &i in &ranked[..keep] {
        selected[i] = true;
    }
    let docs = pool
        .documents
        .iter()
        .zip(&selected)
        .filter(|(_, s)| **s)
        .map(|(d, _)| d.clone())
        .collect();
    Ok(Pool::from_documents(docs, pool.seed, pool.label.clone()))
}
