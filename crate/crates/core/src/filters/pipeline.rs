use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    english_filter, exact_dedup, mean_word_length_filter, quality_filter, repetition_filter,
    stopword_filter, word_count_filter, DocumentScorer, FilterConfig, FilterError, FilterOutcome,
    FilterStats, HeuristicQualityScorer, Tally, WordlistScorer,
};
use crate::corpus::{Document, Pool};

/// One step of a filtering pipeline. Thresholds not carried by the stage come
/// from the pipeline's [`FilterConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stage {
    English {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
    },
    Repetition,
    Stopword,
    WordCount {
        min: usize,
        max: usize,
    },
    MeanWordLength {
        min: f64,
        max: f64,
    },
    Dedup,
    Quality {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        keep_fraction: Option<f64>,
    },
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::English { .. } => "english",
            Stage::Repetition => "repetition",
            Stage::Stopword => "stopword",
            Stage::WordCount { .. } => "word_count",
            Stage::MeanWordLength { .. } => "mean_word_length",
            Stage::Dedup => "dedup",
            Stage::Quality { .. } => "quality",
        }
    }

    fn is_per_document(&self) -> bool {
        !matches!(self, Stage::Dedup | Stage::Quality { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub name: String,
    /// Threshold profile used when `filter` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterConfig>,
    pub stages: Vec<Stage>,
}

impl PipelineConfig {
    pub const PRESETS: [&'static str; 5] =
        ["english", "repetition", "stopword", "refinedweb", "dclm_baseline"];

    /// The five filter families: three single heuristics, the RefinedWeb-style
    /// heuristic stack, and that stack followed by dedup and quality selection.
    pub fn preset(name: &str) -> Result<Self, FilterError> {
        let refinedweb = vec![
            Stage::WordCount { min: 50, max: 100_000 },
            Stage::MeanWordLength { min: 3.0, max: 10.0 },
            Stage::English { threshold: None },
            Stage::Repetition,
            Stage::Stopword,
        ];
        let stages = match name {
            "english" => vec![Stage::English { threshold: None }],
            "repetition" => vec![Stage::Repetition],
            "stopword" => vec![Stage::Stopword],
            "refinedweb" => refinedweb,
            "dclm_baseline" => {
                let mut s = refinedweb;
                s.push(Stage::Dedup);
                s.push(Stage::Quality { keep_fraction: None });
                s
            }
            other => return Err(FilterError::UnknownProfile(other.to_string())),
        };
        Ok(PipelineConfig {
            name: name.to_string(),
            profile: None,
            filter: None,
            stages,
        })
    }

    pub fn filter_config(&self) -> Result<FilterConfig, FilterError> {
        let cfg = match (&self.filter, &self.profile) {
            (Some(f), _) => f.clone(),
            (None, Some(p)) => FilterConfig::profile(p)?,
            (None, None) => FilterConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Scorers used by the `english` and `quality` stages.
pub struct Scorers {
    pub english: Box<dyn DocumentScorer>,
    pub quality: Box<dyn DocumentScorer>,
}

impl Default for Scorers {
    fn default() -> Self {
        Scorers {
            english: Box::new(WordlistScorer::english()),
            quality: Box::new(HeuristicQualityScorer::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub stats: FilterStats,
    /// Relative to the pipeline input.
    pub cumulative: FilterStats,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub outcomes: Vec<FilterOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub pipeline: String,
    pub stage_order: Vec<String>,
    pub stages: Vec<StageReport>,
    #[serde(skip)]
    pub pool: Pool,
}

pub fn run_pipeline(
    pool: &Pool,
    config: &PipelineConfig,
    scorers: &Scorers,
) -> Result<PipelineReport, FilterError> {
    run(pool, config, scorers, false)
}

/// Like [`run_pipeline`] but also returns every per-document verdict.
pub fn run_pipeline_with_outcomes(
    pool: &Pool,
    config: &PipelineConfig,
    scorers: &Scorers,
) -> Result<PipelineReport, FilterError> {
    run(pool, config, scorers, true)
}

fn run(
    pool: &Pool,
    config: &PipelineConfig,
    scorers: &Scorers,
    keep_outcomes: bool,
) -> Result<PipelineReport, FilterError> {
    if config.stages.is_empty() {
        return Err(FilterError::EmptyPipeline);
    }
    let cfg = config.filter_config()?;
    let mut current = pool.clone();
    let mut reports = Vec::with_capacity(config.stages.len());

    for stage in &config.stages {
        let (next, stats, outcomes) = if stage.is_per_document() {
            let outcomes: Vec<FilterOutcome> = current
                .documents
                .par_iter()
                .map(|doc| evaluate(stage, doc, &cfg, scorers))
                .collect::<Result<_, _>>()?;
            let tally = current
                .documents
                .par_iter()
                .zip(outcomes.par_iter())
                .map(|(d, o)| Tally::of(d, o.kept))
                .reduce(Tally::default, |a, b| a + b);
            let kept: Vec<Document> = current
                .documents
                .iter()
                .zip(&outcomes)
                .filter(|(_, o)| o.kept)
                .map(|(d, _)| d.clone())
                .collect();
            let next = Pool::from_documents(kept, current.seed, current.label.clone());
            (next, FilterStats::from(tally), outcomes)
        } else {
            let next = match stage {
                Stage::Dedup if cfg.dedup_enabled => exact_dedup(&current),
                Stage::Dedup => current.clone(),
                Stage::Quality { keep_fraction } => quality_filter(
                    &current,
                    scorers.quality.as_ref(),
                    keep_fraction.unwrap_or(cfg.quality_keep_fraction),
                )?,
                _ => unreachable!("per-document stage"),
            };
            let stats = FilterStats::between(&current, &next);
            (next, stats, Vec::new())
        };
        reports.push(StageReport {
            stage: stage.name().to_string(),
            stats,
            cumulative: FilterStats::between(pool, &next),
            outcomes: if keep_outcomes { outcomes } else { Vec::new() },
        });
        current = next;
    }

    let mut out = current;
    out.label = format!("{}|{}", pool.label, config.name);
    Ok(PipelineReport {
        pipeline: config.name.clone(),
        stage_order: config.stages.iter().map(|s| s.name().to_string()).collect(),
        stages: reports,
        pool: out,
    })
}

fn evaluate(
    stage: &Stage,
    doc: &Document,
    cfg: &FilterConfig,
    scorers: &Scorers,
) -> Result<FilterOutcome, FilterError> {
    Ok(match stage {
        Stage::English { threshold } => english_filter(
            doc,
            scorers.english.as_ref(),
            threshold.unwrap_or(cfg.english_threshold),
        ),
        Stage::Repetition => repetition_filter(doc, cfg)?,
        Stage::Stopword => stopword_filter(doc, cfg),
        Stage::WordCount { min, max } => word_count_filter(doc, *min, *max),
        Stage::MeanWordLength { min, max } => mean_word_length_filter(doc, *min, *max),
        Stage::Dedup | Stage::Quality { .. } => unreachable!("pool-level stage"),
    })
}

/// Writes one row per stage followed by a `total` row for the whole pipeline.
pub fn write_stats_csv<W: Write>(report: &PipelineReport, writer: W) -> Result<(), FilterError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "stage",
        "docs_in",
        "docs_kept",
        "tokens_in",
        "tokens_kept",
        "retention_docs",
        "retention_tokens",
    ])?;
    let row = |w: &mut csv::Writer<W>, name: &str, s: &FilterStats| {
        w.write_record([
            name.to_string(),
            s.docs_in.to_string(),
            s.docs_kept.to_string(),
            s.tokens_in.to_string(),
            s.tokens_kept.to_string(),
            s.retention_docs.to_string(),
            s.retention_tokens.to_string(),
        ])
    };
    for st in &report.stages {
        row(&mut w, &st.stage, &st.stats)?;
    }
    if let Some(last) = report.stages.last() {
        row(&mut w, "total", &last.cumulative)?;
    }
    w.flush()?;
    Ok(())
}
