//! Training-run records: ingestion, validation, compute and epoch accounting,
//! best-checkpoint losses and positional loss slices.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_BATCH_TOKENS: u64 = 1 << 19;
pub const DEFAULT_CONTEXT_LENGTH: usize = 1024;

pub const NON_EMBEDDING_FORMULA: &str =
    "layers*(4*hidden_dim^2 + 3*hidden_dim*ffn_dim) + (2*layers + 1)*hidden_dim";

#[derive(Debug, Error)]
pub enum RunlogError {
    #[error("invalid model config `{name}`: {reason}")]
    InvalidConfig { name: String, reason: String },
    #[error("invalid run record `{label}`: {reason}")]
    InvalidRecord { label: String, reason: String },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("train_tokens must be positive")]
    ZeroTrainTokens,
    #[error("pool_tokens must be positive")]
    ZeroPoolTokens,
    #[error("eval point at {tokens_seen} tokens has no loss for eval set `{eval_set}`")]
    MissingEvalSet { tokens_seen: u64, eval_set: String },
    #[error("no eval points")]
    NoEvalPoints,
    #[error("no eval sets requested")]
    NoEvalSets,
    #[error("no records")]
    NoRecords,
    #[error("slice length {t} outside 1..={context_length}")]
    SliceOutOfRange { t: usize, context_length: usize },
    #[error("invalid eval slice: {0}")]
    InvalidSlice(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub hidden_dim: u64,
    pub layers: u64,
    pub heads: u64,
    pub head_dim: u64,
    pub ffn_dim: u64,
    pub vocab_size: u64,
    pub total_params: u64,
    pub non_embedding_params: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), RunlogError> {
        let bad = |reason: String| {
            Err(RunlogError::InvalidConfig {
                name: self.name.clone(),
                reason,
            })
        };
        if self.hidden_dim != self.heads * self.head_dim {
            return bad(format!(
                "hidden_dim {} != heads {} x head_dim {}",
                self.hidden_dim, self.heads, self.head_dim
            ));
        }
        if self.total_params == 0 || self.non_embedding_params == 0 {
            return bad("parameter counts must be positive".into());
        }
        if self.non_embedding_params > self.total_params {
            return bad("non_embedding_params exceeds total_params".into());
        }
        Ok(())
    }
}

pub fn non_embedding_params(cfg: &ModelConfig) -> Result<u64, RunlogError> {
    let (h, l, f) = (cfg.hidden_dim, cfg.layers, cfg.ffn_dim);
    if h == 0 || l == 0 || f == 0 {
        return Err(RunlogError::InvalidConfig {
            name: cfg.name.clone(),
            reason: "hidden_dim, layers and ffn_dim must be positive".into(),
        });
    }
    Ok(l * (4 * h * h + 3 * h * f) + (2 * l + 1) * h)
}

/// Bundled architecture table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    #[serde(flatten)]
    pub config: ModelConfig,
    pub learning_rate: f64,
}

const MODEL_CONFIGS: &str = include_str!("../data/model_configs.json");

/// The five bundled architectures (15M to 7B).
pub fn reference_models() -> Vec<ReferenceModel> {
    serde_json::from_str(MODEL_CONFIGS).expect("bundled model configs parse")
}

pub fn reference_model(name: &str) -> Option<ModelConfig> {
    reference_models()
        .into_iter()
        .map(|m| m.config)
        .find(|c| c.name.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub tokens_seen: u64,
    pub losses: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmarks: Option<BTreeMap<String, f64>>,
}

impl EvalPoint {
    pub fn mean_loss(&self, eval_sets: &[String]) -> Result<f64, RunlogError> {
        if eval_sets.is_empty() {
            return Err(RunlogError::NoEvalSets);
        }
        let mut sum = 0.0;
        for set in eval_sets {
            sum += *self
                .losses
                .get(set)
                .ok_or_else(|| RunlogError::MissingEvalSet {
                    tokens_seen: self.tokens_seen,
                    eval_set: set.clone(),
                })?;
        }
        Ok(sum / eval_sets.len() as f64)
    }
}

fn default_batch_tokens() -> u64 {
    DEFAULT_BATCH_TOKENS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset_label: String,
    pub model: ModelConfig,
    pub train_tokens: u64,
    pub pool_tokens: u64,
    #[serde(default = "default_batch_tokens")]
    pub batch_tokens: u64,
    pub eval_points: Vec<EvalPoint>,
    pub weight_decay: f64,
    pub learning_rate: f64,
}

impl RunRecord {
    pub fn validate(&self) -> Result<(), RunlogError> {
        let bad = |reason: String| {
            Err(RunlogError::InvalidRecord {
                label: self.dataset_label.clone(),
                reason,
            })
        };
        if let Err(RunlogError::InvalidConfig { reason, .. }) = self.model.validate() {
            return bad(format!("model: {reason}"));
        }
        if self
            .eval_points
            .windows(2)
            .any(|w| w[0].tokens_seen > w[1].tokens_seen)
        {
            return bad("eval_points not sorted by tokens_seen".into());
        }
        for p in &self.eval_points {
            if let Some((set, v)) = p.losses.iter().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
                return bad(format!("non-positive loss {v} for `{set}` at {} tokens", p.tokens_seen));
            }
        }
        if let Some(last) = self.eval_points.last() {
            if last.tokens_seen > self.train_tokens {
                return bad(format!(
                    "eval at {} tokens exceeds train_tokens {}",
                    last.tokens_seen, self.train_tokens
                ));
            }
        }
        Ok(())
    }

    /// Eval sets present at every eval point.
    pub fn common_eval_sets(&self) -> Vec<String> {
        let mut iter = self.eval_points.iter();
        let Some(first) = iter.next() else {
            return Vec::new();
        };
        let mut sets: Vec<String> = first.losses.keys().cloned().collect();
        for p in iter {
            sets.retain(|s| p.losses.contains_key(s));
        }
        sets
    }
}

pub fn compute_flops(record: &RunRecord) -> Result<f64, RunlogError> {
    if record.train_tokens == 0 {
        return Err(RunlogError::ZeroTrainTokens);
    }
    // Exact integer product, rounded once.
    let nm = u128::from(record.train_tokens) * u128::from(record.model.total_params);
    Ok(nm.checked_mul(6).map_or(nm as f64 * 6.0, |f| f as f64))
}

pub fn epochs(record: &RunRecord) -> Result<f64, RunlogError> {
    if record.pool_tokens == 0 {
        return Err(RunlogError::ZeroPoolTokens);
    }
    Ok(div_rounded(record.train_tokens, record.pool_tokens))
}

/// `a / b` rounded once to the nearest `f64`, ties to even.
fn div_rounded(a: u64, b: u64) -> f64 {
    const EXACT: u64 = 1 << 53;
    let q = a as f64 / b as f64;
    if a <= EXACT && b <= EXACT {
        return q;
    }
    // Each operand conversion and the division round once: within 3 ulps.
    let bits = q.to_bits();
    let candidates = (bits.saturating_sub(3)..=bits + 3).map(f64::from_bits);
    let mut best = q;
    let mut best_err: Option<(u128, i32)> = None;
    for c in candidates.filter(|c| c.is_finite() && *c >= 0.0) {
        let Some(err) = scaled_error(c, a, b) else { continue };
        let better = match best_err {
            None => true,
            Some(e) => match cmp_scaled(err, e) {
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Equal => c.to_bits() % 2 == 0,
                std::cmp::Ordering::Greater => false,
            },
        };
        if better {
            best = c;
            best_err = Some(err);
        }
    }
    best
}

/// `|c * b - a|` as `(numerator, shift)` meaning `numerator / 2^shift`.
fn scaled_error(c: f64, a: u64, b: u64) -> Option<(u128, i32)> {
    if c == 0.0 {
        return Some((u128::from(a), 0));
    }
    let bits = c.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i32;
    let (mant, exp) = if raw_exp == 0 {
        (bits & ((1 << 52) - 1), -1074)
    } else {
        ((bits & ((1 << 52) - 1)) | (1 << 52), raw_exp - 1075)
    };
    let prod = u128::from(mant).checked_mul(u128::from(b))?;
    if exp >= 0 {
        let lhs = prod.checked_shl(exp as u32).filter(|v| v >> exp == prod)?;
        Some((lhs.abs_diff(u128::from(a)), 0))
    } else {
        let shift = (-exp) as u32;
        let rhs = u128::from(a).checked_shl(shift).filter(|v| v >> shift == u128::from(a))?;
        Some((prod.abs_diff(rhs), -exp))
    }
}

fn cmp_scaled(x: (u128, i32), y: (u128, i32)) -> std::cmp::Ordering {
    let s = x.1.max(y.1);
    let lift = |(n, k): (u128, i32)| n.checked_shl((s - k) as u32).filter(|v| v >> (s - k) == n);
    match (lift(x), lift(y)) {
        (Some(a), Some(b)) => a.cmp(&b),
        (None, _) => std::cmp::Ordering::Greater,
        (_, None) => std::cmp::Ordering::Less,
    }
}

pub fn best_eval(record: &RunRecord, eval_sets: &[String]) -> Result<f64, RunlogError> {
    if record.eval_points.is_empty() {
        return Err(RunlogError::NoEvalPoints);
    }
    let mut best = f64::INFINITY;
    for p in &record.eval_points {
        best = best.min(p.mean_loss(eval_sets)?);
    }
    Ok(best)
}

/// Best loss over every record's best checkpoint.
pub fn best_achievable(records: &[RunRecord], eval_sets: &[String]) -> Result<f64, RunlogError> {
    if records.is_empty() {
        return Err(RunlogError::NoRecords);
    }
    let mut best = f64::INFINITY;
    for r in records {
        best = best.min(best_eval(r, eval_sets)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSlice {
    pub position_losses: Vec<f64>,
    #[serde(default = "default_context_length")]
    pub context_length: usize,
}

fn default_context_length() -> usize {
    DEFAULT_CONTEXT_LENGTH
}

impl EvalSlice {
    pub fn new(position_losses: Vec<f64>) -> Result<Self, RunlogError> {
        let s = EvalSlice {
            context_length: position_losses.len(),
            position_losses,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), RunlogError> {
        if self.position_losses.len() != self.context_length {
            return Err(RunlogError::InvalidSlice(format!(
                "{} losses for context length {}",
                self.position_losses.len(),
                self.context_length
            )));
        }
        if self.position_losses.iter().any(|v| !(*v >= 0.0)) {
            return Err(RunlogError::InvalidSlice("negative or NaN loss".into()));
        }
        Ok(())
    }
}

/// Mean loss over the first `t` context positions.
pub fn slice_loss(slice: &EvalSlice, t: usize) -> Result<f64, RunlogError> {
    slice.validate()?;
    if t == 0 || t > slice.context_length {
        return Err(RunlogError::SliceOutOfRange {
            t,
            context_length: slice.context_length,
        });
    }
    Ok(slice.position_losses[..t].iter().sum::<f64>() / t as f64)
}

fn parse_record(path: &Path, line_no: usize, line: &str) -> Result<RunRecord, RunlogError> {
    let malformed = |message: String| RunlogError::Malformed {
        path: path.to_path_buf(),
        line: line_no,
        message,
    };
    let record: RunRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    record.validate().map_err(|e| malformed(e.to_string()))?;
    Ok(record)
}

/// Reads and validates a JSONL file of run records. Lines are parsed in parallel;
/// the first error (by line number) is reported.
pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>, RunlogError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    lines
        .par_iter()
        .map(|(n, l)| parse_record(path, *n, l))
        .collect()
}

/// Reads several run files concurrently, concatenating in argument order.
pub fn read_runs_many(paths: &[PathBuf]) -> Result<Vec<RunRecord>, RunlogError> {
    let parts: Vec<Vec<RunRecord>> = paths
        .par_iter()
        .map(|p| read_runs(p))
        .collect::<Result<_, _>>()?;
    Ok(parts.into_iter().flatten().collect())
}

pub fn write_runs(path: &Path, records: &[RunRecord]) -> Result<(), RunlogError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Per-record summary row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub dataset_label: String,
    pub model: String,
    pub total_params: u64,
    pub train_tokens: u64,
    pub pool_tokens: u64,
    pub epochs: f64,
    pub compute_flops: f64,
    pub best_eval: f64,
}

pub fn summarize(records: &[RunRecord], eval_sets: &[String]) -> Result<Vec<RunSummary>, RunlogError> {
    records
        .iter()
        .map(|r| {
            Ok(RunSummary {
                dataset_label: r.dataset_label.clone(),
                model: r.model.name.clone(),
                total_params: r.model.total_params,
                train_tokens: r.train_tokens,
                pool_tokens: r.pool_tokens,
                epochs: epochs(r)?,
                compute_flops: compute_flops(r)?,
                best_eval: best_eval(r, eval_sets)?,
            })
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[RunSummary], writer: W) -> Result<(), RunlogError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
