//! Pareto frontiers, power-law loss fits, filter-vs-pool crossing points and
//! compute-threshold laws.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::runlog::{self, ModelConfig, RunRecord, RunlogError};

/// Crossings beyond this many epochs are flagged as extreme.
pub const EXTREME_EPOCHS: f64 = 121.6;
pub const DEFAULT_TOKENS_PER_PARAM: f64 = 600.0;
pub const DEFAULT_EPOCHS: f64 = 4.0;
pub const C_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("loss curve is not decaying")]
    NotDecaying,
    #[error("only {finite} finite crossings; NEVER at pool sizes {never:?}")]
    TooFewCrossings { finite: usize, never: Vec<u64> },
    #[error("model {model_size}: fitted curve coincides with the {epochs}-epoch line")]
    Coincident { model_size: u64, epochs: f64 },
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Runlog(#[from] RunlogError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub compute: f64,
    pub loss: f64,
    pub dataset_label: String,
    pub record_ref: u64,
}

/// Non-dominated subset sorted by compute, with loss strictly decreasing.
/// Among identical points the lowest `record_ref` is kept.
pub fn pareto_frontier(points: &[FrontierPoint]) -> Vec<FrontierPoint> {
    let mut sorted: Vec<&FrontierPoint> = points
        .iter()
        .filter(|p| p.compute > 0.0 && p.loss > 0.0 && p.compute.is_finite() && p.loss.is_finite())
        .collect();
    sorted.sort_by(|a, b| {
        a.compute
            .total_cmp(&b.compute)
            .then(a.loss.total_cmp(&b.loss))
            .then(a.record_ref.cmp(&b.record_ref))
    });
    let mut out: Vec<FrontierPoint> = Vec::new();
    for p in sorted {
        if out.last().is_none_or(|last| p.loss < last.loss) {
            out.push(p.clone());
        }
    }
    out
}

/// One point per record: total training compute against best checkpoint loss.
pub fn frontier_points(records: &[RunRecord], eval_sets: &[String]) -> Result<Vec<FrontierPoint>, ScalingError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(FrontierPoint {
                compute: runlog::compute_flops(r)?,
                loss: runlog::best_eval(r, eval_sets)?,
                dataset_label: r.dataset_label.clone(),
                record_ref: i as u64,
            })
        })
        .collect()
}

/// `L(N) = c + a * N^(-b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Coefficient of determination of `log(L - c)` against `log N`.
    pub r2: f64,
    pub n_points: usize,
    /// Set when the fitted asymptote is indistinguishable from zero.
    pub c_near_zero: bool,
}

impl PowerLawFit {
    pub fn eval(&self, n: f64) -> f64 {
        self.c + self.a * n.powf(-self.b)
    }

    /// Smallest `N` with `L(N) = target`, or `None` when the asymptote is not
    /// below the target.
    pub fn solve(&self, target: f64) -> Option<f64> {
        if self.c >= target {
            None
        } else {
            Some((self.a / (target - self.c)).powf(1.0 / self.b))
        }
    }
}

struct LineFit {
    intercept: f64,
    slope: f64,
    sse: f64,
    sst: f64,
}

impl LineFit {
    fn r2(&self) -> f64 {
        if self.sst == 0.0 {
            if self.sse == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (1.0 - self.sse / self.sst).max(0.0)
        }
    }
}

fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let sse = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    let sst = y.iter().map(|v| (v - my) * (v - my)).sum();
    LineFit {
        intercept,
        slope,
        sse,
        sst,
    }
}

fn log_fit_at(c: f64, logn: &[f64], losses: &[f64]) -> LineFit {
    let y: Vec<f64> = losses.iter().map(|l| (l - c).ln()).collect();
    fit_line(logn, &y)
}

const GRID_DECADES: f64 = 12.0;
const GRID_STEPS: usize = 1200;

/// Fits `L = c + a N^-b` by searching the asymptote `c` over `[0, min L)`:
/// a grid in `log(min L - c)` followed by golden-section refinement, with
/// `(log a, b)` solved by least squares at each candidate.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit, ScalingError> {
    if points.len() < 3 {
        return Err(ScalingError::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    if points.iter().any(|(n, l)| !(*n > 0.0 && n.is_finite() && *l > 0.0 && l.is_finite())) {
        return Err(ScalingError::InvalidInput("N and losses must be positive and finite".into()));
    }
    if points.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(ScalingError::InvalidInput("N must be strictly increasing".into()));
    }
    let first = points[0].1;
    let last = points[points.len() - 1].1;
    if first <= last {
        return Err(ScalingError::NotDecaying);
    }

    let logn: Vec<f64> = points.iter().map(|(n, _)| n.ln()).collect();
    let losses: Vec<f64> = points.iter().map(|(_, l)| *l).collect();
    let min_l = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let sse = |c: f64| log_fit_at(c, &logn, &losses).sse;

    let mut grid: Vec<f64> = (0..=GRID_STEPS)
        .map(|k| min_l - min_l * 10f64.powf(-GRID_DECADES * k as f64 / GRID_STEPS as f64))
        .collect();
    grid[0] = 0.0;
    grid.push(min_l - (min_l - grid[GRID_STEPS]) * 1e-3);
    let scores: Vec<f64> = grid.iter().map(|&c| sse(c)).collect();

    // The valley around the true asymptote can be narrower than the grid
    // spacing, so every local grid minimum is refined.
    let mut c = 0.0;
    let mut best = f64::INFINITY;
    for k in 0..grid.len() {
        let left = k == 0 || scores[k] <= scores[k - 1];
        let right = k + 1 == grid.len() || scores[k] <= scores[k + 1];
        if !(left && right) {
            continue;
        }
        let lo = grid[k.saturating_sub(1)];
        let hi = grid[(k + 1).min(grid.len() - 1)];
        for candidate in [grid[k], golden_section(&sse, lo, hi, C_TOLERANCE)] {
            let v = sse(candidate);
            if v < best {
                best = v;
                c = candidate;
            }
        }
    }

    let fit = log_fit_at(c, &logn, &losses);
    let b = -fit.slope;
    if !(b > 0.0) {
        return Err(ScalingError::NotDecaying);
    }
    Ok(PowerLawFit {
        a: fit.intercept.exp(),
        b,
        c,
        r2: fit.r2(),
        n_points: points.len(),
        c_near_zero: c <= 1e-6 * min_l,
    })
}

fn golden_section(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..400 {
        if hi - lo <= tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Crossing token count, or `NEVER` when no crossing exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimate {
    Finite(f64),
    Never,
}

impl Estimate {
    pub fn finite(self) -> Option<f64> {
        match self {
            Estimate::Finite(v) => Some(v),
            Estimate::Never => None,
        }
    }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimate::Finite(v) => write!(f, "{v}"),
            Estimate::Never => f.write_str("NEVER"),
        }
    }
}

impl Serialize for Estimate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Estimate::Finite(v) => s.serialize_f64(*v),
            Estimate::Never => s.serialize_str("NEVER"),
        }
    }
}

impl<'de> Deserialize<'de> for Estimate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Estimate::Finite(v)),
            Raw::Text(t) if t == "NEVER" => Ok(Estimate::Never),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or NEVER, got `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingPoint {
    pub model_size: u64,
    pub pool_tokens: u64,
    pub n_star_tokens: Estimate,
    pub epochs_at_cross: Estimate,
    pub observed: bool,
    pub target_loss: f64,
    pub extreme_epochs: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<PowerLawFit>,
}

impl CrossingPoint {
    fn new(model_size: u64, pool_tokens: u64, n_star: Estimate, observed: bool, target: f64, fit: Option<PowerLawFit>) -> Self {
        let epochs = match n_star {
            Estimate::Finite(n) => Estimate::Finite(n / pool_tokens as f64),
            Estimate::Never => Estimate::Never,
        };
        CrossingPoint {
            model_size,
            pool_tokens,
            n_star_tokens: n_star,
            epochs_at_cross: epochs,
            observed,
            target_loss: target,
            extreme_epochs: epochs.finite().is_some_and(|e| e > EXTREME_EPOCHS),
            fit,
        }
    }
}

/// Pool loss curve: for each `tokens_seen`, the lowest mean loss across runs.
pub fn pool_curve(runs: &[RunRecord], eval_sets: &[String]) -> Result<Vec<(u64, f64)>, ScalingError> {
    let mut best: BTreeMap<u64, f64> = BTreeMap::new();
    for r in runs {
        for p in &r.eval_points {
            let loss = p.mean_loss(eval_sets)?;
            let slot = best.entry(p.tokens_seen).or_insert(f64::INFINITY);
            *slot = slot.min(loss);
        }
    }
    Ok(best.into_iter().collect())
}

/// Minimal pool training tokens at which the pool run beats the best filtered
/// run, observed on the eval grid or extrapolated through a power-law fit.
pub fn crossing_point(
    pool_runs: &[RunRecord],
    filtered_runs: &[RunRecord],
    model_size: u64,
    m: u64,
    eval_sets: &[String],
) -> Result<CrossingPoint, ScalingError> {
    if pool_runs.is_empty() || filtered_runs.is_empty() {
        return Err(ScalingError::InvalidInput("pool and filtered runs must be non-empty".into()));
    }
    if m == 0 {
        return Err(ScalingError::InvalidInput("pool size must be positive".into()));
    }
    if let Some(r) = pool_runs
        .iter()
        .find(|r| r.model.total_params != model_size || r.pool_tokens != m)
    {
        return Err(ScalingError::InvalidInput(format!(
            "pool run `{}` has model size {} and pool {}, expected {model_size} and {m}",
            r.dataset_label, r.model.total_params, r.pool_tokens
        )));
    }
    if let Some(r) = filtered_runs.iter().find(|r| r.model.total_params != model_size) {
        return Err(ScalingError::InvalidInput(format!(
            "filtered run `{}` has model size {}, expected {model_size}",
            r.dataset_label, r.model.total_params
        )));
    }

    let target = runlog::best_achievable(filtered_runs, eval_sets)?;
    let curve = pool_curve(pool_runs, eval_sets)?;
    if let Some(&(tokens, _)) = curve.iter().find(|(_, l)| *l < target) {
        return Ok(CrossingPoint::new(model_size, m, Estimate::Finite(tokens as f64), true, target, None));
    }
    let points: Vec<(f64, f64)> = curve
        .iter()
        .filter(|(t, _)| *t > 0)
        .map(|&(t, l)| (t as f64, l))
        .collect();
    let fit = fit_power_law(&points)?;
    let n_star = fit.solve(target).map_or(Estimate::Never, Estimate::Finite);
    Ok(CrossingPoint::new(model_size, m, n_star, false, target, Some(fit)))
}

/// Crossings for every `(model_size, pool_tokens)` group among the pool runs,
/// against the filtered runs of the same model size. Groups are evaluated in
/// parallel and returned in key order.
pub fn crossing_grid(
    pool_runs: &[RunRecord],
    filtered_runs: &[RunRecord],
    eval_sets: &[String],
) -> Vec<((u64, u64), Result<CrossingPoint, ScalingError>)> {
    let mut groups: BTreeMap<(u64, u64), Vec<RunRecord>> = BTreeMap::new();
    for r in pool_runs {
        groups
            .entry((r.model.total_params, r.pool_tokens))
            .or_default()
            .push(r.clone());
    }
    let groups: Vec<_> = groups.into_iter().collect();
    groups
        .par_iter()
        .map(|((size, m), runs)| {
            let filtered: Vec<RunRecord> = filtered_runs
                .iter()
                .filter(|r| r.model.total_params == *size)
                .cloned()
                .collect();
            ((*size, *m), crossing_point(runs, &filtered, *size, *m, eval_sets))
        })
        .collect()
}

/// `log10 N* = c0 + c1 x + c2 x^2` with `x = log10 m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadFit {
    pub model_size: u64,
    pub coefficients: [f64; 3],
    /// `(log10 m, log10 N*)` inputs.
    pub points: Vec<(f64, f64)>,
    /// Observed minus fitted `log10 N*`.
    pub residuals: Vec<f64>,
}

impl QuadFit {
    pub fn eval_log(&self, x: f64) -> f64 {
        let [c0, c1, c2] = self.coefficients;
        c0 + c1 * x + c2 * x * x
    }

    pub fn slope_log(&self, x: f64) -> f64 {
        self.coefficients[1] + 2.0 * self.coefficients[2] * x
    }

    pub fn predict_n_star(&self, pool_tokens: f64) -> f64 {
        10f64.powf(self.eval_log(pool_tokens.log10()))
    }

    /// `log10 m` at which the fit reaches `y = log10 N*` on its increasing branch.
    pub fn invert_log(&self, y: f64) -> Option<f64> {
        let [c0, c1, c2] = self.coefficients;
        let roots = quadratic_roots(c2, c1, c0 - y);
        roots
            .into_iter()
            .filter(|x| self.slope_log(*x) > 0.0)
            .min_by(f64::total_cmp)
    }
}

/// Real roots of `a x^2 + b x + c`, treating negligible `a` as linear.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if a.abs() <= 1e-14 * scale {
        return if b == 0.0 { Vec::new() } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let q = if q == 0.0 { -0.5 * disc.sqrt() } else { q };
    let mut r = vec![q / a];
    if q != 0.0 {
        r.push(c / q);
    }
    r
}

/// Least-squares quadratic in log10 space through one model's finite crossings.
pub fn fit_crossing_quadratic(crossings: &[CrossingPoint]) -> Result<QuadFit, ScalingError> {
    let Some(first) = crossings.first() else {
        return Err(ScalingError::TooFewCrossings {
            finite: 0,
            never: Vec::new(),
        });
    };
    let model_size = first.model_size;
    if crossings.iter().any(|c| c.model_size != model_size) {
        return Err(ScalingError::InvalidInput("crossings span several model sizes".into()));
    }
    let never: Vec<u64> = crossings
        .iter()
        .filter(|c| c.n_star_tokens == Estimate::Never)
        .map(|c| c.pool_tokens)
        .collect();
    let points: Vec<(f64, f64)> = crossings
        .iter()
        .filter_map(|c| {
            c.n_star_tokens
                .finite()
                .map(|n| ((c.pool_tokens as f64).log10(), n.log10()))
        })
        .collect();
    if points.len() < 3 {
        return Err(ScalingError::TooFewCrossings {
            finite: points.len(),
            never,
        });
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(ScalingError::InvalidInput("crossing tokens and pool sizes must be positive".into()));
    }
    let design = DMatrix::from_fn(points.len(), 3, |i, j| points[i].0.powi(j as i32));
    let rhs = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let solved = design
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| ScalingError::Degenerate(e.to_string()))?;
    let mut fit = QuadFit {
        model_size,
        coefficients: [solved[0], solved[1], solved[2]],
        points,
        residuals: Vec::new(),
    };
    fit.residuals = fit.points.iter().map(|(x, y)| y - fit.eval_log(*x)).collect();
    Ok(fit)
}

/// Fits quadratics per model size; sizes with too few finite crossings are
/// skipped with a warning.
pub fn fit_quadratics(crossings: &[CrossingPoint]) -> (BTreeMap<u64, QuadFit>, Vec<String>) {
    let mut groups: BTreeMap<u64, Vec<CrossingPoint>> = BTreeMap::new();
    for c in crossings {
        groups.entry(c.model_size).or_default().push(c.clone());
    }
    let mut fits = BTreeMap::new();
    let mut warnings = Vec::new();
    for (size, group) in groups {
        match fit_crossing_quadratic(&group) {
            Ok(f) => {
                fits.insert(size, f);
            }
            Err(e) => {
                let msg = format!("model {size} excluded: {e}");
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    (fits, warnings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    TokensPerParam,
    EpochConstraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub model_size: u64,
    pub pool_tokens: f64,
    pub n_star_tokens: f64,
    pub compute: f64,
}

/// `compute = alpha * pool_tokens^beta`, fit in log10 space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdLaw {
    pub method: ThresholdMethod,
    pub parameter: f64,
    pub points: Vec<ThresholdPoint>,
    pub alpha: f64,
    pub beta: f64,
    pub r2: f64,
    pub warnings: Vec<String>,
}

fn fit_threshold_law(
    method: ThresholdMethod,
    parameter: f64,
    points: Vec<ThresholdPoint>,
    warnings: Vec<String>,
) -> Result<ThresholdLaw, ScalingError> {
    if points.len() < 3 {
        return Err(ScalingError::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let x: Vec<f64> = points.iter().map(|p| p.pool_tokens.log10()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.compute.log10()).collect();
    let line = fit_line(&x, &y);
    Ok(ThresholdLaw {
        method,
        parameter,
        alpha: 10f64.powf(line.intercept),
        beta: line.slope,
        r2: line.r2(),
        points,
        warnings,
    })
}

fn exclude(warnings: &mut Vec<String>, msg: String) {
    log::warn!("{msg}");
    warnings.push(msg);
}

/// Threshold law from a fixed token-to-non-embedding-parameter ratio.
pub fn threshold_tokens_per_param(
    quads: &BTreeMap<u64, QuadFit>,
    configs: &[ModelConfig],
    ratio: f64,
) -> Result<ThresholdLaw, ScalingError> {
    if !(ratio > 0.0) {
        return Err(ScalingError::InvalidInput(format!("ratio must be positive, got {ratio}")));
    }
    let mut points = Vec::new();
    let mut warnings = Vec::new();
    for (&size, quad) in quads {
        let Some(cfg) = configs.iter().find(|c| c.total_params == size) else {
            exclude(&mut warnings, format!("model {size} excluded: no model config"));
            continue;
        };
        let n_star = ratio * runlog::non_embedding_params(cfg)? as f64;
        match quad.invert_log(n_star.log10()) {
            Some(x) => points.push(ThresholdPoint {
                model_size: size,
                pool_tokens: 10f64.powf(x),
                n_star_tokens: n_star,
                compute: 6.0 * n_star * cfg.total_params as f64,
            }),
            None => exclude(
                &mut warnings,
                format!("model {size} excluded: no increasing-branch pool size reaches N* = {n_star:e}"),
            ),
        }
    }
    fit_threshold_law(ThresholdMethod::TokensPerParam, ratio, points, warnings)
}

/// Threshold law from intersecting each fit with the line `N* = epochs * m`.
pub fn threshold_epoch_constraint(quads: &BTreeMap<u64, QuadFit>, epochs: f64) -> Result<ThresholdLaw, ScalingError> {
    if !(epochs > 0.0) {
        return Err(ScalingError::InvalidInput(format!("epochs must be positive, got {epochs}")));
    }
    let offset = epochs.log10();
    let mut points = Vec::new();
    let mut warnings = Vec::new();
    for (&size, quad) in quads {
        let [c0, c1, c2] = quad.coefficients;
        let (a, b, c) = (c2, c1 - 1.0, c0 - offset);
        let tol = 1e-12 * (1.0 + c0.abs().max(c1.abs()));
        if a.abs() <= tol && b.abs() <= tol && c.abs() <= tol {
            return Err(ScalingError::Coincident { model_size: size, epochs });
        }
        // Root where the epoch count N*/m grows with m.
        let root = quadratic_roots(a, b, c)
            .into_iter()
            .filter(|x| quad.slope_log(*x) > 1.0)
            .min_by(f64::total_cmp);
        match root {
            Some(x) => {
                let m = 10f64.powf(x);
                let n_star = epochs * m;
                points.push(ThresholdPoint {
                    model_size: size,
                    pool_tokens: m,
                    n_star_tokens: n_star,
                    compute: 6.0 * n_star * size as f64,
                });
            }
            None => exclude(
                &mut warnings,
                format!("model {size} excluded: fit never crosses the {epochs}-epoch line from below"),
            ),
        }
    }
    fit_threshold_law(ThresholdMethod::EpochConstraint, epochs, points, warnings)
}

/// Predicted compute at which the pool overtakes filtering for a pool size.
pub fn extrapolate(law: &ThresholdLaw, pool_tokens: f64) -> f64 {
    law.alpha * pool_tokens.powf(law.beta)
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<(), ScalingError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Flat row for crossing CSV output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossingRow {
    pub model_size: u64,
    pub pool_tokens: u64,
    pub n_star_tokens: String,
    pub epochs_at_cross: String,
    pub observed: bool,
    pub extreme_epochs: bool,
    pub target_loss: f64,
}

impl From<&CrossingPoint> for CrossingRow {
    fn from(c: &CrossingPoint) -> Self {
        CrossingRow {
            model_size: c.model_size,
            pool_tokens: c.pool_tokens,
            n_star_tokens: c.n_star_tokens.to_string(),
            epochs_at_cross: c.epochs_at_cross.to_string(),
            observed: c.observed,
            extreme_epochs: c.extreme_epochs,
            target_loss: c.target_loss,
        }
    }
}

impl TryFrom<CrossingRow> for CrossingPoint {
    type Error = ScalingError;

    fn try_from(row: CrossingRow) -> Result<Self, ScalingError> {
        let parse = |s: &str| -> Result<Estimate, ScalingError> {
            match s.trim() {
                "NEVER" => Ok(Estimate::Never),
                t => t
                    .parse::<f64>()
                    .map(Estimate::Finite)
                    .map_err(|_| ScalingError::InvalidInput(format!("expected a number or NEVER, got `{t}`"))),
            }
        };
        Ok(CrossingPoint {
            model_size: row.model_size,
            pool_tokens: row.pool_tokens,
            n_star_tokens: parse(&row.n_star_tokens)?,
            epochs_at_cross: parse(&row.epochs_at_cross)?,
            observed: row.observed,
            target_loss: row.target_loss,
            extreme_epochs: row.extreme_epochs,
            fit: None,
        })
    }
}

/// Reads crossings written by [`write_csv`] over [`CrossingRow`]s.
pub fn read_crossings_csv<R: Read>(reader: R) -> Result<Vec<CrossingPoint>, ScalingError> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize::<CrossingRow>()
        .map(|row| CrossingPoint::try_from(row?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runlog::tests::record;
    use proptest::prelude::*;

    fn fp(compute: f64, loss: f64, id: u64) -> FrontierPoint {
        FrontierPoint {
            compute,
            loss,
            dataset_label: "d".into(),
            record_ref: id,
        }
    }

    fn dominated(p: &FrontierPoint, q: &FrontierPoint) -> bool {
        q.compute <= p.compute && q.loss <= p.loss && (q.compute < p.compute || q.loss < p.loss)
    }

    #[test]
    fn pareto_examples() {
        assert_eq!(pareto_frontier(&[fp(1e18, 3.5, 0)]), vec![fp(1e18, 3.5, 0)]);
        let f = pareto_frontier(&[fp(1e18, 3.5, 0), fp(2e18, 3.4, 1), fp(3e18, 3.45, 2)]);
        assert_eq!(f, vec![fp(1e18, 3.5, 0), fp(2e18, 3.4, 1)]);
        let f = pareto_frontier(&[fp(1e18, 3.5, 7), fp(1e18, 3.5, 3)]);
        assert_eq!(f, vec![fp(1e18, 3.5, 3)]);
    }

    fn planted(a: f64, b: f64, c: f64, ns: &[f64]) -> Vec<(f64, f64)> {
        ns.iter().map(|&n| (n, c + a * n.powf(-b))).collect()
    }

    fn decades(lo: i32, hi: i32) -> Vec<f64> {
        (lo..=hi).map(|e| 10f64.powi(e)).collect()
    }

    #[test]
    fn recovers_planted_power_law() {
        let fit = fit_power_law(&planted(5.0, 0.5, 2.0, &decades(2, 6))).unwrap();
        assert!((fit.a - 5.0).abs() / 5.0 < 1e-3, "{fit:?}");
        assert!((fit.b - 0.5).abs() / 0.5 < 1e-3);
        assert!((fit.c - 2.0).abs() / 2.0 < 1e-3);
        assert!(fit.r2 >= 0.999);
    }

    #[test]
    fn zero_asymptote_matches_regression() {
        let pts = planted(3.0, 1.0, 0.0, &decades(1, 5));
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.b - 1.0).abs() < 1e-6, "{fit:?}");
        assert!(fit.c_near_zero);
    }

    #[test]
    fn power_law_errors() {
        let flat: Vec<(f64, f64)> = decades(1, 4).into_iter().map(|n| (n, 3.0)).collect();
        assert!(matches!(fit_power_law(&flat), Err(ScalingError::NotDecaying)));
        assert!(matches!(
            fit_power_law(&[(1.0, 3.0), (2.0, 2.0)]),
            Err(ScalingError::TooFewPoints { .. })
        ));
        assert!(fit_power_law(&[(2.0, 3.0), (1.0, 2.0), (3.0, 1.0)]).is_err());
    }

    fn curve_record(label: &str, m: u64, curve: &[(u64, f64)]) -> RunRecord {
        let mut r = record(label, curve.last().map_or(1, |c| c.0), m, curve);
        r.pool_tokens = m;
        r
    }

    #[test]
    fn extrapolated_crossing() {
        let law = |n: f64| 3.0 + 2.0 * n.powf(-0.3);
        let curve: Vec<(u64, f64)> = [2u64, 4, 8, 16, 32, 64].iter().map(|&n| (n, law(n as f64))).collect();
        let pool = curve_record("pool", 10, &curve);
        let filtered = curve_record("dclm", 10, &[(5, 3.6), (10, 3.5)]);
        let size = pool.model.total_params;
        let cp = crossing_point(&[pool], &[filtered], size, 10, &["c4".into()]).unwrap();
        assert!(!cp.observed);
        let n = cp.n_star_tokens.finite().unwrap();
        let expected = (2.0f64 / 0.5).powf(1.0 / 0.3);
        assert!((n - expected).abs() / expected < 1e-3, "{n} vs {expected}");
        let fit = cp.fit.unwrap();
        assert!((fit.eval(n) - 3.5).abs() / 3.5 < 1e-9);

        // Bisection oracle on the planted law.
        let (mut lo, mut hi) = (1.0f64, 1e6f64);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if law(mid) > 3.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - 101.59).abs() < 0.01, "{lo}");
    }

    #[test]
    fn never_when_asymptote_above_target() {
        let curve: Vec<(u64, f64)> = [10u64, 100, 1000, 10000]
            .iter()
            .map(|&n| (n, 3.6 + (n as f64).powf(-0.5)))
            .collect();
        let pool = curve_record("pool", 10, &curve);
        let filtered = curve_record("dclm", 10, &[(10, 3.5)]);
        let size = pool.model.total_params;
        let cp = crossing_point(&[pool], &[filtered], size, 10, &["c4".into()]).unwrap();
        assert_eq!(cp.n_star_tokens, Estimate::Never);
        assert_eq!(cp.epochs_at_cross, Estimate::Never);
        let json = serde_json::to_string(&cp).unwrap();
        assert!(json.contains("\"NEVER\""));
        let back: CrossingPoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cp);
    }

    #[test]
    fn immediate_observed_win() {
        let pool = curve_record("pool", 10, &[(100, 3.0), (200, 2.9)]);
        let filtered = curve_record("dclm", 10, &[(10, 3.5)]);
        let size = pool.model.total_params;
        let cp = crossing_point(&[pool], &[filtered], size, 10, &["c4".into()]).unwrap();
        assert!(cp.observed);
        assert_eq!(cp.n_star_tokens, Estimate::Finite(100.0));
        assert_eq!(cp.epochs_at_cross, Estimate::Finite(10.0));
    }

    fn cp(size: u64, m: u64, n: Estimate) -> CrossingPoint {
        CrossingPoint::new(size, m, n, true, 3.0, None)
    }

    #[test]
    fn crossing_csv_round_trip() {
        let rows = vec![
            cp(7, 10, Estimate::Finite(1234.5678901234567)),
            CrossingPoint::new(7, 20, Estimate::Finite(1.0e5 / 3.0), false, 3.25, None),
            cp(7, 30, Estimate::Never),
        ];
        let csv_rows: Vec<CrossingRow> = rows.iter().map(CrossingRow::from).collect();
        let mut buf = Vec::new();
        write_csv(&csv_rows, &mut buf).unwrap();
        assert_eq!(read_crossings_csv(buf.as_slice()).unwrap(), rows);
        assert!(read_crossings_csv("model_size,pool_tokens,n_star_tokens,epochs_at_cross,observed,extreme_epochs,target_loss\n1,2,soon,1,true,false,3\n".as_bytes()).is_err());
    }

    #[test]
    fn quadratic_through_reference_points() {
        let pts = [(670_000_000u64, 1.0), (2_000_000_000, 3.0), (10_000_000_000, 10.0)];
        let crossings: Vec<_> = pts
            .iter()
            .map(|&(m, e)| cp(1, m, Estimate::Finite(e * m as f64)))
            .collect();
        let q = fit_crossing_quadratic(&crossings).unwrap();
        for &(m, e) in &pts {
            let got = q.predict_n_star(m as f64) / m as f64;
            assert!((got - e).abs() / e < 1e-6, "{got} vs {e}");
        }
        for (i, (x, y)) in q.points.iter().enumerate() {
            assert_eq!(q.residuals[i], y - q.eval_log(*x));
        }
    }

    #[test]
    fn collinear_points_have_flat_curvature() {
        let crossings: Vec<_> = [1e8f64, 1e9, 1e10, 1e11]
            .iter()
            .map(|&m| cp(1, m as u64, Estimate::Finite(3.0 * m.powf(1.2))))
            .collect();
        let q = fit_crossing_quadratic(&crossings).unwrap();
        assert!(q.coefficients[2].abs() < 1e-9, "{:?}", q.coefficients);
    }

    #[test]
    fn quadratic_lists_never_entries() {
        let crossings = vec![
            cp(1, 10, Estimate::Finite(100.0)),
            cp(1, 20, Estimate::Never),
            cp(1, 30, Estimate::Finite(900.0)),
        ];
        match fit_crossing_quadratic(&crossings) {
            Err(ScalingError::TooFewCrossings { finite, never }) => {
                assert_eq!(finite, 2);
                assert_eq!(never, vec![20]);
            }
            other => panic!("{other:?}"),
        }
    }

    fn quad(size: u64, coefficients: [f64; 3]) -> QuadFit {
        QuadFit {
            model_size: size,
            coefficients,
            points: Vec::new(),
            residuals: Vec::new(),
        }
    }

    #[test]
    fn coincident_epoch_line_is_an_error() {
        let quads = BTreeMap::from([(1, quad(1, [1.0, 1.0, 0.0]))]);
        assert!(matches!(
            threshold_epoch_constraint(&quads, 10.0),
            Err(ScalingError::Coincident { .. })
        ));
    }

    #[test]
    fn epoch_intersection_matches_bisection() {
        // Concave fit crossing the 4-epoch line once on its rising side.
        let q = quad(1, [-6.0, 2.0, -0.03]);
        let g = |x: f64| q.eval_log(x) - (x + 4f64.log10());
        let quads = BTreeMap::from([(1, q.clone()), (2, quad(2, [-5.0, 2.0, -0.03])), (3, quad(3, [-4.0, 2.0, -0.03]))]);
        let law = threshold_epoch_constraint(&quads, 4.0).unwrap();
        let x = law.points[0].pool_tokens.log10();
        let (mut lo, mut hi) = (0.0, x + 3.0);
        assert!(g(lo) < 0.0 && g(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((x - lo).abs() < 1e-6, "{x} vs {lo}");
    }

    #[test]
    fn single_model_is_too_few() {
        let quads = BTreeMap::from([(1, quad(1, [-6.0, 2.0, -0.03]))]);
        assert!(matches!(
            threshold_epoch_constraint(&quads, 4.0),
            Err(ScalingError::TooFewPoints { .. })
        ));
        let cfg = crate::runlog::tests::tiny_model();
        let quads = BTreeMap::from([(cfg.total_params, quad(cfg.total_params, [-6.0, 2.0, -0.03]))]);
        assert!(threshold_tokens_per_param(&quads, &[cfg], 600.0).is_err());
    }

    #[test]
    fn increasing_branch_inversion() {
        let concave = quad(1, [0.0, 2.0, -0.1]);
        let x = concave.invert_log(concave.eval_log(3.0)).unwrap();
        assert!((x - 3.0).abs() < 1e-12);
        let convex = quad(1, [0.0, -2.0, 0.1]);
        let x = convex.invert_log(convex.eval_log(15.0)).unwrap();
        assert!((x - 15.0).abs() < 1e-9);
        assert!(concave.invert_log(100.0).is_none());
    }

    proptest! {
        #[test]
        fn frontier_invariants(raw in prop::collection::vec((1u32..20, 1u32..20), 0..40)) {
            let pts: Vec<FrontierPoint> = raw.iter().enumerate()
                .map(|(i, &(c, l))| fp(c as f64 * 1e17, l as f64 / 4.0, i as u64))
                .collect();
            let f = pareto_frontier(&pts);
            for w in f.windows(2) {
                prop_assert!(w[0].compute < w[1].compute);
                prop_assert!(w[0].loss > w[1].loss);
            }
            for p in &pts {
                prop_assert!(f.contains(p) || f.iter().any(|q| dominated(p, q) || (q.compute == p.compute && q.loss == p.loss)));
            }
        }

        #[test]
        fn fits_are_deterministic(a in 0.5f64..10.0, b in 0.1f64..1.0, c in 0.0f64..4.0) {
            let pts = planted(a, b, c, &decades(1, 5));
            let f1 = fit_power_law(&pts).unwrap();
            let f2 = fit_power_law(&pts).unwrap();
            prop_assert_eq!(f1.a.to_bits(), f2.a.to_bits());
            prop_assert_eq!(f1.b.to_bits(), f2.b.to_bits());
            prop_assert_eq!(f1.c.to_bits(), f2.c.to_bits());
        }
    }
}
