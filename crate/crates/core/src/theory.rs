//! Numerical checks of two closed forms: the minimum population loss of a
//! rank-`r` linear factorization over tasks with orthogonal inputs, and the KL
//! improvement of a filtered similarity-weighted predictor.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

pub const ORTHOGONALITY_TOL: f64 = 1e-12;
pub const RANGE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("rank {r} outside 0..={max}")]
    RankOutOfRange { r: usize, max: usize },
    #[error("gradient descent needs rank >= 1 and steps >= 1")]
    BadDescentConfig,
    #[error("gradient descent diverged (loss {loss:e} from {initial:e}); try a lower learning rate")]
    Diverged { loss: f64, initial: f64 },
    #[error("all similarity weights are zero")]
    ZeroWeights,
    #[error("no weight for example `{0}`")]
    MissingWeight(String),
    #[error("negative or non-finite weight for `{0}`")]
    BadWeight(String),
    #[error("filter removed all support for label `{0}`")]
    NoSupport(String),
    #[error("label `{0}` has zero probability under the unfiltered predictor")]
    TargetAbsent(String),
    #[error("improvement undefined: p_star + (1 - p_star) * ratio = {0} <= 0")]
    DegenerateRatio(f64),
    #[error("p_star must lie in (0, 1], got {0}")]
    BadPrior(f64),
}

/// `k` tasks: task `i` has probability `p[i]`, input second moment `sigma[i]`
/// and target map `u[i] v[i]^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub d: usize,
    pub m_out: usize,
    pub p: Vec<f64>,
    pub u: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
    pub noise_power: f64,
}

impl TaskSpec {
    pub fn k(&self) -> usize {
        self.p.len()
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        let bad = |m: String| Err(TheoryError::InvalidSpec(m));
        let k = self.k();
        if k == 0 {
            return bad("at least one task required".into());
        }
        if self.u.len() != k || self.v.len() != k || self.sigma.len() != k {
            return bad("p, u, v and sigma must have one entry per task".into());
        }
        if self.p.iter().any(|p| !(*p > 0.0)) || (self.p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return bad("p must be positive and sum to 1".into());
        }
        if !(self.noise_power >= 0.0) {
            return bad("noise_power must be non-negative".into());
        }
        for i in 0..k {
            if self.u[i].len() != self.m_out || self.v[i].len() != self.d {
                return bad(format!("task {i}: direction has wrong dimension"));
            }
            if self.sigma[i].shape() != (self.d, self.d) {
                return bad(format!("task {i}: sigma must be {0}x{0}", self.d));
            }
            if (self.u[i].norm() - 1.0).abs() > 1e-10 || (self.v[i].norm() - 1.0).abs() > 1e-10 {
                return bad(format!("task {i}: u and v must be unit vectors"));
            }
            let eig = SymmetricEigen::new(self.sigma[i].clone());
            let scale = eig.eigenvalues.amax().max(1.0);
            if eig.eigenvalues.min() < -1e-12 * scale {
                return bad(format!("task {i}: sigma is not PSD"));
            }
            let residual = range_residual(&eig, &self.v[i]);
            if residual > RANGE_TOL {
                return bad(format!("task {i}: v lies outside range(sigma) (residual {residual:e})"));
            }
            for j in 0..i {
                let t = (&self.sigma[i] * &self.sigma[j]).trace().abs();
                if t > ORTHOGONALITY_TOL {
                    return bad(format!("tasks {j} and {i}: tr(sigma_i sigma_j) = {t:e}"));
                }
            }
        }
        Ok(())
    }

    pub fn target_map(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.m_out, self.d);
        for (u, v) in self.u.iter().zip(&self.v) {
            m += u * v.transpose();
        }
        m
    }

    pub fn mixture_sigma(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.d, self.d);
        for (p, sigma) in self.p.iter().zip(&self.sigma) {
            s += sigma * *p;
        }
        s
    }

    /// Population loss `tr((M* - W) Sigma (M* - W)^T) + noise` of a linear map `W`.
    pub fn population_loss(&self, w: &DMatrix<f64>) -> f64 {
        let diff = w - self.target_map();
        (&diff * self.mixture_sigma() * diff.transpose()).trace() + self.noise_power
    }

    /// Largest `|M*_j Sigma_i|` entry over task pairs `i != j`.
    pub fn max_cross_term(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.k() {
            let mj = &self.u[j] * self.v[j].transpose();
            for i in 0..self.k() {
                if i != j {
                    worst = worst.max((&mj * &self.sigma[i]).amax());
                }
            }
        }
        worst
    }
}

fn range_residual(eig: &SymmetricEigen<f64, nalgebra::Dyn>, v: &DVector<f64>) -> f64 {
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let mut proj = DVector::zeros(v.len());
    for (idx, lambda) in eig.eigenvalues.iter().enumerate() {
        if *lambda > 1e-10 * scale {
            let e = eig.eigenvectors.column(idx);
            proj += e * e.dot(v);
        }
    }
    (v - proj).norm()
}

fn sample_normal(rng: &mut rng::Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_vector(rng: &mut rng::Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| sample_normal(rng))
}

fn unit_vector(rng: &mut rng::Rng, n: usize) -> DVector<f64> {
    loop {
        let v = normal_vector(rng, n);
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Random orthogonal-input spec: coordinates are split into `k` contiguous
/// blocks, task `i` gets a random low-rank PSD second moment on block `i`, `v_i`
/// is a unit vector in its range and `u_i` a random unit vector.
pub fn random_task_spec(k: usize, d: usize, m_out: usize, noise_power: f64, seed: u64) -> Result<TaskSpec, TheoryError> {
    if k == 0 || d < k || m_out == 0 {
        return Err(TheoryError::InvalidSpec(format!("need 1 <= k <= d and m_out >= 1 (k={k}, d={d}, m_out={m_out})")));
    }
    let mut rng = rng::seeded(seed);

    let mut cuts: Vec<usize> = (1..d).collect();
    rand::seq::SliceRandom::shuffle(cuts.as_mut_slice(), &mut rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(k - 1).collect();
    cuts.sort_unstable();
    let bounds: Vec<usize> = std::iter::once(0).chain(cuts).chain(std::iter::once(d)).collect();

    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let head: f64 = p[..k - 1].iter().sum();
    p[k - 1] = 1.0 - head;

    let mut u = Vec::with_capacity(k);
    let mut v = Vec::with_capacity(k);
    let mut sigma = Vec::with_capacity(k);
    for i in 0..k {
        let (lo, hi) = (bounds[i], bounds[i + 1]);
        let b = hi - lo;
        let rank = rng.random_range(1..=b);
        let a: DMatrix<f64> = DMatrix::from_fn(b, rank, |_, _| StandardNormal.sample(&mut rng));
        let block = (&a * a.transpose()) / rank as f64;
        let in_range: DVector<f64> = &a * normal_vector(&mut rng, rank);
        let mut s = DMatrix::zeros(d, d);
        s.view_mut((lo, lo), (b, b)).copy_from(&block);
        let mut vi = DVector::zeros(d);
        vi.rows_mut(lo, b).copy_from(&(in_range.normalize()));
        sigma.push(s);
        v.push(vi);
        u.push(unit_vector(&mut rng, m_out));
    }
    let spec = TaskSpec {
        d,
        m_out,
        p,
        u,
        v,
        sigma,
        noise_power,
    };
    spec.validate()?;
    Ok(spec)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Singular values of `M* Sigma^{1/2}`, descending.
pub fn singular_values(spec: &TaskSpec) -> Vec<f64> {
    let a = spec.target_map() * psd_sqrt(&spec.mixture_sigma());
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Number of singular values above `1e-10` times the largest.
pub fn effective_rank(spec: &TaskSpec) -> usize {
    let s = singular_values(spec);
    let top = s.first().copied().unwrap_or(0.0);
    s.iter().filter(|x| **x > 1e-10 * top && **x > 0.0).count()
}

pub fn analytic_min_loss(spec: &TaskSpec, r: usize) -> Result<f64, TheoryError> {
    spec.validate()?;
    let max = spec.d.min(spec.m_out);
    if r > max {
        return Err(TheoryError::RankOutOfRange { r, max });
    }
    let tail: f64 = singular_values(spec).iter().skip(r).map(|s| s * s).sum();
    Ok(tail + spec.noise_power)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub steps: usize,
    /// Defaults to `0.1 / ||Sigma||_2`.
    pub lr: Option<f64>,
    pub restarts: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            steps: 200_000,
            lr: None,
            restarts: 3,
            init_scale: 1e-2,
            seed: 0,
        }
    }
}

/// Best population loss reached by full-gradient descent on `(U, V)` over
/// several small random initializations.
pub fn empirical_min_loss(spec: &TaskSpec, r: usize, cfg: &DescentConfig) -> Result<f64, TheoryError> {
    spec.validate()?;
    if r == 0 || cfg.steps == 0 || cfg.restarts == 0 {
        return Err(TheoryError::BadDescentConfig);
    }
    let target = spec.target_map();
    let sigma = spec.mixture_sigma();
    let norm = SymmetricEigen::new(sigma.clone()).eigenvalues.amax();
    let lr = cfg.lr.unwrap_or(0.1 / norm.max(f64::MIN_POSITIVE));

    let runs: Vec<Result<f64, TheoryError>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = rng::indexed(cfg.seed, restart as u64);
            let mut u = DMatrix::from_fn(spec.m_out, r, |_, _| cfg.init_scale * sample_normal(&mut rng));
            let mut v = DMatrix::from_fn(spec.d, r, |_, _| cfg.init_scale * sample_normal(&mut rng));
            descend(&target, &sigma, spec.noise_power, &mut u, &mut v, lr, cfg.steps)
        })
        .collect();
    let mut best = f64::INFINITY;
    for run in runs {
        best = best.min(run?);
    }
    Ok(best)
}

const STALL_WINDOW: usize = 1000;
const STALL_TOL: f64 = 1e-10;

fn descend(
    target: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    noise: f64,
    u: &mut DMatrix<f64>,
    v: &mut DMatrix<f64>,
    lr: f64,
    steps: usize,
) -> Result<f64, TheoryError> {
    let (m, d, r) = (u.nrows(), v.nrows(), u.ncols());
    let mut vt = v.transpose();
    let mut diff = DMatrix::zeros(m, d);
    let mut e = DMatrix::zeros(m, d);
    let mut grad_u = DMatrix::zeros(m, r);
    let mut grad_v = DMatrix::zeros(d, r);
    // diff = U V^T - M*, e = diff Sigma; returns the population loss.
    let refresh = |u: &DMatrix<f64>, vt: &DMatrix<f64>, diff: &mut DMatrix<f64>, e: &mut DMatrix<f64>| {
        diff.copy_from(target);
        diff.gemm(1.0, u, vt, -1.0);
        e.gemm(1.0, diff, sigma, 0.0);
        e.dot(diff) + noise
    };
    let initial = refresh(u, &vt, &mut diff, &mut e);
    let mut loss = initial;
    let mut checkpoint = initial;
    for step in 0..steps {
        if loss - noise <= 1e-13 {
            break;
        }
        if step > 0 && step % STALL_WINDOW == 0 {
            if checkpoint - loss < STALL_TOL {
                break;
            }
            checkpoint = loss;
        }
        grad_u.gemm(2.0, &e, v, 0.0);
        grad_v.gemm_tr(2.0, &e, u, 0.0);
        u.zip_apply(&grad_u, |a, g| *a -= lr * g);
        v.zip_apply(&grad_v, |a, g| *a -= lr * g);
        v.transpose_to(&mut vt);
        loss = refresh(u, &vt, &mut diff, &mut e);
        if !loss.is_finite() || loss > 1e6 * initial.max(f64::MIN_POSITIVE) {
            return Err(TheoryError::Diverged { loss, initial });
        }
    }
    Ok(loss)
}

/// Weighted examples `(x_id, label)` with similarities to a fixed test input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityDataset {
    pub examples: Vec<(String, String)>,
    pub weights: BTreeMap<String, f64>,
}

impl SimilarityDataset {
    fn weight(&self, x: &str) -> Result<f64, TheoryError> {
        let w = *self.weights.get(x).ok_or_else(|| TheoryError::MissingWeight(x.to_string()))?;
        if !(w >= 0.0 && w.is_finite()) {
            return Err(TheoryError::BadWeight(x.to_string()));
        }
        Ok(w)
    }

    pub fn labels(&self) -> BTreeSet<String> {
        self.examples.iter().map(|(_, y)| y.clone()).collect()
    }

    pub fn filtered(&self, phi: &FilterFn) -> SimilarityDataset {
        SimilarityDataset {
            examples: self
                .examples
                .iter()
                .filter(|(x, y)| phi.keeps(x, y))
                .cloned()
                .collect(),
            weights: self.weights.clone(),
        }
    }
}

/// Binary filter over `(x_id, label)` pairs, stored as the set it keeps.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterFn {
    pub kept: BTreeSet<(String, String)>,
}

impl FilterFn {
    pub fn identity(data: &SimilarityDataset) -> Self {
        FilterFn {
            kept: data.examples.iter().cloned().collect(),
        }
    }

    pub fn keeps(&self, x: &str, y: &str) -> bool {
        self.kept.contains(&(x.to_string(), y.to_string()))
    }
}

/// `P(y) = sum_{i: y_i = y} w_i / sum_j w_j`.
pub fn predict_conditional(data: &SimilarityDataset) -> Result<BTreeMap<String, f64>, TheoryError> {
    let mut mass: BTreeMap<String, f64> = BTreeMap::new();
    let mut total = 0.0;
    for (x, y) in &data.examples {
        let w = data.weight(x)?;
        *mass.entry(y.clone()).or_insert(0.0) += w;
        total += w;
    }
    if total <= 0.0 {
        return Err(TheoryError::ZeroWeights);
    }
    Ok(mass.into_iter().map(|(y, m)| (y, m / total)).collect())
}

/// `-log(p_star + (1 - p_star) * ratio)`, evaluated as `-ln_1p((1 - p_star)(ratio - 1))`.
pub fn kl_improvement_closed_form(p_star: f64, fpr_over_tpr: f64) -> Result<f64, TheoryError> {
    if !(p_star > 0.0 && p_star <= 1.0) {
        return Err(TheoryError::BadPrior(p_star));
    }
    let arg = p_star + (1.0 - p_star) * fpr_over_tpr;
    if !(arg > 0.0) || !(fpr_over_tpr >= 0.0) {
        return Err(TheoryError::DegenerateRatio(arg));
    }
    Ok(-((1.0 - p_star) * (fpr_over_tpr - 1.0)).ln_1p())
}

/// Weighted pass rates of a filter split by label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterRates {
    pub p_star: f64,
    pub true_positive_rate: f64,
    pub false_positive_rate: f64,
}

impl FilterRates {
    pub fn ratio(&self) -> f64 {
        self.false_positive_rate / self.true_positive_rate
    }
}

pub fn filter_rates(data: &SimilarityDataset, phi: &FilterFn, y_star: &str) -> Result<FilterRates, TheoryError> {
    let (mut pos, mut pos_kept, mut neg, mut neg_kept) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in &data.examples {
        let w = data.weight(x)?;
        let kept = if phi.keeps(x, y) { w } else { 0.0 };
        if y == y_star {
            pos += w;
            pos_kept += kept;
        } else {
            neg += w;
            neg_kept += kept;
        }
    }
    if pos + neg <= 0.0 {
        return Err(TheoryError::ZeroWeights);
    }
    if pos <= 0.0 {
        return Err(TheoryError::TargetAbsent(y_star.to_string()));
    }
    if pos_kept <= 0.0 {
        return Err(TheoryError::NoSupport(y_star.to_string()));
    }
    Ok(FilterRates {
        p_star: pos / (pos + neg),
        true_positive_rate: pos_kept / pos,
        false_positive_rate: if neg > 0.0 { neg_kept / neg } else { 0.0 },
    })
}

/// `KL(P_t || P_D) - KL(P_t || P_{phi o D})` for the point mass `P_t` on
/// `y_star`, from the two predictors directly.
pub fn kl_improvement_bruteforce(data: &SimilarityDataset, phi: &FilterFn, y_star: &str) -> Result<f64, TheoryError> {
    kl_improvement_general(data, phi, &BTreeMap::from([(y_star.to_string(), 1.0)]))
}

/// KL improvement for an arbitrary target distribution over labels.
pub fn kl_improvement_general(
    data: &SimilarityDataset,
    phi: &FilterFn,
    target: &BTreeMap<String, f64>,
) -> Result<f64, TheoryError> {
    let before = predict_conditional(data)?;
    let after = predict_conditional(&data.filtered(phi)).map_err(|e| match e {
        TheoryError::ZeroWeights => TheoryError::NoSupport(target.keys().cloned().collect::<Vec<_>>().join(",")),
        other => other,
    })?;
    let mut total = 0.0;
    for (y, t) in target.iter().filter(|(_, t)| **t > 0.0) {
        let p = before.get(y).copied().unwrap_or(0.0);
        if p <= 0.0 {
            return Err(TheoryError::TargetAbsent(y.clone()));
        }
        let q = after.get(y).copied().unwrap_or(0.0);
        if q <= 0.0 {
            return Err(TheoryError::NoSupport(y.clone()));
        }
        total += t * (q / p).ln();
    }
    Ok(total)
}

/// Random similarity instance with at most 50 examples and 5 labels, a random
/// filter and a target label the filter keeps some weighted support for.
pub fn random_similarity_instance(seed: u64) -> (SimilarityDataset, FilterFn, String) {
    let mut rng = rng::seeded(seed);
    loop {
        let n = rng.random_range(1..=50);
        let n_labels = rng.random_range(1..=5);
        let keep_p = rng.random_range(0.1..1.0);
        let mut examples = Vec::with_capacity(n);
        let mut weights = BTreeMap::new();
        let mut kept = BTreeSet::new();
        for i in 0..n {
            let x = format!("x{i}");
            let y = format!("y{}", rng.random_range(0..n_labels));
            let w = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1.0) };
            weights.insert(x.clone(), w);
            if rng.random_bool(keep_p) {
                kept.insert((x.clone(), y.clone()));
            }
            examples.push((x, y));
        }
        let data = SimilarityDataset { examples, weights };
        let phi = FilterFn { kept };
        let labels: Vec<String> = data.labels().into_iter().collect();
        let y_star = labels[rng.random_range(0..labels.len())].clone();
        if filter_rates(&data, &phi, &y_star).is_ok() {
            return (data, phi, y_star);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCheck {
    pub r: usize,
    pub analytic: f64,
    pub empirical: f64,
    pub abs_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Verdict {
    pub trial: usize,
    pub seed: u64,
    pub k: usize,
    pub d: usize,
    pub m_out: usize,
    pub rho: usize,
    pub max_cross_term: f64,
    pub checks: Vec<RankCheck>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Random dimensions within `k <= 4, d <= 16, m_out <= 8` with `min(d, m_out) >= k`.
pub fn random_dims(seed: u64) -> (usize, usize, usize) {
    let mut rng = rng::keyed(seed, "dims");
    let k = rng.random_range(1..=4);
    let d = rng.random_range(k..=16);
    let m_out = rng.random_range(k..=8);
    (k, d, m_out)
}

/// Compares gradient descent with the closed form at every rank `r >= k`.
pub fn verify_prop1(trials: usize, seed: u64, tol: f64, cfg: &DescentConfig) -> Vec<Prop1Verdict> {
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let trial_seed = rng::indexed(seed, trial as u64).random::<u64>();
            let (k, d, m_out) = random_dims(trial_seed);
            let noise = rng::keyed(trial_seed, "noise").random_range(0.0..0.5);
            let mut verdict = Prop1Verdict {
                trial,
                seed: trial_seed,
                k,
                d,
                m_out,
                rho: 0,
                max_cross_term: 0.0,
                checks: Vec::new(),
                pass: false,
                error: None,
            };
            let mut run = || -> Result<(), TheoryError> {
                let spec = random_task_spec(k, d, m_out, noise, trial_seed)?;
                verdict.rho = effective_rank(&spec);
                verdict.max_cross_term = spec.max_cross_term();
                for r in k..=d.min(m_out) {
                    let analytic = analytic_min_loss(&spec, r)?;
                    let empirical = empirical_min_loss(&spec, r, &DescentConfig { seed: trial_seed ^ r as u64, ..*cfg })?;
                    let abs_error = (analytic - empirical).abs();
                    verdict.checks.push(RankCheck {
                        r,
                        analytic,
                        empirical,
                        abs_error,
                        pass: abs_error <= tol,
                    });
                }
                Ok(())
            };
            match run() {
                Ok(()) => verdict.pass = verdict.checks.iter().all(|c| c.pass) && verdict.max_cross_term <= ORTHOGONALITY_TOL,
                Err(e) => verdict.error = Some(e.to_string()),
            }
            verdict
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactVerdict {
    pub trial: usize,
    pub seed: u64,
    pub n_examples: usize,
    pub p_star: f64,
    pub ratio: f64,
    pub closed_form: f64,
    pub brute_force: f64,
    pub abs_error: f64,
    pub pass: bool,
}

/// Compares the closed-form KL improvement with the brute-force difference.
pub fn verify_filter_fact(trials: usize, seed: u64, tol: f64) -> Vec<FactVerdict> {
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let trial_seed = rng::indexed(seed, trial as u64).random::<u64>();
            let (data, phi, y_star) = random_similarity_instance(trial_seed);
            let rates = filter_rates(&data, &phi, &y_star).expect("instance is well posed");
            let closed = kl_improvement_closed_form(rates.p_star, rates.ratio()).expect("positive argument");
            let brute = kl_improvement_bruteforce(&data, &phi, &y_star).expect("instance is well posed");
            let abs_error = (closed - brute).abs();
            FactVerdict {
                trial,
                seed: trial_seed,
                n_examples: data.examples.len(),
                p_star: rates.p_star,
                ratio: rates.ratio(),
                closed_form: closed,
                brute_force: brute,
                abs_error,
                pass: abs_error <= tol,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_task() -> TaskSpec {
        let e = |i: usize| DVector::from_fn(2, |j, _| if i == j { 1.0 } else { 0.0 });
        TaskSpec {
            d: 2,
            m_out: 2,
            p: vec![0.5, 0.5],
            u: vec![e(0), e(1)],
            v: vec![e(0), e(1)],
            sigma: vec![e(0) * e(0).transpose(), e(1) * e(1).transpose()],
            noise_power: 0.0,
        }
    }

    /// Trailing eigenvalues of `M* Sigma M*^T`, without square roots or SVD.
    fn eigen_oracle(spec: &TaskSpec, r: usize) -> f64 {
        let m = spec.target_map();
        let gram = &m * spec.mixture_sigma() * m.transpose();
        let mut ev: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().map(|x| x.max(0.0)).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev.iter().skip(r).sum::<f64>() + spec.noise_power
    }

    #[test]
    fn two_task_examples() {
        let s = two_task();
        assert!((analytic_min_loss(&s, 1).unwrap() - 0.5).abs() < 1e-12);
        assert!(analytic_min_loss(&s, 2).unwrap().abs() < 1e-12);
        assert!((analytic_min_loss(&s, 0).unwrap() - 1.0).abs() < 1e-12);
        assert!(analytic_min_loss(&s, 3).is_err());
        let sv = singular_values(&s);
        assert!((sv[0] - 0.5f64.sqrt()).abs() < 1e-12 && (sv[1] - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn two_task_descent() {
        let s = two_task();
        let cfg = DescentConfig::default();
        assert!((empirical_min_loss(&s, 1, &cfg).unwrap() - 0.5).abs() < 1e-4);
        assert!(empirical_min_loss(&s, 2, &cfg).unwrap().abs() < 1e-4);
        assert!(matches!(empirical_min_loss(&s, 0, &cfg), Err(TheoryError::BadDescentConfig)));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = DescentConfig {
            lr: Some(50.0),
            init_scale: 1.0,
            ..DescentConfig::default()
        };
        assert!(matches!(empirical_min_loss(&two_task(), 2, &cfg), Err(TheoryError::Diverged { .. })));
    }

    #[test]
    fn validation_catches_overlap() {
        let mut s = two_task();
        s.sigma[1] = s.sigma[0].clone();
        assert!(s.validate().is_err());
        let mut s = two_task();
        s.p = vec![0.7, 0.7];
        assert!(s.validate().is_err());
        let mut s = two_task();
        s.v[0] = s.v[1].clone();
        assert!(s.validate().is_err());
    }

    #[test]
    fn random_specs_are_valid() {
        for seed in 0..30 {
            let (k, d, m) = random_dims(seed);
            let s = random_task_spec(k, d, m, 0.1, seed).unwrap();
            assert!(s.max_cross_term() <= 1e-12);
            assert!(effective_rank(&s) <= k);
            for r in 0..=d.min(m) {
                assert!((analytic_min_loss(&s, r).unwrap() - eigen_oracle(&s, r)).abs() < 1e-10);
            }
        }
    }

    fn ds(pairs: &[(&str, &str, f64)]) -> SimilarityDataset {
        SimilarityDataset {
            examples: pairs.iter().map(|(x, y, _)| (x.to_string(), y.to_string())).collect(),
            weights: pairs.iter().map(|(x, _, w)| (x.to_string(), *w)).collect(),
        }
    }

    #[test]
    fn conditional_examples() {
        let p = predict_conditional(&ds(&[("x1", "A", 1.0), ("x2", "B", 3.0)])).unwrap();
        assert_eq!(p["A"], 0.25);
        assert_eq!(p["B"], 0.75);
        let p = predict_conditional(&ds(&[("x1", "A", 2.0), ("x2", "A", 2.0), ("x3", "B", 2.0)])).unwrap();
        assert!((p["A"] - 2.0 / 3.0).abs() < 1e-15);
        let p = predict_conditional(&ds(&[("x1", "A", 0.3)])).unwrap();
        assert_eq!(p["A"], 1.0);
        assert!(matches!(predict_conditional(&ds(&[("x1", "A", 0.0)])), Err(TheoryError::ZeroWeights)));
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(kl_improvement_closed_form(0.3, 1.0).unwrap(), 0.0);
        assert!((kl_improvement_closed_form(0.5, 0.0).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((kl_improvement_closed_form(0.9, 2.0).unwrap() + 1.1f64.ln()).abs() < 1e-12);
        assert!(kl_improvement_closed_form(0.0, 1.0).is_err());
    }

    #[test]
    fn brute_force_examples() {
        let d = ds(&[("x1", "A", 1.0), ("x2", "B", 3.0), ("x3", "A", 0.5)]);
        assert_eq!(kl_improvement_bruteforce(&d, &FilterFn::identity(&d), "A").unwrap(), 0.0);
        let only_a = FilterFn {
            kept: [("x1", "A"), ("x3", "A")].iter().map(|(x, y)| (x.to_string(), y.to_string())).collect(),
        };
        let v = kl_improvement_bruteforce(&d, &only_a, "A").unwrap();
        let p_a: f64 = 1.5 / 4.5;
        assert!((v + p_a.ln()).abs() < 1e-12 && v >= 0.0);
        assert!(matches!(
            kl_improvement_bruteforce(&d, &FilterFn::default(), "A"),
            Err(TheoryError::NoSupport(_))
        ));
    }

    #[test]
    fn general_target_matches_sum_of_terms() {
        let (data, phi, _) = random_similarity_instance(3);
        let labels: Vec<String> = data.labels().into_iter().collect();
        let target: BTreeMap<String, f64> = labels.iter().map(|y| (y.clone(), 1.0 / labels.len() as f64)).collect();
        if let Ok(general) = kl_improvement_general(&data, &phi, &target) {
            let mut sum = 0.0;
            for (y, t) in &target {
                let r = filter_rates(&data, &phi, y).unwrap();
                sum += t * kl_improvement_closed_form(r.p_star, r.ratio()).unwrap();
            }
            assert!((general - sum).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn fact_matches_brute_force(seed: u64) {
            let (data, phi, y) = random_similarity_instance(seed);
            let r = filter_rates(&data, &phi, &y).unwrap();
            let closed = kl_improvement_closed_form(r.p_star, r.ratio()).unwrap();
            let brute = kl_improvement_bruteforce(&data, &phi, &y).unwrap();
            prop_assert!((closed - brute).abs() <= 1e-12);
            prop_assert_eq!(kl_improvement_bruteforce(&data, &FilterFn::identity(&data), &y).unwrap(), 0.0);
        }

        #[test]
        fn conditional_sums_to_one_and_is_scale_free(seed: u64, scale in 0.01f64..100.0) {
            let (data, _, _) = random_similarity_instance(seed);
            let p = predict_conditional(&data).unwrap();
            prop_assert!((p.values().sum::<f64>() - 1.0).abs() <= 1e-12);
            let mut scaled = data.clone();
            scaled.weights.values_mut().for_each(|w| *w *= scale);
            let q = predict_conditional(&scaled).unwrap();
            for (y, v) in &p {
                prop_assert!((v - q[y]).abs() <= 1e-12);
            }
        }

        #[test]
        fn analytic_is_monotone_and_flat_past_rho(seed in 0u64..500) {
            let (k, d, m) = random_dims(seed);
            let s = random_task_spec(k, d, m, 0.2, seed).unwrap();
            let losses: Vec<f64> = (0..=d.min(m)).map(|r| analytic_min_loss(&s, r).unwrap()).collect();
            for w in losses.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
            for loss in &losses[effective_rank(&s)..] {
                prop_assert!((loss - 0.2).abs() < 1e-10);
            }
        }
    }
}
