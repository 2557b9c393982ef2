//! Synthetic run logs with planted crossings, for tests and demos.

use std::collections::BTreeMap;

use crate::runlog::{self, EvalPoint, ModelConfig, RunRecord, DEFAULT_BATCH_TOKENS};

pub const EVAL_SET: &str = "c4";

/// `L(N) = asymptote + amplitude * N^(-exponent)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curve {
    pub asymptote: f64,
    pub amplitude: f64,
    pub exponent: f64,
}

impl Curve {
    pub fn eval(&self, n: f64) -> f64 {
        self.asymptote + self.amplitude * n.powf(-self.exponent)
    }

    /// Curve with the given asymptote and exponent reaching `target` at `n_star`.
    pub fn through(target: f64, n_star: f64, asymptote: f64, exponent: f64) -> Self {
        Curve {
            asymptote,
            amplitude: (target - asymptote) * n_star.powf(exponent),
            exponent,
        }
    }

    /// Where the curve reaches `target`, if it ever does.
    pub fn crossing(&self, target: f64) -> Option<f64> {
        (target > self.asymptote).then(|| (self.amplitude / (target - self.asymptote)).powf(1.0 / self.exponent))
    }
}

/// `n` geometrically spaced token counts from `lo` to `hi`, rounded, distinct and at least 1.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<u64> {
    let mut grid: Vec<u64> = (0..n)
        .map(|i| {
            let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            (lo * (hi / lo).powf(t)).round().max(1.0) as u64
        })
        .collect();
    grid.dedup();
    grid
}

/// A run whose losses follow `curve` exactly at each grid point.
pub fn curve_record(label: &str, model: &ModelConfig, pool_tokens: u64, curve: &Curve, grid: &[u64]) -> RunRecord {
    let losses: Vec<(u64, f64)> = grid.iter().map(|&t| (t, curve.eval(t as f64))).collect();
    points_record(label, model, pool_tokens, &losses)
}

pub fn points_record(label: &str, model: &ModelConfig, pool_tokens: u64, losses: &[(u64, f64)]) -> RunRecord {
    RunRecord {
        dataset_label: label.to_string(),
        model: model.clone(),
        train_tokens: losses.last().map_or(1, |p| p.0),
        pool_tokens,
        batch_tokens: DEFAULT_BATCH_TOKENS,
        eval_points: losses
            .iter()
            .map(|&(t, l)| EvalPoint {
                tokens_seen: t,
                losses: BTreeMap::from([(EVAL_SET.to_string(), l)]),
                benchmarks: None,
            })
            .collect(),
        weight_decay: 0.1,
        learning_rate: 3e-3,
    }
}

/// Compute threshold law `compute = alpha * m^beta` to plant, with the two
/// construction parameters that read it back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedLaw {
    pub alpha: f64,
    pub beta: f64,
    pub tokens_per_param: f64,
    pub epochs: f64,
    /// `c2` of every planted quadratic.
    pub curvature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedModel {
    pub config: ModelConfig,
    /// `log10 N* = c0 + c1 x + c2 x^2`, `x = log10 m`.
    pub quadratic: [f64; 3],
    pub target_loss: f64,
    pub tpp_pool: f64,
    pub epoch_pool: f64,
    pub pools: Vec<u64>,
}

impl PlantedModel {
    pub fn n_star(&self, m: f64) -> f64 {
        let [c0, c1, c2] = self.quadratic;
        let x = m.log10();
        10f64.powf(c0 + c1 * x + c2 * x * x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedWorld {
    pub law: PlantedLaw,
    pub models: Vec<PlantedModel>,
    pub pool_runs: Vec<RunRecord>,
    pub filtered_runs: Vec<RunRecord>,
}

/// Per model, a quadratic through the pool where the token-per-parameter
/// budget meets the law and the pool where the epoch line meets it. Pool runs
/// at `pools_per_model` sizes around those two end before their crossing, so
/// every crossing must be extrapolated.
pub fn planted_world(law: PlantedLaw, configs: &[ModelConfig], pools_per_model: usize) -> Result<PlantedWorld, String> {
    if !(law.beta > 1.0) {
        return Err("beta must exceed 1 for the epoch line to meet the law".into());
    }
    if pools_per_model < 3 {
        return Err("need at least 3 pools per model".into());
    }
    let mut models = Vec::new();
    let mut pool_runs = Vec::new();
    let mut filtered_runs = Vec::new();
    for cfg in configs {
        let size = cfg.total_params as f64;
        let ne = runlog::non_embedding_params(cfg).map_err(|e| e.to_string())? as f64;
        let n_tpp = law.tokens_per_param * ne;
        let m_tpp = (6.0 * n_tpp * size / law.alpha).powf(1.0 / law.beta);
        let m_ep = (6.0 * law.epochs * size / law.alpha).powf(1.0 / (law.beta - 1.0));
        let (x1, y1) = (m_tpp.log10(), n_tpp.log10());
        let (x2, y2) = (m_ep.log10(), (law.epochs * m_ep).log10());
        if (x1 - x2).abs() < 1e-6 {
            return Err(format!("{}: both constructions land on the same pool", cfg.name));
        }
        let c2 = law.curvature;
        let c1 = (y2 - y1) / (x2 - x1) - c2 * (x1 + x2);
        let c0 = y1 - c1 * x1 - c2 * x1 * x1;
        let slope = |x: f64| c1 + 2.0 * c2 * x;
        if !(slope(x1) > 0.0 && slope(x2) > 1.0 && c2 >= 0.0) {
            return Err(format!("{}: planted quadratic is not on its increasing branch", cfg.name));
        }

        let target = 2.8 + 0.1 * (9.0 - size.log10());
        let (lo, hi) = (x1.min(x2) - 0.5, x1.max(x2) + 0.5);
        let mut model = PlantedModel {
            config: cfg.clone(),
            quadratic: [c0, c1, c2],
            target_loss: target,
            tpp_pool: m_tpp,
            epoch_pool: m_ep,
            pools: Vec::new(),
        };
        for i in 0..pools_per_model {
            let x = lo + (hi - lo) * i as f64 / (pools_per_model - 1) as f64;
            let m = 10f64.powf(x).round() as u64;
            let n_star = model.n_star(m as f64);
            let curve = Curve::through(target, n_star, target - 0.25, 0.3);
            let grid = geometric_grid(n_star * 1e-3, n_star * 0.5, 8);
            pool_runs.push(curve_record(&format!("pool-{m}"), cfg, m, &curve, &grid));
            model.pools.push(m);
        }
        let grid = geometric_grid(1e8, 1e10, 4);
        let losses: Vec<(u64, f64)> = grid.iter().enumerate().map(|(i, &t)| (t, target + 0.1 * (3 - i) as f64)).collect();
        filtered_runs.push(points_record("dclm-baseline", cfg, 10u64.pow(12), &losses));
        models.push(model);
    }
    Ok(PlantedWorld {
        law,
        models,
        pool_runs,
        filtered_runs,
    })
}
