//! Parameter pruning: a coarse multiplier sweep flags parameters that barely
//! move latency or throughput, then LASSO on sampled configurations ranks the
//! rest.
//!
//! Capacity-coupled parameters are never pruned. Their values are fixed
//! while sampling for the fine stage, and the search always keeps them
//! movable so it can trade capacity between layout dimensions.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::paramspace::{Configuration, Constraints, ParamSpace};
use crate::simssd::{simulate, SimError, SimResult};
use crate::trace::IoRecord;

pub const DEFAULT_MULTIPLIERS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];
pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const DEFAULT_THRESHOLD: f64 = 0.01;
pub const MIN_FINE_SAMPLES: usize = 20;

const LASSO_TOLERANCE: f64 = 1e-8;
const LASSO_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum PruneError {
    #[error("fine pruning needs at least {MIN_FINE_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("lasso needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("non-finite value in regression input")]
    NonFinite,
    #[error("row {row} has {got} columns, expected {expected}")]
    Dimension { row: usize, got: usize, expected: usize },
    #[error("baseline configuration violates the constraints")]
    InfeasibleBaseline,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub insensitive_coarse: Vec<String>,
    /// Standardized |LASSO coefficient|, max over the latency and throughput
    /// targets and over the parameter's vector columns.
    pub coefficients: BTreeMap<String, f64>,
    pub dropped_fine: Vec<String>,
    pub surviving: Vec<String>,
    /// Capacity-coupled parameters, outside the prunable set.
    #[serde(default)]
    pub fixed: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl PruneReport {
    /// Parameters the search may move.
    pub fn searchable(&self) -> Vec<String> {
        let mut out: Vec<String> = self.surviving.iter().chain(&self.fixed).cloned().collect();
        out.sort();
        out
    }

    /// Parameters pinned to their baseline value during search.
    pub fn frozen(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .insensitive_coarse
            .iter()
            .chain(&self.dropped_fine)
            .cloned()
            .collect();
        out.sort();
        out
    }
}

/// Outcome of sweeping one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub name: String,
    pub settings_tried: usize,
    pub latency_change: f64,
    pub throughput_change: f64,
    pub insensitive: bool,
    pub vacuous: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoarseReport {
    pub sweeps: Vec<Sensitivity>,
    pub warnings: Vec<String>,
}

impl CoarseReport {
    pub fn insensitive(&self) -> Vec<String> {
        self.sweeps
            .iter()
            .filter(|s| s.insensitive)
            .map(|s| s.name.clone())
            .collect()
    }
}

/// Symmetric relative change, in [0, 1) for positive inputs.
fn relative_change(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

/// Sweeps every numeric parameter by `multipliers` around `baseline`.
///
/// Values are snapped to the nearest catalog level. A capacity-coupled
/// parameter whose scaled setting leaves the capacity band is compensated by
/// the nearest feasible change to the other coupled parameters; other
/// infeasible settings are skipped.
pub fn coarse_prune(
    space: &ParamSpace,
    baseline: &Configuration,
    constraints: &Constraints,
    workload: &[IoRecord],
    multipliers: &[f64],
    epsilon: f64,
    warmup: f64,
) -> Result<CoarseReport, PruneError> {
    if !space.satisfies(baseline, constraints) {
        return Err(PruneError::InfeasibleBaseline);
    }
    let base = simulate(space, baseline, constraints, workload, warmup)?;
    let mut report = CoarseReport::default();
    for p in space.params().iter().filter(|p| p.kind.is_numeric()) {
        let Some(base_idx) = baseline.get(&p.name) else {
            continue;
        };
        let base_value = p.kind.value(base_idx);
        let mut settings: Vec<Configuration> = Vec::new();
        for &m in multipliers {
            let idx = p.kind.nearest_index(base_value * m);
            if idx == base_idx {
                continue;
            }
            let mut c = baseline.with(&p.name, idx);
            if !space.satisfies(&c, constraints) {
                if !p.capacity_coupled {
                    continue;
                }
                match space.nearest_feasible_where(&c, constraints, |n| n != p.name) {
                    Some(fixed) => c = fixed,
                    None => continue,
                }
            }
            if c != *baseline && !settings.contains(&c) {
                settings.push(c);
            }
        }
        let (mut dl, mut dt) = (0.0f64, 0.0f64);
        for c in &settings {
            let r = simulate(space, c, constraints, workload, warmup)?;
            dl = dl.max(relative_change(r.mean_latency_us, base.mean_latency_us));
            dt = dt.max(relative_change(r.throughput_mbps, base.throughput_mbps));
        }
        let vacuous = settings.is_empty();
        if vacuous {
            report.warnings.push(format!(
                "{}: no legal setting besides the baseline; reported insensitive",
                p.name
            ));
        }
        report.sweeps.push(Sensitivity {
            name: p.name.clone(),
            settings_tried: settings.len(),
            latency_change: dl,
            throughput_change: dt,
            insensitive: vacuous || (dl < epsilon && dt < epsilon),
            vacuous,
        });
    }
    Ok(report)
}

/// Column-standardized copy of `x` (population scale). Constant columns
/// become all zeros.
pub fn standardize_columns(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let p = x[0].len();
    let mut out = vec![vec![0.0; p]; n];
    for j in 0..p {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd > 1e-12 * mean.abs().max(1.0) {
            for (o, r) in out.iter_mut().zip(x) {
                o[j] = (r[j] - mean) / sd;
            }
        }
    }
    out
}

/// Standardized copy of `y`; all zeros when `y` is constant.
pub fn standardize(y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd > 1e-12 * mean.abs().max(1.0) {
        y.iter().map(|v| (v - mean) / sd).collect()
    } else {
        vec![0.0; y.len()]
    }
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// (1/2n)·‖y − Xβ‖² + λ‖β‖₁
pub fn lasso_objective(x: &[Vec<f64>], y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let fit: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            (yi - fit).powi(2)
        })
        .sum();
    rss / (2.0 * n) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Coordinate-descent LASSO. Columns with zero variance get coefficient 0.
pub fn lasso_fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<Vec<f64>, PruneError> {
    lasso_fit_traced(x, y, lambda).map(|(beta, _)| beta)
}

/// [`lasso_fit`] plus the objective value after each sweep.
pub fn lasso_fit_traced(
    x: &[Vec<f64>],
    y: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PruneError> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(PruneError::TooFewRows(n.min(y.len())));
    }
    let p = x[0].len();
    for (row, r) in x.iter().enumerate() {
        if r.len() != p {
            return Err(PruneError::Dimension {
                row,
                got: r.len(),
                expected: p,
            });
        }
    }
    let finite = x.iter().flatten().chain(y).all(|v| v.is_finite());
    if !finite || !lambda.is_finite() || lambda < 0.0 {
        return Err(PruneError::NonFinite);
    }

    let nf = n as f64;
    let sq: Vec<f64> = (0..p)
        .map(|j| x.iter().map(|r| r[j] * r[j]).sum::<f64>() / nf)
        .collect();
    let constant: Vec<bool> = (0..p)
        .map(|j| {
            let first = x[0][j];
            x.iter().all(|r| r[j] == first)
        })
        .collect();
    let mut beta = vec![0.0; p];
    let mut resid = y.to_vec();
    let mut history = Vec::new();
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..p {
            if constant[j] || sq[j] == 0.0 {
                continue;
            }
            let old = beta[j];
            let rho = x
                .iter()
                .zip(&resid)
                .map(|(r, e)| r[j] * (e + r[j] * old))
                .sum::<f64>()
                / nf;
            let new = soft_threshold(rho, lambda) / sq[j];
            if new != old {
                let delta = new - old;
                for (e, r) in resid.iter_mut().zip(x) {
                    *e -= r[j] * delta;
                }
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        history.push(lasso_objective(x, y, &beta, lambda));
        if max_change < LASSO_TOLERANCE {
            break;
        }
    }
    Ok((beta, history))
}

/// Fine-stage scores and the drop decision for the given parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FineReport {
    pub coefficients: BTreeMap<String, f64>,
    pub dropped: Vec<String>,
    pub surviving: Vec<String>,
}

/// Scores `names` by LASSO on log-latency and log-throughput.
pub fn fine_prune(
    space: &ParamSpace,
    samples: &[(Configuration, SimResult)],
    names: &[String],
    lambda: f64,
    threshold: f64,
) -> Result<FineReport, PruneError> {
    if samples.len() < MIN_FINE_SAMPLES {
        return Err(PruneError::TooFewSamples(samples.len()));
    }
    let raw: Vec<Vec<f64>> = samples.iter().map(|(c, _)| space.vectorize(c)).collect();
    let x = standardize_columns(&raw);
    let mut targets = Vec::new();
    for f in [
        |r: &SimResult| r.mean_latency_us,
        |r: &SimResult| r.throughput_mbps,
    ] {
        let y: Vec<f64> = samples.iter().map(|(_, r)| f(r).max(1e-300).ln()).collect();
        targets.push(lasso_fit(&x, &standardize(&y), lambda)?);
    }
    let columns: BTreeMap<String, std::ops::Range<usize>> =
        space.vector_columns().into_iter().collect();
    let mut report = FineReport::default();
    for name in names {
        let score = columns.get(name).map_or(0.0, |cols| {
            targets
                .iter()
                .flat_map(|beta| beta[cols.clone()].iter())
                .fold(0.0f64, |m, b| m.max(b.abs()))
        });
        report.coefficients.insert(name.clone(), score);
        if score < threshold {
            report.dropped.push(name.clone());
        } else {
            report.surviving.push(name.clone());
        }
    }
    Ok(report)
}

/// Latin-hypercube style samples: each parameter in `vary` takes every
/// stratum of its levels once per `n` draws; all other parameters keep their
/// `base` value.
pub fn sample_configs(
    space: &ParamSpace,
    base: &Configuration,
    vary: &[String],
    n: usize,
    seed: u64,
) -> Vec<Configuration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![base.clone(); n];
    for name in vary {
        let Some(p) = space.param(name) else { continue };
        let levels = p.kind.levels();
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (c, s) in out.iter_mut().zip(strata) {
            let u: f64 = rng.gen();
            let idx = (((s as f64 + u) / n as f64) * levels as f64) as usize;
            c.set(name, idx.min(levels - 1));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneSettings {
    pub multipliers: Vec<f64>,
    pub epsilon: f64,
    pub samples: usize,
    pub lambda: f64,
    pub threshold: f64,
    pub seed: u64,
    pub warmup: f64,
}

impl Default for PruneSettings {
    fn default() -> Self {
        PruneSettings {
            multipliers: DEFAULT_MULTIPLIERS.to_vec(),
            epsilon: DEFAULT_EPSILON,
            samples: 24,
            lambda: DEFAULT_LAMBDA,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            warmup: 0.1,
        }
    }
}

/// Coarse then fine pruning for one workload.
pub fn prune(
    space: &ParamSpace,
    baseline: &Configuration,
    constraints: &Constraints,
    workload: &[IoRecord],
    settings: &PruneSettings,
) -> Result<PruneReport, PruneError> {
    let coarse = coarse_prune(
        space,
        baseline,
        constraints,
        workload,
        &settings.multipliers,
        settings.epsilon,
        settings.warmup,
    )?;
    let insensitive = coarse.insensitive();
    let mut report = PruneReport {
        warnings: coarse.warnings,
        ..PruneReport::default()
    };
    let mut candidates = Vec::new();
    for p in space.params() {
        if p.capacity_coupled {
            report.fixed.push(p.name.clone());
        } else if insensitive.contains(&p.name) {
            report.insensitive_coarse.push(p.name.clone());
        } else {
            candidates.push(p.name.clone());
        }
    }
    if candidates.is_empty() {
        return Ok(report);
    }
    let configs = sample_configs(
        space,
        baseline,
        &candidates,
        settings.samples.max(MIN_FINE_SAMPLES),
        settings.seed,
    );
    let mut samples = Vec::with_capacity(configs.len());
    for c in configs {
        let r = simulate(space, &c, constraints, workload, settings.warmup)?;
        samples.push((c, r));
    }
    let fine = fine_prune(space, &samples, &candidates, settings.lambda, settings.threshold)?;
    report.coefficients = fine.coefficients;
    report.dropped_fine = fine.dropped;
    report.surviving = fine.surviving;
    Ok(report)
}
