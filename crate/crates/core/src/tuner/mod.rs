//! GP-guided configuration search.
//!
//! Configurations are scored by a grade (lower is better) that blends the
//! target workload's goal with the mean goal on every other known workload.
//! Each outer iteration picks a root among the best validated
//! configurations, descends through neighbors by predicted grade, and
//! validates the final candidate.

pub mod gpr;
pub mod optimize;
mod session;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::paramspace::{Configuration, Constraints, ParamSpace};
use crate::simssd::{measure, SimError};
use crate::trace::IoRecord;
pub use gpr::{GprError, GprModel, GprOptions, NoiseMode, Prediction};
pub use session::{
    prune_workload, register_workloads, tune_workload, workload_features, PruneOutcome,
    Registration, TuneReport, TuneWorkloadError, REPRESENTATIVE_RECORDS,
};

#[derive(Debug, Error, PartialEq)]
pub enum TunerError {
    #[error("measurements must be positive and finite")]
    InvalidMeasurement,
    #[error("expected {expected} non-target goals, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("no validated configuration to search from")]
    NoValidated,
    #[error("configuration violates the constraints")]
    Infeasible,
    #[error("surrogate: {0}")]
    Gpr(#[from] GprError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
}

/// Mean latency and throughput of one workload run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perf {
    pub latency_us: f64,
    pub throughput_mbps: f64,
}

impl Perf {
    fn valid(&self) -> bool {
        self.latency_us > 0.0
            && self.throughput_mbps > 0.0
            && self.latency_us.is_finite()
            && self.throughput_mbps.is_finite()
    }
}

/// `(1−α)·ln(L/L_ref) − α·ln(T/T_ref)`; lower is better.
pub fn goal(conf: Perf, reference: Perf, alpha: f64) -> Result<f64, TunerError> {
    if !conf.valid() || !reference.valid() {
        return Err(TunerError::InvalidMeasurement);
    }
    Ok((1.0 - alpha) * (conf.latency_us / reference.latency_us).ln()
        - alpha * (conf.throughput_mbps / reference.throughput_mbps).ln())
}

/// `(1−β)·target + β·mean(nontarget)`; the second term is 0 for one cluster.
pub fn grade(
    target_goal: f64,
    nontarget_goals: &[f64],
    beta: f64,
    num_clusters: usize,
) -> Result<f64, TunerError> {
    let expected = num_clusters.saturating_sub(1);
    if nontarget_goals.len() != expected {
        return Err(TunerError::LengthMismatch {
            expected,
            got: nontarget_goals.len(),
        });
    }
    let penalty = if expected == 0 {
        0.0
    } else {
        nontarget_goals.iter().sum::<f64>() / expected as f64
    };
    Ok((1.0 - beta) * target_goal + beta * penalty)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeRecord {
    /// Outer iteration that produced the record; seeds use 0.
    #[serde(default)]
    pub iteration: usize,
    pub config: Configuration,
    pub per_workload: BTreeMap<String, Perf>,
    pub goal_per_workload: BTreeMap<String, f64>,
    pub grade: f64,
    pub validated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerSettings {
    pub alpha: f64,
    pub beta: f64,
    pub max_search_iterations: usize,
    pub exploit_distance_max: f64,
    pub top_set_size: usize,
    pub convergence_epsilon: f64,
    pub convergence_window: usize,
    pub max_outer_iterations: usize,
    /// Outer iterations run before the convergence test may stop the loop.
    pub min_outer_iterations: usize,
    pub rng_seed: u64,
    pub warmup: f64,
    pub gpr_restarts: usize,
}

impl Default for TunerSettings {
    fn default() -> Self {
        TunerSettings {
            alpha: 0.9,
            beta: 0.9,
            max_search_iterations: 20,
            exploit_distance_max: 6.0,
            top_set_size: 3,
            convergence_epsilon: 0.01,
            convergence_window: 3,
            max_outer_iterations: 50,
            min_outer_iterations: 20,
            rng_seed: 0,
            warmup: 0.1,
            gpr_restarts: 8,
        }
    }
}

impl TunerSettings {
    pub fn validate(&self) -> Result<(), TunerError> {
        let bad = |m: &str| Err(TunerError::InvalidSettings(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must be in (0, 1)");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta must be in (0, 1)");
        }
        if self.max_search_iterations == 0
            || self.max_outer_iterations == 0
            || self.top_set_size == 0
            || self.convergence_window == 0
        {
            return bad("iteration caps and set sizes must be at least 1");
        }
        if !(self.exploit_distance_max >= 0.0) || !(self.convergence_epsilon >= 0.0) {
            return bad("distances and tolerances must be non-negative");
        }
        Ok(())
    }
}

/// Scores configurations. Implementations must be deterministic.
pub trait Evaluator {
    fn evaluate(&self, config: &Configuration) -> Result<GradeRecord, TunerError>;
}

/// One workload known to the tuner, with the reference configuration's
/// performance on it.
#[derive(Debug, Clone)]
pub struct Workload<'a> {
    pub id: String,
    pub trace: &'a [IoRecord],
    pub reference: Perf,
}

/// Grades configurations by simulating them on every workload.
pub struct SimEvaluator<'a> {
    pub space: &'a ParamSpace,
    pub constraints: Constraints,
    pub target: String,
    pub workloads: Vec<Workload<'a>>,
    pub alpha: f64,
    pub beta: f64,
    pub warmup: f64,
}

impl SimEvaluator<'_> {
    /// Measures `config` on every workload, in workload order.
    pub fn measure(&self, config: &Configuration) -> Result<Vec<Perf>, TunerError> {
        let traces: Vec<&[IoRecord]> = self.workloads.iter().map(|w| w.trace).collect();
        Ok(measure(self.space, config, &self.constraints, &traces, self.warmup)?
            .into_iter()
            .map(|r| Perf {
                latency_us: r.mean_latency_us,
                throughput_mbps: r.throughput_mbps,
            })
            .collect())
    }
}

impl Evaluator for SimEvaluator<'_> {
    fn evaluate(&self, config: &Configuration) -> Result<GradeRecord, TunerError> {
        let perfs = self.measure(config)?;
        let mut per_workload = BTreeMap::new();
        let mut goals = BTreeMap::new();
        let mut target_goal = 0.0;
        let mut others = Vec::new();
        for (w, p) in self.workloads.iter().zip(perfs) {
            let g = goal(p, w.reference, self.alpha)?;
            if w.id == self.target {
                target_goal = g;
            } else {
                others.push(g);
            }
            per_workload.insert(w.id.clone(), p);
            goals.insert(w.id.clone(), g);
        }
        let grade = grade(target_goal, &others, self.beta, others.len() + 1)?;
        Ok(GradeRecord {
            iteration: 0,
            config: config.clone(),
            per_workload,
            goal_per_workload: goals,
            grade,
            validated: true,
        })
    }
}

/// Evaluator backed by a closure returning the grade directly.
pub struct FnEvaluator<F>(pub F);

impl<F: Fn(&Configuration) -> f64> Evaluator for FnEvaluator<F> {
    fn evaluate(&self, config: &Configuration) -> Result<GradeRecord, TunerError> {
        Ok(GradeRecord {
            iteration: 0,
            config: config.clone(),
            per_workload: BTreeMap::new(),
            goal_per_workload: BTreeMap::new(),
            grade: (self.0)(config),
            validated: true,
        })
    }
}

/// The searchable region: catalog, constraints and the parameters that may
/// move. Everything else keeps its value from the search roots.
#[derive(Debug, Clone)]
pub struct SearchSpace<'a> {
    pub space: &'a ParamSpace,
    pub constraints: Constraints,
    pub movable: BTreeSet<String>,
}

impl<'a> SearchSpace<'a> {
    pub fn all(space: &'a ParamSpace, constraints: Constraints) -> Self {
        SearchSpace {
            space,
            constraints,
            movable: space.params().iter().map(|p| p.name.clone()).collect(),
        }
    }
}

/// Mutable tuning state, exclusively owned by one session.
#[derive(Debug, Clone)]
pub struct TunerState {
    pub records: Vec<GradeRecord>,
    pub iteration: usize,
    pub stalled: bool,
    rng: ChaCha8Rng,
    gpr: Option<GprModel>,
}

impl TunerState {
    pub fn new(seed: u64) -> Self {
        TunerState {
            records: Vec::new(),
            iteration: 0,
            stalled: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
            gpr: None,
        }
    }

    /// Validated records sorted by grade (stable on ties).
    pub fn ranked(&self) -> Vec<&GradeRecord> {
        let mut v: Vec<&GradeRecord> = self.records.iter().filter(|r| r.validated).collect();
        v.sort_by(|a, b| a.grade.total_cmp(&b.grade));
        v
    }

    pub fn best(&self) -> Option<&GradeRecord> {
        self.ranked().into_iter().next()
    }

    /// Mean grade of the `k` best validated records.
    pub fn top_mean(&self, k: usize) -> Option<f64> {
        let top: Vec<f64> = self.ranked().iter().take(k).map(|r| r.grade).collect();
        (!top.is_empty()).then(|| top.iter().sum::<f64>() / top.len() as f64)
    }

    pub fn surrogate(&self) -> Option<&GprModel> {
        self.gpr.as_ref()
    }

    fn contains(&self, c: &Configuration) -> bool {
        self.records.iter().any(|r| &r.config == c)
    }

    /// Adds an evaluated record. Duplicate configurations are ignored.
    pub fn add(&mut self, mut record: GradeRecord) -> bool {
        if self.contains(&record.config) {
            return false;
        }
        record.iteration = self.iteration;
        self.records.push(record);
        true
    }

    /// Refits the surrogate on all validated records.
    pub fn refit(&mut self, space: &ParamSpace, settings: &TunerSettings) -> Result<(), TunerError> {
        let validated: Vec<&GradeRecord> = self.records.iter().filter(|r| r.validated).collect();
        if validated.len() < 2 {
            self.gpr = None;
            return Ok(());
        }
        let x: Vec<Vec<f64>> = validated.iter().map(|r| space.vectorize(&r.config)).collect();
        let y: Vec<f64> = validated.iter().map(|r| r.grade).collect();
        let opts = GprOptions {
            restarts: settings.gpr_restarts,
            seed: settings.rng_seed ^ self.records.len() as u64,
            ..GprOptions::default()
        };
        self.gpr = Some(GprModel::fit(&x, &y, &opts)?);
        Ok(())
    }

    /// The candidate most likely to beat `incumbent` under the surrogate,
    /// ties broken at random.
    fn most_promising(
        &mut self,
        space: &ParamSpace,
        scored: Vec<(f64, Configuration)>,
        incumbent: f64,
    ) -> Result<Configuration, TunerError> {
        let mut z = Vec::with_capacity(scored.len());
        for (mean, c) in &scored {
            let std = match &self.gpr {
                Some(m) => m.predict(&space.vectorize(c))?.std,
                None => 0.0,
            };
            z.push(if std > 1e-12 { (incumbent - mean) / std } else { 0.0 });
        }
        let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-9 * hi.abs().max(1e-12);
        let tied: Vec<usize> = (0..z.len()).filter(|&i| hi - z[i] <= tol).collect();
        let pick = *tied.choose(&mut self.rng).expect("non-empty");
        Ok(scored.into_iter().nth(pick).expect("index in range").1)
    }

    fn predict(&self, space: &ParamSpace, c: &Configuration) -> Result<f64, TunerError> {
        match &self.gpr {
            Some(m) => Ok(m.predict(&space.vectorize(c))?.mean),
            // With one sample there is nothing to rank by; fall back to the
            // sample itself so every candidate ties.
            None => Ok(self.records.first().map_or(0.0, |r| r.grade)),
        }
    }
}

/// What one outer iteration did.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Validated(GradeRecord),
    Stalled,
}

/// Candidates reachable from `from` that are new and within the exploit
/// distance of the validated set.
fn admissible(
    search: &SearchSpace,
    state: &TunerState,
    from: &Configuration,
    settings: &TunerSettings,
) -> Vec<Configuration> {
    let validated: Vec<Vec<f64>> = state
        .records
        .iter()
        .filter(|r| r.validated)
        .map(|r| search.space.vectorize(&r.config))
        .collect();
    search
        .space
        .neighbors_where(from, &search.constraints, |n| search.movable.contains(n))
        .into_iter()
        .filter(|c| !state.contains(c))
        .filter(|c| {
            let v = search.space.vectorize(c);
            let d = validated
                .iter()
                .map(|w| w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            d <= settings.exploit_distance_max
        })
        .collect()
}

/// One outer iteration: root choice, predicted-grade descent, validation of
/// the final candidate, surrogate refit.
///
/// When no neighbor of the root is predicted to beat it, the best predicted
/// neighbor is still validated so the surrogate keeps learning.
pub fn search_step(
    search: &SearchSpace,
    state: &mut TunerState,
    evaluator: &dyn Evaluator,
    settings: &TunerSettings,
) -> Result<StepOutcome, TunerError> {
    let ranked: Vec<GradeRecord> = state
        .ranked()
        .into_iter()
        .take(settings.top_set_size)
        .cloned()
        .collect();
    let root = ranked.choose(&mut state.rng).ok_or(TunerError::NoValidated)?;
    state.iteration += 1;

    let mut current = root.config.clone();
    let mut current_score = root.grade;
    let mut fallback: Option<Configuration> = None;
    for _ in 0..settings.max_search_iterations {
        let cands = admissible(search, state, &current, settings);
        let mut scored = Vec::with_capacity(cands.len());
        for c in cands {
            scored.push((state.predict(search.space, &c)?, c));
        }
        let Some(lo) = scored.iter().map(|(p, _)| *p).min_by(f64::total_cmp) else {
            break;
        };
        // Ties are common early on, when the surrogate is nearly flat.
        let tol = 1e-9 * lo.abs().max(1e-12);
        let tied: Vec<usize> = (0..scored.len()).filter(|&i| scored[i].0 - lo <= tol).collect();
        let pick = *tied.choose(&mut state.rng).expect("non-empty");
        let (pred, cand) = scored.swap_remove(pick);
        if pred < current_score {
            current = cand;
            current_score = pred;
        } else {
            if current == root.config {
                scored.push((pred, cand));
                fallback = Some(state.most_promising(search.space, scored, root.grade)?);
            }
            break;
        }
    }
    let chosen = if current != root.config {
        current
    } else if let Some(f) = fallback {
        f
    } else {
        state.stalled = true;
        return Ok(StepOutcome::Stalled);
    };
    if !search.space.satisfies(&chosen, &search.constraints) {
        return Err(TunerError::Infeasible);
    }
    let record = evaluator.evaluate(&chosen)?;
    state.add(record);
    state.stalled = false;
    state.refit(search.space, settings)?;
    Ok(StepOutcome::Validated(
        state.records.last().cloned().expect("record just added"),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub best: GradeRecord,
    pub history: Vec<GradeRecord>,
    pub outer_iterations: usize,
    pub converged: bool,
    pub stalled: bool,
    /// Best validated grade after each outer iteration.
    pub best_trajectory: Vec<f64>,
}

/// Runs search steps from the given seed configurations until the top set
/// stops improving, the iteration cap is hit, or the search stalls twice in
/// a row.
pub fn tune(
    search: &SearchSpace,
    evaluator: &dyn Evaluator,
    seeds: &[Configuration],
    settings: &TunerSettings,
) -> Result<TuneOutcome, TunerError> {
    settings.validate()?;
    let mut state = TunerState::new(settings.rng_seed);
    for s in seeds {
        if !search.space.satisfies(s, &search.constraints) {
            return Err(TunerError::Infeasible);
        }
        if !state.contains(s) {
            state.add(evaluator.evaluate(s)?);
        }
    }
    if state.records.is_empty() {
        return Err(TunerError::NoValidated);
    }
    state.refit(search.space, settings)?;

    let k = settings.top_set_size;
    // Top-set means, recorded only once the top set is full.
    let full = |s: &TunerState| (s.ranked().len() >= k).then(|| s.top_mean(k).expect("seeded"));
    let mut top_means = vec![full(&state)];
    let mut best_trajectory = Vec::new();
    let mut stalls = 0;
    let mut converged = false;
    let mut outer = 0;
    while outer < settings.max_outer_iterations {
        outer += 1;
        match search_step(search, &mut state, evaluator, settings)? {
            StepOutcome::Stalled => stalls += 1,
            StepOutcome::Validated(_) => stalls = 0,
        }
        best_trajectory.push(state.best().expect("seeded").grade);
        top_means.push(full(&state));
        if stalls >= 2 {
            break;
        }
        let w = settings.convergence_window;
        if outer >= settings.min_outer_iterations && top_means.len() > w {
            let old = top_means[top_means.len() - 1 - w];
            let new = top_means[top_means.len() - 1];
            if let (Some(old), Some(new)) = (old, new) {
                if relative_improvement(old, new) < settings.convergence_epsilon {
                    converged = true;
                    break;
                }
            }
        }
    }
    Ok(TuneOutcome {
        best: state.best().expect("seeded").clone(),
        history: state.records.clone(),
        outer_iterations: outer,
        converged,
        stalled: stalls >= 2,
        best_trajectory,
    })
}

/// Improvement from `old` to `new` relative to the larger magnitude. Equal
/// values give 0.
pub fn relative_improvement(old: f64, new: f64) -> f64 {
    let scale = old.abs().max(new.abs());
    if scale == 0.0 {
        0.0
    } else {
        (old - new) / scale
    }
}

/// Writes records as NDJSON, one per line.
pub fn write_history<W: Write>(out: &mut W, records: &[GradeRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
