//! End-to-end tuning of one workload against a configuration database.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{tune, GradeRecord, Perf, SearchSpace, SimEvaluator, TuneOutcome, TunerError, TunerSettings, Workload};
use crate::clustering::{assign_points, ClusterError, ClusterModel, DEFAULT_THRESHOLD_FACTOR};
use crate::confdb::{ClusterMeta, ConfDb, ConfDbEntry, DbError};
use crate::paramspace::{Configuration, Constraints, ParamSpace};
use crate::pruning::{prune, PruneError, PruneReport, PruneSettings};
use crate::trace::{extract_features, make_windows, IoRecord, TraceError, DEFAULT_WINDOW_SIZE};

#[derive(Debug, Error)]
pub enum TuneWorkloadError {
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Tuner(#[from] TunerError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error("no configuration near the reference satisfies the constraints")]
    NoFeasibleReference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneReport {
    pub cluster_id: String,
    /// Whether the workload matched a cluster already in the database.
    pub matched: bool,
    pub reference: GradeRecord,
    pub outcome: TuneOutcome,
    pub frozen: Vec<String>,
}

/// Per-window feature vectors. Traces shorter than one default window form
/// a single window.
pub fn workload_features(trace: &[IoRecord]) -> Result<Vec<Vec<f64>>, TraceError> {
    if trace.is_empty() {
        return Err(TraceError::Empty);
    }
    let size = DEFAULT_WINDOW_SIZE.min(trace.len());
    Ok(make_windows(trace, size)?
        .iter()
        .map(|w| extract_features(w).to_vec())
        .collect())
}

/// Clusters `target`, seeds the search from the matched cluster's stored
/// configurations plus the reference, tunes, and appends every validated
/// record to the target cluster's entry. A cluster without a prune report is
/// pruned on `target` first.
pub fn tune_workload(
    space: &ParamSpace,
    target: &[IoRecord],
    constraints: &Constraints,
    settings: &TunerSettings,
    db: &mut ConfDb,
    reference: Option<&Configuration>,
) -> Result<TuneReport, TuneWorkloadError> {
    settings.validate()?;
    let features = workload_features(target)?;

    let (cluster_id, matched, mut entry) = resolve_cluster(db, target, &features)?;
    let reference_config = feasible_reference(space, constraints, reference)?;

    // Every other cluster contributes its representative trace.
    let mut traces: Vec<(String, Vec<IoRecord>)> = vec![(cluster_id.clone(), target.to_vec())];
    for id in db.list_clusters()? {
        if id == cluster_id {
            continue;
        }
        if let Some(e) = db.get(&id)? {
            if let Some(rel) = &e.cluster_meta.representative_trace {
                traces.push((id, db.load_trace(rel)?));
            }
        }
    }

    let mut evaluator = SimEvaluator {
        space,
        constraints: *constraints,
        target: cluster_id.clone(),
        workloads: traces
            .iter()
            .map(|(id, t)| Workload {
                id: id.clone(),
                trace: t,
                reference: Perf {
                    latency_us: 1.0,
                    throughput_mbps: 1.0,
                },
            })
            .collect(),
        alpha: settings.alpha,
        beta: settings.beta,
        warmup: settings.warmup,
    };
    let ref_perf = evaluator.measure(&reference_config)?;
    for (w, p) in evaluator.workloads.iter_mut().zip(&ref_perf) {
        w.reference = *p;
    }
    entry.reference_perf = evaluator
        .workloads
        .iter()
        .map(|w| (w.id.clone(), w.reference))
        .collect();

    if entry.prune_report.is_none() {
        let prune_settings = PruneSettings {
            seed: settings.rng_seed,
            warmup: settings.warmup,
            ..PruneSettings::default()
        };
        entry.prune_report = Some(prune(space, &reference_config, constraints, target, &prune_settings)?);
    }

    let mut search = SearchSpace::all(space, *constraints);
    let mut frozen = Vec::new();
    if let Some(report) = &entry.prune_report {
        frozen = report.frozen();
        search.movable = report.searchable().into_iter().collect();
    }

    let mut seeds = vec![reference_config.clone()];
    for r in &entry.records {
        let mut c = r.config.clone();
        // Pinned parameters keep their reference values.
        for name in &frozen {
            if let Some(v) = reference_config.get(name) {
                c.set(name, v);
            }
        }
        if space.validate(&c).is_ok() && space.satisfies(&c, constraints) && !seeds.contains(&c) {
            seeds.push(c);
        }
    }

    let outcome = tune(&search, &evaluator, &seeds, settings)?;
    let reference_record = outcome
        .history
        .iter()
        .find(|r| r.config == reference_config)
        .cloned()
        .expect("reference is the first seed");

    entry.records.extend(outcome.history.iter().cloned());
    db.put(&entry)?;

    Ok(TuneReport {
        cluster_id,
        matched,
        reference: reference_record,
        outcome,
        frozen,
    })
}

/// Records kept as a cluster's representative trace.
pub const REPRESENTATIVE_RECORDS: usize = 6000;

/// Matches `target` against the stored cluster model, creating a cluster
/// when nothing is close enough, and returns the (possibly new) entry. A new
/// entry keeps `target` as its representative trace.
fn resolve_cluster(
    db: &mut ConfDb,
    target: &[IoRecord],
    features: &[Vec<f64>],
) -> Result<(String, bool, ConfDbEntry), TuneWorkloadError> {
    let (cluster_id, matched) = match db.cluster_model().cloned() {
        Some(mut model) => {
            let a = assign_points(&model, features, DEFAULT_THRESHOLD_FACTOR)?;
            if a.matched {
                (a.cluster_id, true)
            } else {
                let projected = model.project_all(features)?;
                let id = model.add_cluster("workload", &projected);
                db.set_cluster_model(model)?;
                (id, false)
            }
        }
        None => {
            let taken: BTreeSet<String> = db.list_clusters()?.into_iter().collect();
            let id = (0..)
                .map(|i| format!("workload-{i}"))
                .find(|c| !taken.contains(c))
                .expect("unbounded ids");
            (id, false)
        }
    };

    let mut entry = match db.get(&cluster_id)? {
        Some(e) => e,
        None => {
            let rec = db.cluster_model().and_then(|m| m.get(&cluster_id)).cloned();
            let meta = ClusterMeta {
                center: rec.as_ref().map_or([0.0, 0.0], |r| r.center),
                mean_intra_distance: rec.as_ref().map_or(0.0, |r| r.mean_intra_distance),
                member_count: rec.as_ref().map_or(features.len(), |r| r.member_count),
                representative_trace: None,
            };
            ConfDbEntry::new(&cluster_id, meta)
        }
    };
    if entry.cluster_meta.representative_trace.is_none() {
        let n = target.len().min(REPRESENTATIVE_RECORDS);
        entry.cluster_meta.representative_trace = Some(db.put_trace(&cluster_id, &target[..n])?);
    }
    db.put(&entry)?;
    Ok((cluster_id, matched, entry))
}

fn feasible_reference(
    space: &ParamSpace,
    constraints: &Constraints,
    reference: Option<&Configuration>,
) -> Result<Configuration, TuneWorkloadError> {
    let base = reference.cloned().unwrap_or_else(|| space.reference_config());
    space
        .nearest_feasible(&base, constraints)
        .ok_or(TuneWorkloadError::NoFeasibleReference)
}

/// Result of [`prune_workload`].
#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub cluster_id: String,
    pub matched: bool,
    pub report: PruneReport,
}

/// Prunes the parameter space on `target` around the reference and stores
/// the report on the workload's cluster entry.
pub fn prune_workload(
    space: &ParamSpace,
    target: &[IoRecord],
    constraints: &Constraints,
    settings: &PruneSettings,
    db: &mut ConfDb,
    reference: Option<&Configuration>,
) -> Result<PruneOutcome, TuneWorkloadError> {
    let features = workload_features(target)?;
    let (cluster_id, matched, mut entry) = resolve_cluster(db, target, &features)?;
    let baseline = feasible_reference(space, constraints, reference)?;
    let report = prune(space, &baseline, constraints, target, settings)?;
    entry.prune_report = Some(report.clone());
    db.put(&entry)?;
    Ok(PruneOutcome {
        cluster_id,
        matched,
        report,
    })
}

/// One row of [`register_workloads`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub name: String,
    pub cluster_id: String,
    pub windows: usize,
    /// False when the workload founded a new cluster.
    pub matched: bool,
}

/// Clusters a corpus of named traces into the store.
///
/// Without a stored model, one is fitted over every window of the corpus
/// (`labels` maps trace names to workload labels) and each cluster's
/// representative trace is taken from the trace contributing most of its
/// windows. With a stored model, each trace is matched as a whole and
/// unmatched traces found new clusters.
pub fn register_workloads(
    db: &mut ConfDb,
    corpus: &[(String, Vec<IoRecord>)],
    labels: Option<&BTreeMap<String, String>>,
    seed: u64,
) -> Result<Vec<Registration>, TuneWorkloadError> {
    let mut per_trace = Vec::with_capacity(corpus.len());
    for (_, trace) in corpus {
        per_trace.push(workload_features(trace)?);
    }

    if db.cluster_model().is_some() {
        let mut rows = Vec::new();
        for (i, (name, trace)) in corpus.iter().enumerate() {
            let (cluster_id, matched, _) = resolve_cluster(db, trace, &per_trace[i])?;
            rows.push(Registration {
                name: name.clone(),
                cluster_id,
                windows: per_trace[i].len(),
                matched,
            });
        }
        return Ok(rows);
    }

    let mut features = Vec::new();
    let mut window_labels = Vec::new();
    let mut owner = Vec::new();
    for (i, f) in per_trace.iter().enumerate() {
        let name = &corpus[i].0;
        let label = labels.and_then(|l| l.get(name)).unwrap_or(name);
        for w in f {
            features.push(w.clone());
            window_labels.push(label.clone());
            owner.push(i);
        }
    }
    let model = ClusterModel::fit(&features, labels.map(|_| window_labels.as_slice()), seed)?;
    let projected = model.project_all(&features)?;
    let home: Vec<String> = projected
        .iter()
        .map(|p| model.nearest(p).map(|(c, _)| c.cluster_id.clone()).unwrap_or_default())
        .collect();
    db.set_cluster_model(model.clone())?;

    for rec in &model.clusters {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for (w, id) in home.iter().enumerate() {
            if *id == rec.cluster_id {
                *counts.entry(owner[w]).or_default() += 1;
            }
        }
        let Some((&best, _)) = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) else {
            continue;
        };
        let trace = &corpus[best].1;
        let n = trace.len().min(REPRESENTATIVE_RECORDS);
        let rel = db.put_trace(&rec.cluster_id, &trace[..n])?;
        let mut entry = db
            .get(&rec.cluster_id)?
            .unwrap_or_else(|| ConfDbEntry::new(&rec.cluster_id, placeholder_meta()));
        entry.cluster_meta = ClusterMeta {
            center: rec.center,
            mean_intra_distance: rec.mean_intra_distance,
            member_count: rec.member_count,
            representative_trace: Some(rel),
        };
        db.put(&entry)?;
    }

    Ok(corpus
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            // A trace belongs to the cluster holding most of its windows.
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for (w, id) in home.iter().enumerate() {
                if owner[w] == i {
                    *counts.entry(id.as_str()).or_default() += 1;
                }
            }
            let cluster_id = counts
                .into_iter()
                .fold(("", 0usize), |best, (id, c)| if c > best.1 { (id, c) } else { best })
                .0
                .to_string();
            Registration {
                name: name.clone(),
                cluster_id,
                windows: per_trace[i].len(),
                matched: true,
            }
        })
        .collect())
}

fn placeholder_meta() -> ClusterMeta {
    ClusterMeta {
        center: [0.0, 0.0],
        mean_intra_distance: 0.0,
        member_count: 0,
        representative_trace: None,
    }
}
