//! Workload clustering: standardized PCA down to two dimensions, k-means in
//! the projected plane, and nearest-cluster assignment of new workloads.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::WindowFeatures;

/// Default cluster-match threshold, as a multiple of the cluster's mean
/// intra-cluster distance.
pub const DEFAULT_THRESHOLD_FACTOR: f64 = 1.5;

const KMEANS_MAX_ITERS: usize = 300;
const KMEANS_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate data")]
    Degenerate,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("k = {k} exceeds the {distinct} distinct points")]
    TooManyClusters { k: usize, distinct: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("labels ({labels}) do not match points ({points})")]
    LabelMismatch { labels: usize, points: usize },
}

pub type Point2 = [f64; 2];

/// Standardizing two-component PCA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    pub components: [Vec<f64>; 2],
    /// Eigenvalues of the standardized covariance for the two components.
    pub explained_variance: [f64; 2],
}

pub fn fit_pca(points: &[Vec<f64>]) -> Result<PcaModel, ClusterError> {
    if points.len() < 3 {
        return Err(ClusterError::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let dim = points[0].len();
    for p in points {
        if p.len() != dim {
            return Err(ClusterError::Dimension {
                expected: dim,
                got: p.len(),
            });
        }
    }
    let n = points.len() as f64;
    let means: Vec<f64> = (0..dim)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n)
        .collect();
    let raw_std: Vec<f64> = (0..dim)
        .map(|j| {
            (points.iter().map(|p| (p[j] - means[j]).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect();
    let varying = raw_std.iter().filter(|&&s| s > 0.0).count();
    if varying < 2 {
        return Err(ClusterError::Degenerate);
    }
    // Constant features keep scale 1 so they standardize to zero.
    let scales: Vec<f64> = raw_std
        .iter()
        .map(|&s| if s > 0.0 { s } else { 1.0 })
        .collect();

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for p in points {
        for a in 0..dim {
            let za = (p[a] - means[a]) / scales[a];
            for b in a..dim {
                let zb = (p[b] - means[b]) / scales[b];
                cov[(a, b)] += za * zb;
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            let v = cov[(a, b)] / n;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let component = |idx: usize| -> Vec<f64> {
        let col = eig.eigenvectors.column(idx);
        let norm = col.norm();
        let mut v: Vec<f64> = col.iter().map(|x| x / norm).collect();
        // Sign convention: the largest-magnitude entry is positive.
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    Ok(PcaModel {
        feature_means: means,
        feature_scales: scales,
        components: [component(order[0]), component(order[1])],
        explained_variance: [
            eig.eigenvalues[order[0]].max(0.0),
            eig.eigenvalues[order[1]].max(0.0),
        ],
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.feature_means.len()
    }

    pub fn project(&self, point: &[f64]) -> Result<Point2, ClusterError> {
        if point.len() != self.dim() {
            return Err(ClusterError::Dimension {
                expected: self.dim(),
                got: point.len(),
            });
        }
        let mut out = [0.0; 2];
        for (k, comp) in self.components.iter().enumerate() {
            out[k] = point
                .iter()
                .zip(&self.feature_means)
                .zip(&self.feature_scales)
                .zip(comp)
                .map(|(((x, m), s), c)| (x - m) / s * c)
                .sum();
        }
        Ok(out)
    }
}

pub fn project(model: &PcaModel, point: &[f64]) -> Result<Point2, ClusterError> {
    model.project(point)
}

pub fn distance(a: &Point2, b: &Point2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn dist2(a: &Point2, b: &Point2) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

pub fn centroid(points: &[Point2]) -> Point2 {
    let n = points.len().max(1) as f64;
    let sx: f64 = points.iter().map(|p| p[0]).sum();
    let sy: f64 = points.iter().map(|p| p[1]).sum();
    [sx / n, sy / n]
}

/// Result of Lloyd's algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Point2>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub objective_history: Vec<f64>,
}

impl KMeans {
    /// `(center, member indices)` per cluster.
    pub fn clusters(&self) -> Vec<(Point2, Vec<usize>)> {
        let mut members = vec![Vec::new(); self.centers.len()];
        for (i, &c) in self.assignments.iter().enumerate() {
            members[c].push(i);
        }
        self.centers.iter().copied().zip(members).collect()
    }
}

fn nearest(centers: &[Point2], p: &Point2) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dist2(c, p)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one center")
}

/// k-means with k-means++ seeding.
pub fn kmeans(points: &[Point2], k: usize, seed: u64) -> Result<KMeans, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    let distinct: HashSet<[u64; 2]> = points
        .iter()
        .map(|p| [p[0].to_bits(), p[1].to_bits()])
        .collect();
    if k > distinct.len() {
        return Err(ClusterError::TooManyClusters {
            k,
            distinct: distinct.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = vec![points[rng.gen_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut pick = rng.gen_range(0.0..total);
        let mut chosen = d2.len() - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && pick < w {
                chosen = i;
                break;
            }
            pick -= w;
        }
        // Guard against landing on a zero-weight tail through rounding.
        if d2[chosen] == 0.0 {
            chosen = d2
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
        }
        let c = points[chosen];
        centers.push(c);
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(dist2(p, &c));
        }
    }

    let mut assignments = vec![0usize; points.len()];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITERS {
        let mut objective = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (c, d) = nearest(&centers, p);
            *a = c;
            objective += d;
        }
        history.push(objective);

        let mut sums = vec![[0.0f64; 3]; k];
        for (a, p) in assignments.iter().zip(points) {
            sums[*a][0] += p[0];
            sums[*a][1] += p[1];
            sums[*a][2] += 1.0;
        }
        let mut moved = 0.0f64;
        for (c, s) in centers.iter_mut().zip(&sums) {
            // Empty clusters keep their previous center.
            if s[2] > 0.0 {
                let next = [s[0] / s[2], s[1] / s[2]];
                moved = moved.max(distance(c, &next));
                *c = next;
            }
        }
        if moved < KMEANS_TOL {
            break;
        }
    }
    // Final assignment against the settled centers.
    let mut objective = 0.0;
    for (a, p) in assignments.iter_mut().zip(points) {
        let (c, d) = nearest(&centers, p);
        *a = c;
        objective += d;
    }
    history.push(objective);
    Ok(KMeans {
        centers,
        assignments,
        objective_history: history,
    })
}

/// Mean silhouette coefficient of an assignment.
pub fn silhouette(points: &[Point2], assignments: &[usize], k: usize) -> f64 {
    let n = points.len();
    if n < 2 || k < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sums[assignments[j]] += distance(&points[i], &points[j]);
                counts[assignments[j]] += 1;
            }
        }
        let own = assignments[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            let denom = a.max(b);
            if denom > 0.0 {
                total += (b - a) / denom;
            }
        }
    }
    total / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub cluster_id: String,
    pub center: Point2,
    pub mean_intra_distance: f64,
    pub member_count: usize,
    /// Most frequent training label among members, when labels were given.
    #[serde(default)]
    pub majority_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub pca: PcaModel,
    pub clusters: Vec<ClusterRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub cluster_id: String,
    pub matched: bool,
    pub centroid: Point2,
    pub distance: f64,
}

fn unique_id(base: &str, taken: &HashSet<String>) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    (2..)
        .map(|i| format!("{base}-{i}"))
        .find(|c| !taken.contains(c))
        .expect("unbounded suffixes")
}

impl ClusterModel {
    /// Fits PCA and k-means over a corpus of windows. With labels, k is the
    /// number of distinct labels and clusters are named after their majority
    /// label; otherwise k maximizes the silhouette over 2..=8.
    pub fn fit(
        features: &[Vec<f64>],
        labels: Option<&[String]>,
        seed: u64,
    ) -> Result<Self, ClusterError> {
        if let Some(l) = labels {
            if l.len() != features.len() {
                return Err(ClusterError::LabelMismatch {
                    labels: l.len(),
                    points: features.len(),
                });
            }
        }
        let pca = fit_pca(features)?;
        let projected = features
            .iter()
            .map(|f| pca.project(f))
            .collect::<Result<Vec<_>, _>>()?;
        let distinct = projected
            .iter()
            .map(|p| [p[0].to_bits(), p[1].to_bits()])
            .collect::<HashSet<_>>()
            .len();

        let km = match labels {
            Some(l) => {
                let k = l.iter().collect::<HashSet<_>>().len().min(distinct);
                kmeans(&projected, k, seed)?
            }
            None => {
                let mut best: Option<(f64, KMeans)> = None;
                for k in 2..=8usize.min(distinct) {
                    let km = kmeans(&projected, k, seed)?;
                    let s = silhouette(&projected, &km.assignments, k);
                    if best.as_ref().is_none_or(|(b, _)| s > *b) {
                        best = Some((s, km));
                    }
                }
                match best {
                    Some((_, km)) => km,
                    None => kmeans(&projected, 1, seed)?,
                }
            }
        };

        let mut taken = HashSet::new();
        let mut clusters = Vec::new();
        for (idx, (center, members)) in km.clusters().into_iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let mean_intra_distance = members
                .iter()
                .map(|&m| distance(&projected[m], &center))
                .sum::<f64>()
                / members.len() as f64;
            let majority_label = labels.map(|l| {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for &m in &members {
                    *counts.entry(l[m].as_str()).or_default() += 1;
                }
                // Ties resolve to the lexicographically smallest label.
                counts
                    .into_iter()
                    .fold(("", 0usize), |best, (lab, c)| if c > best.1 { (lab, c) } else { best })
                    .0
                    .to_string()
            });
            let base = majority_label
                .clone()
                .unwrap_or_else(|| format!("cluster-{idx}"));
            let cluster_id = unique_id(&base, &taken);
            taken.insert(cluster_id.clone());
            clusters.push(ClusterRecord {
                cluster_id,
                center,
                mean_intra_distance,
                member_count: members.len(),
                majority_label,
            });
        }
        Ok(ClusterModel { pca, clusters })
    }

    pub fn project_all(&self, features: &[Vec<f64>]) -> Result<Vec<Point2>, ClusterError> {
        features.iter().map(|f| self.pca.project(f)).collect()
    }

    pub fn nearest(&self, p: &Point2) -> Option<(&ClusterRecord, f64)> {
        self.clusters
            .iter()
            .map(|c| (c, distance(&c.center, p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn get(&self, cluster_id: &str) -> Option<&ClusterRecord> {
        self.clusters.iter().find(|c| c.cluster_id == cluster_id)
    }

    /// Registers a new cluster from a workload's projected windows and
    /// returns its id. The PCA basis is left unchanged.
    pub fn add_cluster(&mut self, base_id: &str, projected: &[Point2]) -> String {
        let center = centroid(projected);
        let mean_intra_distance = if projected.is_empty() {
            0.0
        } else {
            projected.iter().map(|p| distance(p, &center)).sum::<f64>() / projected.len() as f64
        };
        let taken: HashSet<String> = self.clusters.iter().map(|c| c.cluster_id.clone()).collect();
        let cluster_id = unique_id(base_id, &taken);
        self.clusters.push(ClusterRecord {
            cluster_id: cluster_id.clone(),
            center,
            mean_intra_distance,
            member_count: projected.len().max(1),
            majority_label: None,
        });
        cluster_id
    }
}

/// Matches a workload (given as its windows' features) against the model.
pub fn assign_workload(
    model: &ClusterModel,
    windows: &[WindowFeatures],
    threshold_factor: f64,
) -> Result<Assignment, ClusterError> {
    let feats: Vec<Vec<f64>> = windows.iter().map(WindowFeatures::to_vec).collect();
    assign_points(model, &feats, threshold_factor)
}

/// [`assign_workload`] on raw feature vectors.
pub fn assign_points(
    model: &ClusterModel,
    features: &[Vec<f64>],
    threshold_factor: f64,
) -> Result<Assignment, ClusterError> {
    if features.is_empty() {
        return Err(ClusterError::TooFewPoints { needed: 1, got: 0 });
    }
    let projected = model.project_all(features)?;
    let c = centroid(&projected);
    Ok(match model.nearest(&c) {
        None => Assignment {
            cluster_id: String::new(),
            matched: false,
            centroid: c,
            distance: f64::INFINITY,
        },
        Some((rec, d)) => Assignment {
            cluster_id: rec.cluster_id.clone(),
            matched: d <= threshold_factor * rec.mean_intra_distance,
            centroid: c,
            distance: d,
        },
    })
}

/// Fraction of held-out windows whose nearest cluster carries their label.
pub fn holdout_consistency(
    model: &ClusterModel,
    features: &[Vec<f64>],
    labels: &[String],
) -> Result<f64, ClusterError> {
    if features.len() != labels.len() {
        return Err(ClusterError::LabelMismatch {
            labels: labels.len(),
            points: features.len(),
        });
    }
    if features.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (f, label) in features.iter().zip(labels) {
        let p = model.pca.project(f)?;
        if let Some((rec, _)) = model.nearest(&p) {
            let rec_label = rec.majority_label.as_deref().unwrap_or(&rec.cluster_id);
            if rec_label == label {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / features.len() as f64)
}
