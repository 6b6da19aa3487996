//! k-means state space over standardized feature rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use crate::trajectory::{build_trajectory_set, BuildReport, SubjectSequence};

pub const DEFAULT_K: usize = 200;
pub const DEFAULT_MIN_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub k: usize,
    pub min_size: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    /// Stop once the relative change in inertia falls below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: DEFAULT_K,
            min_size: DEFAULT_MIN_SIZE,
            restarts: 1,
            max_iterations: 300,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub mean: f64,
    pub std: f64,
    /// Zero-variance features do not take part in distances.
    pub active: bool,
}

/// Per-cluster feature statistics in original units, from the final assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub counts: Vec<usize>,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub feature_names: Vec<String>,
    pub scaling: Vec<FeatureScaling>,
    /// `k` rows over the active features, standardized.
    pub centroids: Vec<Vec<f64>>,
    /// Lloyd membership counts before dropping.
    pub member_counts: Vec<usize>,
    pub dropped_cluster_ids: Vec<usize>,
    pub min_size: usize,
    pub inertia: f64,
    pub iterations: usize,
    pub stats: ClusterStats,
}

impl ClusterModel {
    pub fn retained_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.k).filter(|c| self.dropped_cluster_ids.binary_search(c).is_err())
    }

    pub fn is_dropped(&self, cluster: usize) -> bool {
        self.dropped_cluster_ids.binary_search(&cluster).is_ok()
    }

    pub fn excluded_features(&self) -> Vec<&str> {
        self.feature_names
            .iter()
            .zip(&self.scaling)
            .filter(|(_, s)| !s.active)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        standardize(row, &self.scaling)
    }

    /// Map a standardized centroid back to original units (inactive features get their mean).
    pub fn centroid_in_original_units(&self, cluster: usize) -> Vec<f64> {
        let mut active = self.centroids[cluster].iter();
        self.scaling
            .iter()
            .map(|s| if s.active { active.next().expect("one value per active feature") * s.std + s.mean } else { s.mean })
            .collect()
    }
}

fn standardize(row: &[f64], scaling: &[FeatureScaling]) -> Vec<f64> {
    row.iter()
        .zip(scaling)
        .filter(|(_, s)| s.active)
        .map(|(v, s)| (v - s.mean) / s.std)
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest candidate centroid; lowest index wins ties.
fn nearest<'a>(point: &[f64], centroids: &[Vec<f64>], candidates: impl Iterator<Item = &'a usize>) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for &c in candidates {
        let d = sq_dist(point, &centroids[c]);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn check_rows(rows: &[Vec<f64>], width: usize) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::schema("discretize", format!("row {i} has {} features, expected {width}", r.len())));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::schema("discretize", format!("row {i} has a non-finite feature value")));
        }
    }
    Ok(())
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = d2.iter().rposition(|&d| d > 0.0).expect("positive total");
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

struct LloydRun {
    centroids: Vec<Vec<f64>>,
    labels: Vec<usize>,
    inertia: f64,
    iterations: usize,
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iterations: usize, tolerance: f64) -> LloydRun {
    let k = centroids.len();
    let dim = centroids[0].len();
    let all: Vec<usize> = (0..k).collect();
    let mut labels = vec![0; points.len()];
    let mut previous = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        let mut inertia = 0.0;
        for (label, p) in labels.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centroids, all.iter());
            *label = c;
            inertia += d;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&c, p) in labels.iter().zip(points) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        // empty clusters keep their previous centroid
        for ((centroid, sum), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *centroid = sum.into_iter().map(|s| s / n as f64).collect();
            }
        }
        let converged = inertia == 0.0 || (previous.is_finite() && (previous - inertia).abs() <= tolerance * previous);
        previous = inertia;
        if converged {
            break;
        }
    }
    // final assignment against the updated centroids
    let mut inertia = 0.0;
    for (label, p) in labels.iter_mut().zip(points) {
        let (c, d) = nearest(p, &centroids, all.iter());
        *label = c;
        inertia += d;
    }
    LloydRun {
        centroids,
        labels,
        inertia,
        iterations,
    }
}

/// Fit k-means over `rows` (one row per time step, columns named by `feature_names`).
pub fn fit_state_space(rows: &[Vec<f64>], feature_names: &[String], config: &KMeansConfig) -> Result<ClusterModel> {
    let k = config.k;
    if k < 2 {
        return Err(Error::param("discretize", "k", format!("need k >= 2, got {k}")));
    }
    if k > rows.len() {
        return Err(Error::param("discretize", "k", format!("k = {k} exceeds the {} available rows", rows.len())));
    }
    if config.restarts == 0 || config.max_iterations == 0 {
        return Err(Error::param("discretize", "restarts", "restarts and max_iterations must be at least 1"));
    }
    check_rows(rows, feature_names.len())?;

    let n = rows.len() as f64;
    let scaling: Vec<FeatureScaling> = (0..feature_names.len())
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let std = (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
            let active = std > 1e-12 * mean.abs().max(1.0);
            if !active {
                log::warn!("discretize: feature `{}` has zero variance and is excluded", feature_names[j]);
            }
            FeatureScaling {
                mean,
                std: if active { std } else { 1.0 },
                active,
            }
        })
        .collect();
    if !scaling.iter().any(|s| s.active) {
        return Err(Error::schema("discretize", "every feature has zero variance"));
    }
    let points: Vec<Vec<f64>> = rows.iter().map(|r| standardize(r, &scaling)).collect();

    let mut best: Option<LloydRun> = None;
    for restart in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(restart as u64);
        let init = kmeans_plus_plus(&points, k, &mut rng);
        let run = lloyd(&points, init, config.max_iterations, config.tolerance);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");

    let mut member_counts = vec![0usize; k];
    for &c in &run.labels {
        member_counts[c] += 1;
    }
    let dropped_cluster_ids: Vec<usize> = (0..k).filter(|&c| member_counts[c] < config.min_size).collect();
    if dropped_cluster_ids.len() == k {
        return Err(Error::param(
            "discretize",
            "min_size",
            format!("every cluster has fewer than {} members", config.min_size),
        ));
    }

    let mut model = ClusterModel {
        k,
        feature_names: feature_names.to_vec(),
        scaling,
        centroids: run.centroids,
        member_counts,
        dropped_cluster_ids,
        min_size: config.min_size,
        inertia: run.inertia,
        iterations: run.iterations,
        stats: ClusterStats {
            counts: vec![],
            means: vec![],
            stds: vec![],
        },
    };
    let labels = assign_states(rows, &model)?;
    model.stats = cluster_stats(rows, &labels, k);
    Ok(model)
}

fn cluster_stats(rows: &[Vec<f64>], labels: &[usize], k: usize) -> ClusterStats {
    let d = rows.first().map_or(0, Vec::len);
    let mut counts = vec![0usize; k];
    let mut means = vec![vec![0.0; d]; k];
    for (&c, r) in labels.iter().zip(rows) {
        counts[c] += 1;
        for (m, v) in means[c].iter_mut().zip(r) {
            *m += v;
        }
    }
    for (m, &n) in means.iter_mut().zip(&counts) {
        if n > 0 {
            m.iter_mut().for_each(|x| *x /= n as f64);
        }
    }
    let mut stds = vec![vec![0.0; d]; k];
    for (&c, r) in labels.iter().zip(rows) {
        for ((s, v), m) in stds[c].iter_mut().zip(r).zip(&means[c]) {
            *s += (v - m).powi(2);
        }
    }
    for (s, &n) in stds.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|x| *x = (*x / n as f64).sqrt());
        }
    }
    ClusterStats { counts, means, stds }
}

/// Nearest retained centroid for each row in standardized space; lowest id wins ties.
pub fn assign_states(rows: &[Vec<f64>], model: &ClusterModel) -> Result<Vec<usize>> {
    check_rows(rows, model.feature_names.len())?;
    let retained: Vec<usize> = model.retained_ids().collect();
    Ok(rows
        .iter()
        .map(|r| nearest(&model.standardize(r), &model.centroids, retained.iter()).0)
        .collect())
}
