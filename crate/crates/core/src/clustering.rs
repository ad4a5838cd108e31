//! Threshold clustering of trip endpoints (a QuickBundles-style single
//! pass) and elbow selection of the threshold. The resulting cluster ids
//! serve as class labels.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::gaf::FeatureMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("endpoint feature{} has zero magnitude", sample_suffix(*.sample))]
    ZeroVector { sample: Option<usize> },
    #[error("endpoint features differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("empty dataset")]
    Empty,
    #[error("threshold grid needs at least 3 ascending points, got {0:?}")]
    InvalidGrid(Vec<f64>),
    #[error("{0} clusters are too many for exhaustive label matching")]
    TooManyClusters(usize),
}

fn sample_suffix(sample: Option<usize>) -> String {
    sample.map(|s| format!(" of sample {s}")).unwrap_or_default()
}

/// Last row of a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointFeature(Vec<f64>);

impl EndpointFeature {
    pub fn new(vector: Vec<f64>) -> Result<Self, ClusterError> {
        if vector.iter().all(|&v| v == 0.0) {
            return Err(ClusterError::ZeroVector { sample: None });
        }
        Ok(Self(vector))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn endpoint_feature(features: &FeatureMatrix) -> Result<EndpointFeature, ClusterError> {
    EndpointFeature::new(features.last_row().to_vec())
}

/// How the clamped cosine ratio is turned into a distance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMode {
    /// `arccos(c) / π`: the angle between the vectors as a fraction of π.
    #[default]
    Angular,
    /// `arccos(cos(c)) / π`: cosine applied once more to the ratio before
    /// the arccos. Kept for comparison only.
    LiteralCosine,
}

pub fn cosine_distance(a: &EndpointFeature, b: &EndpointFeature) -> Result<f64, ClusterError> {
    distance(a.values(), b.values(), DistanceMode::Angular)
}

pub fn cosine_distance_with(a: &EndpointFeature, b: &EndpointFeature, mode: DistanceMode) -> Result<f64, ClusterError> {
    distance(a.values(), b.values(), mode)
}

fn distance(a: &[f64], b: &[f64], mode: DistanceMode) -> Result<f64, ClusterError> {
    if a.len() != b.len() {
        return Err(ClusterError::LengthMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(ClusterError::ZeroVector { sample: None });
    }
    let c = (dot / (na * nb)).clamp(-1.0, 1.0);
    let c = match mode {
        DistanceMode::Angular => c,
        DistanceMode::LiteralCosine => c.cos(),
    };
    Ok(c.acos() / std::f64::consts::PI)
}

/// Members pointing in opposite directions can average to the zero vector;
/// such a centroid is treated as orthogonal to everything (ratio 0).
fn centroid_distance(v: &[f64], centroid: &[f64], mode: DistanceMode) -> f64 {
    distance(v, centroid, mode).unwrap_or_else(|_| match mode {
        DistanceMode::Angular => 0.5,
        DistanceMode::LiteralCosine => 1.0f64.acos() / std::f64::consts::PI,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Centroid {
    pub mean: Vec<f64>,
    pub count: usize,
}

/// One online step of the clustering pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub sample: usize,
    /// Closest existing cluster and its distance when the sample arrived.
    pub nearest: Option<(usize, f64)>,
    pub cluster: usize,
    pub seeded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterModel {
    pub threshold: f64,
    pub mode: DistanceMode,
    pub centroids: Vec<Centroid>,
    pub assignments: Vec<usize>,
    pub log: Vec<Decision>,
}

impl ClusterModel {
    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }
}

/// Single pass in input order: each endpoint joins the nearest centroid if
/// it lies within `threshold` (ties go to the lowest id), otherwise it
/// seeds a new cluster. Centroids are running means of their members.
pub fn qb_cluster_endpoints(
    endpoints: &[EndpointFeature],
    threshold: f64,
    mode: DistanceMode,
) -> Result<ClusterModel, ClusterError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(ClusterError::InvalidThreshold(threshold));
    }
    if endpoints.is_empty() {
        return Err(ClusterError::Empty);
    }
    let mut centroids: Vec<Centroid> = Vec::new();
    let mut assignments = Vec::with_capacity(endpoints.len());
    let mut log = Vec::with_capacity(endpoints.len());
    for (i, e) in endpoints.iter().enumerate() {
        let v = e.values();
        let mut nearest: Option<(usize, f64)> = None;
        for (k, c) in centroids.iter().enumerate() {
            let d = centroid_distance(v, &c.mean, mode);
            if nearest.is_none_or(|(_, best)| d < best) {
                nearest = Some((k, d));
            }
        }
        let (cluster, seeded) = match nearest {
            Some((k, d)) if d <= threshold => {
                let c = &mut centroids[k];
                c.count += 1;
                let n = c.count as f64;
                for (m, x) in c.mean.iter_mut().zip(v) {
                    *m += (x - *m) / n;
                }
                (k, false)
            }
            _ => {
                centroids.push(Centroid {
                    mean: v.to_vec(),
                    count: 1,
                });
                (centroids.len() - 1, true)
            }
        };
        assignments.push(cluster);
        log.push(Decision {
            sample: i,
            nearest,
            cluster,
            seeded,
        });
    }
    Ok(ClusterModel {
        threshold,
        mode,
        centroids,
        assignments,
        log,
    })
}

pub fn endpoints(dataset: &[FeatureMatrix]) -> Result<Vec<EndpointFeature>, ClusterError> {
    dataset
        .iter()
        .enumerate()
        .map(|(i, f)| endpoint_feature(f).map_err(|_| ClusterError::ZeroVector { sample: Some(i) }))
        .collect()
}

pub fn qb_cluster(dataset: &[FeatureMatrix], threshold: f64, mode: DistanceMode) -> Result<ClusterModel, ClusterError> {
    qb_cluster_endpoints(&endpoints(dataset)?, threshold, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElbowResult {
    pub threshold: f64,
    pub clusters: usize,
    /// `(θ, k(θ))` for every grid point.
    pub table: Vec<(f64, usize)>,
    /// `k` was the same at every grid point; the smallest θ was returned.
    pub degenerate: bool,
}

impl ElbowResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,clusters\n");
        for (t, k) in &self.table {
            let _ = writeln!(out, "{t},{k}");
        }
        out
    }
}

/// `start, start+step, …` up to `stop` inclusive, computed by index and
/// rounded to 12 decimals so the points print cleanly.
pub fn theta_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || stop < start {
        return Vec::new();
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect()
}

/// Clusters at every grid threshold and returns the point of largest
/// second difference `k(θ_{i−1}) − 2k(θ_i) + k(θ_{i+1})`, ties to the
/// smaller θ.
pub fn elbow_select(dataset: &[FeatureMatrix], grid: &[f64], mode: DistanceMode) -> Result<ElbowResult, ClusterError> {
    elbow_select_endpoints(&endpoints(dataset)?, grid, mode)
}

pub fn elbow_select_endpoints(
    endpoints: &[EndpointFeature],
    grid: &[f64],
    mode: DistanceMode,
) -> Result<ElbowResult, ClusterError> {
    if grid.len() < 3 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ClusterError::InvalidGrid(grid.to_vec()));
    }
    let mut table = Vec::with_capacity(grid.len());
    for &t in grid {
        let k = qb_cluster_endpoints(endpoints, t, mode)?.num_clusters();
        log::debug!("theta {t}: {k} clusters");
        table.push((t, k));
    }
    if table.iter().all(|&(_, k)| k == table[0].1) {
        log::warn!(
            "cluster count is {} over the whole grid; using the smallest threshold {}",
            table[0].1,
            grid[0]
        );
        return Ok(ElbowResult {
            threshold: grid[0],
            clusters: table[0].1,
            table,
            degenerate: true,
        });
    }
    let mut best = 1;
    let mut best_curv = i64::MIN;
    for i in 1..table.len() - 1 {
        let curv = table[i - 1].1 as i64 - 2 * table[i].1 as i64 + table[i + 1].1 as i64;
        if curv > best_curv {
            best_curv = curv;
            best = i;
        }
    }
    Ok(ElbowResult {
        threshold: table[best].0,
        clusters: table[best].1,
        table,
        degenerate: false,
    })
}

/// Per-class statistics of a labeled dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub class: usize,
    pub count: usize,
    pub speed_mean: f64,
    pub accel_std: f64,
    pub jerk_std: f64,
}

/// Class labels for a clustered dataset, with classes renumbered by
/// descending cluster size (ties keep cluster order), and the per-class
/// summary. Means and (population) standard deviations pool every time
/// step of every member; a missing `speed`/`accel`/`jerk` column gives NaN.
pub fn label_dataset(model: &ClusterModel, dataset: &[FeatureMatrix]) -> (Vec<usize>, Vec<ClassSummary>) {
    let mut order: Vec<usize> = (0..model.num_clusters()).collect();
    order.sort_by_key(|&k| std::cmp::Reverse(model.centroids[k].count));
    let mut relabel = vec![0; order.len()];
    for (class, &k) in order.iter().enumerate() {
        relabel[k] = class;
    }
    let labels: Vec<usize> = model.assignments.iter().map(|&k| relabel[k]).collect();
    let summaries = class_summaries(&labels, dataset, order.len());
    (labels, summaries)
}

pub fn class_summaries(labels: &[usize], dataset: &[FeatureMatrix], num_classes: usize) -> Vec<ClassSummary> {
    (0..num_classes)
        .map(|class| {
            let members: Vec<&FeatureMatrix> = labels
                .iter()
                .zip(dataset)
                .filter(|(&l, _)| l == class)
                .map(|(_, f)| f)
                .collect();
            let pooled = |name: &str| -> Vec<f64> {
                members
                    .iter()
                    .flat_map(|f| match f.feature_names().iter().position(|n| n == name) {
                        Some(i) => f.column(i),
                        None => vec![f64::NAN],
                    })
                    .collect()
            };
            let (speed_mean, _) = mean_std(&pooled("speed"));
            let (_, accel_std) = mean_std(&pooled("accel"));
            let (_, jerk_std) = mean_std(&pooled("jerk"));
            ClassSummary {
                class,
                count: members.len(),
                speed_mean,
                accel_std,
                jerk_std,
            }
        })
        .collect()
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summary_csv(summaries: &[ClassSummary]) -> String {
    let mut out = String::from("class,count,speed_mean,accel_std,jerk_std\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.class, s.count, s.speed_mean, s.accel_std, s.jerk_std
        );
    }
    out
}

/// Fraction of samples whose cluster maps to their true class under the
/// best one-to-one matching of cluster ids to classes (exhaustive search).
pub fn matched_agreement(truth: &[usize], clusters: &[usize]) -> Result<f64, ClusterError> {
    if truth.len() != clusters.len() {
        return Err(ClusterError::LengthMismatch(truth.len(), clusters.len()));
    }
    if truth.is_empty() {
        return Err(ClusterError::Empty);
    }
    let k = truth.iter().chain(clusters).max().map_or(0, |m| m + 1);
    if k > 9 {
        return Err(ClusterError::TooManyClusters(k));
    }
    let mut counts = vec![vec![0usize; k]; k];
    for (&t, &c) in truth.iter().zip(clusters) {
        counts[c][t] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let hit: usize = p.iter().enumerate().map(|(c, &t)| counts[c][t]).sum();
        best = best.max(hit);
    });
    Ok(best as f64 / truth.len() as f64)
}

fn permute(p: &mut [usize], i: usize, visit: &mut impl FnMut(&[usize])) {
    if i == p.len() {
        visit(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, visit);
        p.swap(i, j);
    }
}
