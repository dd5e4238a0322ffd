//! Reconstruction metrics: Chamfer distance, F-score and depth RMSE.

use std::fmt;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depth::DenseDepthMap;
use crate::error::{Error, Result};
use crate::fusion::TriangleMesh;
use crate::geometry::SparseDepthMap;
use crate::spatial::KdTree;

fn to_array(p: &Vector3<f64>) -> [f64; 3] {
    [p.x, p.y, p.z]
}

/// Distance from every point of `from` to its nearest neighbour in `to`.
pub fn nearest_distances(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> Result<Vec<f64>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let tree = KdTree::new(to.iter().map(to_array).collect());
    Ok(from
        .par_iter()
        .map(|p| tree.nearest(&to_array(p)).expect("tree is non-empty").dist_sq.sqrt())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chamfer {
    pub chamfer: f64,
    /// Mean distance from predicted points to the reference.
    pub accuracy: f64,
    /// Mean distance from reference points to the prediction.
    pub completeness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fraction_within(v: &[f64], tau: f64) -> f64 {
    v.iter().filter(|&&d| d < tau).count() as f64 / v.len() as f64
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

pub fn chamfer(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Chamfer> {
    let accuracy = mean(&nearest_distances(pred, gt)?);
    let completeness = mean(&nearest_distances(gt, pred)?);
    Ok(Chamfer {
        chamfer: 0.5 * (accuracy + completeness),
        accuracy,
        completeness,
    })
}

/// Precision and recall count points strictly closer than `tau`.
pub fn fscore(pred: &[Vector3<f64>], gt: &[Vector3<f64>], tau: f64) -> Result<FScore> {
    check_tau(tau)?;
    let precision = fraction_within(&nearest_distances(pred, gt)?, tau);
    let recall = fraction_within(&nearest_distances(gt, pred)?, tau);
    Ok(FScore {
        fscore: harmonic(precision, recall),
        precision,
        recall,
    })
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("tau must be > 0, got {tau}")))
    }
}

/// Chamfer and F-score from one pair of nearest-neighbour passes.
pub fn compare_point_sets(pred: &[Vector3<f64>], gt: &[Vector3<f64>], tau: f64) -> Result<(Chamfer, FScore)> {
    check_tau(tau)?;
    let to_gt = nearest_distances(pred, gt)?;
    let to_pred = nearest_distances(gt, pred)?;
    let (accuracy, completeness) = (mean(&to_gt), mean(&to_pred));
    let (precision, recall) = (fraction_within(&to_gt, tau), fraction_within(&to_pred, tau));
    Ok((
        Chamfer {
            chamfer: 0.5 * (accuracy + completeness),
            accuracy,
            completeness,
        },
        FScore {
            fscore: harmonic(precision, recall),
            precision,
            recall,
        },
    ))
}

/// Something a predicted depth map can be compared against.
pub trait DepthReference {
    fn shape(&self) -> (usize, usize);
    fn depth_at(&self, row: usize, col: usize) -> Option<f64>;
}

impl DepthReference for DenseDepthMap {
    fn shape(&self) -> (usize, usize) {
        DenseDepthMap::shape(self)
    }

    fn depth_at(&self, row: usize, col: usize) -> Option<f64> {
        self.get(row, col)
    }
}

impl DepthReference for SparseDepthMap {
    fn shape(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    fn depth_at(&self, row: usize, col: usize) -> Option<f64> {
        self.get(row, col).map(|s| s.depth)
    }
}

/// Sum of squared errors and count over jointly valid pixels.
pub fn depth_squared_error(pred: &DenseDepthMap, reference: &impl DepthReference) -> Result<(f64, usize)> {
    if pred.shape() != reference.shape() {
        return Err(Error::ShapeMismatch {
            expected: reference.shape(),
            found: pred.shape(),
        });
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for ((r, c), d) in pred.grid().indexed() {
        if let (Some(p), Some(q)) = (*d, reference.depth_at(r, c)) {
            sum += (p - q) * (p - q);
            n += 1;
        }
    }
    Ok((sum, n))
}

pub fn depth_rmse(pred: &DenseDepthMap, reference: &impl DepthReference) -> Result<f64> {
    let (sum, n) = depth_squared_error(pred, reference)?;
    if n == 0 {
        return Err(Error::NoOverlap);
    }
    Ok((sum / n as f64).sqrt())
}

/// Area-weighted uniform samples on the mesh surface.
pub fn sample_mesh(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Vector3<f64>>> {
    if mesh.triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    mesh.validate()?;
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in &mesh.triangles {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if !(total > 0.0) {
        return Err(Error::EmptyMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let target = rng.random::<f64>() * total;
            let ti = cumulative
                .partition_point(|&c| c <= target)
                .min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangles[ti].map(|i| mesh.vertices[i]);
            let s = rng.random::<f64>().sqrt();
            let r2 = rng.random::<f64>();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewDepthError {
    pub image: String,
    pub rmse: f64,
    pub pixels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub pred: usize,
    pub gt: usize,
}

/// Scene-level metrics. Point metrics are `None` when no reference geometry
/// was available; an empty reconstruction yields infinite Chamfer distance
/// and zero F-score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub chamfer: Option<f64>,
    pub accuracy: Option<f64>,
    pub completeness: Option<f64>,
    pub fscore: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub threshold: f64,
    pub depth_rmse: Option<f64>,
    pub sample_counts: SampleCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_view: Vec<ViewDepthError>,
}

impl MetricsReport {
    pub fn new(threshold: f64) -> Self {
        MetricsReport {
            chamfer: None,
            accuracy: None,
            completeness: None,
            fscore: None,
            precision: None,
            recall: None,
            threshold,
            depth_rmse: None,
            sample_counts: SampleCounts { pred: 0, gt: 0 },
            per_view: Vec::new(),
        }
    }

    /// Fills the point metrics; an empty prediction scores worst-case.
    pub fn with_points(mut self, pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Self> {
        if gt.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        self.sample_counts = SampleCounts {
            pred: pred.len(),
            gt: gt.len(),
        };
        if pred.is_empty() {
            self.chamfer = Some(f64::INFINITY);
            self.accuracy = Some(f64::INFINITY);
            self.completeness = Some(f64::INFINITY);
            self.fscore = Some(0.0);
            self.precision = Some(0.0);
            self.recall = Some(0.0);
            return Ok(self);
        }
        let (c, f) = compare_point_sets(pred, gt, self.threshold)?;
        self.chamfer = Some(c.chamfer);
        self.accuracy = Some(c.accuracy);
        self.completeness = Some(c.completeness);
        self.fscore = Some(f.fscore);
        self.precision = Some(f.precision);
        self.recall = Some(f.recall);
        Ok(self)
    }

    /// Pools per-view squared errors into one RMSE.
    pub fn with_depth_errors(mut self, views: Vec<(String, f64, usize)>) -> Self {
        let (sum, n) = views.iter().fold((0.0, 0), |(s, n), v| (s + v.1, n + v.2));
        self.depth_rmse = (n > 0).then(|| (sum / n as f64).sqrt());
        self.per_view = views
            .into_iter()
            .filter(|v| v.2 > 0)
            .map(|(image, sum, pixels)| ViewDepthError {
                image,
                rmse: (sum / pixels as f64).sqrt(),
                pixels,
            })
            .collect();
        self
    }

    /// Aligned two-column table.
    pub fn to_table(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.6}"));
        let rows = [
            ("chamfer", opt(self.chamfer)),
            ("accuracy", opt(self.accuracy)),
            ("completeness", opt(self.completeness)),
            ("fscore", opt(self.fscore)),
            ("precision", opt(self.precision)),
            ("recall", opt(self.recall)),
            ("threshold", format!("{:.6}", self.threshold)),
            ("depth_rmse", opt(self.depth_rmse)),
            ("pred_samples", self.sample_counts.pred.to_string()),
            ("gt_samples", self.sample_counts.gt.to_string()),
        ];
        for (name, value) in rows {
            writeln!(f, "{name:<14}{value:>16}")?;
        }
        Ok(())
    }
}

/// Optional limits checked after evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricBounds {
    pub max_chamfer: Option<f64>,
    pub min_fscore: Option<f64>,
    pub max_depth_rmse: Option<f64>,
}

impl MetricBounds {
    /// Human-readable descriptions of every violated bound. A bound on a
    /// metric that was not computed counts as violated.
    pub fn violations(&self, report: &MetricsReport) -> Vec<String> {
        let mut out = Vec::new();
        let mut upper = |name: &str, bound: Option<f64>, value: Option<f64>| {
            if let Some(b) = bound {
                match value {
                    Some(v) if v <= b => {}
                    Some(v) => out.push(format!("{name} {v} exceeds {b}")),
                    None => out.push(format!("{name} unavailable (bound {b})")),
                }
            }
        };
        upper("chamfer", self.max_chamfer, report.chamfer);
        upper("depth_rmse", self.max_depth_rmse, report.depth_rmse);
        if let Some(b) = self.min_fscore {
            match report.fscore {
                Some(v) if v >= b => {}
                Some(v) => out.push(format!("fscore {v} below {b}")),
                None => out.push(format!("fscore unavailable (bound {b})")),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// F-score threshold in scene units.
    pub tau: f64,
    /// Surface samples drawn from each mesh.
    pub samples: usize,
    pub bounds: MetricBounds,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            tau: 0.05,
            samples: 20_000,
            bounds: MetricBounds::default(),
        }
    }
}
