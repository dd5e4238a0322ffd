//! Scale/shift alignment of predicted depth against sparse SfM depth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depth::{DenseDepthMap, ScaleDomain};
use crate::error::{Error, Result};
use crate::geometry::SparseDepthMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMethod {
    #[default]
    Ransac,
    LeastSquare,
    NoAlignment,
}

impl AlignmentMethod {
    pub fn name(self) -> &'static str {
        match self {
            AlignmentMethod::Ransac => "ransac",
            AlignmentMethod::LeastSquare => "least_square",
            AlignmentMethod::NoAlignment => "no_alignment",
        }
    }
}

/// Space in which the linear model is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentSpace {
    #[default]
    Depth,
    /// Fit `1/d_sfm = scale / d_pred + shift`.
    InverseDepth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InlierThreshold {
    /// Fraction of the median target value (sparse depth, or inverse depth).
    Relative(f64),
    Absolute(f64),
}

impl Default for InlierThreshold {
    fn default() -> Self {
        InlierThreshold::Relative(0.02)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub method: AlignmentMethod,
    pub iterations: usize,
    pub threshold: InlierThreshold,
    pub min_samples: usize,
    pub seed: u64,
    pub space: AlignmentSpace,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            method: AlignmentMethod::Ransac,
            iterations: 200,
            threshold: InlierThreshold::default(),
            min_samples: 2,
            seed: 0,
            space: AlignmentSpace::Depth,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidAlignment("iterations must be >= 1".into()));
        }
        if self.min_samples != 2 {
            return Err(Error::InvalidAlignment(format!(
                "a scale/shift model needs exactly 2 samples, got min_samples = {}",
                self.min_samples
            )));
        }
        let t = match self.threshold {
            InlierThreshold::Relative(t) | InlierThreshold::Absolute(t) => t,
        };
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::InvalidAlignment(format!("threshold must be > 0, got {t}")));
        }
        Ok(())
    }
}

/// `d_sfm ≈ scale * d_pred + shift` (in the configured space).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineDepthModel {
    pub scale: f64,
    pub shift: f64,
    pub inlier_count: usize,
    /// Absolute threshold used for consensus; `None` for non-robust fits.
    pub inlier_threshold: Option<f64>,
    #[serde(default)]
    pub space: AlignmentSpace,
}

impl AffineDepthModel {
    pub fn identity() -> Self {
        AffineDepthModel {
            scale: 1.0,
            shift: 0.0,
            inlier_count: 0,
            inlier_threshold: None,
            space: AlignmentSpace::Depth,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.scale * x + self.shift
    }
}

/// Closed-form line through two points, `None` if degenerate or not
/// increasing.
fn line_through(a: (f64, f64), b: (f64, f64)) -> Option<(f64, f64)> {
    let dx = b.0 - a.0;
    if dx == 0.0 {
        return None;
    }
    let scale = (b.1 - a.1) / dx;
    if !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    Some((scale, a.1 - scale * a.0))
}

fn check_pairs(pairs: &[(f64, f64)]) -> Result<()> {
    if pairs.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            available: pairs.len(),
        });
    }
    if pairs.iter().all(|p| p.0 == pairs[0].0) {
        return Err(Error::DegenerateSamples);
    }
    Ok(())
}

fn least_squares_coefficients(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateSamples);
    }
    let scale = sxy / sxx;
    Ok((scale, my - scale * mx))
}

/// Ordinary least squares on `(d_pred, d_sfm)` pairs.
pub fn fit_least_squares(pairs: &[(f64, f64)]) -> Result<AffineDepthModel> {
    check_pairs(pairs)?;
    let (scale, shift) = least_squares_coefficients(pairs)?;
    if !(scale > 0.0) {
        return Err(Error::NoPositiveScaleModel);
    }
    Ok(AffineDepthModel {
        scale,
        shift,
        inlier_count: pairs.len(),
        inlier_threshold: None,
        space: AlignmentSpace::Depth,
    })
}

fn consensus(pairs: &[(f64, f64)], scale: f64, shift: f64, threshold: f64) -> usize {
    pairs
        .iter()
        .filter(|&&(x, y)| (scale * x + shift - y).abs() < threshold)
        .count()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Absolute consensus threshold for a set of pairs.
pub fn resolve_threshold(pairs: &[(f64, f64)], threshold: InlierThreshold) -> f64 {
    match threshold {
        InlierThreshold::Absolute(t) => t,
        InlierThreshold::Relative(r) => {
            let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            r * median(&mut ys).abs()
        }
    }
}

/// Robust two-point RANSAC followed by a least-squares refit on the inliers
/// of the best-supported candidate.
///
/// When the number of distinct pairs does not exceed the iteration budget,
/// every pair is tried once in lexicographic order instead of sampling, which
/// makes the consensus optimal on small inputs. Ties keep the earliest
/// candidate.
pub fn fit_ransac(pairs: &[(f64, f64)], cfg: &AlignmentConfig) -> Result<AffineDepthModel> {
    cfg.validate()?;
    check_pairs(pairs)?;
    let threshold = resolve_threshold(pairs, cfg.threshold);
    if !(threshold > 0.0) {
        return Err(Error::InvalidAlignment(format!(
            "inlier threshold resolved to {threshold}"
        )));
    }
    let n = pairs.len();
    let total_pairs = n * (n - 1) / 2;
    let mut best: Option<(usize, f64, f64)> = None;
    let mut consider = |i: usize, j: usize| {
        if let Some((scale, shift)) = line_through(pairs[i], pairs[j]) {
            let count = consensus(pairs, scale, shift, threshold);
            if best.is_none_or(|b| count > b.0) {
                best = Some((count, scale, shift));
            }
        }
    };
    if total_pairs <= cfg.iterations {
        for i in 0..n {
            for j in i + 1..n {
                consider(i, j);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..cfg.iterations {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            consider(i, j);
        }
    }
    let (count, scale, shift) = best.ok_or(Error::NoPositiveScaleModel)?;
    let inliers: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|&(x, y)| (scale * x + shift - y).abs() < threshold)
        .collect();
    // A refit can only fail on degenerate inlier sets; keep the candidate then.
    let (scale, shift) = match least_squares_coefficients(&inliers) {
        Ok((s, b)) if s > 0.0 && inliers.len() >= 2 => (s, b),
        _ => (scale, shift),
    };
    Ok(AffineDepthModel {
        scale,
        shift,
        inlier_count: count,
        inlier_threshold: Some(threshold),
        space: AlignmentSpace::Depth,
    })
}

/// Applies the model per pixel. Pixels mapped to non-positive depth become
/// invalid.
pub fn apply(model: &AffineDepthModel, depth: &DenseDepthMap) -> Result<DenseDepthMap> {
    if depth.domain() != ScaleDomain::Metric {
        return Err(Error::DomainMismatch);
    }
    let cells = depth.grid().map(|d| {
        d.and_then(|d| {
            let v = match model.space {
                AlignmentSpace::Depth => model.eval(d),
                AlignmentSpace::InverseDepth => {
                    let inv = model.eval(1.0 / d);
                    if inv > 0.0 {
                        1.0 / inv
                    } else {
                        return None;
                    }
                }
            };
            (v > 0.0 && v.is_finite()).then_some(v)
        })
    });
    DenseDepthMap::new(cells, ScaleDomain::Metric)
}

/// `(d_pred, d_sfm)` at sparse pixels where the prediction is valid, in
/// row-major order.
pub fn gather_pairs(pred: &DenseDepthMap, sparse: &SparseDepthMap) -> Result<Vec<(f64, f64)>> {
    if pred.shape() != (sparse.width(), sparse.height()) {
        return Err(Error::ShapeMismatch {
            expected: (sparse.width(), sparse.height()),
            found: pred.shape(),
        });
    }
    Ok(sparse
        .valued()
        .filter_map(|((r, c), s)| pred.get(r, c).map(|p| (p, s.depth)))
        .collect())
}

/// Fits and applies the configured alignment for one view.
pub fn align_view(
    pred: &DenseDepthMap,
    sparse: &SparseDepthMap,
    cfg: &AlignmentConfig,
) -> Result<(DenseDepthMap, AffineDepthModel, usize)> {
    cfg.validate()?;
    if pred.domain() != ScaleDomain::Metric {
        return Err(Error::DomainMismatch);
    }
    let pairs = gather_pairs(pred, sparse)?;
    let n_pairs = pairs.len();
    if cfg.method == AlignmentMethod::NoAlignment {
        return Ok((pred.clone(), AffineDepthModel::identity(), n_pairs));
    }
    let fit_pairs: Vec<(f64, f64)> = match cfg.space {
        AlignmentSpace::Depth => pairs,
        AlignmentSpace::InverseDepth => pairs.iter().map(|&(p, s)| (1.0 / p, 1.0 / s)).collect(),
    };
    let mut model = match cfg.method {
        AlignmentMethod::Ransac => fit_ransac(&fit_pairs, cfg)?,
        AlignmentMethod::LeastSquare => fit_least_squares(&fit_pairs)?,
        AlignmentMethod::NoAlignment => unreachable!(),
    };
    model.space = cfg.space;
    Ok((apply(&model, pred)?, model, n_pairs))
}

/// One line of the alignment log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub image: String,
    pub method: AlignmentMethod,
    pub scale: f64,
    pub shift: f64,
    pub inliers: usize,
    pub pairs: usize,
}

impl AlignmentRecord {
    pub fn new(image: &str, method: AlignmentMethod, model: &AffineDepthModel, pairs: usize) -> Self {
        AlignmentRecord {
            image: image.to_owned(),
            method,
            scale: model.scale,
            shift: model.shift,
            inliers: model.inlier_count,
            pairs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SparseSample;
    use crate::raster::Grid;
    use proptest::prelude::*;

    fn cfg() -> AlignmentConfig {
        AlignmentConfig::default()
    }

    /// Maximum consensus over all candidate pairs, computed independently.
    // One candidate per unordered pair, anchored at the earlier point. The
    // reversed anchor is the same line mathematically but can round across
    // the threshold when a residual sits exactly on it.
    fn exhaustive_best(pairs: &[(f64, f64)], threshold: f64) -> usize {
        let mut best = 0;
        for i in 0..pairs.len() {
            for j in i + 1..pairs.len() {
                let (a, b) = (pairs[i], pairs[j]);
                if a.0 == b.0 {
                    continue;
                }
                let s = (b.1 - a.1) / (b.0 - a.0);
                if s <= 0.0 {
                    continue;
                }
                let t = a.1 - s * a.0;
                let c = pairs.iter().filter(|p| (s * p.0 + t - p.1).abs() < threshold).count();
                best = best.max(c);
            }
        }
        best
    }

    #[test]
    fn identity_pairs() {
        let pairs: Vec<_> = (1..10).map(|i| (i as f64, i as f64)).collect();
        let m = fit_ransac(&pairs, &cfg()).unwrap();
        assert_eq!((m.scale, m.shift, m.inlier_count), (1.0, 0.0, 9));
    }

    #[test]
    fn ransac_rejects_gross_outliers() {
        let mut pairs: Vec<_> = (1..=8).map(|i| (i as f64 * 0.5, 2.0 * (i as f64 * 0.5) + 1.0)).collect();
        pairs.push((1.25, 2.0 * 1.25 + 1.0 + 100.0));
        pairs.push((3.75, 2.0 * 3.75 + 1.0 + 100.0));
        let m = fit_ransac(&pairs, &cfg()).unwrap();
        assert!((m.scale - 2.0).abs() < 1e-9 && (m.shift - 1.0).abs() < 1e-9, "{m:?}");
        assert_eq!(m.inlier_count, 8);
        assert_eq!(m.inlier_count, exhaustive_best(&pairs, m.inlier_threshold.unwrap()));
    }

    #[test]
    fn two_pairs_interpolate() {
        let m = fit_ransac(&[(1.0, 3.0), (2.0, 7.0)], &cfg()).unwrap();
        assert_eq!((m.scale, m.shift), (4.0, -1.0));
    }

    #[test]
    fn ransac_errors() {
        assert!(matches!(fit_ransac(&[(1.0, 1.0)], &cfg()), Err(Error::TooFewSamples { .. })));
        assert!(matches!(
            fit_ransac(&[(1.0, 1.0), (1.0, 2.0)], &cfg()),
            Err(Error::DegenerateSamples)
        ));
        assert!(matches!(
            fit_ransac(&[(1.0, 2.0), (2.0, 1.0)], &cfg()),
            Err(Error::NoPositiveScaleModel)
        ));
    }

    #[test]
    fn least_squares_examples() {
        let m = fit_least_squares(&[(1.0, 1.0), (2.0, 2.0), (3.0, 4.0)]).unwrap();
        assert!((m.scale - 1.5).abs() < 1e-12 && (m.shift + 2.0 / 3.0).abs() < 1e-12);
        let m = fit_least_squares(&[(1.0, 6.0), (2.0, 7.0), (4.0, 9.0)]).unwrap();
        assert!((m.scale - 1.0).abs() < 1e-12 && (m.shift - 5.0).abs() < 1e-12);
        assert!(matches!(
            fit_least_squares(&[(2.0, 1.0), (2.0, 3.0)]),
            Err(Error::DegenerateSamples)
        ));
    }

    fn metric(values: &[f64]) -> DenseDepthMap {
        DenseDepthMap::metric_from_values(values.len(), 1, values.to_vec())
    }

    #[test]
    fn apply_examples() {
        let m = metric(&[3.0, 1.0]);
        assert_eq!(apply(&AffineDepthModel::identity(), &m).unwrap(), m);
        let model = AffineDepthModel {
            scale: 2.0,
            shift: 1.0,
            ..AffineDepthModel::identity()
        };
        assert_eq!(apply(&model, &m).unwrap().get(0, 0), Some(7.0));
        let model = AffineDepthModel {
            scale: 1.0,
            shift: -10.0,
            ..AffineDepthModel::identity()
        };
        assert_eq!(apply(&model, &m).unwrap().get(0, 0), None);
    }

    fn sparse_row(values: &[Option<f64>]) -> SparseDepthMap {
        let grid = Grid::from_vec(
            values.len(),
            1,
            values
                .iter()
                .enumerate()
                .map(|(i, v)| v.map(|depth| SparseSample { depth, point3d_id: i as u64 }))
                .collect(),
        );
        SparseDepthMap::from_grid(grid).unwrap()
    }

    #[test]
    fn align_view_inverts_planted_affine() {
        let gt: Vec<f64> = (0..40).map(|i| 1.0 + 0.1 * i as f64).collect();
        let pred = metric(&gt.iter().map(|d| 2.0 * d + 0.5).collect::<Vec<_>>());
        let sparse = sparse_row(&gt.iter().enumerate().map(|(i, &d)| (i % 3 == 0).then_some(d)).collect::<Vec<_>>());
        let (aligned, model, n) = align_view(&pred, &sparse, &cfg()).unwrap();
        assert_eq!(n, 14);
        assert!((model.scale - 0.5).abs() < 1e-9 && (model.shift + 0.25).abs() < 1e-9);
        for ((r, c), s) in sparse.valued() {
            assert!((aligned.get(r, c).unwrap() - s.depth).abs() < 1e-9);
        }
    }

    #[test]
    fn align_view_variants() {
        let pred = metric(&[1.0, 2.0, 3.0]);
        let sparse = sparse_row(&[Some(2.0), None, Some(6.0)]);
        let no = AlignmentConfig {
            method: AlignmentMethod::NoAlignment,
            ..cfg()
        };
        let (out, model, _) = align_view(&pred, &sparse, &no).unwrap();
        assert_eq!(out, pred);
        assert_eq!(model, AffineDepthModel::identity());
        let one = sparse_row(&[Some(2.0), None, None]);
        assert!(matches!(align_view(&pred, &one, &cfg()), Err(Error::TooFewSamples { .. })));
        let inv = AlignmentConfig {
            space: AlignmentSpace::InverseDepth,
            ..cfg()
        };
        let (out, _, _) = align_view(&pred, &sparse, &inv).unwrap();
        assert!((out.get(0, 2).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let bad = AlignmentConfig { iterations: 0, ..cfg() };
        assert!(bad.validate().is_err());
        let bad = AlignmentConfig {
            threshold: InlierThreshold::Absolute(0.0),
            ..cfg()
        };
        assert!(bad.validate().is_err());
        let parsed: AlignmentConfig = toml::from_str("method = \"least_square\"\nthreshold = { absolute = 0.1 }\n").unwrap();
        assert_eq!(parsed.method, AlignmentMethod::LeastSquare);
        assert_eq!(parsed.threshold, InlierThreshold::Absolute(0.1));
    }

    fn pair_set(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((1u32..200, 1u32..400), 2..max).prop_map(|v| {
            v.into_iter().map(|(a, b)| (a as f64 * 0.05, b as f64 * 0.05)).collect()
        })
    }

    proptest! {
        #[test]
        fn consensus_is_optimal_on_small_sets(pairs in pair_set(13)) {
            prop_assume!(pairs.iter().any(|p| p.0 != pairs[0].0));
            let c = AlignmentConfig { threshold: InlierThreshold::Absolute(0.3), ..cfg() };
            match fit_ransac(&pairs, &c) {
                Ok(m) => prop_assert_eq!(m.inlier_count, exhaustive_best(&pairs, 0.3)),
                Err(Error::NoPositiveScaleModel) => prop_assert_eq!(exhaustive_best(&pairs, 0.3), 0),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }

        #[test]
        fn least_squares_scale_equivariance(pairs in pair_set(30), c in 0.1f64..10.0) {
            let base = match fit_least_squares(&pairs) {
                Ok(m) => m,
                Err(_) => return Ok(()),
            };
            let scaled: Vec<_> = pairs.iter().map(|&(x, y)| (x, c * y)).collect();
            let m = fit_least_squares(&scaled).unwrap();
            prop_assert!((m.scale - c * base.scale).abs() <= 1e-9 * (1.0 + m.scale.abs()));
            prop_assert!((m.shift - c * base.shift).abs() <= 1e-9 * (1.0 + m.shift.abs() + m.scale.abs()));
        }

        #[test]
        fn ransac_scale_equivariance_on_exact_lines(
            xs in prop::collection::btree_set(1u32..500, 3..40),
            a in 0.1f64..5.0, bf in -0.99f64..1.0, c in 0.1f64..10.0,
        ) {
            // x >= 1.01 and b = a * bf keep every target positive.
            let b = a * bf;
            let pairs: Vec<_> = xs.iter().map(|&x| { let x = 1.0 + x as f64 * 0.01; (x, a * x + b) }).collect();
            let scaled: Vec<_> = pairs.iter().map(|&(x, y)| (x, c * y)).collect();
            let m0 = fit_ransac(&pairs, &cfg()).unwrap();
            let m1 = fit_ransac(&scaled, &cfg()).unwrap();
            prop_assert!((m1.scale - c * m0.scale).abs() <= 1e-8 * m1.scale.abs());
            prop_assert!((m1.shift - c * m0.shift).abs() <= 1e-8 * (1.0 + m1.scale.abs() + m1.shift.abs()));
            prop_assert_eq!(m0.inlier_count, m1.inlier_count);
        }

        #[test]
        fn exact_linear_data_is_reproduced(
            xs in prop::collection::btree_set(1u32..1000, 2..60),
            a in 0.1f64..5.0, b in 0.0f64..2.0,
        ) {
            let gt: Vec<f64> = xs.iter().map(|&x| x as f64 * 0.01).collect();
            let pred = metric(&gt);
            let sparse = sparse_row(&gt.iter().map(|&x| Some(a * x + b)).collect::<Vec<_>>());
            for method in [AlignmentMethod::Ransac, AlignmentMethod::LeastSquare] {
                let (out, _, _) = align_view(&pred, &sparse, &AlignmentConfig { method, ..cfg() }).unwrap();
                for ((r, col), s) in sparse.valued() {
                    prop_assert!((out.get(r, col).unwrap() - s.depth).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn ransac_is_deterministic(pairs in pair_set(80), seed in any::<u64>()) {
            let c = AlignmentConfig { seed, iterations: 20, ..cfg() };
            let a = fit_ransac(&pairs, &c).ok();
            let b = fit_ransac(&pairs, &c).ok();
            prop_assert_eq!(a, b);
        }
    }
}
