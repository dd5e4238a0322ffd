//! Conditioning signals derived from a sparse depth map.
//!
//! A view's sparse depth is trimmed of its extreme values, the surviving
//! range is widened and used to map depth to `[-1, 1]`. Empty pixels are
//! filled by inverse-distance weighting over the `k` nearest valued pixels,
//! and a distance map records how far each pixel is from a measured one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depth::{DenseDepthMap, ScaleDomain};
use crate::error::{Error, Result};
use crate::geometry::SparseDepthMap;
use crate::raster::Grid;
use crate::spatial::KdTree;

pub const DEFAULT_TRIM_FRACTION: f64 = 0.02;
pub const DEFAULT_EXPANSION: (f64, f64) = (0.8, 1.2);

/// Depth interval used to map scene depth to `[-1, 1]` and back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRange {
    pub d_min_adj: f64,
    pub d_max_adj: f64,
    pub raw_min: f64,
    pub raw_max: f64,
}

impl NormalizationRange {
    /// Expands `[raw_min, raw_max]` to `[lo * raw_min, hi * raw_max]`.
    pub fn from_raw(raw_min: f64, raw_max: f64, (lo, hi): (f64, f64)) -> Result<Self> {
        if !(raw_min > 0.0 && raw_min < raw_max && raw_max.is_finite()) {
            return Err(Error::DegenerateRange {
                min: raw_min,
                max: raw_max,
            });
        }
        let range = NormalizationRange {
            d_min_adj: lo * raw_min,
            d_max_adj: hi * raw_max,
            raw_min,
            raw_max,
        };
        range.check()?;
        Ok(range)
    }

    pub fn check(&self) -> Result<()> {
        if self.d_min_adj > 0.0 && self.d_min_adj < self.d_max_adj && self.d_max_adj.is_finite() {
            Ok(())
        } else {
            Err(Error::DegenerateRange {
                min: self.d_min_adj,
                max: self.d_max_adj,
            })
        }
    }

    /// `d -> 2 (d - min) / (max - min) - 1`, clamped to `[-1, 1]`.
    pub fn normalize(&self, d: f64) -> f64 {
        let t = 2.0 * (d - self.d_min_adj) / (self.d_max_adj - self.d_min_adj) - 1.0;
        t.clamp(-1.0, 1.0)
    }

    pub fn denormalize(&self, n: f64) -> f64 {
        (n + 1.0) * 0.5 * (self.d_max_adj - self.d_min_adj) + self.d_min_adj
    }
}

/// Splits off the `floor(trim_fraction * n)` smallest and largest samples.
/// Returns the surviving map. Ties order by `(depth, row, col)`.
pub fn trim_extremes(sparse: &SparseDepthMap, trim_fraction: f64) -> Result<SparseDepthMap> {
    if !(0.0..0.5).contains(&trim_fraction) {
        return Err(Error::InvalidConfig(format!(
            "trim fraction {trim_fraction} outside [0, 0.5)"
        )));
    }
    let mut samples: Vec<((usize, usize), f64)> =
        sparse.valued().map(|(rc, s)| (rc, s.depth)).collect();
    if samples.is_empty() {
        return Err(Error::EmptySparseDepth);
    }
    samples.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let drop = (trim_fraction * samples.len() as f64 + 1e-9).floor() as usize;
    let mut kept = sparse.clone();
    let n = samples.len();
    for &((row, col), _) in samples[..drop].iter().chain(&samples[n - drop..]) {
        kept.remove(row, col);
    }
    Ok(kept)
}

/// Normalization range of a sparse map with the default 0.8 / 1.2 expansion.
pub fn compute_range(sparse: &SparseDepthMap, trim_fraction: f64) -> Result<NormalizationRange> {
    compute_range_with(sparse, trim_fraction, DEFAULT_EXPANSION)
}

pub fn compute_range_with(
    sparse: &SparseDepthMap,
    trim_fraction: f64,
    expansion: (f64, f64),
) -> Result<NormalizationRange> {
    let kept = trim_extremes(sparse, trim_fraction)?;
    range_of(&kept, expansion)
}

fn range_of(kept: &SparseDepthMap, expansion: (f64, f64)) -> Result<NormalizationRange> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, s) in kept.valued() {
        lo = lo.min(s.depth);
        hi = hi.max(s.depth);
    }
    if lo > hi {
        return Err(Error::EmptySparseDepth);
    }
    NormalizationRange::from_raw(lo, hi, expansion)
}

/// Inverse-distance-weighted KNN fill. Valued pixels keep their depth; with
/// `k = 0` the sparse map is returned with empty pixels set to 0.
pub fn densify_knn(sparse: &SparseDepthMap, k: usize) -> Result<Grid<f64>> {
    let (width, height) = (sparse.width(), sparse.height());
    if k == 0 {
        return Ok(sparse.depth_or_zero());
    }
    // Row-major insertion makes the index tie-break lexicographic in (row, col).
    let (coords, depths): (Vec<[f64; 2]>, Vec<f64>) = sparse
        .valued()
        .map(|((r, c), s)| ([r as f64, c as f64], s.depth))
        .unzip();
    if coords.len() < k {
        return Err(Error::TooFewPoints {
            k,
            available: coords.len(),
        });
    }
    let tree = KdTree::new(coords);
    let mut out = vec![0.0; width * height];
    out.par_chunks_mut(width.max(1))
        .enumerate()
        .for_each(|(row, line)| {
            for (col, px) in line.iter_mut().enumerate() {
                if let Some(s) = sparse.get(row, col) {
                    *px = s.depth;
                    continue;
                }
                let neighbors = tree.nearest_k(&[row as f64, col as f64], k);
                let (mut num, mut den) = (0.0, 0.0);
                for n in neighbors {
                    debug_assert!(n.dist_sq >= 1.0);
                    let w = 1.0 / n.dist_sq.sqrt();
                    num += w * depths[n.index];
                    den += w;
                }
                *px = num / den;
            }
        });
    Ok(Grid::from_vec(width, height, out))
}

/// Exact Euclidean distance (in pixels) from every pixel to the nearest
/// valued pixel.
pub fn distance_map(sparse: &SparseDepthMap) -> Result<Grid<f64>> {
    if sparse.count() == 0 {
        return Err(Error::EmptySparseDepth);
    }
    let (width, height) = (sparse.width(), sparse.height());
    let seeds = sparse.samples().map(|s| if s.is_some() { 0.0 } else { f64::INFINITY });
    let sq = squared_edt(&seeds);
    debug_assert_eq!(sq.shape(), (width, height));
    Ok(sq.map(|v| v.sqrt()))
}

/// Two-pass lower-envelope squared distance transform (Felzenszwalb &
/// Huttenlocher). `f` holds 0 at seeds and infinity elsewhere.
fn squared_edt(f: &Grid<f64>) -> Grid<f64> {
    let (width, height) = f.shape();
    let mut cols = vec![f64::INFINITY; width * height];
    let src = f.as_slice();
    // Column pass, stored transposed so each column is contiguous.
    cols.par_chunks_mut(height.max(1))
        .enumerate()
        .for_each(|(col, out)| {
            let input: Vec<f64> = (0..height).map(|r| src[r * width + col]).collect();
            edt_1d(&input, out);
        });
    let mut result = vec![f64::INFINITY; width * height];
    result
        .par_chunks_mut(width.max(1))
        .enumerate()
        .for_each(|(row, out)| {
            let input: Vec<f64> = (0..width).map(|c| cols[c * height + row]).collect();
            edt_1d(&input, out);
        });
    Grid::from_vec(width, height, result)
}

fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Maps every value through [`NormalizationRange::normalize`].
pub fn normalize(depth: &Grid<f64>, range: &NormalizationRange) -> Result<Grid<f64>> {
    range.check()?;
    Ok(depth.map(|&d| range.normalize(d)))
}

pub fn denormalize(norm_depth: &Grid<f64>, range: &NormalizationRange) -> Result<Grid<f64>> {
    range.check()?;
    Ok(norm_depth.map(|&n| range.denormalize(n)))
}

/// Converts a metric depth map to the normalized domain (values clamped),
/// e.g. to normalize ground truth with the range of the SfM depth.
pub fn normalize_depth_map(map: &DenseDepthMap, range: &NormalizationRange) -> Result<DenseDepthMap> {
    if map.domain() != ScaleDomain::Metric {
        return Err(Error::DomainMismatch);
    }
    range.check()?;
    DenseDepthMap::new(
        map.grid().map(|d| d.map(|d| range.normalize(d))),
        ScaleDomain::Normalized,
    )
}

/// Converts a normalized map back to scene units. Metric input passes through.
pub fn denormalize_depth_map(map: &DenseDepthMap, range: &NormalizationRange) -> Result<DenseDepthMap> {
    match map.domain() {
        ScaleDomain::Metric => Ok(map.clone()),
        ScaleDomain::Normalized => {
            range.check()?;
            DenseDepthMap::new(
                map.grid().map(|d| d.map(|n| range.denormalize(n))),
                ScaleDomain::Metric,
            )
        }
    }
}

/// Area-average downsampling by an integer factor. When the factor does not
/// divide the size, the map is padded by edge replication first, so the
/// output is `ceil(h / f) x ceil(w / f)`.
pub fn downsample_distance_map(dist: &Grid<f64>, factor: usize) -> Grid<f64> {
    assert!(factor > 0, "downsample factor must be positive");
    let (w, h) = dist.shape();
    let (ow, oh) = (w.div_ceil(factor), h.div_ceil(factor));
    let norm = (factor * factor) as f64;
    Grid::from_fn(ow, oh, |orow, ocol| {
        let mut sum = 0.0;
        for dr in 0..factor {
            let r = (orow * factor + dr).min(h - 1);
            for dc in 0..factor {
                let c = (ocol * factor + dc).min(w - 1);
                sum += dist[(r, c)];
            }
        }
        sum / norm
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditioningConfig {
    /// Neighbours for densification; 0 disables it.
    pub k: usize,
    pub trim_fraction: f64,
    pub expansion: (f64, f64),
    /// Whether the distance map is produced at all.
    pub distance_map: bool,
    /// Compute the distance map from the trimmed sample set (default) or
    /// from every projected sample.
    pub distance_on_trimmed: bool,
    /// Downsampling factor for the latent-resolution distance map; 1 skips it.
    pub latent_factor: usize,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        ConditioningConfig {
            k: 3,
            trim_fraction: DEFAULT_TRIM_FRACTION,
            expansion: DEFAULT_EXPANSION,
            distance_map: true,
            distance_on_trimmed: true,
            latent_factor: 8,
        }
    }
}

impl ConditioningConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.expansion;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("expansion {:?}", self.expansion)));
        }
        if !(0.0..0.5).contains(&self.trim_fraction) {
            return Err(Error::InvalidConfig(format!(
                "trim_fraction {}",
                self.trim_fraction
            )));
        }
        if self.latent_factor == 0 {
            return Err(Error::InvalidConfig("latent_factor must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-view conditioning handed to a depth provider.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBundle {
    /// Densified depth mapped to `[-1, 1]`.
    pub densified: Grid<f64>,
    /// Pixels that carry a measured or interpolated value.
    pub valid: Grid<bool>,
    pub distance_map: Option<Grid<f64>>,
    pub distance_latent: Option<Grid<f64>>,
    pub range: NormalizationRange,
    pub k_used: usize,
    /// Sparse samples that survived trimming.
    pub trimmed: SparseDepthMap,
}

impl ConditioningBundle {
    /// Densified depth back in scene units, invalid pixels dropped.
    pub fn densified_metric(&self) -> DenseDepthMap {
        let grid = Grid::from_fn(self.densified.width(), self.densified.height(), |r, c| {
            self.valid[(r, c)].then(|| self.range.denormalize(self.densified[(r, c)]))
        });
        DenseDepthMap::new(grid, ScaleDomain::Metric)
            .expect("denormalized values lie inside a positive range")
    }
}

pub fn build_bundle(sparse: &SparseDepthMap, cfg: &ConditioningConfig) -> Result<ConditioningBundle> {
    cfg.validate()?;
    let trimmed = trim_extremes(sparse, cfg.trim_fraction)?;
    let range = range_of(&trimmed, cfg.expansion)?;
    let raw = densify_knn(&trimmed, cfg.k)?;
    let valid = if cfg.k == 0 {
        trimmed.samples().map(|s| s.is_some())
    } else {
        Grid::filled(raw.width(), raw.height(), true)
    };
    let mut densified = normalize(&raw, &range)?;
    // Cells without a value carry 0 so that equal bundles compare equal.
    for (d, v) in densified.as_mut_slice().iter_mut().zip(valid.as_slice()) {
        if !v {
            *d = 0.0;
        }
    }
    let (distance_map, distance_latent) = if cfg.distance_map {
        let src = if cfg.distance_on_trimmed { &trimmed } else { sparse };
        let d = distance_map(src)?;
        let latent = (cfg.latent_factor > 1).then(|| downsample_distance_map(&d, cfg.latent_factor));
        (Some(d), latent)
    } else {
        (None, None)
    };
    Ok(ConditioningBundle {
        densified,
        valid,
        distance_map,
        distance_latent,
        range,
        k_used: cfg.k,
        trimmed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SparseSample;

    fn sparse_from(width: usize, height: usize, pts: &[((usize, usize), f64)]) -> SparseDepthMap {
        let mut m = SparseDepthMap::empty(width, height);
        for (i, &((r, c), d)) in pts.iter().enumerate() {
            m.insert_nearest(r, c, SparseSample { depth: d, point3d_id: i as u64 });
        }
        m
    }

    #[test]
    fn range_without_trimming() {
        let m = sparse_from(4, 1, &[((0, 0), 1.0), ((0, 1), 2.0), ((0, 2), 3.0)]);
        let r = compute_range(&m, 0.02).unwrap();
        assert_eq!((r.raw_min, r.raw_max), (1.0, 3.0));
        assert_eq!(r.d_min_adj, 0.8 * 1.0);
        assert_eq!(r.d_max_adj, 1.2 * 3.0);
    }

    #[test]
    fn range_trims_outliers() {
        let mut pts: Vec<((usize, usize), f64)> = (0..98)
            .map(|i| ((i / 10, i % 10), 1.0 + i as f64 / 97.0))
            .collect();
        pts.push(((9, 8), 0.001));
        pts.push(((9, 9), 50.0));
        let m = sparse_from(10, 10, &pts);
        let r = compute_range(&m, 0.02).unwrap();
        assert!(r.raw_min >= 1.0 && r.raw_max <= 2.0, "{r:?}");
        // Two per side: the outlier and the nearest inlier.
        assert_eq!(r.raw_min, 1.0 + 1.0 / 97.0);
        assert_eq!(r.raw_max, 1.0 + 96.0 / 97.0);
    }

    #[test]
    fn single_depth_is_degenerate() {
        let m = sparse_from(2, 2, &[((0, 0), 5.0)]);
        assert!(matches!(compute_range(&m, 0.02), Err(Error::DegenerateRange { .. })));
    }

    #[test]
    fn empty_sparse_rejected() {
        let m = SparseDepthMap::empty(3, 3);
        assert!(matches!(compute_range(&m, 0.02), Err(Error::EmptySparseDepth)));
        assert!(matches!(distance_map(&m), Err(Error::EmptySparseDepth)));
    }

    #[test]
    fn idw_hand_example() {
        // Query (2, 2); neighbours at distance 1, 2, 2 with depths 3, 6, 6.
        let m = sparse_from(
            5,
            5,
            &[((2, 3), 3.0), ((0, 2), 6.0), ((4, 2), 6.0), ((0, 0), 100.0)],
        );
        let d = densify_knn(&m, 3).unwrap();
        assert_eq!(d[(2, 2)], 4.5);
        assert_eq!(d[(2, 3)], 3.0);
    }

    #[test]
    fn knn_tie_break_is_lexicographic() {
        let m = sparse_from(3, 3, &[((2, 1), 9.0), ((0, 1), 4.0)]);
        let d = densify_knn(&m, 1).unwrap();
        assert_eq!(d[(1, 1)], 4.0);
        let m = sparse_from(3, 3, &[((1, 2), 9.0), ((1, 0), 4.0)]);
        assert_eq!(densify_knn(&m, 1).unwrap()[(1, 1)], 4.0);
    }

    #[test]
    fn k_zero_passthrough_and_too_few() {
        let m = sparse_from(3, 2, &[((1, 1), 2.5)]);
        let d = densify_knn(&m, 0).unwrap();
        assert_eq!(d.as_slice(), &[0.0, 0.0, 0.0, 0.0, 2.5, 0.0]);
        assert!(matches!(
            densify_knn(&m, 2),
            Err(Error::TooFewPoints { k: 2, available: 1 })
        ));
    }

    #[test]
    fn distance_three_four_five() {
        let m = sparse_from(6, 6, &[((0, 0), 1.0)]);
        let d = distance_map(&m).unwrap();
        assert_eq!(d[(0, 0)], 0.0);
        assert_eq!(d[(4, 3)], 5.0);
        assert_eq!(d[(3, 4)], 5.0);
    }

    #[test]
    fn distance_all_valued_is_zero() {
        let pts: Vec<_> = (0..6).map(|i| ((i / 3, i % 3), 1.0 + i as f64)).collect();
        let d = distance_map(&sparse_from(3, 2, &pts)).unwrap();
        assert!(d.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_examples() {
        let r = NormalizationRange::from_raw(1.0, 3.0, DEFAULT_EXPANSION).unwrap();
        assert_eq!(r.normalize(r.d_min_adj), -1.0);
        assert_eq!(r.normalize(r.d_max_adj), 1.0);
        let mid = 0.5 * (r.d_min_adj + r.d_max_adj);
        assert!(r.normalize(mid).abs() < 1e-15);
        assert!((r.denormalize(0.0) - 2.2).abs() < 1e-12);
        assert_eq!(r.denormalize(1.0), r.d_max_adj);
        assert_eq!(r.normalize(100.0), 1.0);
        assert_eq!(r.normalize(0.0), -1.0);
    }

    #[test]
    fn hand_range_normalize() {
        let r = NormalizationRange {
            d_min_adj: 0.8,
            d_max_adj: 3.6,
            raw_min: 1.0,
            raw_max: 3.0,
        };
        assert!(r.normalize(2.2).abs() < 1e-15);
    }

    #[test]
    fn degenerate_range_rejected_by_normalize() {
        let r = NormalizationRange {
            d_min_adj: 2.0,
            d_max_adj: 2.0,
            raw_min: 2.0,
            raw_max: 2.0,
        };
        let g = Grid::filled(2, 2, 1.0);
        assert!(matches!(normalize(&g, &r), Err(Error::DegenerateRange { .. })));
        assert!(matches!(denormalize(&g, &r), Err(Error::DegenerateRange { .. })));
    }

    #[test]
    fn downsample_examples() {
        let c = Grid::filled(4, 4, 3.5);
        assert!(downsample_distance_map(&c, 2).as_slice().iter().all(|&v| v == 3.5));
        let g = Grid::from_vec(2, 2, vec![0.0, 0.0, 4.0, 4.0]);
        assert_eq!(downsample_distance_map(&g, 2).as_slice(), &[2.0]);
        assert_eq!(downsample_distance_map(&g, 1), g);
        // 3x3 with factor 2 pads to 4x4 by edge replication.
        let g = Grid::from_vec(3, 1, vec![1.0, 2.0, 3.0]);
        assert_eq!(downsample_distance_map(&g, 2).as_slice(), &[1.5, 3.0]);
    }

    #[test]
    fn bundle_k_zero_marks_only_samples_valid() {
        let m = sparse_from(4, 4, &[((0, 0), 1.0), ((3, 3), 2.0)]);
        let cfg = ConditioningConfig {
            k: 0,
            latent_factor: 2,
            ..Default::default()
        };
        let b = build_bundle(&m, &cfg).unwrap();
        assert_eq!(b.valid.as_slice().iter().filter(|v| **v).count(), 2);
        assert_eq!(b.distance_latent.as_ref().unwrap().shape(), (2, 2));
        let metric = b.densified_metric();
        assert!((metric.get(3, 3).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(metric.get(1, 1), None);
    }

    #[test]
    fn bundle_distance_uses_trimmed_set_by_default() {
        let mut pts: Vec<_> = (0..50).map(|i| ((i / 10, i % 10), 1.0 + i as f64 * 0.01)).collect();
        pts.push(((9, 9), 100.0));
        let m = sparse_from(10, 10, &pts);
        let b = build_bundle(&m, &ConditioningConfig::default()).unwrap();
        assert!(b.trimmed.get(9, 9).is_none());
        assert!(b.distance_map.as_ref().unwrap()[(9, 9)] > 0.0);
        let cfg = ConditioningConfig {
            distance_on_trimmed: false,
            ..Default::default()
        };
        let b = build_bundle(&m, &cfg).unwrap();
        assert_eq!(b.distance_map.as_ref().unwrap()[(9, 9)], 0.0);
    }
}
