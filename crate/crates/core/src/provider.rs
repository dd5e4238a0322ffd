//! Sources of dense depth behind a single interface.
//!
//! The reconstruction pipeline never depends on how depth was produced: it
//! may come from files written by an external network, from a synthetic
//! oracle that corrupts known ground truth, from a constant, or straight from
//! the densified sparse depth of the conditioning stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::conditioning::ConditioningBundle;
use crate::depth::{DenseDepthMap, ScaleDomain};
use crate::error::{Error, Result};
use crate::io::{self, RasterMeta};
use crate::raster::Grid;

/// What a provider knows about the view it is asked to predict.
#[derive(Debug, Clone, Copy)]
pub struct ViewInput<'a> {
    pub image_id: u32,
    pub name: &'a str,
    pub width: usize,
    pub height: usize,
    pub rgb_path: Option<&'a Path>,
}

pub trait DepthProvider: Send + Sync {
    /// Predicts depth for one view. `member` indexes ensemble members; a
    /// stochastic provider must return different draws for different members.
    fn predict(&self, view: &ViewInput<'_>, bundle: &ConditioningBundle, member: usize) -> Result<DenseDepthMap>;
}

/// Serializable provider selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    /// Predictions stored as `<dir>/<image_name>.depth.f32` plus
    /// `<dir>/<image_name>.meta.json`.
    FromFiles { dir: PathBuf },
    /// Ground truth corrupted as `gt * (1 + eps) * scale + shift`.
    SyntheticOracle {
        /// Directory holding `<image_name>.depth.npy` ground truth. May be
        /// omitted when ground truth is registered programmatically.
        #[serde(default)]
        gt_dir: Option<PathBuf>,
        #[serde(default)]
        sigma_mult: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        shift: f64,
        #[serde(default)]
        seed: u64,
    },
    Constant {
        value: f64,
        #[serde(default = "metric")]
        domain: ScaleDomain,
    },
    /// Echoes the densified sparse depth from the conditioning bundle.
    Densified,
}

fn one() -> f64 {
    1.0
}

fn metric() -> ScaleDomain {
    ScaleDomain::Metric
}

impl ProviderSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProviderSpec::SyntheticOracle {
                sigma_mult, scale, shift, ..
            } => {
                if !(sigma_mult.is_finite() && *sigma_mult >= 0.0) {
                    return Err(Error::InvalidProvider(format!("sigma_mult must be >= 0, got {sigma_mult}")));
                }
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::InvalidProvider(format!("scale must be > 0, got {scale}")));
                }
                if !shift.is_finite() {
                    return Err(Error::InvalidProvider(format!("shift must be finite, got {shift}")));
                }
            }
            ProviderSpec::Constant { value, domain } => {
                DenseDepthMap::constant(1, 1, *value, *domain)?;
            }
            ProviderSpec::FromFiles { .. } | ProviderSpec::Densified => {}
        }
        Ok(())
    }

    /// Builds the provider. `ground_truth` supplies oracle depth keyed by
    /// image id and takes precedence over `gt_dir`; `names` maps image ids to
    /// file names for loading from `gt_dir`.
    pub fn build(
        &self,
        ground_truth: Option<BTreeMap<u32, DenseDepthMap>>,
        names: &BTreeMap<u32, String>,
    ) -> Result<Box<dyn DepthProvider>> {
        self.validate()?;
        Ok(match self {
            ProviderSpec::FromFiles { dir } => Box::new(FileProvider { dir: dir.clone() }),
            ProviderSpec::SyntheticOracle {
                gt_dir,
                sigma_mult,
                scale,
                shift,
                seed,
            } => {
                let gt = match (ground_truth, gt_dir) {
                    (Some(gt), _) => gt,
                    (None, Some(dir)) => {
                        let mut gt = BTreeMap::new();
                        for (&id, name) in names {
                            let stem = dir.join(format!("{name}.depth"));
                            if let Ok(map) = read_depth_stem(&stem, None) {
                                gt.insert(id, map);
                            }
                        }
                        gt
                    }
                    (None, None) => BTreeMap::new(),
                };
                Box::new(SyntheticOracle {
                    ground_truth: gt,
                    noise: OracleNoise {
                        sigma_mult: *sigma_mult,
                        scale: *scale,
                        shift: *shift,
                        seed: *seed,
                    },
                })
            }
            ProviderSpec::Constant { value, domain } => Box::new(ConstantProvider {
                value: *value,
                domain: *domain,
            }),
            ProviderSpec::Densified => Box::new(DensifiedProvider),
        })
    }
}

pub struct FileProvider {
    pub dir: PathBuf,
}

impl FileProvider {
    pub fn paths(&self, name: &str) -> (PathBuf, PathBuf) {
        (
            self.dir.join(format!("{name}.depth")),
            self.dir.join(format!("{name}.meta.json")),
        )
    }
}

/// Converts a raster with NaN/non-positive holes into a depth map of the
/// given domain.
pub fn depth_from_raster(grid: &Grid<f64>, domain: ScaleDomain) -> Result<DenseDepthMap> {
    let cells = grid.map(|&d| match domain {
        ScaleDomain::Metric => (d.is_finite() && d > 0.0).then_some(d),
        ScaleDomain::Normalized => (!d.is_nan()).then_some(d),
    });
    DenseDepthMap::new(cells, domain)
}

fn read_depth_stem(stem: &Path, meta: Option<&RasterMeta>) -> Result<DenseDepthMap> {
    let grid = io::read_raster_pair(stem, meta.map(|m| (m.width, m.height)))?;
    let domain = meta.and_then(|m| m.scale_domain).unwrap_or(ScaleDomain::Metric);
    if let Some(m) = meta {
        if grid.shape() != (m.width, m.height) {
            return Err(Error::ShapeMismatch {
                expected: (m.width, m.height),
                found: grid.shape(),
            });
        }
    }
    depth_from_raster(&grid, domain)
}

/// Writes a depth map in the prediction file convention.
pub fn write_prediction(dir: &Path, name: &str, map: &DenseDepthMap) -> Result<()> {
    let stem = dir.join(format!("{name}.depth"));
    io::write_raster_pair(&stem, &map.to_nan_grid())?;
    io::write_json(
        &dir.join(format!("{name}.meta.json")),
        &RasterMeta {
            scale_domain: Some(map.domain()),
            width: map.width(),
            height: map.height(),
        },
    )
}

/// Reads a depth map written by [`write_prediction`] or by external tools.
pub fn read_prediction(dir: &Path, name: &str) -> Result<DenseDepthMap> {
    let provider = FileProvider { dir: dir.to_path_buf() };
    let (stem, meta_path) = provider.paths(name);
    let meta: RasterMeta = match io::read_json(&meta_path) {
        Ok(m) => m,
        Err(Error::MissingFile(_)) => return Err(Error::MissingPrediction(name.to_owned())),
        Err(e) => return Err(e),
    };
    match read_depth_stem(&stem, Some(&meta)) {
        Err(Error::MissingFile(_)) => Err(Error::MissingPrediction(name.to_owned())),
        other => other,
    }
}

impl DepthProvider for FileProvider {
    fn predict(&self, view: &ViewInput<'_>, _bundle: &ConditioningBundle, _member: usize) -> Result<DenseDepthMap> {
        let map = read_prediction(&self.dir, view.name)?;
        if map.shape() != (view.width, view.height) {
            return Err(Error::ShapeMismatch {
                expected: (view.width, view.height),
                found: map.shape(),
            });
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleNoise {
    pub sigma_mult: f64,
    pub scale: f64,
    pub shift: f64,
    pub seed: u64,
}

impl Default for OracleNoise {
    fn default() -> Self {
        OracleNoise {
            sigma_mult: 0.0,
            scale: 1.0,
            shift: 0.0,
            seed: 0,
        }
    }
}

/// Corrupts registered ground truth with multiplicative Gaussian noise and a
/// planted affine transform.
pub struct SyntheticOracle {
    pub ground_truth: BTreeMap<u32, DenseDepthMap>,
    pub noise: OracleNoise,
}

impl SyntheticOracle {
    /// Pure function of (seed, view, member): every call draws from its own
    /// ChaCha stream, so concurrent and repeated calls agree bit for bit.
    pub fn corrupt(&self, gt: &DenseDepthMap, image_id: u32, member: usize) -> DenseDepthMap {
        let OracleNoise {
            sigma_mult,
            scale,
            shift,
            seed,
        } = self.noise;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((image_id as u64) << 32) | member as u64);
        let normal = (sigma_mult > 0.0).then(|| Normal::new(0.0, sigma_mult).expect("sigma validated"));
        let cells = gt.grid().map(|&d| {
            // Draw for every pixel so the noise field does not depend on validity.
            let eps = normal.as_ref().map_or(0.0, |n| n.sample(&mut rng));
            d.map(|d| d * (1.0 + eps) * scale + shift)
                .filter(|v| v.is_finite() && *v > 0.0)
        });
        DenseDepthMap::new(cells, ScaleDomain::Metric).expect("filtered to positive values")
    }
}

impl DepthProvider for SyntheticOracle {
    fn predict(&self, view: &ViewInput<'_>, _bundle: &ConditioningBundle, member: usize) -> Result<DenseDepthMap> {
        let gt = self
            .ground_truth
            .get(&view.image_id)
            .ok_or_else(|| Error::NoGroundTruth(view.name.to_owned()))?;
        Ok(self.corrupt(gt, view.image_id, member))
    }
}

pub struct ConstantProvider {
    pub value: f64,
    pub domain: ScaleDomain,
}

impl DepthProvider for ConstantProvider {
    fn predict(&self, view: &ViewInput<'_>, _bundle: &ConditioningBundle, _member: usize) -> Result<DenseDepthMap> {
        DenseDepthMap::constant(view.width, view.height, self.value, self.domain)
    }
}

pub struct DensifiedProvider;

impl DepthProvider for DensifiedProvider {
    fn predict(&self, _view: &ViewInput<'_>, bundle: &ConditioningBundle, _member: usize) -> Result<DenseDepthMap> {
        Ok(bundle.densified_metric())
    }
}

/// Pixel-wise median across an ensemble.
///
/// A pixel is kept when it is valid in at least `ceil(n / 2)` inputs; with an
/// even number of valid samples the two central values are averaged.
pub fn ensemble_median(maps: &[DenseDepthMap]) -> Result<DenseDepthMap> {
    let first = maps.first().ok_or(Error::TooFewSamples { needed: 1, available: 0 })?;
    for m in &maps[1..] {
        if m.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                expected: first.shape(),
                found: m.shape(),
            });
        }
        if m.domain() != first.domain() {
            return Err(Error::DomainMismatch);
        }
    }
    let n = maps.len();
    let quorum = n.div_ceil(2);
    let (w, h) = first.shape();
    let mut vals = Vec::with_capacity(n);
    let cells = Grid::from_fn(w, h, |r, c| {
        vals.clear();
        vals.extend(maps.iter().filter_map(|m| m.get(r, c)));
        if vals.len() < quorum || vals.is_empty() {
            return None;
        }
        vals.sort_by(f64::total_cmp);
        let k = vals.len();
        Some(if k % 2 == 1 {
            vals[k / 2]
        } else {
            0.5 * (vals[k / 2 - 1] + vals[k / 2])
        })
    });
    DenseDepthMap::new(cells, first.domain())
}
