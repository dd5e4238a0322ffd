use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleDomain {
    /// Scene units, strictly positive.
    Metric,
    /// Normalized to `[-1, 1]` against a per-view range.
    Normalized,
}

/// Dense per-pixel depth; `None` marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDepthMap {
    depth: Grid<Option<f64>>,
    domain: ScaleDomain,
}

impl DenseDepthMap {
    /// Checks the domain invariant on every valid pixel.
    pub fn new(depth: Grid<Option<f64>>, domain: ScaleDomain) -> Result<Self> {
        for &d in depth.as_slice().iter().flatten() {
            let ok = match domain {
                ScaleDomain::Metric => d.is_finite() && d > 0.0,
                ScaleDomain::Normalized => (-1.0..=1.0).contains(&d),
            };
            if !ok {
                return Err(Error::InvalidProvider(format!(
                    "depth value {d} violates the {domain:?} domain"
                )));
            }
        }
        Ok(DenseDepthMap { depth, domain })
    }

    /// Builds a metric map, marking non-finite and non-positive values invalid.
    pub fn metric_from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        let depth = Grid::from_vec(
            width,
            height,
            values
                .into_iter()
                .map(|d| (d.is_finite() && d > 0.0).then_some(d))
                .collect(),
        );
        DenseDepthMap {
            depth,
            domain: ScaleDomain::Metric,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64, domain: ScaleDomain) -> Result<Self> {
        DenseDepthMap::new(Grid::filled(width, height, Some(value)), domain)
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.depth.shape()
    }

    pub fn domain(&self) -> ScaleDomain {
        self.domain
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.depth.get(row, col).copied().flatten()
    }

    pub fn grid(&self) -> &Grid<Option<f64>> {
        &self.depth
    }

    pub fn valid_count(&self) -> usize {
        self.depth.as_slice().iter().filter(|d| d.is_some()).count()
    }

    /// Raster with NaN at invalid pixels.
    pub fn to_nan_grid(&self) -> Grid<f64> {
        self.depth.map(|d| d.unwrap_or(f64::NAN))
    }
}
