//! Camera math and rendering of the SfM point cloud into sparse depth maps.

use nalgebra::{Matrix3, Quaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::colmap::{Camera, CameraModel, Image, SfmModel};
use crate::error::{Error, Result};
use crate::raster::Grid;

/// Points with camera-frame depth at or below this are treated as behind the camera.
pub const Z_EPS: f64 = 1e-6;

/// Rotation matrix of a unit quaternion `(w, x, y, z)`. The quaternion is
/// used as stored, without renormalization.
pub fn rotation_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Unit quaternion `(w, x, y, z)` of a rotation matrix, with `w >= 0`.
pub fn quaternion_from_matrix(r: &Matrix3<f64>) -> Quaternion<f64> {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let (w, x, y, z);
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (r[(2, 1)] - r[(1, 2)]) / s;
        y = (r[(0, 2)] - r[(2, 0)]) / s;
        z = (r[(1, 0)] - r[(0, 1)]) / s;
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(2, 1)] - r[(1, 2)]) / s;
        x = 0.25 * s;
        y = (r[(0, 1)] + r[(1, 0)]) / s;
        z = (r[(0, 2)] + r[(2, 0)]) / s;
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(0, 2)] - r[(2, 0)]) / s;
        x = (r[(0, 1)] + r[(1, 0)]) / s;
        y = 0.25 * s;
        z = (r[(1, 2)] + r[(2, 1)]) / s;
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        w = (r[(1, 0)] - r[(0, 1)]) / s;
        x = (r[(0, 2)] + r[(2, 0)]) / s;
        y = (r[(1, 2)] + r[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let q = Quaternion::new(w, x, y, z);
    let q = q / q.norm();
    if q.w < 0.0 {
        -q
    } else {
        q
    }
}

/// `x_cam = R(q) * x_world + t`
pub fn world_to_camera(pose: &Image, xyz_world: &Vector3<f64>) -> Vector3<f64> {
    rotation_matrix(&pose.rotation) * xyz_world + pose.translation
}

/// `x_world = R(q)^T * (x_cam - t)`
pub fn camera_to_world(pose: &Image, xyz_cam: &Vector3<f64>) -> Vector3<f64> {
    rotation_matrix(&pose.rotation).transpose() * (xyz_cam - pose.translation)
}

pub fn camera_center(pose: &Image) -> Vector3<f64> {
    -(rotation_matrix(&pose.rotation).transpose() * pose.translation)
}

/// Projects a camera-frame point to continuous pixel coordinates without a
/// bounds check. `None` when the point is at or behind the camera plane.
pub fn project_unchecked(cam: &Camera, xyz_cam: &Vector3<f64>) -> Option<[f64; 2]> {
    if !(xyz_cam.z > Z_EPS) {
        return None;
    }
    let mut x = xyz_cam.x / xyz_cam.z;
    let mut y = xyz_cam.y / xyz_cam.z;
    if cam.model == CameraModel::SimpleRadial {
        let factor = 1.0 + cam.radial_k * (x * x + y * y);
        x *= factor;
        y *= factor;
    }
    Some([cam.fx * x + cam.cx, cam.fy * y + cam.cy])
}

/// Projects a camera-frame point into the image. `None` when the point is
/// behind the camera or its nearest pixel lies outside the image.
pub fn project(cam: &Camera, xyz_cam: &Vector3<f64>) -> Option<[f64; 2]> {
    let uv = project_unchecked(cam, xyz_cam)?;
    pixel_index(cam.width, cam.height, uv).map(|_| uv)
}

/// Nearest integer pixel `(row, col)` of continuous coordinates `(u, v)`.
/// Pixel centres sit at integer coordinates.
pub fn pixel_index(width: usize, height: usize, uv: [f64; 2]) -> Option<(usize, usize)> {
    let col = (uv[0] + 0.5).floor();
    let row = (uv[1] + 0.5).floor();
    if col >= 0.0 && row >= 0.0 && col < width as f64 && row < height as f64 {
        Some((row as usize, col as usize))
    } else {
        None
    }
}

/// Camera-frame point at pixel `(u, v)` with depth `z`. Inverts the radial
/// distortion by fixed-point iteration.
pub fn unproject(cam: &Camera, uv: [f64; 2], z: f64) -> Vector3<f64> {
    let xd = (uv[0] - cam.cx) / cam.fx;
    let yd = (uv[1] - cam.cy) / cam.fy;
    let (mut x, mut y) = (xd, yd);
    if cam.model == CameraModel::SimpleRadial && cam.radial_k != 0.0 {
        for _ in 0..50 {
            let factor = 1.0 + cam.radial_k * (x * x + y * y);
            let (nx, ny) = (xd / factor, yd / factor);
            let done = (nx - x).abs() < 1e-15 && (ny - y).abs() < 1e-15;
            x = nx;
            y = ny;
            if done {
                break;
            }
        }
    }
    Vector3::new(x * z, y * z, z)
}

/// One filled pixel of a sparse depth map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseSample {
    pub depth: f64,
    pub point3d_id: u64,
}

/// Per-view depth from projected SfM points. Empty pixels carry no sample;
/// every present depth is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthMap {
    samples: Grid<Option<SparseSample>>,
}

impl SparseDepthMap {
    pub fn empty(width: usize, height: usize) -> Self {
        SparseDepthMap {
            samples: Grid::filled(width, height, None),
        }
    }

    /// Validates positivity of every present sample.
    pub fn from_grid(samples: Grid<Option<SparseSample>>) -> Result<Self> {
        for s in samples.as_slice().iter().flatten() {
            if !(s.depth > 0.0 && s.depth.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "sparse depth {} for point {} is not positive",
                    s.depth, s.point3d_id
                )));
            }
        }
        Ok(SparseDepthMap { samples })
    }

    pub fn width(&self) -> usize {
        self.samples.width()
    }

    pub fn height(&self) -> usize {
        self.samples.height()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<SparseSample> {
        self.samples.get(row, col).copied().flatten()
    }

    pub fn samples(&self) -> &Grid<Option<SparseSample>> {
        &self.samples
    }

    /// Stores `sample` unless a smaller or equal depth already occupies the pixel.
    pub fn insert_nearest(&mut self, row: usize, col: usize, sample: SparseSample) {
        assert!(sample.depth > 0.0, "sparse depth must be positive");
        let slot = &mut self.samples[(row, col)];
        match slot {
            Some(existing) if existing.depth <= sample.depth => {}
            _ => *slot = Some(sample),
        }
    }

    pub fn remove(&mut self, row: usize, col: usize) {
        self.samples[(row, col)] = None;
    }

    /// Filled pixels in row-major order.
    pub fn valued(&self) -> impl Iterator<Item = ((usize, usize), SparseSample)> + '_ {
        self.samples
            .indexed()
            .filter_map(|(rc, s)| s.map(|s| (rc, s)))
    }

    pub fn count(&self) -> usize {
        self.samples.as_slice().iter().filter(|s| s.is_some()).count()
    }

    /// Depth raster with 0 for empty pixels.
    pub fn depth_or_zero(&self) -> Grid<f64> {
        self.samples.map(|s| s.map_or(0.0, |s| s.depth))
    }
}

/// Where a visible point is splatted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplatMode {
    /// At the keypoint position recorded by SfM.
    #[default]
    Observed,
    /// At the projection of the 3D point.
    Reprojected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// Only project points whose track includes the view.
    pub use_visibility: bool,
    pub splat: SplatMode,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            use_visibility: true,
            splat: SplatMode::Observed,
        }
    }
}

/// Renders the sparse depth map of one view. Depth is the camera-frame z;
/// when several points land on a pixel the nearest one wins.
pub fn render_sparse_depth(
    model: &SfmModel,
    image_id: u32,
    opts: RenderOptions,
) -> Result<SparseDepthMap> {
    let image = model.image(image_id)?;
    let cam = model.camera_of(image);
    let mut map = SparseDepthMap::empty(cam.width, cam.height);
    let rot = rotation_matrix(&image.rotation);
    let mut splat = |point3d_id: u64, observed: Option<[f64; 2]>| {
        let xyz = &model.points()[&point3d_id].xyz;
        let x_cam = rot * xyz + image.translation;
        if !(x_cam.z > Z_EPS) {
            return;
        }
        let uv = match (opts.splat, observed) {
            (SplatMode::Observed, Some(uv)) => uv,
            _ => match project_unchecked(cam, &x_cam) {
                Some(uv) => uv,
                None => return,
            },
        };
        if let Some((row, col)) = pixel_index(cam.width, cam.height, uv) {
            map.insert_nearest(
                row,
                col,
                SparseSample {
                    depth: x_cam.z,
                    point3d_id,
                },
            );
        }
    };
    if opts.use_visibility {
        for obs in &image.observations {
            if let Some(pid) = obs.point3d_id {
                splat(pid, Some(obs.xy));
            }
        }
    } else {
        for &pid in model.points().keys() {
            splat(pid, None);
        }
    }
    Ok(map)
}
