//! Depth fusion: TSDF integration with marching-cubes extraction, and
//! multi-view consistency filtered point clouds.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colmap::{Camera, Image, SfmModel};
use crate::depth::{DenseDepthMap, ScaleDomain};
use crate::error::{Error, Result};
use crate::geometry::{pixel_index, project_unchecked, rotation_matrix, unproject};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidVolume(format!("triangle {t:?} indexes past {n} vertices")));
        }
        if self.vertices.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidVolume("non-finite vertex".into()));
        }
        Ok(())
    }

    pub fn triangle_area(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    /// Area-weighted vertex normals from the triangle winding.
    pub fn compute_normals(&mut self) {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| self.vertices[i]);
            let n = (b - a).cross(&(c - a));
            for &i in t {
                normals[i] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        self.normals = Some(normals);
    }
}

/// Dense truncated signed distance volume. Voxel `(i, j, k)` has its centre
/// at `origin + voxel_size * (i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    origin: Vector3<f64>,
    voxel_size: f64,
    dims: [usize; 3],
    truncation: f64,
    tsdf: Vec<f64>,
    weight: Vec<f64>,
}

impl TsdfVolume {
    pub fn new(origin: Vector3<f64>, voxel_size: f64, dims: [usize; 3], truncation: f64) -> Result<Self> {
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(Error::InvalidVolume(format!("voxel size must be > 0, got {voxel_size}")));
        }
        if !(truncation.is_finite() && truncation >= voxel_size) {
            return Err(Error::InvalidVolume(format!(
                "truncation {truncation} must be at least the voxel size {voxel_size}"
            )));
        }
        if dims.contains(&0) || origin.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidVolume(format!("bad grid: dims {dims:?}, origin {origin:?}")));
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::InvalidVolume(format!("dims {dims:?} overflow")))?;
        Ok(TsdfVolume {
            origin,
            voxel_size,
            dims,
            truncation,
            tsdf: vec![1.0; n],
            weight: vec![0.0; n],
        })
    }

    /// Volume covering `bounds` with at most roughly `voxel_budget` voxels.
    pub fn with_budget(bounds: &Aabb, voxel_budget: usize, truncation_factor: f64) -> Result<Self> {
        let ext = bounds.extent();
        if !(ext.iter().all(|e| *e > 0.0)) || voxel_budget == 0 {
            return Err(Error::InvalidVolume(format!("cannot size a volume for extent {ext:?}")));
        }
        let voxel = (ext.x * ext.y * ext.z / voxel_budget as f64).cbrt();
        Self::covering(bounds, voxel, truncation_factor)
    }

    /// Volume covering `bounds` at a fixed voxel size.
    pub fn covering(bounds: &Aabb, voxel_size: f64, truncation_factor: f64) -> Result<Self> {
        let ext = bounds.extent();
        let dims = [0, 1, 2].map(|a| (ext[a] / voxel_size).ceil() as usize + 1);
        TsdfVolume::new(bounds.min, voxel_size, dims, truncation_factor * voxel_size)
    }

    /// Volume whose values come from a signed distance function, all
    /// voxels observed once. Used for analytic tests.
    pub fn from_sdf(
        origin: Vector3<f64>,
        voxel_size: f64,
        dims: [usize; 3],
        truncation: f64,
        sdf: impl Fn(&Vector3<f64>) -> f64,
    ) -> Result<Self> {
        let mut v = TsdfVolume::new(origin, voxel_size, dims, truncation)?;
        for idx in 0..v.tsdf.len() {
            let p = v.voxel_center(v.unflatten(idx));
            v.tsdf[idx] = (sdf(&p) / truncation).clamp(-1.0, 1.0);
            v.weight[idx] = 1.0;
        }
        Ok(v)
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn tsdf(&self) -> &[f64] {
        &self.tsdf
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    pub fn flat_index(&self, [i, j, k]: [usize; 3]) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn unflatten(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        [i, j, idx / (self.dims[0] * self.dims[1])]
    }

    pub fn voxel_center(&self, [i, j, k]: [usize; 3]) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    pub fn is_observed(&self) -> bool {
        self.weight.iter().any(|&w| w > 0.0)
    }

    /// Fuses one depth map. Voxels whose centre projects to a valid pixel
    /// with depth `d` receive `clamp((d - z) / truncation, -1, 1)` unless
    /// they lie more than one truncation behind the surface.
    pub fn integrate(&mut self, depth: &DenseDepthMap, cam: &Camera, pose: &Image, max_weight: f64) -> Result<()> {
        if depth.domain() != ScaleDomain::Metric {
            return Err(Error::DomainMismatch);
        }
        if depth.shape() != (cam.width, cam.height) {
            return Err(Error::ShapeMismatch {
                expected: (cam.width, cam.height),
                found: depth.shape(),
            });
        }
        if !(max_weight >= 1.0) {
            return Err(Error::InvalidVolume(format!("max_weight must be >= 1, got {max_weight}")));
        }
        let frame = Frame::new(cam, pose);
        let [nx, ny, _] = self.dims;
        let slab = nx * ny;
        let (origin, voxel, trunc) = (self.origin, self.voxel_size, self.truncation);
        self.tsdf
            .par_chunks_mut(slab)
            .zip(self.weight.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(k, (tsdf, weight))| {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = origin + Vector3::new(i as f64, j as f64, k as f64) * voxel;
                        let pc = frame.to_cam(&p);
                        let Some(uv) = project_unchecked(cam, &pc) else {
                            continue;
                        };
                        let Some((row, col)) = pixel_index(cam.width, cam.height, uv) else {
                            continue;
                        };
                        let Some(d) = depth.get(row, col) else {
                            continue;
                        };
                        let s = d - pc.z;
                        if s <= -trunc {
                            continue;
                        }
                        let sample = (s / trunc).clamp(-1.0, 1.0);
                        let idx = i + nx * j;
                        let w = weight[idx];
                        tsdf[idx] = ((tsdf[idx] * w + sample) / (w + 1.0)).clamp(-1.0, 1.0);
                        weight[idx] = (w + 1.0).min(max_weight);
                    }
                }
            });
        Ok(())
    }

    /// Marching cubes at iso-level 0. Cubes with any unobserved corner are
    /// skipped; triangle normals point towards positive (free) space.
    pub fn extract_mesh(&self) -> Result<TriangleMesh> {
        if !self.is_observed() {
            return Err(Error::EmptyVolume);
        }
        let [nx, ny, nz] = self.dims;
        if nx < 2 || ny < 2 || nz < 2 {
            return Ok(TriangleMesh::default());
        }
        let table = cube_table();
        let slabs: Vec<Vec<[usize; 3]>> = (0..nz - 1)
            .into_par_iter()
            .map(|k| {
                let mut tris = Vec::new();
                for j in 0..ny - 1 {
                    for i in 0..nx - 1 {
                        let mut config = 0usize;
                        let mut observed = true;
                        for (c, offset) in CORNERS.iter().enumerate() {
                            let idx = self.flat_index([i + offset[0], j + offset[1], k + offset[2]]);
                            if self.weight[idx] <= 0.0 {
                                observed = false;
                                break;
                            }
                            if self.tsdf[idx] < 0.0 {
                                config |= 1 << c;
                            }
                        }
                        if !observed || config == 0 || config == 255 {
                            continue;
                        }
                        let global = |e: u8| {
                            let (axis, lower) = EDGES[e as usize];
                            let o = CORNERS[lower];
                            self.flat_index([i + o[0], j + o[1], k + o[2]]) * 3 + axis
                        };
                        for lp in &table[config] {
                            for m in 1..lp.len() - 1 {
                                tris.push([global(lp[0]), global(lp[m]), global(lp[m + 1])]);
                            }
                        }
                    }
                }
                tris
            })
            .collect();
        let mut ids: HashMap<usize, usize> = HashMap::new();
        let mut mesh = TriangleMesh::default();
        for tri in slabs.into_iter().flatten() {
            let t = tri.map(|gid| {
                *ids.entry(gid).or_insert_with(|| {
                    mesh.vertices.push(self.edge_vertex(gid));
                    mesh.vertices.len() - 1
                })
            });
            mesh.triangles.push(t);
        }
        Ok(mesh)
    }

    fn edge_vertex(&self, gid: usize) -> Vector3<f64> {
        let (idx, axis) = (gid / 3, gid % 3);
        let a = self.unflatten(idx);
        let mut b = a;
        b[axis] += 1;
        let fa = self.tsdf[idx];
        let fb = self.tsdf[self.flat_index(b)];
        let t = fa / (fa - fb);
        let pa = self.voxel_center(a);
        let mut p = pa;
        p[axis] += t * self.voxel_size;
        p
    }
}

/// Corner `c` of a cube sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Edge `e` runs along `axis` from corner `lower` to `lower | (1 << axis)`.
const EDGES: [(usize, usize); 12] = [
    (0, 0),
    (0, 2),
    (0, 4),
    (0, 6),
    (1, 0),
    (1, 1),
    (1, 4),
    (1, 5),
    (2, 0),
    (2, 1),
    (2, 2),
    (2, 3),
];

fn edge_between(a: usize, b: usize) -> u8 {
    let (lo, hi) = (a.min(b), a.max(b));
    let axis = (hi ^ lo).trailing_zeros() as usize;
    EDGES
        .iter()
        .position(|&e| e == (axis, lo))
        .expect("corners share an edge") as u8
}

/// Polygon loops (as local edge indices) for each of the 256 sign patterns.
///
/// The table is derived rather than transcribed. On every cube face the
/// sign-change edges are joined pairwise: walking the face counter-clockwise
/// as seen from outside, each entry into the negative region is joined to the
/// next exit. On faces with four crossings this separates the two negative
/// corners, and neighbouring cubes agree because the rule only looks at the
/// shared face. Directed segments chain into closed loops whose winding puts
/// the positive side on the left, so fan triangles face positive space.
fn cube_table() -> &'static Vec<Vec<Vec<u8>>> {
    static TABLE: OnceLock<Vec<Vec<Vec<u8>>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let pos = |c: usize| Vector3::from(CORNERS[c].map(|v| v as f64));
        let mut faces: Vec<[usize; 4]> = Vec::new();
        for axis in 0..3 {
            let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
            for side in 0..2 {
                let corner = |bu: usize, bw: usize| (side << axis) | (bu << u) | (bw << w);
                let mut cycle = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                let n = (pos(cycle[1]) - pos(cycle[0])).cross(&(pos(cycle[2]) - pos(cycle[1])));
                let outward = if side == 0 { -1.0 } else { 1.0 };
                if n[axis] * outward < 0.0 {
                    cycle.reverse();
                }
                faces.push(cycle);
            }
        }
        (0..256usize)
            .map(|config| {
                let neg = |c: usize| config & (1 << c) != 0;
                let mut next: [Option<u8>; 12] = [None; 12];
                for cycle in &faces {
                    // (edge, is_entry) in walk order.
                    let crossings: Vec<(u8, bool)> = (0..4)
                        .filter_map(|m| {
                            let (a, b) = (cycle[m], cycle[(m + 1) % 4]);
                            (neg(a) != neg(b)).then(|| (edge_between(a, b), neg(b)))
                        })
                        .collect();
                    for (p, &(edge, entry)) in crossings.iter().enumerate() {
                        if !entry {
                            continue;
                        }
                        let exit = (1..crossings.len())
                            .map(|s| crossings[(p + s) % crossings.len()])
                            .find(|c| !c.1)
                            .expect("crossings alternate");
                        next[edge as usize] = Some(exit.0);
                    }
                }
                let mut seen = [false; 12];
                let mut loops = Vec::new();
                for start in 0..12u8 {
                    if seen[start as usize] || next[start as usize].is_none() {
                        continue;
                    }
                    let mut lp = vec![start];
                    seen[start as usize] = true;
                    let mut e = next[start as usize].unwrap();
                    while e != start {
                        seen[e as usize] = true;
                        lp.push(e);
                        e = next[e as usize].expect("segments form closed loops");
                    }
                    loops.push(lp);
                }
                loops
            })
            .collect()
    })
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    /// Per-axis bounds after dropping `floor(trim * n)` extreme coordinates
    /// on each side, padded by `padding` times the largest extent.
    pub fn trimmed(points: &[Vector3<f64>], trim: f64, padding: f64) -> Result<Aabb> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let n = points.len();
        let drop = ((trim * n as f64) + 1e-9).floor() as usize;
        let drop = drop.min((n - 1) / 2);
        let mut min = Vector3::zeros();
        let mut max = Vector3::zeros();
        for axis in 0..3 {
            let mut c: Vec<f64> = points.iter().map(|p| p[axis]).collect();
            c.sort_by(f64::total_cmp);
            min[axis] = c[drop];
            max[axis] = c[n - 1 - drop];
        }
        let pad = padding * (max - min).max();
        if !(pad > 0.0) {
            return Err(Error::InvalidVolume("points span no volume".into()));
        }
        Ok(Aabb {
            min: min.add_scalar(-pad),
            max: max.add_scalar(pad),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Tsdf,
    PointCloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyParams {
    /// Number of other views that must agree.
    pub n_views: usize,
    pub pixel_tol: f64,
    /// Relative depth tolerance `|d1 - d2| / d1`.
    pub depth_tol: f64,
}

impl Default for ConsistencyParams {
    fn default() -> Self {
        ConsistencyParams {
            n_views: 2,
            pixel_tol: 1.0,
            depth_tol: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Target voxel count when the volume is auto-sized.
    pub voxel_budget: usize,
    /// Fixed voxel size, overriding the budget.
    pub voxel_size: Option<f64>,
    pub truncation_factor: f64,
    pub max_weight: f64,
    pub bounds_trim: f64,
    pub bounds_padding: f64,
    pub consistency: ConsistencyParams,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            mode: FusionMode::Tsdf,
            voxel_budget: 128 * 128 * 128,
            voxel_size: None,
            truncation_factor: 4.0,
            max_weight: 64.0,
            bounds_trim: 0.02,
            bounds_padding: 0.05,
            consistency: ConsistencyParams::default(),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.voxel_budget == 0 {
            return bad("voxel_budget must be > 0".into());
        }
        if let Some(v) = self.voxel_size {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("voxel_size must be > 0, got {v}"));
            }
        }
        if !(self.truncation_factor >= 1.0) {
            return bad(format!("truncation_factor must be >= 1, got {}", self.truncation_factor));
        }
        if !(self.max_weight >= 1.0) {
            return bad(format!("max_weight must be >= 1, got {}", self.max_weight));
        }
        if !(0.0..0.5).contains(&self.bounds_trim) || !(self.bounds_padding > 0.0) {
            return bad("bounds_trim must be in [0, 0.5) and bounds_padding > 0".into());
        }
        let c = &self.consistency;
        if !(c.pixel_tol >= 0.0 && c.depth_tol >= 0.0) {
            return bad("consistency tolerances must be >= 0".into());
        }
        Ok(())
    }

    /// Volume sized from the sparse point cloud.
    pub fn volume_for(&self, model: &SfmModel) -> Result<TsdfVolume> {
        let points: Vec<Vector3<f64>> = model.points().values().map(|p| p.xyz).collect();
        let bounds = Aabb::trimmed(&points, self.bounds_trim, self.bounds_padding)?;
        match self.voxel_size {
            Some(v) => TsdfVolume::covering(&bounds, v, self.truncation_factor),
            None => TsdfVolume::with_budget(&bounds, self.voxel_budget, self.truncation_factor),
        }
    }
}

/// Precomputed world-to-camera transform of one view.
struct Frame<'a> {
    cam: &'a Camera,
    r: Matrix3<f64>,
    t: Vector3<f64>,
}

impl<'a> Frame<'a> {
    fn new(cam: &'a Camera, pose: &Image) -> Self {
        Frame {
            cam,
            r: rotation_matrix(&pose.rotation),
            t: pose.translation,
        }
    }

    fn to_cam(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r * p + self.t
    }

    fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r.transpose() * (p - self.t)
    }

    fn pixel_point(&self, row: usize, col: usize, depth: f64) -> Vector3<f64> {
        self.to_world(&unproject(self.cam, [col as f64, row as f64], depth))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedPoint {
    pub xyz: Vector3<f64>,
    /// Number of other views that confirmed the point.
    pub support: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusedPointCloud {
    pub points: Vec<FusedPoint>,
}

/// Back-projects every valid pixel and keeps points confirmed by at least
/// `n_views` other views.
///
/// A view confirms a point when the point lands on one of its valid pixels,
/// the depths agree within `depth_tol` (relative to the projected depth) and
/// the pixel's own 3D point reprojects within `pixel_tol` of the source
/// pixel. Kept points are averaged with their confirming observations.
pub fn fuse_point_cloud(
    depths: &BTreeMap<u32, DenseDepthMap>,
    model: &SfmModel,
    params: &ConsistencyParams,
) -> Result<FusedPointCloud> {
    if depths.is_empty() || depths.len() < params.n_views {
        return Err(Error::TooFewViews {
            needed: params.n_views.max(1),
            available: depths.len(),
        });
    }
    let mut views = Vec::with_capacity(depths.len());
    for (&id, map) in depths {
        if map.domain() != ScaleDomain::Metric {
            return Err(Error::DomainMismatch);
        }
        let image = model.image(id)?;
        let cam = model.camera_of(image);
        if map.shape() != (cam.width, cam.height) {
            return Err(Error::ShapeMismatch {
                expected: (cam.width, cam.height),
                found: map.shape(),
            });
        }
        views.push((Frame::new(cam, image), map));
    }
    let per_view: Vec<Vec<FusedPoint>> = views
        .par_iter()
        .enumerate()
        .map(|(vi, (src, map))| {
            let mut out = Vec::new();
            for ((row, col), d) in map.grid().indexed() {
                let Some(d) = *d else { continue };
                let x = src.pixel_point(row, col, d);
                let mut sum = x;
                let mut support = 0;
                for (vj, (other, other_map)) in views.iter().enumerate() {
                    if vj == vi {
                        continue;
                    }
                    let pc = other.to_cam(&x);
                    let Some(uv) = project_unchecked(other.cam, &pc) else { continue };
                    let Some((r2, c2)) = pixel_index(other.cam.width, other.cam.height, uv) else {
                        continue;
                    };
                    let Some(d2) = other_map.get(r2, c2) else { continue };
                    if (pc.z - d2).abs() > params.depth_tol * pc.z {
                        continue;
                    }
                    let y = other.pixel_point(r2, c2, d2);
                    let Some(back) = project_unchecked(src.cam, &src.to_cam(&y)) else { continue };
                    let err = ((back[0] - col as f64).powi(2) + (back[1] - row as f64).powi(2)).sqrt();
                    if err > params.pixel_tol {
                        continue;
                    }
                    sum += y;
                    support += 1;
                }
                if support >= params.n_views {
                    out.push(FusedPoint {
                        xyz: sum / (support + 1) as f64,
                        support,
                    });
                }
            }
            out
        })
        .collect();
    Ok(FusedPointCloud {
        points: per_view.into_iter().flatten().collect(),
    })
}
