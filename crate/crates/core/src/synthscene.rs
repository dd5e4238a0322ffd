//! Procedural scenes with exact ground truth.
//!
//! A scene is an analytic surface (plane, sphere or the inside of a box), a
//! set of pinhole cameras, per-view ground-truth depth from ray casting, and
//! an SfM-like sparse model built by sampling ground-truth pixels. Gross
//! outliers can be planted; their identities are recorded so tests can check
//! exactly which samples were rejected.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::colmap::{self, Camera, Image, ModelFormat, Observation, ScenePoint, SfmModel, TrackElement};
use crate::depth::{DenseDepthMap, ScaleDomain};
use crate::error::{Error, Result};
use crate::fusion::TriangleMesh;
use crate::geometry::{
    camera_center, pixel_index, project_unchecked, quaternion_from_matrix, rotation_matrix, unproject,
    SparseDepthMap, SparseSample, Z_EPS,
};
use crate::io;
use crate::provider::write_prediction;
use crate::raster::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    /// The plane `z = z`, seen from cameras at `z = 0` looking along +z.
    Plane { z: f64 },
    /// Sphere of the given radius centred at the origin.
    Sphere { radius: f64 },
    /// Inside of an axis-aligned box centred at the origin.
    Room { extents: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    #[default]
    Orbit,
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub shape: ShapeSpec,
    pub n_views: usize,
    #[serde(default)]
    pub trajectory: Trajectory,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    /// Orbit radius for the sphere, baseline for the plane, and radius of
    /// the camera ring inside the room.
    pub camera_distance: f64,
    /// Sparse points sampled from each view's ground truth.
    pub sparse_density: usize,
    #[serde(default)]
    pub outlier_fraction: f64,
    /// Standard deviation of depth noise on inlier samples, scene units.
    #[serde(default)]
    pub noise_depth: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn plane(z: f64, n_views: usize) -> Self {
        SceneSpec {
            shape: ShapeSpec::Plane { z },
            n_views,
            trajectory: Trajectory::Orbit,
            width: 64,
            height: 48,
            fov_deg: 60.0,
            camera_distance: 0.3,
            sparse_density: 200,
            outlier_fraction: 0.0,
            noise_depth: 0.0,
            seed: 0,
        }
    }

    /// 128x96 views keep the pixel footprint on the sphere below the voxel
    /// size of a 128^3 volume around it.
    pub fn sphere(radius: f64, n_views: usize) -> Self {
        SceneSpec {
            shape: ShapeSpec::Sphere { radius },
            camera_distance: 3.0 * radius,
            fov_deg: 50.0,
            width: 128,
            height: 96,
            ..SceneSpec::plane(1.0, n_views)
        }
    }

    pub fn room(extents: [f64; 3], n_views: usize) -> Self {
        SceneSpec {
            shape: ShapeSpec::Room { extents },
            camera_distance: 0.1 * extents.iter().cloned().fold(f64::INFINITY, f64::min),
            fov_deg: 100.0,
            width: 96,
            height: 72,
            ..SceneSpec::plane(1.0, n_views)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_views == 0 {
            return bad("n_views must be >= 1".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad(format!("fov_deg must be in (0, 180), got {}", self.fov_deg));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad(format!("outlier_fraction must be in [0, 1), got {}", self.outlier_fraction));
        }
        if !(self.noise_depth.is_finite() && self.noise_depth >= 0.0) {
            return bad(format!("noise_depth must be >= 0, got {}", self.noise_depth));
        }
        if !(self.camera_distance.is_finite() && self.camera_distance >= 0.0) {
            return bad(format!("camera_distance must be >= 0, got {}", self.camera_distance));
        }
        match self.shape {
            ShapeSpec::Plane { z } if !(z.is_finite() && z > 0.0) => bad(format!("plane z must be > 0, got {z}")),
            ShapeSpec::Sphere { radius } if !(radius.is_finite() && radius > 0.0) => {
                bad(format!("radius must be > 0, got {radius}"))
            }
            ShapeSpec::Sphere { radius } if self.camera_distance <= radius => {
                bad("cameras must orbit outside the sphere".into())
            }
            ShapeSpec::Room { extents } if !extents.iter().all(|e| e.is_finite() && *e > 0.0) => {
                bad(format!("room extents must be > 0, got {extents:?}"))
            }
            ShapeSpec::Room { extents }
                if extents.iter().any(|e| self.camera_distance >= 0.5 * e) =>
            {
                bad("camera ring must lie inside the room".into())
            }
            _ => Ok(()),
        }
    }

    /// Ray-surface intersection: smallest `t > 0` with `o + t d` on the surface.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let eps = 1e-12;
        match self.shape {
            ShapeSpec::Plane { z } => {
                if d.z == 0.0 {
                    return None;
                }
                let t = (z - o.z) / d.z;
                (t > eps).then_some(t)
            }
            ShapeSpec::Sphere { radius } => {
                let a = d.dot(d);
                let b = o.dot(d);
                let c = o.dot(o) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // Numerically stable pair of roots.
                let q = -(b + b.signum() * sq);
                let (t1, t2) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
                let (near, far) = (t1.min(t2), t1.max(t2));
                if near > eps {
                    Some(near)
                } else if far > eps {
                    Some(far)
                } else {
                    None
                }
            }
            ShapeSpec::Room { extents } => {
                let mut best = f64::INFINITY;
                for axis in 0..3 {
                    if d[axis] == 0.0 {
                        continue;
                    }
                    let wall = 0.5 * extents[axis] * d[axis].signum();
                    let t = (wall - o[axis]) / d[axis];
                    if t > eps && t < best {
                        best = t;
                    }
                }
                best.is_finite().then_some(best)
            }
        }
    }
}

/// A sample whose depth was replaced by a gross error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedOutlier {
    pub point3d_id: u64,
    pub image_id: u32,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub model: SfmModel,
    pub gt_depths: BTreeMap<u32, DenseDepthMap>,
    pub gt_mesh: TriangleMesh,
    /// Sparse depth implied by the model's observations, per view.
    pub sparse_depths: BTreeMap<u32, SparseDepthMap>,
    pub outliers: Vec<PlantedOutlier>,
}

/// World-to-camera rotation looking along `forward` with `up` towards the
/// top of the image.
pub fn look_rotation(forward: &Vector3<f64>, up: &Vector3<f64>) -> Matrix3<f64> {
    let z = forward.normalize();
    let mut u = up - z * up.dot(&z);
    if u.norm() < 1e-9 {
        let alt = if z.y.abs() < 0.9 { Vector3::y() } else { Vector3::x() };
        u = alt - z * alt.dot(&z);
    }
    let y = -u.normalize();
    let x = y.cross(&z);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

fn posed_image(image_id: u32, center: Vector3<f64>, rotation: &Matrix3<f64>) -> Image {
    let q = quaternion_from_matrix(rotation);
    // Normalize to unit norm as tightly as f64 allows.
    let q = Quaternion::from(q.coords / q.coords.norm());
    let r = rotation_matrix(&q);
    Image {
        image_id,
        camera_id: 1,
        rotation: q,
        translation: -(r * center),
        name: format!("view_{image_id:03}.png"),
        observations: Vec::new(),
    }
}

fn camera_poses(spec: &SceneSpec) -> Vec<Image> {
    let n = spec.n_views;
    let d = spec.camera_distance;
    let deg = std::f64::consts::PI / 180.0;
    (0..n)
        .map(|i| {
            let id = i as u32 + 1;
            let s = if n > 1 { i as f64 / (n - 1) as f64 - 0.5 } else { 0.0 };
            let phase = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            match (spec.shape, spec.trajectory) {
                (ShapeSpec::Plane { .. }, traj) => {
                    let c = match traj {
                        Trajectory::Orbit if n > 1 => Vector3::new(d * phase.cos(), d * phase.sin(), 0.0),
                        Trajectory::Orbit => Vector3::zeros(),
                        Trajectory::Line => Vector3::new(2.0 * d * s, 0.0, 0.0),
                    };
                    posed_image(id, c, &Matrix3::identity())
                }
                (ShapeSpec::Sphere { .. }, Trajectory::Orbit) => {
                    let elev = if i % 2 == 0 { 20.0 } else { -20.0 } * deg;
                    let c = d * Vector3::new(elev.cos() * phase.cos(), elev.cos() * phase.sin(), elev.sin());
                    posed_image(id, c, &look_rotation(&-c, &Vector3::z()))
                }
                (ShapeSpec::Sphere { radius }, Trajectory::Line) => {
                    let c = Vector3::new(2.0 * radius * s, -d, 0.0);
                    posed_image(id, c, &look_rotation(&-c, &Vector3::z()))
                }
                (ShapeSpec::Room { .. }, traj) => {
                    let pairs = n.div_ceil(2);
                    let yaw = 2.0 * std::f64::consts::PI * (i / 2) as f64 / pairs as f64;
                    let pitch = if n == 1 {
                        0.0
                    } else if i % 2 == 0 {
                        45.0 * deg
                    } else {
                        -45.0 * deg
                    };
                    let c = match traj {
                        Trajectory::Orbit => d * Vector3::new(yaw.cos(), yaw.sin(), 0.0),
                        Trajectory::Line => Vector3::new(2.0 * d * s, 0.0, 0.0),
                    };
                    let f = Vector3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin());
                    posed_image(id, c, &look_rotation(&f, &Vector3::z()))
                }
            }
        })
        .collect()
}

fn camera(spec: &SceneSpec) -> Result<Camera> {
    let half = (spec.fov_deg * std::f64::consts::PI / 360.0).tan();
    let f = 0.5 * spec.width as f64 / half;
    Camera::pinhole(
        1,
        spec.width,
        spec.height,
        f,
        f,
        (spec.width / 2) as f64,
        (spec.height / 2) as f64,
    )
}

/// World-space ray through pixel `(row, col)`, scaled so that the ray
/// parameter equals camera-frame depth.
fn pixel_ray(cam: &Camera, pose: &Image, row: usize, col: usize) -> (Vector3<f64>, Vector3<f64>) {
    let r = rotation_matrix(&pose.rotation);
    let dir_cam = unproject(cam, [col as f64, row as f64], 1.0);
    (camera_center(pose), r.transpose() * dir_cam)
}

/// Ground-truth depth of one view by ray casting.
pub fn render_depth(spec: &SceneSpec, cam: &Camera, pose: &Image) -> DenseDepthMap {
    let cells = Grid::from_fn(cam.width, cam.height, |row, col| {
        let (o, d) = pixel_ray(cam, pose, row, col);
        spec.intersect(&o, &d).filter(|t| t.is_finite() && *t > 0.0)
    });
    DenseDepthMap::new(cells, ScaleDomain::Metric).expect("positive ray parameters")
}

struct PendingPoint {
    xyz: Vector3<f64>,
    /// Noise-free surface point used for visibility.
    surface: Vector3<f64>,
    source: u32,
    pixel: (usize, usize),
    outlier: bool,
}

/// Builds a scene. Bit-reproducible for a fixed spec.
pub fn generate(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let cam = camera(spec)?;
    let mut images = camera_poses(spec);
    let gt_depths: BTreeMap<u32, DenseDepthMap> = images
        .iter()
        .map(|im| (im.image_id, render_depth(spec, &cam, im)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pending: Vec<PendingPoint> = Vec::new();
    for image in &images {
        let gt = &gt_depths[&image.image_id];
        let valid: Vec<((usize, usize), f64)> = gt
            .grid()
            .indexed()
            .filter_map(|(rc, d)| d.map(|d| (rc, d)))
            .collect();
        if valid.len() < spec.sparse_density {
            return Err(Error::InvalidSpec(format!(
                "{} sees only {} surface pixels, fewer than sparse_density {}",
                image.name,
                valid.len(),
                spec.sparse_density
            )));
        }
        let (dmin, dmax) = valid
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.1), hi.max(v.1)));
        let mut chosen = index::sample(&mut rng, valid.len(), spec.sparse_density).into_vec();
        chosen.sort_unstable();
        let n_out = (spec.outlier_fraction * spec.sparse_density as f64).round() as usize;
        let mut is_outlier = vec![false; chosen.len()];
        for k in index::sample(&mut rng, chosen.len(), n_out.min(chosen.len())) {
            is_outlier[k] = true;
        }
        for (k, &vi) in chosen.iter().enumerate() {
            let ((row, col), d) = valid[vi];
            let (o, dir) = pixel_ray(&cam, image, row, col);
            let depth = if is_outlier[k] {
                if rng.random_bool(0.5) {
                    rng.random_range(0.1..0.5) * dmin
                } else {
                    rng.random_range(2.0..5.0) * dmax
                }
            } else if spec.noise_depth > 0.0 {
                let eps: f64 = StandardNormal.sample(&mut rng);
                (d + spec.noise_depth * eps).max(0.1 * d)
            } else {
                d
            };
            pending.push(PendingPoint {
                xyz: o + dir * depth,
                surface: o + dir * d,
                source: image.image_id,
                pixel: (row, col),
                outlier: is_outlier[k],
            });
        }
    }

    // Observations: the source pixel centre, plus exact projections into
    // every other view that sees the surface point unoccluded.
    let rotations: Vec<Matrix3<f64>> = images.iter().map(|im| rotation_matrix(&im.rotation)).collect();
    let centers: Vec<Vector3<f64>> = images.iter().map(camera_center).collect();
    let mut points = Vec::with_capacity(pending.len());
    let mut outliers = Vec::new();
    for (pi, p) in pending.iter().enumerate() {
        let point3d_id = pi as u64 + 1;
        let mut track = Vec::new();
        for (vi, image) in images.iter_mut().enumerate() {
            let xy = if image.image_id == p.source {
                [p.pixel.1 as f64, p.pixel.0 as f64]
            } else {
                if p.outlier {
                    continue;
                }
                let ray = p.surface - centers[vi];
                match spec.intersect(&centers[vi], &ray) {
                    Some(t) if t >= 1.0 - 1e-9 => {}
                    _ => continue,
                }
                let x_cam = rotations[vi] * p.xyz + image.translation;
                match project_unchecked(&cam, &x_cam) {
                    Some(uv) if x_cam.z > Z_EPS && pixel_index(cam.width, cam.height, uv).is_some() => uv,
                    _ => continue,
                }
            };
            track.push(TrackElement {
                image_id: image.image_id,
                point2d_idx: image.observations.len() as u32,
            });
            image.observations.push(Observation {
                xy,
                point3d_id: Some(point3d_id),
            });
        }
        if p.outlier {
            outliers.push(PlantedOutlier {
                point3d_id,
                image_id: p.source,
                row: p.pixel.0,
                col: p.pixel.1,
            });
        }
        points.push(ScenePoint {
            point3d_id,
            xyz: p.xyz,
            color: [128, 128, 128],
            error: 0.0,
            track,
        });
    }

    let mut sparse_depths = BTreeMap::new();
    for (vi, image) in images.iter().enumerate() {
        let mut map = SparseDepthMap::empty(cam.width, cam.height);
        for obs in &image.observations {
            let pid = obs.point3d_id.expect("all synthetic observations are linked");
            let x_cam = rotations[vi] * points[pid as usize - 1].xyz + image.translation;
            if let Some((row, col)) = pixel_index(cam.width, cam.height, obs.xy) {
                map.insert_nearest(row, col, SparseSample { depth: x_cam.z, point3d_id: pid });
            }
        }
        sparse_depths.insert(image.image_id, map);
    }

    let gt_mesh = surface_mesh(spec, &cam, &images, &gt_depths);
    let model = SfmModel::new([cam], images, points)?;
    Ok(SyntheticScene {
        spec: spec.clone(),
        model,
        gt_depths,
        gt_mesh,
        sparse_depths,
        outliers,
    })
}

fn surface_mesh(
    spec: &SceneSpec,
    cam: &Camera,
    images: &[Image],
    gt: &BTreeMap<u32, DenseDepthMap>,
) -> TriangleMesh {
    match spec.shape {
        ShapeSpec::Plane { z } => {
            // Rectangle covering every observed pixel, with a 10% margin.
            let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
            for image in images {
                for ((row, col), d) in gt[&image.image_id].grid().indexed() {
                    if let Some(d) = d {
                        let (o, dir) = pixel_ray(cam, image, row, col);
                        let p = o + dir * *d;
                        lo = lo.inf(&p);
                        hi = hi.sup(&p);
                    }
                }
            }
            let m = 0.1 * (hi - lo);
            let (x0, x1, y0, y1) = (lo.x - m.x, hi.x + m.x, lo.y - m.y, hi.y + m.y);
            TriangleMesh {
                vertices: vec![
                    Vector3::new(x0, y0, z),
                    Vector3::new(x1, y0, z),
                    Vector3::new(x1, y1, z),
                    Vector3::new(x0, y1, z),
                ],
                // Facing the cameras at z = 0.
                triangles: vec![[0, 2, 1], [0, 3, 2]],
                normals: None,
            }
        }
        ShapeSpec::Sphere { radius } => icosphere(radius, 5),
        ShapeSpec::Room { extents } => {
            let h = Vector3::from(extents) * 0.5;
            let vertices: Vec<Vector3<f64>> = (0..8)
                .map(|c| {
                    Vector3::new(
                        if c & 1 == 0 { -h.x } else { h.x },
                        if c & 2 == 0 { -h.y } else { h.y },
                        if c & 4 == 0 { -h.z } else { h.z },
                    )
                })
                .collect();
            // Quads wound so normals face the interior.
            let quads = [
                [0, 2, 6, 4],
                [1, 5, 7, 3],
                [0, 4, 5, 1],
                [2, 3, 7, 6],
                [0, 1, 3, 2],
                [4, 6, 7, 5],
            ];
            let triangles = quads
                .iter()
                .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
                .collect();
            TriangleMesh {
                vertices,
                triangles,
                normals: None,
            }
        }
    }
}

/// Subdivided icosahedron with vertices on the sphere.
pub fn icosphere(radius: f64, subdivisions: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vector3::from(*v).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vector3<f64>>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriangleMesh {
        vertices: vertices.into_iter().map(|v| v * radius).collect(),
        triangles: faces,
        normals: None,
    }
}

/// Metadata written next to an exported scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneManifest {
    pub spec: SceneSpec,
    pub outliers: Vec<PlantedOutlier>,
}

impl SyntheticScene {
    /// Writes `sparse/` (COLMAP), `gt_depth/`, `gt_mesh.ply` and `scene.json`.
    pub fn export(&self, dir: &Path, format: ModelFormat) -> Result<()> {
        colmap::write_model(&self.model, dir.join("sparse"), format)?;
        let gt_dir = dir.join("gt_depth");
        for (id, map) in &self.gt_depths {
            write_prediction(&gt_dir, &self.model.image(*id)?.name, map)?;
        }
        io::write_mesh_ply(&dir.join("gt_mesh.ply"), &self.gt_mesh)?;
        io::write_json(
            &dir.join("scene.json"),
            &SceneManifest {
                spec: self.spec.clone(),
                outliers: self.outliers.clone(),
            },
        )
    }
}
