//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use depthfuse::alignment::{align_view, fit_ransac, resolve_threshold, AlignmentConfig, AlignmentMethod};
use depthfuse::colmap::{
    read_model, write_model, Camera, Image, ModelFormat, Observation, ScenePoint, SfmModel, TrackElement,
};
use depthfuse::conditioning::{compute_range, densify_knn, distance_map};
use depthfuse::depth::DenseDepthMap;
use depthfuse::evaluation::{chamfer, depth_rmse, fscore};
use depthfuse::fusion::{FusionConfig, TriangleMesh};
use depthfuse::geometry::{SparseDepthMap, SparseSample};
use depthfuse::pipeline::{cmd_reconstruct, PipelineConfig};
use depthfuse::provider::{OracleNoise, ProviderSpec, SyntheticOracle};
use depthfuse::synthscene::{generate, SceneSpec, SyntheticScene};
use depthfuse::{Error, Grid};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    if took > limit {
        Err(format!("took {took:.2?}, limit {limit:?}"))
    } else {
        Ok(took)
    }
}

// ---------------------------------------------------------------------------
// Brute-force oracles.

fn random_sparse(rng: &mut ChaCha8Rng, width: usize, height: usize, count: usize) -> SparseDepthMap {
    let mut map = SparseDepthMap::empty(width, height);
    while map.count() < count {
        let (r, c) = (rng.random_range(0..height), rng.random_range(0..width));
        if map.get(r, c).is_none() {
            let depth = rng.random_range(0.5..20.0);
            map.insert_nearest(r, c, SparseSample { depth, point3d_id: map.count() as u64 });
        }
    }
    map
}

fn brute_knn(sparse: &SparseDepthMap, k: usize) -> Grid<f64> {
    let valued: Vec<((usize, usize), f64)> = sparse.valued().map(|(rc, s)| (rc, s.depth)).collect();
    Grid::from_fn(sparse.width(), sparse.height(), |r, c| {
        if let Some(s) = sparse.get(r, c) {
            return s.depth;
        }
        let mut all: Vec<(f64, (usize, usize), f64)> = valued
            .iter()
            .map(|&((vr, vc), d)| {
                let (dr, dc) = (vr as f64 - r as f64, vc as f64 - c as f64);
                (dr * dr + dc * dc, (vr, vc), d)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (mut num, mut den) = (0.0, 0.0);
        for &(d2, _, d) in &all[..k] {
            let w = 1.0 / d2.sqrt();
            num += w * d;
            den += w;
        }
        num / den
    })
}

fn brute_distance(sparse: &SparseDepthMap) -> Grid<f64> {
    let valued: Vec<(usize, usize)> = sparse.valued().map(|(rc, _)| rc).collect();
    Grid::from_fn(sparse.width(), sparse.height(), |r, c| {
        valued
            .iter()
            .map(|&(vr, vc)| ((vr as f64 - r as f64).powi(2) + (vc as f64 - c as f64).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    })
}

fn brute_nearest(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    let d = p - q;
                    d.x * d.x + d.y * d.y + d.z * d.z
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

fn brute_consensus(pairs: &[(f64, f64)], threshold: f64) -> usize {
    let mut best = 0;
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            let (a, b) = (pairs[i], pairs[j]);
            if a.0 == b.0 {
                continue;
            }
            let scale = (b.1 - a.1) / (b.0 - a.0);
            if scale <= 0.0 {
                continue;
            }
            let shift = a.1 - scale * a.0;
            let n = pairs.iter().filter(|p| (scale * p.0 + shift - p.1).abs() < threshold).count();
            best = best.max(n);
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Criteria.

fn conditioning_oracles() -> Outcome {
    // The limit applies to the library calls; oracle time is excluded.
    let mut spent = Duration::ZERO;
    let mut checked = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = rng.random_range(1..=500);
        let sparse = random_sparse(&mut rng, 64, 64, count);
        for k in [1, 3] {
            let t = Instant::now();
            let result = densify_knn(&sparse, k);
            spent += t.elapsed();
            match result {
                Ok(dense) => {
                    ensure!(dense == brute_knn(&sparse, k), "seed {seed}, k={k}: KNN differs from oracle");
                    checked += 1;
                }
                Err(Error::TooFewPoints { .. }) if count < k => {}
                Err(e) => return Err(format!("seed {seed}, k={k}: {e}")),
            }
        }
        let t = Instant::now();
        let dist = distance_map(&sparse).map_err(|e| e.to_string())?;
        spent += t.elapsed();
        let oracle = brute_distance(&sparse);
        let worst = dist
            .as_slice()
            .iter()
            .zip(oracle.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure!(worst <= 1e-9, "seed {seed}: distance map off by {worst:e}");
    }
    ensure!(spent < Duration::from_secs(30), "took {spent:.2?}, limit 30s");
    Ok(format!("{checked} KNN maps exact, 100 distance maps, {spent:.2?}"))
}

fn normalization_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for m in 0..100 {
        let count = rng.random_range(2..200);
        let sparse = random_sparse(&mut rng, 32, 32, count);
        let range = compute_range(&sparse, 0.02).map_err(|e| e.to_string())?;
        ensure!(range.d_min_adj == 0.8 * range.raw_min, "map {m}: lower bound not 0.8 x raw min");
        ensure!(range.d_max_adj == 1.2 * range.raw_max, "map {m}: upper bound not 1.2 x raw max");
        for _ in 0..1000 {
            let d = rng.random_range(range.d_min_adj..=range.d_max_adj);
            let back = range.denormalize(range.normalize(d));
            worst = worst.max((back - d).abs() / d);
        }
    }
    ensure!(worst < 1e-9, "relative round-trip error {worst:e}");
    Ok(format!("1e5 depths, worst relative error {worst:.1e}"))
}

fn trimming_excludes_outliers() -> Outcome {
    for seed in 0..100u64 {
        let spec = SceneSpec {
            sparse_density: 1000,
            outlier_fraction: 0.02,
            seed,
            ..SceneSpec::sphere(1.0, 1)
        };
        let scene = generate(&spec).map_err(|e| e.to_string())?;
        let sparse = &scene.sparse_depths[&1];
        ensure!(sparse.count() == 1000, "seed {seed}: {} samples", sparse.count());
        ensure!(scene.outliers.len() == 20, "seed {seed}: {} outliers", scene.outliers.len());
        let range = compute_range(sparse, 0.02).map_err(|e| e.to_string())?;
        for o in &scene.outliers {
            let d = sparse.get(o.row, o.col).ok_or("outlier pixel is empty")?.depth;
            ensure!(
                d < range.raw_min || d > range.raw_max,
                "seed {seed}: outlier depth {d} inside [{}, {}]",
                range.raw_min,
                range.raw_max
            );
        }
    }
    Ok("20/20 outliers excluded in 100/100 seeds".into())
}

fn alignment_recovery() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (a, b) = (rng.random_range(0.5..=2.0), rng.random_range(-1.0..=1.0));
        let spec = SceneSpec {
            sparse_density: 300,
            outlier_fraction: 0.3,
            seed,
            ..SceneSpec::sphere(1.0, 1)
        };
        let scene = generate(&spec).map_err(|e| e.to_string())?;
        let oracle = SyntheticOracle {
            ground_truth: scene.gt_depths.clone(),
            noise: OracleNoise { sigma_mult: 0.0, scale: a, shift: b, seed },
        };
        let pred = oracle.corrupt(&scene.gt_depths[&1], 1, 0);
        let sparse = &scene.sparse_depths[&1];
        let (aligned, model, _) = align_view(&pred, sparse, &AlignmentConfig::default()).map_err(|e| e.to_string())?;
        ensure!(
            (model.scale - 1.0 / a).abs() < 1e-6 && (model.shift + b / a).abs() < 1e-6,
            "seed {seed}: fitted ({}, {}) for corruption ({a}, {b})",
            model.scale,
            model.shift
        );
        for ((r, c), s) in sparse.valued() {
            if scene.outliers.iter().any(|o| (o.row, o.col) == (r, c)) {
                continue;
            }
            let v = aligned.get(r, c).ok_or("aligned pixel invalid")?;
            worst = worst.max((v - s.depth).abs());
        }
    }
    ensure!(worst < 1e-6, "inlier residual {worst:e}");

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cfg = AlignmentConfig::default();
    for inst in 0..500 {
        let n = rng.random_range(2..=12);
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(0.5..5.0);
                let y = if rng.random_bool(0.6) { 1.5 * x + 0.2 } else { rng.random_range(0.5..10.0) };
                (x, y)
            })
            .collect();
        let threshold = resolve_threshold(&pairs, cfg.threshold);
        let expected = brute_consensus(&pairs, threshold);
        match fit_ransac(&pairs, &cfg) {
            Ok(m) => ensure!(m.inlier_count == expected, "instance {inst}: {} vs {expected}", m.inlier_count),
            Err(Error::NoPositiveScaleModel) | Err(Error::DegenerateSamples) => {
                ensure!(expected == 0, "instance {inst}: no model but oracle found {expected}")
            }
            Err(e) => return Err(e.to_string()),
        }
    }
    let took = within(Duration::from_secs(10), start)?;
    Ok(format!("20 corruptions, residual {worst:.1e}; 500 enumeration instances; {took:.2?}"))
}

fn fuse_ground_truth(scene: &SyntheticScene) -> Result<(TriangleMesh, f64), String> {
    let cfg = FusionConfig::default();
    let mut volume = cfg.volume_for(&scene.model).map_err(|e| e.to_string())?;
    for (id, depth) in &scene.gt_depths {
        let image = scene.model.image(*id).map_err(|e| e.to_string())?;
        volume
            .integrate(depth, scene.model.camera_of(image), image, cfg.max_weight)
            .map_err(|e| e.to_string())?;
    }
    let mesh = volume.extract_mesh().map_err(|e| e.to_string())?;
    Ok((mesh, volume.voxel_size()))
}

fn tsdf_accuracy() -> Outcome {
    let start = Instant::now();
    let plane = generate(&SceneSpec::plane(2.0, 8)).map_err(|e| e.to_string())?;
    let (mesh, v) = fuse_ground_truth(&plane)?;
    ensure!(!mesh.is_empty(), "plane mesh is empty");
    let plane_err = mesh.vertices.iter().map(|p| (p.z - 2.0).abs()).fold(0.0, f64::max);
    ensure!(plane_err <= v, "plane: max |z - 2| = {plane_err} > v = {v}");

    let sphere = generate(&SceneSpec::sphere(1.0, 8)).map_err(|e| e.to_string())?;
    let (mesh, vs) = fuse_ground_truth(&sphere)?;
    ensure!(!mesh.is_empty(), "sphere mesh is empty");
    let radial = mesh.vertices.iter().map(|p| (p.norm() - 1.0).abs()).fold(0.0, f64::max);
    ensure!(radial <= vs, "sphere: radial error {radial} > v = {vs}");
    let took = within(Duration::from_secs(60), start)?;
    Ok(format!(
        "plane {plane_err:.2e} <= {v:.4}, sphere {radial:.2e} <= {vs:.4}, {took:.2?}"
    ))
}

fn scene_config(root: &Path, scene: &SyntheticScene, out: &str) -> Result<(PipelineConfig, f64), String> {
    scene.export(&root.join("scene"), ModelFormat::Binary).map_err(|e| e.to_string())?;
    let mut cfg = PipelineConfig::default();
    cfg.paths.sfm = Some(root.join("scene/sparse"));
    cfg.paths.gt_mesh = Some(root.join("scene/gt_mesh.ply"));
    cfg.paths.gt_depth = Some(root.join("scene/gt_depth"));
    cfg.paths.output = Some(root.join(out));
    let v = cfg.fusion.volume_for(&scene.model).map_err(|e| e.to_string())?.voxel_size();
    cfg.evaluation.tau = 2.0 * v;
    cfg.evaluation.samples = 200_000;
    Ok((cfg, v))
}

fn metric(cfg: &PipelineConfig) -> Result<(f64, f64), String> {
    let rec = cmd_reconstruct(cfg).map_err(|e| e.to_string())?;
    let report = rec.evaluated.report.ok_or("no metrics")?;
    Ok((report.chamfer.unwrap_or(f64::INFINITY), report.fscore.unwrap_or(0.0)))
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scene = generate(&SceneSpec::room([4.0, 3.0, 2.5], 12)).map_err(|e| e.to_string())?;
    let (mut cfg, v) = scene_config(dir.path(), &scene, "ransac")?;
    cfg.provider = ProviderSpec::SyntheticOracle {
        gt_dir: None,
        sigma_mult: 0.01,
        scale: 2.0,
        shift: 0.5,
        seed: 11,
    };
    let (ch, f) = metric(&cfg)?;
    ensure!(ch < 2.0 * v, "Chamfer {ch} >= 2v = {}", 2.0 * v);
    ensure!(f > 0.95, "F-score {f} <= 0.95");
    cfg.alignment.method = AlignmentMethod::NoAlignment;
    cfg.paths.output = Some(dir.path().join("none"));
    let (ch_none, _) = metric(&cfg)?;
    ensure!(ch_none > ch, "NoAlignment Chamfer {ch_none} not worse than {ch}");
    Ok(format!(
        "Chamfer {ch:.4} < {:.4}, F {f:.4}; no alignment Chamfer {ch_none:.4}",
        2.0 * v
    ))
}

fn knn_ablation() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut spec = SceneSpec::room([4.0, 3.0, 2.5], 12);
    spec.sparse_density = ((spec.width * spec.height) as f64 * 0.005).round() as usize;
    let scene = generate(&spec).map_err(|e| e.to_string())?;
    let (mut cfg, _) = scene_config(dir.path(), &scene, "k3")?;
    cfg.provider = ProviderSpec::Densified;
    cfg.conditioning.k = 3;
    cfg.conditioning.distance_map = true;
    let (_, f3) = metric(&cfg)?;
    cfg.conditioning.k = 0;
    cfg.conditioning.distance_map = false;
    cfg.paths.output = Some(dir.path().join("k0"));
    let (_, f0) = metric(&cfg)?;
    ensure!(f3 >= f0, "F-score k=3 {f3} < k=0 {f0}");
    Ok(format!("{} samples/view: F k=3 {f3:.4} >= k=0 {f0:.4}", spec.sparse_density))
}

fn metric_self_tests() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cloud = |n: usize| -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    };
    for (np, ng) in [(1, 1), (17, 300), (2000, 1500), (2000, 2000)] {
        let (p, g) = (cloud(np), cloud(ng));
        let (to_g, to_p) = (brute_nearest(&p, &g), brute_nearest(&g, &p));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let ch = chamfer(&p, &g).map_err(|e| e.to_string())?;
        ensure!(ch.accuracy == mean(&to_g) && ch.completeness == mean(&to_p), "Chamfer differs at {np}x{ng}");
        ensure!(ch.chamfer == 0.5 * (mean(&to_g) + mean(&to_p)), "Chamfer mean differs");
        let tau = 0.1;
        let frac = |v: &[f64]| v.iter().filter(|&&d| d < tau).count() as f64 / v.len() as f64;
        let fs = fscore(&p, &g, tau).map_err(|e| e.to_string())?;
        ensure!(fs.precision == frac(&to_g) && fs.recall == frac(&to_p), "F-score differs at {np}x{ng}");
        let same = fscore(&g, &g, tau).map_err(|e| e.to_string())?;
        ensure!(same.fscore == 1.0, "F-score of identical sets is {}", same.fscore);
    }
    let (w, h) = (40, 30);
    let truth: Vec<f64> = (0..w * h).map(|i| 1.0 + (i / w) as f64 * 0.1 + (i % w) as f64 * 0.01).collect();
    let noisy: Vec<f64> = truth.iter().enumerate().map(|(i, d)| d + (i % 5) as f64 * 0.003).collect();
    let gt = DenseDepthMap::metric_from_values(w, h, truth);
    let pred = DenseDepthMap::metric_from_values(w, h, noisy);
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, g) in pred.grid().as_slice().iter().zip(gt.grid().as_slice()) {
        let d = p.unwrap() - g.unwrap();
        sum += d * d;
        n += 1;
    }
    let rmse = depth_rmse(&pred, &gt).map_err(|e| e.to_string())?;
    ensure!(rmse == (sum / n as f64).sqrt(), "RMSE {rmse} differs from oracle");
    ensure!(depth_rmse(&gt, &gt).map_err(|e| e.to_string())? == 0.0, "RMSE of identical maps is not 0");
    Ok("Chamfer, F-score and RMSE equal brute force".into())
}

fn random_model(rng: &mut ChaCha8Rng) -> SfmModel {
    let n_cams = rng.random_range(1..=3u32);
    let cameras: Vec<Camera> = (1..=n_cams)
        .map(|id| {
            let (w, h) = (rng.random_range(16..2000), rng.random_range(16..2000));
            let f = rng.random_range(10.0..3000.0);
            let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
            match rng.random_range(0..3) {
                0 => Camera::simple_pinhole(id, w, h, f, cx, cy),
                1 => Camera::pinhole(id, w, h, f, f * rng.random_range(0.9..1.1), cx, cy),
                _ => Camera::simple_radial(id, w, h, f, cx, cy, rng.random_range(-0.1..0.1)),
            }
            .unwrap()
        })
        .collect();
    let n_images = rng.random_range(1..=6u32);
    let mut images: Vec<Image> = (1..=n_images)
        .map(|id| {
            let q = UnitQuaternion::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            );
            Image {
                image_id: id * 3,
                camera_id: rng.random_range(1..=n_cams),
                rotation: *q.quaternion(),
                translation: Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
                name: format!("img_{id:04}.jpg"),
                observations: Vec::new(),
            }
        })
        .collect();
    let n_points = rng.random_range(1..=60u64);
    let mut points = Vec::new();
    for pid in 1..=n_points {
        let mut track = Vec::new();
        for image in images.iter_mut() {
            if track.is_empty() || rng.random_bool(0.4) {
                track.push(TrackElement { image_id: image.image_id, point2d_idx: image.observations.len() as u32 });
                image.observations.push(Observation {
                    xy: [rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0)],
                    point3d_id: Some(pid * 10),
                });
            }
            if rng.random_bool(0.1) {
                image.observations.push(Observation { xy: [rng.random::<f64>() * 50.0, 1.0 / 3.0], point3d_id: None });
            }
        }
        points.push(ScenePoint {
            point3d_id: pid * 10,
            xyz: Vector3::new(rng.random::<f64>() * 7.0 - 3.0, rng.random::<f64>(), 1e-7 * rng.random::<f64>()),
            color: [rng.random(), rng.random(), rng.random()],
            error: rng.random::<f64>() * 2.0,
            track,
        });
    }
    SfmModel::new(cameras, images, points).unwrap()
}

fn colmap_interop() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for m in 0..50 {
        let model = random_model(&mut rng);
        for format in [ModelFormat::Text, ModelFormat::Binary] {
            let first = dir.path().join(format!("{m}_{format:?}_a"));
            write_model(&model, &first, format).map_err(|e| e.to_string())?;
            let back = read_model(&first, Some(format)).map_err(|e| e.to_string())?;
            ensure!(back == model, "model {m} ({format:?}) changed on round trip");
            let second = dir.path().join(format!("{m}_{format:?}_b"));
            write_model(&back, &second, format).map_err(|e| e.to_string())?;
            for entry in std::fs::read_dir(&first).map_err(|e| e.to_string())? {
                let name = entry.map_err(|e| e.to_string())?.file_name();
                let a = std::fs::read(first.join(&name)).map_err(|e| e.to_string())?;
                let b = std::fs::read(second.join(&name)).map_err(|e| e.to_string())?;
                ensure!(a == b, "model {m}: {name:?} differs across writes");
            }
        }
    }
    Ok("50 random models, text and binary".into())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scene = generate(&SceneSpec::sphere(1.0, 6)).map_err(|e| e.to_string())?;
    let (mut cfg, _) = scene_config(dir.path(), &scene, "a")?;
    cfg.evaluation.samples = 20_000;
    cfg.provider = ProviderSpec::SyntheticOracle {
        gt_dir: None,
        sigma_mult: 0.02,
        scale: 1.5,
        shift: -0.2,
        seed: 4,
    };
    cfg.ensemble_size = 3;
    cmd_reconstruct(&cfg).map_err(|e| e.to_string())?;
    cfg.paths.output = Some(dir.path().join("b"));
    cfg.threads = Some(3);
    cmd_reconstruct(&cfg).map_err(|e| e.to_string())?;
    for file in ["mesh.ply", "metrics.json", "alignment.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir.path().join("b").join(file)).map_err(|e| e.to_string())?;
        ensure!(a == b, "{file} differs between runs");
    }
    Ok("mesh.ply, metrics.json and alignment.json byte-identical".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("conditioning matches brute-force oracles", conditioning_oracles),
        ("normalization round trip and expansion", normalization_round_trip),
        ("trimming excludes planted outliers", trimming_excludes_outliers),
        ("robust alignment recovery", alignment_recovery),
        ("TSDF plane and sphere accuracy", tsdf_accuracy),
        ("end-to-end room reconstruction", end_to_end),
        ("densification ablation direction", knn_ablation),
        ("metric self-tests", metric_self_tests),
        ("COLMAP interoperability", colmap_interop),
        ("reconstruction determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
