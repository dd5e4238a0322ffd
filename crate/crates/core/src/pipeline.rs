//! Stage orchestration with on-disk intermediates.
//!
//! Every stage exists in two forms: an in-memory function over per-view maps,
//! and a `cmd_*` wrapper that reads the previous stage's files from the
//! output directory and writes its own. [`cmd_reconstruct`] chains the
//! in-memory functions, so staged and one-shot runs share all arithmetic and
//! agree exactly (intermediates are stored as lossless `f64` arrays).
//!
//! Output layout, relative to `paths.output`:
//!
//! ```text
//! sparse_depth/<image>.depth.{f32,npy}  <image>.ids.npy  <image>.meta.json
//! conditioning/<image>.densified.{f32,npy}  <image>.distance.{f32,npy}  ...
//! predictions/<image>.depth.{f32,npy}  <image>.meta.json
//! aligned/<image>.depth.{f32,npy}  <image>.meta.json
//! alignment.json  mesh.ply | points.ply  metrics.json  metrics.txt  timings.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{align_view, AlignmentConfig, AlignmentRecord};
use crate::colmap::{read_model, Image, ModelFormat, SfmModel};
use crate::conditioning::{build_bundle, denormalize_depth_map, ConditioningBundle, ConditioningConfig, NormalizationRange};
use crate::depth::{DenseDepthMap, ScaleDomain};
use crate::error::{Error, Result};
use crate::evaluation::{depth_squared_error, sample_mesh, EvaluationConfig, MetricsReport};
use crate::fusion::{fuse_point_cloud, FusedPointCloud, FusionConfig, FusionMode, TriangleMesh};
use crate::geometry::{render_sparse_depth, RenderOptions, SparseDepthMap, SparseSample};
use crate::io::{self, with_suffix, RasterMeta};
use crate::provider::{ensemble_median, read_prediction, write_prediction, DepthProvider, ProviderSpec, ViewInput};
use crate::raster::Grid;
use crate::synthscene::{generate, SceneSpec};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// COLMAP model directory (text or binary).
    pub sfm: Option<PathBuf>,
    /// Source images, handed to providers that want RGB.
    pub images: Option<PathBuf>,
    /// Prediction directory for the `from_files` provider.
    pub predictions: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Reference mesh for Chamfer distance and F-score.
    pub gt_mesh: Option<PathBuf>,
    /// Reference depth maps for RMSE, in the prediction file convention.
    pub gt_depth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    /// Image names (or ids) to process; empty means every image.
    pub views: Vec<String>,
    pub render: RenderOptions,
    pub conditioning: ConditioningConfig,
    pub provider: ProviderSpec,
    /// Provider calls per view, combined by pixel-wise median.
    pub ensemble_size: usize,
    pub alignment: AlignmentConfig,
    pub fusion: FusionConfig,
    pub evaluation: EvaluationConfig,
    /// Seeds surface sampling during evaluation.
    pub seed: u64,
    /// Worker threads for per-view work; `None` uses every core.
    pub threads: Option<usize>,
    /// Also write per-stage files during `reconstruct`.
    pub write_intermediates: bool,
    pub export_obj: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: PathsConfig::default(),
            views: Vec::new(),
            render: RenderOptions::default(),
            conditioning: ConditioningConfig::default(),
            provider: ProviderSpec::Densified,
            ensemble_size: 1,
            alignment: AlignmentConfig::default(),
            fusion: FusionConfig::default(),
            evaluation: EvaluationConfig::default(),
            seed: 0,
            threads: None,
            write_intermediates: false,
            export_obj: false,
        }
    }
}

/// Sets `dotted.key` in a TOML table. The value is parsed as TOML and falls
/// back to a plain string, so `alignment.method=ransac` works unquoted.
pub fn set_toml_key(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_owned()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("bad override key {key:?}")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("{key}: {part} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}

impl PipelineConfig {
    /// Parses a TOML document and applies `key=value` overrides.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for (k, v) in overrides {
            set_toml_key(&mut table, k, v)?;
        }
        let cfg: PipelineConfig = table.try_into().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.conditioning.validate()?;
        self.provider.validate()?;
        self.alignment.validate()?;
        self.fusion.validate()?;
        if self.ensemble_size == 0 {
            return Err(Error::InvalidConfig("ensemble_size must be >= 1".into()));
        }
        if !(self.evaluation.tau.is_finite() && self.evaluation.tau > 0.0) {
            return Err(Error::InvalidConfig(format!("evaluation.tau must be > 0, got {}", self.evaluation.tau)));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be >= 1".into()));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths.output.clone().unwrap_or_else(|| PathBuf::from("output"))
    }

    fn sfm_dir(&self) -> Result<&Path> {
        self.paths
            .sfm
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("paths.sfm is not set".into()))
    }

    /// Runs `f` inside a pool with the configured thread count.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.threads {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                Ok(pool.install(f))
            }
        }
    }
}

/// Applies `f` to each view in parallel. Results keep view order and the
/// first failing view (in order) determines the error.
fn per_view<'a, T: Send>(
    views: &[&'a Image],
    stage: &'static str,
    f: impl Fn(&'a Image) -> Result<T> + Sync,
) -> Result<BTreeMap<u32, T>> {
    let results: Vec<Result<(u32, T)>> = views
        .par_iter()
        .map(|im| {
            f(im)
                .map(|v| (im.image_id, v))
                .map_err(|e| e.in_stage(stage, Some(&im.name)))
        })
        .collect();
    results.into_iter().collect()
}

pub fn load_model(cfg: &PipelineConfig) -> Result<SfmModel> {
    read_model(cfg.sfm_dir()?, None).map_err(|e| e.in_stage("load", None))
}

/// Images selected by the `views` filter, sorted by id.
pub fn selected_views<'a>(model: &'a SfmModel, cfg: &PipelineConfig) -> Result<Vec<&'a Image>> {
    if cfg.views.is_empty() {
        return Ok(model.images().values().collect());
    }
    let mut out: Vec<&Image> = Vec::new();
    for key in &cfg.views {
        let image = model
            .image_by_name(key)
            .or_else(|| key.parse::<u32>().ok().and_then(|id| model.image(id).ok()))
            .ok_or_else(|| Error::InvalidConfig(format!("no image named {key:?}")))?;
        if !out.iter().any(|im| im.image_id == image.image_id) {
            out.push(image);
        }
    }
    out.sort_by_key(|im| im.image_id);
    Ok(out)
}

pub fn project_views(model: &SfmModel, views: &[&Image], opts: RenderOptions) -> Result<BTreeMap<u32, SparseDepthMap>> {
    per_view(views, "project", |im| render_sparse_depth(model, im.image_id, opts))
}

pub fn condition_views(
    views: &[&Image],
    sparse: &BTreeMap<u32, SparseDepthMap>,
    cfg: &ConditioningConfig,
) -> Result<BTreeMap<u32, ConditioningBundle>> {
    per_view(views, "condition", |im| build_bundle(lookup(sparse, im)?, cfg))
}

fn lookup<'m, T>(map: &'m BTreeMap<u32, T>, im: &Image) -> Result<&'m T> {
    map.get(&im.image_id).ok_or(Error::UnknownImage(im.image_id))
}

/// Runs the provider `ensemble_size` times, takes the median and brings the
/// result to metric depth.
pub fn predict_views(
    model: &SfmModel,
    views: &[&Image],
    bundles: &BTreeMap<u32, ConditioningBundle>,
    provider: &dyn DepthProvider,
    ensemble_size: usize,
    images_dir: Option<&Path>,
) -> Result<BTreeMap<u32, DenseDepthMap>> {
    per_view(views, "predict", |im| {
        let bundle = lookup(bundles, im)?;
        let cam = model.camera_of(im);
        let rgb = images_dir.map(|d| d.join(&im.name));
        let input = ViewInput {
            image_id: im.image_id,
            name: &im.name,
            width: cam.width,
            height: cam.height,
            rgb_path: rgb.as_deref(),
        };
        let members = (0..ensemble_size)
            .map(|m| provider.predict(&input, bundle, m))
            .collect::<Result<Vec<_>>>()?;
        let median = ensemble_median(&members)?;
        match median.domain() {
            ScaleDomain::Metric => Ok(median),
            ScaleDomain::Normalized => denormalize_depth_map(&median, &bundle.range),
        }
    })
}

pub fn align_views(
    views: &[&Image],
    predictions: &BTreeMap<u32, DenseDepthMap>,
    bundles: &BTreeMap<u32, ConditioningBundle>,
    cfg: &AlignmentConfig,
) -> Result<(BTreeMap<u32, DenseDepthMap>, Vec<AlignmentRecord>)> {
    let fitted = per_view(views, "align", |im| {
        let (aligned, model, pairs) = align_view(lookup(predictions, im)?, &lookup(bundles, im)?.trimmed, cfg)?;
        Ok((aligned, AlignmentRecord::new(&im.name, cfg.method, &model, pairs)))
    })?;
    let mut maps = BTreeMap::new();
    let mut log = Vec::new();
    for (id, (map, record)) in fitted {
        maps.insert(id, map);
        log.push(record);
    }
    Ok((maps, log))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fused {
    Mesh(TriangleMesh),
    Points(FusedPointCloud),
}

impl Fused {
    /// Points used for evaluation: mesh surface samples or the cloud itself.
    pub fn evaluation_points(&self, samples: usize, seed: u64) -> Result<Vec<Vector3<f64>>> {
        match self {
            Fused::Mesh(m) if m.is_empty() => Ok(Vec::new()),
            Fused::Mesh(m) => sample_mesh(m, samples, seed),
            Fused::Points(c) => Ok(c.points.iter().map(|p| p.xyz).collect()),
        }
    }
}

/// Integrates views in id order. A volume that no view touched yields an
/// empty mesh rather than an error, so ablations that push geometry out of
/// the volume still produce (worst-case) metrics.
pub fn fuse_views(model: &SfmModel, aligned: &BTreeMap<u32, DenseDepthMap>, cfg: &FusionConfig) -> Result<Fused> {
    let stage = |e: Error| e.in_stage("fuse", None);
    match cfg.mode {
        FusionMode::Tsdf => {
            let mut volume = cfg.volume_for(model).map_err(stage)?;
            info!(
                "volume {:?} voxels of {:.5}, truncation {:.5}",
                volume.dims(),
                volume.voxel_size(),
                volume.truncation()
            );
            for (id, depth) in aligned {
                let image = model.image(*id).map_err(stage)?;
                volume
                    .integrate(depth, model.camera_of(image), image, cfg.max_weight)
                    .map_err(|e| e.in_stage("fuse", Some(&image.name)))?;
            }
            match volume.extract_mesh() {
                Ok(mesh) => Ok(Fused::Mesh(mesh)),
                Err(Error::EmptyVolume) => {
                    warn!("no depth landed inside the volume; the mesh is empty");
                    Ok(Fused::Mesh(TriangleMesh::default()))
                }
                Err(e) => Err(stage(e)),
            }
        }
        FusionMode::PointCloud => fuse_point_cloud(aligned, model, &cfg.consistency)
            .map(Fused::Points)
            .map_err(stage),
    }
}

/// Scores the fused geometry against whatever references are available.
pub fn evaluate(
    fused: &Fused,
    gt_mesh: Option<&TriangleMesh>,
    depth_pairs: &[(String, &DenseDepthMap, &DenseDepthMap)],
    cfg: &EvaluationConfig,
    seed: u64,
) -> Result<MetricsReport> {
    let stage = |e: Error| e.in_stage("evaluate", None);
    let mut report = MetricsReport::new(cfg.tau);
    if let Some(gt) = gt_mesh {
        let gt_points = sample_mesh(gt, cfg.samples, seed.wrapping_add(1)).map_err(stage)?;
        let pred_points = fused.evaluation_points(cfg.samples, seed).map_err(stage)?;
        report = report.with_points(&pred_points, &gt_points).map_err(stage)?;
    }
    let mut errors = Vec::new();
    for (name, pred, gt) in depth_pairs {
        let (sum, n) = depth_squared_error(pred, *gt).map_err(|e| e.in_stage("evaluate", Some(name)))?;
        errors.push((name.clone(), sum, n));
    }
    if !errors.is_empty() {
        report = report.with_depth_errors(errors);
    }
    Ok(report)
}

fn load_gt_depths(cfg: &PipelineConfig, views: &[&Image]) -> Result<Option<BTreeMap<u32, DenseDepthMap>>> {
    let Some(dir) = &cfg.paths.gt_depth else {
        return Ok(None);
    };
    per_view(views, "load", |im| match read_prediction(dir, &im.name) {
        Err(Error::MissingPrediction(v)) => Err(Error::NoGroundTruth(v)),
        other => other,
    })
    .map(Some)
}

fn build_provider(cfg: &PipelineConfig, model: &SfmModel, views: &[&Image]) -> Result<Box<dyn DepthProvider>> {
    let mut spec = cfg.provider.clone();
    match &mut spec {
        ProviderSpec::FromFiles { dir } => {
            if let Some(p) = &cfg.paths.predictions {
                *dir = p.clone();
            }
        }
        ProviderSpec::SyntheticOracle { gt_dir, .. } if gt_dir.is_none() => {
            *gt_dir = cfg.paths.gt_depth.clone();
        }
        _ => {}
    }
    let names: BTreeMap<u32, String> = views.iter().map(|im| (im.image_id, im.name.clone())).collect();
    let _ = model;
    spec.build(None, &names).map_err(|e| e.in_stage("predict", None))
}

/// Outcome of an evaluating command.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub report: Option<MetricsReport>,
    pub violations: Vec<String>,
}

#[derive(Debug, Default, Serialize)]
struct Timings {
    stages: BTreeMap<String, f64>,
}

impl Timings {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.stages.insert(stage.to_owned(), start.elapsed().as_secs_f64());
        out
    }
}

// ---------------------------------------------------------------------------
// File formats of intermediates.

fn dir_of(cfg: &PipelineConfig, stage: &str) -> PathBuf {
    cfg.output_dir().join(stage)
}

pub fn write_sparse(dir: &Path, name: &str, map: &SparseDepthMap) -> Result<()> {
    let stem = dir.join(format!("{name}.depth"));
    io::write_raster_pair(&stem, &map.depth_or_zero())?;
    let ids = map.samples().map(|s| s.map_or(-1, |s| s.point3d_id as i64));
    io::write_npy_i64(&dir.join(format!("{name}.ids.npy")), &ids)?;
    io::write_json(
        &dir.join(format!("{name}.meta.json")),
        &RasterMeta {
            scale_domain: Some(ScaleDomain::Metric),
            width: map.width(),
            height: map.height(),
        },
    )
}

fn sparse_from_arrays(depth: &Grid<f64>, ids: &Grid<i64>, path: &Path) -> Result<SparseDepthMap> {
    if depth.shape() != ids.shape() {
        return Err(Error::ShapeMismatch {
            expected: depth.shape(),
            found: ids.shape(),
        });
    }
    let cells = Grid::from_fn(depth.width(), depth.height(), |r, c| {
        (ids[(r, c)] >= 0).then(|| SparseSample {
            depth: depth[(r, c)],
            point3d_id: ids[(r, c)] as u64,
        })
    });
    SparseDepthMap::from_grid(cells).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_sparse(dir: &Path, name: &str) -> Result<SparseDepthMap> {
    let stem = dir.join(format!("{name}.depth"));
    let ids_path = dir.join(format!("{name}.ids.npy"));
    let meta: RasterMeta = io::read_json(&dir.join(format!("{name}.meta.json")))?;
    let depth = io::read_raster_pair(&stem, Some((meta.width, meta.height)))?;
    let ids = io::read_npy_i64(&ids_path)?;
    sparse_from_arrays(&depth, &ids, &ids_path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleMeta {
    width: usize,
    height: usize,
    range: NormalizationRange,
    k_used: usize,
    has_distance_map: bool,
    has_distance_latent: bool,
}

pub fn write_bundle(dir: &Path, name: &str, b: &ConditioningBundle) -> Result<()> {
    let densified = Grid::from_fn(b.densified.width(), b.densified.height(), |r, c| {
        if b.valid[(r, c)] {
            b.densified[(r, c)]
        } else {
            f64::NAN
        }
    });
    io::write_raster_pair(&dir.join(format!("{name}.densified")), &densified)?;
    if let Some(d) = &b.distance_map {
        io::write_raster_pair(&dir.join(format!("{name}.distance")), d)?;
    }
    if let Some(d) = &b.distance_latent {
        io::write_npy_f64(&dir.join(format!("{name}.distance_latent.npy")), d)?;
    }
    io::write_npy_f64(&dir.join(format!("{name}.trimmed.npy")), &b.trimmed.depth_or_zero())?;
    let ids = b.trimmed.samples().map(|s| s.map_or(-1, |s| s.point3d_id as i64));
    io::write_npy_i64(&dir.join(format!("{name}.trimmed_ids.npy")), &ids)?;
    io::write_json(
        &dir.join(format!("{name}.bundle.json")),
        &BundleMeta {
            width: b.densified.width(),
            height: b.densified.height(),
            range: b.range,
            k_used: b.k_used,
            has_distance_map: b.distance_map.is_some(),
            has_distance_latent: b.distance_latent.is_some(),
        },
    )
}

pub fn read_bundle(dir: &Path, name: &str) -> Result<ConditioningBundle> {
    let meta: BundleMeta = io::read_json(&dir.join(format!("{name}.bundle.json")))?;
    let shape = Some((meta.width, meta.height));
    let raw = io::read_raster_pair(&dir.join(format!("{name}.densified")), shape)?;
    let valid = raw.map(|v| !v.is_nan());
    let densified = raw.map(|v| if v.is_nan() { 0.0 } else { *v });
    let distance_map = if meta.has_distance_map {
        Some(io::read_raster_pair(&dir.join(format!("{name}.distance")), shape)?)
    } else {
        None
    };
    let distance_latent = if meta.has_distance_latent {
        Some(io::read_npy_f64(&dir.join(format!("{name}.distance_latent.npy")))?)
    } else {
        None
    };
    let ids_path = dir.join(format!("{name}.trimmed_ids.npy"));
    let trimmed = sparse_from_arrays(
        &io::read_npy_f64(&dir.join(format!("{name}.trimmed.npy")))?,
        &io::read_npy_i64(&ids_path)?,
        &ids_path,
    )?;
    meta.range.check()?;
    Ok(ConditioningBundle {
        densified,
        valid,
        distance_map,
        distance_latent,
        range: meta.range,
        k_used: meta.k_used,
        trimmed,
    })
}

fn write_fused(out: &Path, fused: &Fused, obj: bool) -> Result<PathBuf> {
    match fused {
        Fused::Mesh(mesh) => {
            let path = out.join("mesh.ply");
            io::write_mesh_ply(&path, mesh)?;
            if obj {
                io::write_mesh_obj(&out.join("mesh.obj"), mesh)?;
            }
            Ok(path)
        }
        Fused::Points(cloud) => {
            let path = out.join("points.ply");
            io::write_point_cloud_ply(&path, cloud)?;
            Ok(path)
        }
    }
}

fn read_fused(out: &Path, mode: FusionMode) -> Result<Fused> {
    match mode {
        FusionMode::Tsdf => Ok(Fused::Mesh(io::read_mesh_ply(&out.join("mesh.ply"))?)),
        FusionMode::PointCloud => {
            let mesh = io::read_mesh_ply(&out.join("points.ply"))?;
            Ok(Fused::Points(FusedPointCloud {
                points: mesh
                    .vertices
                    .into_iter()
                    .map(|xyz| crate::fusion::FusedPoint { xyz, support: 0 })
                    .collect(),
            }))
        }
    }
}

fn write_per_view<T>(
    views: &[&Image],
    maps: &BTreeMap<u32, T>,
    stage: &'static str,
    write: impl Fn(&str, &T) -> Result<()> + Sync,
) -> Result<()>
where
    T: Sync,
{
    per_view(views, stage, |im| write(&im.name, lookup(maps, im)?)).map(|_| ())
}

fn read_per_view<T: Send>(
    views: &[&Image],
    stage: &'static str,
    read: impl Fn(&str) -> Result<T> + Sync,
) -> Result<BTreeMap<u32, T>> {
    per_view(views, stage, |im| read(&im.name))
}

fn write_metrics(out: &Path, report: &MetricsReport) -> Result<()> {
    io::write_json(&out.join("metrics.json"), report)?;
    let path = out.join("metrics.txt");
    std::fs::write(&path, report.to_table()).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Commands.

pub fn cmd_project(cfg: &PipelineConfig) -> Result<usize> {
    cfg.install(|| {
        let model = load_model(cfg)?;
        let views = selected_views(&model, cfg)?;
        let sparse = project_views(&model, &views, cfg.render)?;
        let dir = dir_of(cfg, "sparse_depth");
        write_per_view(&views, &sparse, "project", |name, m| write_sparse(&dir, name, m))?;
        info!("projected {} views into {}", views.len(), dir.display());
        Ok(views.len())
    })?
}

pub fn cmd_condition(cfg: &PipelineConfig) -> Result<usize> {
    cfg.install(|| {
        let model = load_model(cfg)?;
        let views = selected_views(&model, cfg)?;
        let src = dir_of(cfg, "sparse_depth");
        let sparse = read_per_view(&views, "condition", |name| read_sparse(&src, name))?;
        let bundles = condition_views(&views, &sparse, &cfg.conditioning)?;
        let dir = dir_of(cfg, "conditioning");
        write_per_view(&views, &bundles, "condition", |name, b| write_bundle(&dir, name, b))?;
        Ok(views.len())
    })?
}

pub fn cmd_predict(cfg: &PipelineConfig) -> Result<usize> {
    cfg.install(|| {
        let model = load_model(cfg)?;
        let views = selected_views(&model, cfg)?;
        let src = dir_of(cfg, "conditioning");
        let bundles = read_per_view(&views, "predict", |name| read_bundle(&src, name))?;
        let provider = build_provider(cfg, &model, &views)?;
        let preds = predict_views(
            &model,
            &views,
            &bundles,
            provider.as_ref(),
            cfg.ensemble_size,
            cfg.paths.images.as_deref(),
        )?;
        let dir = dir_of(cfg, "predictions");
        write_per_view(&views, &preds, "predict", |name, m| write_prediction(&dir, name, m))?;
        Ok(views.len())
    })?
}

pub fn cmd_align(cfg: &PipelineConfig) -> Result<Vec<AlignmentRecord>> {
    cfg.install(|| {
        let model = load_model(cfg)?;
        let views = selected_views(&model, cfg)?;
        let cond = dir_of(cfg, "conditioning");
        let bundles = read_per_view(&views, "align", |name| read_bundle(&cond, name))?;
        let pred_dir = dir_of(cfg, "predictions");
        let preds = read_per_view(&views, "align", |name| read_prediction(&pred_dir, name))?;
        let (aligned, log) = align_views(&views, &preds, &bundles, &cfg.alignment)?;
        let dir = dir_of(cfg, "aligned");
        write_per_view(&views, &aligned, "align", |name, m| write_prediction(&dir, name, m))?;
        io::write_json(&cfg.output_dir().join("alignment.json"), &log)?;
        Ok(log)
    })?
}

pub fn cmd_fuse(cfg: &PipelineConfig) -> Result<PathBuf> {
    cfg.install(|| {
        let model = load_model(cfg)?;
        let views = selected_views(&model, cfg)?;
        let src = dir_of(cfg, "aligned");
        let aligned = read_per_view(&views, "fuse", |name| read_prediction(&src, name))?;
        let fused = fuse_views(&model, &aligned, &cfg.fusion)?;
        write_fused(&cfg.output_dir(), &fused, cfg.export_obj)
    })?
}

fn evaluate_with_refs(
    cfg: &PipelineConfig,
    views: &[&Image],
    fused: &Fused,
    aligned: Option<&BTreeMap<u32, DenseDepthMap>>,
) -> Result<Evaluated> {
    let gt_mesh = match &cfg.paths.gt_mesh {
        Some(p) => Some(io::read_mesh_ply(p).map_err(|e| e.in_stage("evaluate", None))?),
        None => None,
    };
    let gt_depths = load_gt_depths(cfg, views)?;
    let mut pairs = Vec::new();
    if let (Some(gt), Some(aligned)) = (&gt_depths, aligned) {
        for im in views {
            if let (Some(p), Some(g)) = (aligned.get(&im.image_id), gt.get(&im.image_id)) {
                pairs.push((im.name.clone(), p, g));
            }
        }
    }
    if gt_mesh.is_none() && pairs.is_empty() {
        return Ok(Evaluated {
            report: None,
            violations: Vec::new(),
        });
    }
    let report = evaluate(fused, gt_mesh.as_ref(), &pairs, &cfg.evaluation, cfg.seed)?;
    write_metrics(&cfg.output_dir(), &report)?;
    let violations = cfg.evaluation.bounds.violations(&report);
    Ok(Evaluated {
        report: Some(report),
        violations,
    })
}

pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<Evaluated> {
    cfg.install(|| {
        let model = load_model(cfg)?;
        let views = selected_views(&model, cfg)?;
        let out = cfg.output_dir();
        let fused = read_fused(&out, cfg.fusion.mode).map_err(|e| e.in_stage("evaluate", None))?;
        let src = dir_of(cfg, "aligned");
        let aligned = if src.is_dir() {
            Some(read_per_view(&views, "evaluate", |name| read_prediction(&src, name))?)
        } else {
            None
        };
        evaluate_with_refs(cfg, &views, &fused, aligned.as_ref())
    })?
}

/// Everything a one-shot run produced.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub fused: Fused,
    pub alignment: Vec<AlignmentRecord>,
    pub evaluated: Evaluated,
    pub output: PathBuf,
}

/// Runs every stage in memory and writes the final artifacts.
pub fn cmd_reconstruct(cfg: &PipelineConfig) -> Result<Reconstruction> {
    cfg.install(|| {
        let mut timings = Timings::default();
        let model = timings.time("load", || load_model(cfg))?;
        let views = selected_views(&model, cfg)?;
        let sparse = timings.time("project", || project_views(&model, &views, cfg.render))?;
        let bundles = timings.time("condition", || condition_views(&views, &sparse, &cfg.conditioning))?;
        let provider = build_provider(cfg, &model, &views)?;
        let preds = timings.time("predict", || {
            predict_views(
                &model,
                &views,
                &bundles,
                provider.as_ref(),
                cfg.ensemble_size,
                cfg.paths.images.as_deref(),
            )
        })?;
        let (aligned, log) = timings.time("align", || align_views(&views, &preds, &bundles, &cfg.alignment))?;
        let fused = timings.time("fuse", || fuse_views(&model, &aligned, &cfg.fusion))?;

        let out = cfg.output_dir();
        if cfg.write_intermediates {
            write_per_view(&views, &sparse, "project", |n, m| write_sparse(&dir_of(cfg, "sparse_depth"), n, m))?;
            write_per_view(&views, &bundles, "condition", |n, b| write_bundle(&dir_of(cfg, "conditioning"), n, b))?;
            write_per_view(&views, &preds, "predict", |n, m| write_prediction(&dir_of(cfg, "predictions"), n, m))?;
            write_per_view(&views, &aligned, "align", |n, m| write_prediction(&dir_of(cfg, "aligned"), n, m))?;
        }
        io::write_json(&out.join("alignment.json"), &log)?;
        write_fused(&out, &fused, cfg.export_obj)?;
        let evaluated = timings.time("evaluate", || evaluate_with_refs(cfg, &views, &fused, Some(&aligned)))?;
        io::write_json(&out.join("timings.json"), &timings)?;
        Ok(Reconstruction {
            fused,
            alignment: log,
            evaluated,
            output: out,
        })
    })?
}

/// Generates a scene and exports it under `out`.
pub fn cmd_synth(spec: &SceneSpec, out: &Path, format: ModelFormat) -> Result<()> {
    let scene = generate(spec).map_err(|e| e.in_stage("synth", None))?;
    scene.export(out, format).map_err(|e| e.in_stage("synth", None))?;
    info!(
        "wrote {} views, {} points, {} planted outliers to {}",
        scene.model.images().len(),
        scene.model.points().len(),
        scene.outliers.len(),
        out.display()
    );
    Ok(())
}

/// Path of the mesh or point cloud written by `fuse`/`reconstruct`.
pub fn fused_path(cfg: &PipelineConfig) -> PathBuf {
    let name = match cfg.fusion.mode {
        FusionMode::Tsdf => "mesh.ply",
        FusionMode::PointCloud => "points.ply",
    };
    cfg.output_dir().join(name)
}

/// Raw f32 rasters next to lossless copies; used by tools that only read
/// the interchange format.
pub fn raw_raster_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".f32")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::AlignmentMethod;
    use crate::synthscene::SyntheticScene;

    fn scene_dir(spec: &SceneSpec) -> (tempfile::TempDir, SyntheticScene) {
        let dir = tempfile::tempdir().unwrap();
        let scene = generate(spec).unwrap();
        scene.export(&dir.path().join("scene"), ModelFormat::Binary).unwrap();
        (dir, scene)
    }

    fn config(root: &Path) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.paths.sfm = Some(root.join("scene/sparse"));
        cfg.paths.gt_depth = Some(root.join("scene/gt_depth"));
        cfg.paths.gt_mesh = Some(root.join("scene/gt_mesh.ply"));
        cfg.paths.output = Some(root.join("out"));
        cfg.provider = ProviderSpec::SyntheticOracle {
            gt_dir: None,
            sigma_mult: 0.0,
            scale: 2.0,
            shift: 0.5,
            seed: 1,
        };
        cfg.fusion.voxel_budget = 40 * 40 * 40;
        cfg.evaluation.samples = 4000;
        cfg
    }

    #[test]
    fn overrides_apply() {
        let cfg = PipelineConfig::from_toml(
            "seed = 3\n[alignment]\niterations = 50\n",
            &[
                ("alignment.method".into(), "least_square".into()),
                ("conditioning.k".into(), "0".into()),
                ("paths.output".into(), "/tmp/x".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.alignment.iterations, 50);
        assert_eq!(cfg.alignment.method, AlignmentMethod::LeastSquare);
        assert_eq!(cfg.conditioning.k, 0);
        assert_eq!(cfg.output_dir(), PathBuf::from("/tmp/x"));
        assert!(PipelineConfig::from_toml("bogus = 1\n", &[]).is_err());
        let round = PipelineConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn project_writes_one_file_set_per_view() {
        let (dir, scene) = scene_dir(&SceneSpec::sphere(1.0, 3));
        let mut cfg = config(dir.path());
        assert_eq!(cmd_project(&cfg).unwrap(), 3);
        for (id, planted) in &scene.sparse_depths {
            let name = &scene.model.image(*id).unwrap().name;
            let back = read_sparse(&dir.path().join("out/sparse_depth"), name).unwrap();
            assert_eq!(&back, planted);
            assert!(dir.path().join(format!("out/sparse_depth/{name}.depth.f32")).is_file());
        }
        cfg.views = vec!["view_002.png".into()];
        cfg.paths.output = Some(dir.path().join("one"));
        assert_eq!(cmd_project(&cfg).unwrap(), 1);
        let written = std::fs::read_dir(dir.path().join("one/sparse_depth")).unwrap().count();
        assert_eq!(written, 4);
    }

    #[test]
    fn missing_model_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path());
        cfg.paths.sfm = Some(dir.path().join("nope"));
        let err = cmd_project(&cfg).unwrap_err();
        assert!(matches!(err.root(), Error::MissingFile(p) if p.ends_with("nope")), "{err}");
    }

    #[test]
    fn bundle_files_round_trip() {
        let (dir, scene) = scene_dir(&SceneSpec::sphere(1.0, 2));
        for k in [0, 3] {
            let cfg = ConditioningConfig { k, ..Default::default() };
            let b = build_bundle(&scene.sparse_depths[&1], &cfg).unwrap();
            write_bundle(dir.path(), "v", &b).unwrap();
            assert_eq!(read_bundle(dir.path(), "v").unwrap(), b);
        }
    }

    #[test]
    fn missing_prediction_names_view() {
        let (dir, _) = scene_dir(&SceneSpec::sphere(1.0, 3));
        let mut cfg = config(dir.path());
        let preds = dir.path().join("preds");
        let scene = generate(&SceneSpec::sphere(1.0, 3)).unwrap();
        for id in [1, 3] {
            write_prediction(&preds, &scene.model.image(id).unwrap().name, &scene.gt_depths[&id]).unwrap();
        }
        cfg.provider = ProviderSpec::FromFiles { dir: preds };
        let err = cmd_reconstruct(&cfg).unwrap_err();
        match err {
            Error::Stage { stage, view, .. } => {
                assert_eq!(stage, "predict");
                assert_eq!(view.as_deref(), Some("view_002.png"));
            }
            other => panic!("{other}"),
        }
        assert!(matches!(cmd_reconstruct(&cfg).unwrap_err().root(), Error::MissingPrediction(v) if v == "view_002.png"));
    }

    #[test]
    fn staged_equals_one_shot() {
        let (dir, _) = scene_dir(&SceneSpec::sphere(1.0, 4));
        let mut cfg = config(dir.path());
        cfg.paths.output = Some(dir.path().join("staged"));
        cmd_project(&cfg).unwrap();
        cmd_condition(&cfg).unwrap();
        cmd_predict(&cfg).unwrap();
        let staged_log = cmd_align(&cfg).unwrap();
        cmd_fuse(&cfg).unwrap();
        let staged = cmd_evaluate(&cfg).unwrap();

        cfg.paths.output = Some(dir.path().join("oneshot"));
        cfg.write_intermediates = true;
        let one = cmd_reconstruct(&cfg).unwrap();
        assert_eq!(one.alignment, staged_log);
        assert_eq!(one.evaluated, staged);
        let a = io::read_mesh_ply(&dir.path().join("staged/mesh.ply")).unwrap();
        let b = io::read_mesh_ply(&dir.path().join("oneshot/mesh.ply")).unwrap();
        assert_eq!(a, b);
        for name in ["view_001.png", "view_004.png"] {
            let x = read_prediction(&dir.path().join("staged/aligned"), name).unwrap();
            let y = read_prediction(&dir.path().join("oneshot/aligned"), name).unwrap();
            assert_eq!(x, y);
        }
    }
}
