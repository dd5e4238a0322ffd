//! COLMAP sparse model reader and writer.
//!
//! Both on-disk variants are supported:
//! - text: `cameras.txt`, `images.txt`, `points3D.txt`
//! - binary: `cameras.bin`, `images.bin`, `points3D.bin` (little-endian,
//!   `u64` record counts, `f64` coordinates)
//!
//! Format reference: <https://colmap.github.io/format.html>
//!
//! Every model returned from this module has passed [`SfmModel::new`]'s
//! referential-integrity checks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Quaternion, Vector3};

use crate::error::{Error, Result};

const QUATERNION_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CameraModel {
    SimplePinhole,
    Pinhole,
    SimpleRadial,
}

impl CameraModel {
    pub fn colmap_id(self) -> i32 {
        match self {
            CameraModel::SimplePinhole => 0,
            CameraModel::Pinhole => 1,
            CameraModel::SimpleRadial => 2,
        }
    }

    pub fn from_colmap_id(id: i32) -> Result<Self> {
        match id {
            0 => Ok(CameraModel::SimplePinhole),
            1 => Ok(CameraModel::Pinhole),
            2 => Ok(CameraModel::SimpleRadial),
            other => Err(Error::UnsupportedCameraModel(format!("model id {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CameraModel::SimplePinhole => "SIMPLE_PINHOLE",
            CameraModel::Pinhole => "PINHOLE",
            CameraModel::SimpleRadial => "SIMPLE_RADIAL",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "SIMPLE_PINHOLE" => Ok(CameraModel::SimplePinhole),
            "PINHOLE" => Ok(CameraModel::Pinhole),
            "SIMPLE_RADIAL" => Ok(CameraModel::SimpleRadial),
            other => Err(Error::UnsupportedCameraModel(other.to_owned())),
        }
    }

    pub fn num_params(self) -> usize {
        match self {
            CameraModel::SimplePinhole => 3,
            CameraModel::Pinhole => 4,
            CameraModel::SimpleRadial => 4,
        }
    }
}

/// Intrinsics of one camera. Single-focal models keep `fx == fy`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub camera_id: u32,
    pub model: CameraModel,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Radial coefficient; zero for the pinhole models.
    pub radial_k: f64,
}

impl Camera {
    pub fn pinhole(
        camera_id: u32,
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
    ) -> Result<Self> {
        Camera {
            camera_id,
            model: CameraModel::Pinhole,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            radial_k: 0.0,
        }
        .validated()
    }

    pub fn simple_pinhole(
        camera_id: u32,
        width: usize,
        height: usize,
        f: f64,
        cx: f64,
        cy: f64,
    ) -> Result<Self> {
        Camera {
            camera_id,
            model: CameraModel::SimplePinhole,
            width,
            height,
            fx: f,
            fy: f,
            cx,
            cy,
            radial_k: 0.0,
        }
        .validated()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn simple_radial(
        camera_id: u32,
        width: usize,
        height: usize,
        f: f64,
        cx: f64,
        cy: f64,
        k: f64,
    ) -> Result<Self> {
        Camera {
            camera_id,
            model: CameraModel::SimpleRadial,
            width,
            height,
            fx: f,
            fy: f,
            cx,
            cy,
            radial_k: k,
        }
        .validated()
    }

    fn from_params(
        camera_id: u32,
        model: CameraModel,
        width: usize,
        height: usize,
        params: &[f64],
    ) -> Result<Self> {
        match (model, params) {
            (CameraModel::SimplePinhole, &[f, cx, cy]) => {
                Camera::simple_pinhole(camera_id, width, height, f, cx, cy)
            }
            (CameraModel::Pinhole, &[fx, fy, cx, cy]) => {
                Camera::pinhole(camera_id, width, height, fx, fy, cx, cy)
            }
            (CameraModel::SimpleRadial, &[f, cx, cy, k]) => {
                Camera::simple_radial(camera_id, width, height, f, cx, cy, k)
            }
            _ => Err(Error::InvalidCamera {
                camera_id,
                message: format!(
                    "{} expects {} parameters, got {}",
                    model.name(),
                    model.num_params(),
                    params.len()
                ),
            }),
        }
    }

    /// Parameters in COLMAP order for this model.
    pub fn params(&self) -> Vec<f64> {
        match self.model {
            CameraModel::SimplePinhole => vec![self.fx, self.cx, self.cy],
            CameraModel::Pinhole => vec![self.fx, self.fy, self.cx, self.cy],
            CameraModel::SimpleRadial => vec![self.fx, self.cx, self.cy, self.radial_k],
        }
    }

    pub fn validated(self) -> Result<Self> {
        let fail = |message: String| {
            Err(Error::InvalidCamera {
                camera_id: self.camera_id,
                message,
            })
        };
        if self.width == 0 || self.height == 0 {
            return fail(format!("image size {}x{}", self.width, self.height));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return fail(format!("focal lengths ({}, {})", self.fx, self.fy));
        }
        if !(0.0..=self.width as f64).contains(&self.cx)
            || !(0.0..=self.height as f64).contains(&self.cy)
        {
            return fail(format!("principal point ({}, {})", self.cx, self.cy));
        }
        if !self.radial_k.is_finite()
            || (self.model != CameraModel::SimpleRadial && self.radial_k != 0.0)
        {
            return fail(format!("radial coefficient {}", self.radial_k));
        }
        if self.model != CameraModel::Pinhole && self.fx != self.fy {
            return fail("single-focal model with fx != fy".to_owned());
        }
        Ok(self)
    }
}

/// A 2D keypoint, optionally linked to a 3D point.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub xy: [f64; 2],
    pub point3d_id: Option<u64>,
}

/// A registered image. The pose maps world to camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub image_id: u32,
    pub camera_id: u32,
    /// `(w, x, y, z)` stored as a nalgebra quaternion; never renormalized.
    pub rotation: Quaternion<f64>,
    pub translation: Vector3<f64>,
    pub name: String,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TrackElement {
    pub image_id: u32,
    pub point2d_idx: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePoint {
    pub point3d_id: u64,
    pub xyz: Vector3<f64>,
    pub color: [u8; 3],
    pub error: f64,
    pub track: Vec<TrackElement>,
}

/// Validated sparse reconstruction: cameras, posed images and 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct SfmModel {
    cameras: BTreeMap<u32, Camera>,
    images: BTreeMap<u32, Image>,
    points: BTreeMap<u64, ScenePoint>,
}

impl SfmModel {
    /// Builds a model and checks referential integrity in all directions.
    pub fn new(
        cameras: impl IntoIterator<Item = Camera>,
        images: impl IntoIterator<Item = Image>,
        points: impl IntoIterator<Item = ScenePoint>,
    ) -> Result<Self> {
        let mut camera_map = BTreeMap::new();
        for cam in cameras {
            let cam = cam.validated()?;
            let id = cam.camera_id;
            if camera_map.insert(id, cam).is_some() {
                return Err(Error::InvalidModel(format!("duplicate camera id {id}")));
            }
        }
        let mut image_map = BTreeMap::new();
        for image in images {
            let id = image.image_id;
            if image_map.insert(id, image).is_some() {
                return Err(Error::InvalidModel(format!("duplicate image id {id}")));
            }
        }
        let mut point_map = BTreeMap::new();
        for point in points {
            let id = point.point3d_id;
            if point_map.insert(id, point).is_some() {
                return Err(Error::InvalidModel(format!("duplicate point3D id {id}")));
            }
        }
        let model = SfmModel {
            cameras: camera_map,
            images: image_map,
            points: point_map,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::InvalidModel("model has no images".to_owned()));
        }
        for image in self.images.values() {
            if !self.cameras.contains_key(&image.camera_id) {
                return Err(Error::BrokenReference {
                    kind: "camera",
                    id: image.camera_id as i64,
                });
            }
            let norm = image.rotation.norm();
            if !((norm - 1.0).abs() <= QUATERNION_NORM_TOL) {
                return Err(Error::InvalidModel(format!(
                    "image {} has non-unit quaternion (norm {norm})",
                    image.image_id
                )));
            }
            if !image.translation.iter().all(|t| t.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "image {} has non-finite translation",
                    image.image_id
                )));
            }
            for (idx, obs) in image.observations.iter().enumerate() {
                let Some(pid) = obs.point3d_id else { continue };
                let point = self.points.get(&pid).ok_or(Error::BrokenReference {
                    kind: "point3D",
                    id: pid as i64,
                })?;
                let back = TrackElement {
                    image_id: image.image_id,
                    point2d_idx: idx as u32,
                };
                if !point.track.contains(&back) {
                    return Err(Error::BrokenReference {
                        kind: "track",
                        id: pid as i64,
                    });
                }
            }
        }
        for point in self.points.values() {
            if point.track.is_empty() {
                return Err(Error::InvalidModel(format!(
                    "point3D {} has an empty track",
                    point.point3d_id
                )));
            }
            for el in &point.track {
                let image = self.images.get(&el.image_id).ok_or(Error::BrokenReference {
                    kind: "image",
                    id: el.image_id as i64,
                })?;
                let linked = image
                    .observations
                    .get(el.point2d_idx as usize)
                    .and_then(|o| o.point3d_id);
                if linked != Some(point.point3d_id) {
                    return Err(Error::BrokenReference {
                        kind: "observation",
                        id: point.point3d_id as i64,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn cameras(&self) -> &BTreeMap<u32, Camera> {
        &self.cameras
    }

    pub fn images(&self) -> &BTreeMap<u32, Image> {
        &self.images
    }

    pub fn points(&self) -> &BTreeMap<u64, ScenePoint> {
        &self.points
    }

    pub fn image(&self, image_id: u32) -> Result<&Image> {
        self.images.get(&image_id).ok_or(Error::UnknownImage(image_id))
    }

    /// Camera of an image; always present in a validated model.
    pub fn camera_of(&self, image: &Image) -> &Camera {
        &self.cameras[&image.camera_id]
    }

    pub fn image_by_name(&self, name: &str) -> Option<&Image> {
        self.images.values().find(|im| im.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFormat {
    Text,
    Binary,
}

impl ModelFormat {
    fn extension(self) -> &'static str {
        match self {
            ModelFormat::Text => "txt",
            ModelFormat::Binary => "bin",
        }
    }
}

/// Picks the format present in `dir`; binary wins when both exist.
pub fn detect_format(dir: &Path) -> Result<ModelFormat> {
    if dir.join("cameras.bin").is_file() {
        Ok(ModelFormat::Binary)
    } else if dir.join("cameras.txt").is_file() {
        Ok(ModelFormat::Text)
    } else if !dir.is_dir() {
        Err(Error::MissingFile(dir.to_path_buf()))
    } else {
        Err(Error::MissingFile(dir.join("cameras.bin")))
    }
}

/// Reads a model; `None` auto-detects the format from file extensions.
pub fn read_model(dir: impl AsRef<Path>, format: Option<ModelFormat>) -> Result<SfmModel> {
    let dir = dir.as_ref();
    let format = match format {
        Some(f) => f,
        None => detect_format(dir)?,
    };
    let path = |stem: &str| dir.join(format!("{stem}.{}", format.extension()));
    let read = |stem: &str| {
        let p = path(stem);
        fs::read(&p).map_err(|e| Error::io(&p, e)).map(|b| (p, b))
    };
    let (cam_path, cam_bytes) = read("cameras")?;
    let (img_path, img_bytes) = read("images")?;
    let (pts_path, pts_bytes) = read("points3D")?;
    let (cameras, images, points) = match format {
        ModelFormat::Binary => (
            binary::read_cameras(&cam_path, &cam_bytes)?,
            binary::read_images(&img_path, &img_bytes)?,
            binary::read_points(&pts_path, &pts_bytes)?,
        ),
        ModelFormat::Text => (
            text::read_cameras(&cam_path, &as_utf8(&cam_path, &cam_bytes)?)?,
            text::read_images(&img_path, &as_utf8(&img_path, &img_bytes)?)?,
            text::read_points(&pts_path, &as_utf8(&pts_path, &pts_bytes)?)?,
        ),
    };
    SfmModel::new(cameras, images, points)
}

/// Writes a model in the requested format, creating `dir` if needed.
/// Records are written in ascending id order so output is byte-stable.
pub fn write_model(model: &SfmModel, dir: impl AsRef<Path>, format: ModelFormat) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files: [(&str, Vec<u8>); 3] = match format {
        ModelFormat::Binary => [
            ("cameras", binary::write_cameras(model)),
            ("images", binary::write_images(model)),
            ("points3D", binary::write_points(model)),
        ],
        ModelFormat::Text => [
            ("cameras", text::write_cameras(model).into_bytes()),
            ("images", text::write_images(model).into_bytes()),
            ("points3D", text::write_points(model).into_bytes()),
        ],
    };
    for (stem, bytes) in files {
        let path = dir.join(format!("{stem}.{}", format.extension()));
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn as_utf8(path: &Path, bytes: &[u8]) -> Result<String> {
    String::from_utf8(bytes.to_vec()).map_err(|e| malformed(path, "file", e.to_string()))
}

fn malformed(path: &Path, location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::MalformedRecord {
        file: path.display().to_string(),
        location: location.into(),
        message: message.into(),
    }
}

mod binary {
    use super::*;

    struct Reader<'a> {
        path: &'a Path,
        cur: Cursor<&'a [u8]>,
    }

    impl<'a> Reader<'a> {
        fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
            Reader {
                path,
                cur: Cursor::new(bytes),
            }
        }

        fn err(&self, message: impl Into<String>) -> Error {
            malformed(self.path, format!("byte offset {}", self.cur.position()), message)
        }

        fn remaining(&self) -> u64 {
            self.cur.get_ref().len() as u64 - self.cur.position()
        }

        fn u8(&mut self) -> Result<u8> {
            self.cur.read_u8().map_err(|_| self.err("unexpected end of file"))
        }

        fn u32(&mut self) -> Result<u32> {
            self.cur
                .read_u32::<LittleEndian>()
                .map_err(|_| self.err("unexpected end of file"))
        }

        fn i32(&mut self) -> Result<i32> {
            self.cur
                .read_i32::<LittleEndian>()
                .map_err(|_| self.err("unexpected end of file"))
        }

        fn u64(&mut self) -> Result<u64> {
            self.cur
                .read_u64::<LittleEndian>()
                .map_err(|_| self.err("unexpected end of file"))
        }

        fn f64(&mut self) -> Result<f64> {
            self.cur
                .read_f64::<LittleEndian>()
                .map_err(|_| self.err("unexpected end of file"))
        }

        /// Reads a count and checks that `record_size * count` bytes remain.
        fn count(&mut self, record_size: u64) -> Result<usize> {
            let n = self.u64()?;
            if n.saturating_mul(record_size) > self.remaining() {
                return Err(self.err(format!("record count {n} exceeds file size")));
            }
            Ok(n as usize)
        }

        fn cstring(&mut self) -> Result<String> {
            let mut bytes = Vec::new();
            loop {
                match self.u8()? {
                    0 => break,
                    b => bytes.push(b),
                }
            }
            String::from_utf8(bytes).map_err(|_| self.err("image name is not UTF-8"))
        }

        fn finish(&self) -> Result<()> {
            if self.remaining() != 0 {
                return Err(self.err("trailing bytes after last record"));
            }
            Ok(())
        }
    }

    pub fn read_cameras(path: &Path, bytes: &[u8]) -> Result<Vec<Camera>> {
        let mut r = Reader::new(path, bytes);
        let n = r.count(24)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let camera_id = r.u32()?;
            let model = CameraModel::from_colmap_id(r.i32()?)?;
            let width = r.u64()? as usize;
            let height = r.u64()? as usize;
            let params = (0..model.num_params())
                .map(|_| r.f64())
                .collect::<Result<Vec<_>>>()?;
            out.push(Camera::from_params(camera_id, model, width, height, &params)?);
        }
        r.finish()?;
        Ok(out)
    }

    pub fn read_images(path: &Path, bytes: &[u8]) -> Result<Vec<Image>> {
        let mut r = Reader::new(path, bytes);
        let n = r.count(73)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let image_id = r.u32()?;
            let (qw, qx, qy, qz) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let translation = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
            let camera_id = r.u32()?;
            let name = r.cstring()?;
            let n_obs = r.count(24)?;
            let mut observations = Vec::with_capacity(n_obs);
            for _ in 0..n_obs {
                let xy = [r.f64()?, r.f64()?];
                let raw = r.u64()?;
                let point3d_id = (raw != u64::MAX).then_some(raw);
                observations.push(Observation { xy, point3d_id });
            }
            out.push(Image {
                image_id,
                camera_id,
                rotation: Quaternion::new(qw, qx, qy, qz),
                translation,
                name,
                observations,
            });
        }
        r.finish()?;
        Ok(out)
    }

    pub fn read_points(path: &Path, bytes: &[u8]) -> Result<Vec<ScenePoint>> {
        let mut r = Reader::new(path, bytes);
        let n = r.count(51)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let point3d_id = r.u64()?;
            let xyz = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
            let color = [r.u8()?, r.u8()?, r.u8()?];
            let error = r.f64()?;
            let len = r.count(8)?;
            let mut track = Vec::with_capacity(len);
            for _ in 0..len {
                track.push(TrackElement {
                    image_id: r.u32()?,
                    point2d_idx: r.u32()?,
                });
            }
            out.push(ScenePoint {
                point3d_id,
                xyz,
                color,
                error,
                track,
            });
        }
        r.finish()?;
        Ok(out)
    }

    // Writes into a Vec<u8> cannot fail.
    pub fn write_cameras(model: &SfmModel) -> Vec<u8> {
        let mut w = Vec::new();
        w.write_u64::<LittleEndian>(model.cameras.len() as u64).unwrap();
        for cam in model.cameras.values() {
            w.write_u32::<LittleEndian>(cam.camera_id).unwrap();
            w.write_i32::<LittleEndian>(cam.model.colmap_id()).unwrap();
            w.write_u64::<LittleEndian>(cam.width as u64).unwrap();
            w.write_u64::<LittleEndian>(cam.height as u64).unwrap();
            for p in cam.params() {
                w.write_f64::<LittleEndian>(p).unwrap();
            }
        }
        w
    }

    pub fn write_images(model: &SfmModel) -> Vec<u8> {
        let mut w = Vec::new();
        w.write_u64::<LittleEndian>(model.images.len() as u64).unwrap();
        for im in model.images.values() {
            w.write_u32::<LittleEndian>(im.image_id).unwrap();
            let q = &im.rotation;
            for v in [q.w, q.i, q.j, q.k] {
                w.write_f64::<LittleEndian>(v).unwrap();
            }
            for v in im.translation.iter() {
                w.write_f64::<LittleEndian>(*v).unwrap();
            }
            w.write_u32::<LittleEndian>(im.camera_id).unwrap();
            w.extend_from_slice(im.name.as_bytes());
            w.push(0);
            w.write_u64::<LittleEndian>(im.observations.len() as u64).unwrap();
            for obs in &im.observations {
                w.write_f64::<LittleEndian>(obs.xy[0]).unwrap();
                w.write_f64::<LittleEndian>(obs.xy[1]).unwrap();
                w.write_u64::<LittleEndian>(obs.point3d_id.unwrap_or(u64::MAX))
                    .unwrap();
            }
        }
        w
    }

    pub fn write_points(model: &SfmModel) -> Vec<u8> {
        let mut w = Vec::new();
        w.write_u64::<LittleEndian>(model.points.len() as u64).unwrap();
        for p in model.points.values() {
            w.write_u64::<LittleEndian>(p.point3d_id).unwrap();
            for v in p.xyz.iter() {
                w.write_f64::<LittleEndian>(*v).unwrap();
            }
            w.extend_from_slice(&p.color);
            w.write_f64::<LittleEndian>(p.error).unwrap();
            w.write_u64::<LittleEndian>(p.track.len() as u64).unwrap();
            for el in &p.track {
                w.write_u32::<LittleEndian>(el.image_id).unwrap();
                w.write_u32::<LittleEndian>(el.point2d_idx).unwrap();
            }
        }
        w
    }
}

mod text {
    use super::*;

    /// Non-comment lines with their 1-based line numbers.
    fn data_lines(contents: &str) -> impl Iterator<Item = (usize, &str)> {
        contents
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim_start().starts_with('#'))
    }

    fn parse<T: std::str::FromStr>(path: &Path, line: usize, tok: Option<&str>, what: &str) -> Result<T> {
        let tok = tok.ok_or_else(|| malformed(path, format!("line {line}"), format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| malformed(path, format!("line {line}"), format!("invalid {what}: {tok:?}")))
    }

    pub fn read_cameras(path: &Path, contents: &str) -> Result<Vec<Camera>> {
        let mut out = Vec::new();
        for (ln, line) in data_lines(contents) {
            if line.trim().is_empty() {
                continue;
            }
            let mut toks = line.split_whitespace();
            let camera_id: u32 = parse(path, ln, toks.next(), "camera id")?;
            let model_name = toks
                .next()
                .ok_or_else(|| malformed(path, format!("line {ln}"), "missing model"))?;
            let model = CameraModel::from_name(model_name)?;
            let width: usize = parse(path, ln, toks.next(), "width")?;
            let height: usize = parse(path, ln, toks.next(), "height")?;
            let params = toks
                .map(|t| parse::<f64>(path, ln, Some(t), "parameter"))
                .collect::<Result<Vec<_>>>()?;
            out.push(Camera::from_params(camera_id, model, width, height, &params)?);
        }
        Ok(out)
    }

    pub fn read_images(path: &Path, contents: &str) -> Result<Vec<Image>> {
        let mut out = Vec::new();
        let mut lines = data_lines(contents);
        while let Some((ln, header)) = lines.next() {
            if header.trim().is_empty() {
                continue;
            }
            let header = header.trim_start();
            let mut toks = header.split_whitespace();
            let image_id: u32 = parse(path, ln, toks.next(), "image id")?;
            let mut q = [0.0; 4];
            for (i, v) in q.iter_mut().enumerate() {
                *v = parse(path, ln, toks.next(), &format!("quaternion component {i}"))?;
            }
            let mut t = [0.0; 3];
            for (i, v) in t.iter_mut().enumerate() {
                *v = parse(path, ln, toks.next(), &format!("translation component {i}"))?;
            }
            let camera_id: u32 = parse(path, ln, toks.next(), "camera id")?;
            // The name is the remainder of the line after nine fields.
            let name = nth_field_rest(header, 9)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| malformed(path, format!("line {ln}"), "missing image name"))?
                .to_owned();
            let (pln, points_line) = lines.next().unwrap_or((ln + 1, ""));
            let toks: Vec<&str> = points_line.split_whitespace().collect();
            if !toks.len().is_multiple_of(3) {
                return Err(malformed(
                    path,
                    format!("line {pln}"),
                    "observation list is not a multiple of 3 fields",
                ));
            }
            let mut observations = Vec::with_capacity(toks.len() / 3);
            for chunk in toks.chunks(3) {
                let x: f64 = parse(path, pln, Some(chunk[0]), "x")?;
                let y: f64 = parse(path, pln, Some(chunk[1]), "y")?;
                let id: i64 = parse(path, pln, Some(chunk[2]), "point3D id")?;
                observations.push(Observation {
                    xy: [x, y],
                    point3d_id: (id >= 0).then_some(id as u64),
                });
            }
            out.push(Image {
                image_id,
                camera_id,
                rotation: Quaternion::new(q[0], q[1], q[2], q[3]),
                translation: Vector3::new(t[0], t[1], t[2]),
                name,
                observations,
            });
        }
        Ok(out)
    }

    fn nth_field_rest(line: &str, n: usize) -> Option<&str> {
        let mut rest = line.trim_start();
        for _ in 0..n {
            let end = rest.find(char::is_whitespace)?;
            rest = rest[end..].trim_start();
        }
        Some(rest.trim_end())
    }

    pub fn read_points(path: &Path, contents: &str) -> Result<Vec<ScenePoint>> {
        let mut out = Vec::new();
        for (ln, line) in data_lines(contents) {
            if line.trim().is_empty() {
                continue;
            }
            let mut toks = line.split_whitespace();
            let point3d_id: u64 = parse(path, ln, toks.next(), "point3D id")?;
            let xyz = Vector3::new(
                parse(path, ln, toks.next(), "x")?,
                parse(path, ln, toks.next(), "y")?,
                parse(path, ln, toks.next(), "z")?,
            );
            let color = [
                parse(path, ln, toks.next(), "r")?,
                parse(path, ln, toks.next(), "g")?,
                parse(path, ln, toks.next(), "b")?,
            ];
            let error: f64 = parse(path, ln, toks.next(), "error")?;
            let rest: Vec<&str> = toks.collect();
            if !rest.len().is_multiple_of(2) {
                return Err(malformed(path, format!("line {ln}"), "odd track field count"));
            }
            let track = rest
                .chunks(2)
                .map(|c| {
                    Ok(TrackElement {
                        image_id: parse(path, ln, Some(c[0]), "track image id")?,
                        point2d_idx: parse(path, ln, Some(c[1]), "track point2D index")?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(ScenePoint {
                point3d_id,
                xyz,
                color,
                error,
                track,
            });
        }
        Ok(out)
    }

    // `{}` on f64 prints the shortest decimal that parses back to the same bits.

    pub fn write_cameras(model: &SfmModel) -> String {
        let mut s = String::new();
        s.push_str("# Camera list with one line of data per camera:\n");
        s.push_str("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
        let _ = writeln!(s, "# Number of cameras: {}", model.cameras.len());
        for cam in model.cameras.values() {
            let _ = write!(s, "{} {} {} {}", cam.camera_id, cam.model.name(), cam.width, cam.height);
            for p in cam.params() {
                let _ = write!(s, " {p}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_images(model: &SfmModel) -> String {
        let mut s = String::new();
        let n_obs: usize = model.images.values().map(|im| im.observations.len()).sum();
        let mean = n_obs as f64 / model.images.len().max(1) as f64;
        s.push_str("# Image list with two lines of data per image:\n");
        s.push_str("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n");
        s.push_str("#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
        let _ = writeln!(
            s,
            "# Number of images: {}, mean observations per image: {mean}",
            model.images.len()
        );
        for im in model.images.values() {
            let q = &im.rotation;
            let t = &im.translation;
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {} {} {}",
                im.image_id, q.w, q.i, q.j, q.k, t.x, t.y, t.z, im.camera_id, im.name
            );
            let obs: Vec<String> = im
                .observations
                .iter()
                .map(|o| {
                    let id = o.point3d_id.map(|p| p as i64).unwrap_or(-1);
                    format!("{} {} {id}", o.xy[0], o.xy[1])
                })
                .collect();
            s.push_str(&obs.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn write_points(model: &SfmModel) -> String {
        let mut s = String::new();
        let track_total: usize = model.points.values().map(|p| p.track.len()).sum();
        let mean = track_total as f64 / model.points.len().max(1) as f64;
        s.push_str("# 3D point list with one line of data per point:\n");
        s.push_str("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
        let _ = writeln!(
            s,
            "# Number of points: {}, mean track length: {mean}",
            model.points.len()
        );
        for p in model.points.values() {
            let _ = write!(
                s,
                "{} {} {} {} {} {} {} {}",
                p.point3d_id, p.xyz.x, p.xyz.y, p.xyz.z, p.color[0], p.color[1], p.color[2], p.error
            );
            for el in &p.track {
                let _ = write!(s, " {} {}", el.image_id, el.point2d_idx);
            }
            s.push('\n');
        }
        s
    }
}

/// Set of point ids observed by `image_id`.
pub fn visible_points(model: &SfmModel, image_id: u32) -> BTreeSet<u64> {
    model
        .images
        .get(&image_id)
        .map(|im| im.observations.iter().filter_map(|o| o.point3d_id).collect())
        .unwrap_or_default()
}

/// Default on-disk names of a model directory, for diagnostics.
pub fn model_files(dir: &Path, format: ModelFormat) -> [PathBuf; 3] {
    let ext = format.extension();
    [
        dir.join(format!("cameras.{ext}")),
        dir.join(format!("images.{ext}")),
        dir.join(format!("points3D.{ext}")),
    ]
}
