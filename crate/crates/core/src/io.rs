//! On-disk formats for rasters, meshes and point clouds.
//!
//! Rasters are written in two forms: a raw little-endian `f32` file for
//! interchange with external tools, and an NPY array (`<f8`) that preserves
//! the full precision of intermediate results. Readers prefer the NPY copy
//! when both exist.

use std::fs;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::depth::ScaleDomain;
use crate::error::{Error, Result};
use crate::fusion::{FusedPointCloud, TriangleMesh};
use crate::raster::Grid;

const NPY_MAGIC: &[u8] = b"\x93NUMPY";

/// Sidecar describing a raw raster file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_domain: Option<ScaleDomain>,
    pub width: usize,
    pub height: usize,
}

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Appends `suffix` to the final path component (`a/b.png` + `.depth.f32`).
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Raw row-major little-endian `f32` values.
pub fn write_f32_raster(path: &Path, grid: &Grid<f64>) -> Result<()> {
    let mut out = Vec::with_capacity(grid.len() * 4);
    for &v in grid.as_slice() {
        out.write_f32::<LittleEndian>(v as f32).unwrap();
    }
    write_bytes(path, &out)
}

pub fn read_f32_raster(path: &Path, width: usize, height: usize) -> Result<Grid<f64>> {
    let bytes = read_bytes(path)?;
    if bytes.len() != width * height * 4 {
        return Err(format_err(
            path,
            format!("expected {} bytes for {width}x{height}, found {}", width * height * 4, bytes.len()),
        ));
    }
    let mut cur = Cursor::new(bytes);
    let data = (0..width * height)
        .map(|_| cur.read_f32::<LittleEndian>().map(f64::from).unwrap())
        .collect();
    Ok(Grid::from_vec(width, height, data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NpyDtype {
    F8,
    F4,
    I8,
}

impl NpyDtype {
    fn descr(self) -> &'static str {
        match self {
            NpyDtype::F8 => "<f8",
            NpyDtype::F4 => "<f4",
            NpyDtype::I8 => "<i8",
        }
    }
}

fn npy_header(dtype: NpyDtype, width: usize, height: usize) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({height}, {width}), }}",
        dtype.descr()
    );
    // Magic (6) + version (2) + header length (2) + dict, padded to 64 bytes.
    let unpadded = 10 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    let mut header = Vec::with_capacity(unpadded + pad);
    header.extend_from_slice(NPY_MAGIC);
    header.extend_from_slice(&[1, 0]);
    header
        .write_u16::<LittleEndian>((dict.len() + pad + 1) as u16)
        .unwrap();
    header.extend_from_slice(dict.as_bytes());
    header.extend(std::iter::repeat_n(b' ', pad));
    header.push(b'\n');
    header
}

pub fn write_npy_f64(path: &Path, grid: &Grid<f64>) -> Result<()> {
    let mut out = npy_header(NpyDtype::F8, grid.width(), grid.height());
    for &v in grid.as_slice() {
        out.write_f64::<LittleEndian>(v).unwrap();
    }
    write_bytes(path, &out)
}

pub fn write_npy_f32(path: &Path, grid: &Grid<f64>) -> Result<()> {
    let mut out = npy_header(NpyDtype::F4, grid.width(), grid.height());
    for &v in grid.as_slice() {
        out.write_f32::<LittleEndian>(v as f32).unwrap();
    }
    write_bytes(path, &out)
}

pub fn write_npy_i64(path: &Path, grid: &Grid<i64>) -> Result<()> {
    let mut out = npy_header(NpyDtype::I8, grid.width(), grid.height());
    for &v in grid.as_slice() {
        out.write_i64::<LittleEndian>(v).unwrap();
    }
    write_bytes(path, &out)
}

fn parse_npy_header(path: &Path, cur: &mut Cursor<Vec<u8>>) -> Result<(NpyDtype, usize, usize)> {
    let mut magic = [0u8; 6];
    cur.read_exact(&mut magic)
        .map_err(|_| format_err(path, "truncated NPY header"))?;
    if magic != NPY_MAGIC {
        return Err(format_err(path, "not an NPY file"));
    }
    let major = cur.read_u8().map_err(|_| format_err(path, "truncated NPY header"))?;
    let _minor = cur.read_u8().map_err(|_| format_err(path, "truncated NPY header"))?;
    let len = match major {
        1 => cur.read_u16::<LittleEndian>().map(usize::from),
        2 | 3 => cur.read_u32::<LittleEndian>().map(|v| v as usize),
        v => return Err(format_err(path, format!("unsupported NPY version {v}"))),
    }
    .map_err(|_| format_err(path, "truncated NPY header"))?;
    let mut dict = vec![0u8; len];
    cur.read_exact(&mut dict)
        .map_err(|_| format_err(path, "truncated NPY header"))?;
    let dict = String::from_utf8_lossy(&dict);
    let field = |key: &str| -> Option<String> {
        let start = dict.find(&format!("'{key}'"))? + key.len() + 2;
        let rest = dict[start..].trim_start().strip_prefix(':')?.trim_start();
        if let Some(inner) = rest.strip_prefix('(') {
            Some(inner[..inner.find(')')?].to_owned())
        } else if let Some(inner) = rest.strip_prefix('\'') {
            Some(inner[..inner.find('\'')?].to_owned())
        } else {
            Some(rest[..rest.find(',')?].trim().to_owned())
        }
    };
    let dtype = match field("descr").as_deref() {
        Some("<f8") => NpyDtype::F8,
        Some("<f4") => NpyDtype::F4,
        Some("<i8") => NpyDtype::I8,
        other => return Err(format_err(path, format!("unsupported dtype {other:?}"))),
    };
    if field("fortran_order").as_deref() != Some("False") {
        return Err(format_err(path, "fortran-ordered arrays are not supported"));
    }
    let shape = field("shape").ok_or_else(|| format_err(path, "missing shape"))?;
    let dims: Vec<usize> = shape
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format_err(path, format!("bad shape {shape:?}"))))
        .collect::<Result<_>>()?;
    match dims.as_slice() {
        &[h, w] => Ok((dtype, w, h)),
        _ => Err(format_err(path, format!("expected a 2D array, shape {shape:?}"))),
    }
}

/// Reads a 2D `<f8` or `<f4` array.
pub fn read_npy_f64(path: &Path) -> Result<Grid<f64>> {
    let mut cur = Cursor::new(read_bytes(path)?);
    let (dtype, w, h) = parse_npy_header(path, &mut cur)?;
    let read = |cur: &mut Cursor<Vec<u8>>| -> std::io::Result<f64> {
        match dtype {
            NpyDtype::F8 => cur.read_f64::<LittleEndian>(),
            NpyDtype::F4 => cur.read_f32::<LittleEndian>().map(f64::from),
            NpyDtype::I8 => cur.read_i64::<LittleEndian>().map(|v| v as f64),
        }
    };
    let data = (0..w * h)
        .map(|_| read(&mut cur).map_err(|_| format_err(path, "truncated NPY data")))
        .collect::<Result<Vec<_>>>()?;
    Ok(Grid::from_vec(w, h, data))
}

pub fn read_npy_i64(path: &Path) -> Result<Grid<i64>> {
    let mut cur = Cursor::new(read_bytes(path)?);
    let (dtype, w, h) = parse_npy_header(path, &mut cur)?;
    if dtype != NpyDtype::I8 {
        return Err(format_err(path, "expected an <i8 array"));
    }
    let data = (0..w * h)
        .map(|_| {
            cur.read_i64::<LittleEndian>()
                .map_err(|_| format_err(path, "truncated NPY data"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Grid::from_vec(w, h, data))
}

/// Writes `<stem>.f32`, `<stem>.npy` and, if given, a JSON sidecar.
pub fn write_raster_pair(stem: &Path, grid: &Grid<f64>) -> Result<()> {
    write_f32_raster(&with_suffix(stem, ".f32"), grid)?;
    write_npy_f64(&with_suffix(stem, ".npy"), grid)
}

/// Reads `<stem>.npy`, falling back to `<stem>.f32` with the given shape.
pub fn read_raster_pair(stem: &Path, shape: Option<(usize, usize)>) -> Result<Grid<f64>> {
    let npy = with_suffix(stem, ".npy");
    if npy.is_file() {
        return read_npy_f64(&npy);
    }
    let raw = with_suffix(stem, ".f32");
    match shape {
        Some((w, h)) => read_f32_raster(&raw, w, h),
        None => Err(Error::MissingFile(npy)),
    }
}

/// Binary little-endian PLY with `double` coordinates.
pub fn write_mesh_ply(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", mesh.vertices.len()));
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    let normals = mesh.normals.as_ref().filter(|n| n.len() == mesh.vertices.len());
    if normals.is_some() {
        header.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    header.push_str(&format!("element face {}\n", mesh.triangles.len()));
    header.push_str("property list uchar int vertex_indices\nend_header\n");
    let mut out = header.into_bytes();
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v.iter() {
            out.write_f64::<LittleEndian>(*c).unwrap();
        }
        if let Some(n) = normals {
            for c in n[i].iter() {
                out.write_f64::<LittleEndian>(*c).unwrap();
            }
        }
    }
    for t in &mesh.triangles {
        out.push(3);
        for &i in t {
            out.write_i32::<LittleEndian>(i as i32).unwrap();
        }
    }
    write_bytes(path, &out)
}

/// Binary PLY point cloud; support count is stored as a `uint` property.
pub fn write_point_cloud_ply(path: &Path, cloud: &FusedPointCloud) -> Result<()> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", cloud.points.len()));
    header.push_str("property double x\nproperty double y\nproperty double z\nproperty uint support\nend_header\n");
    let mut out = header.into_bytes();
    for p in &cloud.points {
        for c in p.xyz.iter() {
            out.write_f64::<LittleEndian>(*c).unwrap();
        }
        out.write_u32::<LittleEndian>(p.support as u32).unwrap();
    }
    write_bytes(path, &out)
}

pub fn write_mesh_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    create_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z).map_err(io)?;
    }
    if let Some(normals) = mesh.normals.as_ref().filter(|n| n.len() == mesh.vertices.len()) {
        for n in normals {
            writeln!(w, "vn {} {} {}", n.x, n.y, n.z).map_err(io)?;
        }
        for t in &mesh.triangles {
            writeln!(w, "f {0}//{0} {1}//{1} {2}//{2}", t[0] + 1, t[1] + 1, t[2] + 1).map_err(io)?;
        }
    } else {
        for t in &mesh.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyScalar {
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
    F32,
    F64,
}

impl PlyScalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "uchar" | "uint8" => PlyScalar::U8,
            "char" | "int8" => PlyScalar::I8,
            "ushort" | "uint16" => PlyScalar::U16,
            "short" | "int16" => PlyScalar::I16,
            "uint" | "uint32" => PlyScalar::U32,
            "int" | "int32" => PlyScalar::I32,
            "float" | "float32" => PlyScalar::F32,
            "double" | "float64" => PlyScalar::F64,
            _ => return None,
        })
    }

    fn read(self, cur: &mut Cursor<&[u8]>) -> std::io::Result<f64> {
        Ok(match self {
            PlyScalar::U8 => cur.read_u8()? as f64,
            PlyScalar::I8 => cur.read_i8()? as f64,
            PlyScalar::U16 => cur.read_u16::<LittleEndian>()? as f64,
            PlyScalar::I16 => cur.read_i16::<LittleEndian>()? as f64,
            PlyScalar::U32 => cur.read_u32::<LittleEndian>()? as f64,
            PlyScalar::I32 => cur.read_i32::<LittleEndian>()? as f64,
            PlyScalar::F32 => cur.read_f32::<LittleEndian>()? as f64,
            PlyScalar::F64 => cur.read_f64::<LittleEndian>()?,
        })
    }
}

enum PlyProperty {
    Scalar(String, PlyScalar),
    List(String, PlyScalar, PlyScalar),
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProperty>,
}

/// Reads vertices and triangular faces from a binary little-endian PLY.
/// Point-cloud files (no face element) yield a mesh without triangles.
pub fn read_mesh_ply(path: &Path) -> Result<TriangleMesh> {
    let bytes = read_bytes(path)?;
    let end = b"end_header\n";
    let body_start = bytes
        .windows(end.len())
        .position(|w| w == end)
        .map(|p| p + end.len())
        .ok_or_else(|| format_err(path, "missing end_header"))?;
    let header = String::from_utf8_lossy(&bytes[..body_start]);
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(format_err(path, "not a PLY file"));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => {
                return Err(format_err(path, format!("unsupported PLY format {other}")))
            }
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| format_err(path, format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| format_err(path, "property before element"))?;
                let ct = PlyScalar::parse(ct).ok_or_else(|| format_err(path, "bad list count type"))?;
                let it = PlyScalar::parse(it).ok_or_else(|| format_err(path, "bad list item type"))?;
                el.props.push(PlyProperty::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| format_err(path, "property before element"))?;
                let ty = PlyScalar::parse(ty)
                    .ok_or_else(|| format_err(path, format!("bad property type {ty}")))?;
                el.props.push(PlyProperty::Scalar(name.to_string(), ty));
            }
            ["comment", ..] | ["obj_info", ..] | ["end_header"] | [] => {}
            _ => return Err(format_err(path, format!("unexpected header line {line:?}"))),
        }
    }
    let mut cur = Cursor::new(&bytes[body_start..]);
    let trunc = || format_err(path, "truncated PLY body");
    let mut mesh = TriangleMesh::default();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [f64::NAN; 3];
            let mut face: Vec<usize> = Vec::new();
            for prop in &el.props {
                match prop {
                    PlyProperty::Scalar(name, ty) => {
                        let v = ty.read(&mut cur).map_err(|_| trunc())?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            _ => {}
                        }
                    }
                    PlyProperty::List(name, ct, it) => {
                        let n = ct.read(&mut cur).map_err(|_| trunc())? as usize;
                        for _ in 0..n {
                            let v = it.read(&mut cur).map_err(|_| trunc())?;
                            if name == "vertex_indices" || name == "vertex_index" {
                                face.push(v as usize);
                            }
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => mesh.vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2])),
                "face" => {
                    // Fan-triangulate polygons.
                    for i in 1..face.len().saturating_sub(1) {
                        mesh.triangles.push([face[0], face[i], face[i + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    if mesh.vertices.iter().any(|v| v.iter().any(|c| c.is_nan())) {
        return Err(format_err(path, "vertex element lacks x/y/z"));
    }
    let n = mesh.vertices.len();
    if mesh.triangles.iter().flatten().any(|&i| i >= n) {
        return Err(format_err(path, "face index out of range"));
    }
    Ok(mesh)
}
