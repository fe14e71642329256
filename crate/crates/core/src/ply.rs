//! Binary little-endian PLY reader/writer for splat scenes.
//!
//! Written layout, one `vertex` element with float32 properties in this order:
//! `x y z scale_0..2 rot_0..3 opacity red green blue f_lang_0..f_lang_63`.
//! Colors are stored as linear floats in `[0, 1]`, so a save/load cycle is
//! bit-exact. On load the property order is free, unknown properties are
//! skipped, `f_dc_0..2` spherical-harmonic DC terms are accepted in place of
//! `red green blue`, and missing `f_lang_*` default to zero.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::scene::{quat_norm, GaussianScene, SceneError, QUAT_NORM_TOL};
use crate::LANG_DIM;

/// Zeroth-order spherical harmonic constant.
const SH_C0: f64 = 0.282_094_791_773_878_14;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("missing required vertex property `{0}`")]
    MissingProperty(String),
    #[error("vertex {vertex}: data ends before the vertex is complete ({declared} declared)")]
    Truncated { vertex: usize, declared: usize },
    #[error("{0} bytes of data after the last declared element")]
    TrailingBytes(usize),
    #[error("vertex {vertex}: non-finite value in `{property}`")]
    NonFinite { vertex: usize, property: String },
    #[error("vertex {vertex}: zero-length rotation quaternion")]
    ZeroQuaternion { vertex: usize },
    #[error("scene fails validation: {0}")]
    Invalid(#[from] SceneError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    /// Decodes one value. Float32 is kept exact by returning the f32 itself.
    fn read(self, b: &[u8]) -> Value {
        match self {
            Scalar::I8 => Value::Int(b[0] as i8 as f64),
            Scalar::U8 => Value::Int(b[0] as f64),
            Scalar::I16 => Value::Int(i16::from_le_bytes([b[0], b[1]]) as f64),
            Scalar::U16 => Value::Int(u16::from_le_bytes([b[0], b[1]]) as f64),
            Scalar::I32 => Value::Int(i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64),
            Scalar::U32 => Value::Int(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64),
            Scalar::F32 => Value::F32(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F64 => Value::F64(f64::from_le_bytes(b[..8].try_into().unwrap())),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Value {
    Int(f64),
    F32(f32),
    F64(f64),
}

impl Value {
    fn as_f32(self) -> f32 {
        match self {
            Value::Int(v) | Value::F64(v) => v as f32,
            Value::F32(v) => v,
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, Scalar)>,
}

impl Element {
    fn stride(&self) -> usize {
        self.properties.iter().map(|(_, s)| s.size()).sum()
    }
}

fn parse_header<R: BufRead>(reader: &mut R) -> Result<Vec<Element>, PlyError> {
    let mut line = String::new();
    let mut next_line = |line: &mut String| -> Result<(), PlyError> {
        line.clear();
        if reader.read_line(line)? == 0 {
            return Err(PlyError::Header("unexpected end of file in header".into()));
        }
        Ok(())
    };
    next_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(PlyError::Header("missing `ply` magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    loop {
        next_line(&mut line)?;
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                let fmt = words.next().unwrap_or_default();
                if fmt != "binary_little_endian" {
                    return Err(PlyError::Header(format!("unsupported format `{fmt}`")));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = words.next().ok_or_else(|| PlyError::Header("element without name".into()))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| PlyError::Header(format!("element `{name}` has no valid count")))?;
                elements.push(Element { name: name.to_string(), count, properties: Vec::new() });
            }
            Some("property") => {
                let elem = elements.last_mut().ok_or_else(|| PlyError::Header("property before any element".into()))?;
                let ty = words.next().unwrap_or_default();
                if ty == "list" {
                    return Err(PlyError::Header(format!("list property in element `{}` is not supported", elem.name)));
                }
                let scalar = Scalar::parse(ty).ok_or_else(|| PlyError::Header(format!("unknown property type `{ty}`")))?;
                let name = words.next().ok_or_else(|| PlyError::Header("property without name".into()))?;
                elem.properties.push((name.to_string(), scalar));
            }
            Some("end_header") => break,
            Some(other) => return Err(PlyError::Header(format!("unexpected header keyword `{other}`"))),
        }
    }
    if !saw_format {
        return Err(PlyError::Header("missing format line".into()));
    }
    Ok(elements)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<GaussianScene, PlyError> {
    let file = File::open(path.as_ref())?;
    read_scene(BufReader::new(file))
}

pub fn read_scene<R: BufRead>(mut reader: R) -> Result<GaussianScene, PlyError> {
    let elements = parse_header(&mut reader)?;
    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;

    let vertex_pos = elements.iter().position(|e| e.name == "vertex").ok_or_else(|| PlyError::Header("no `vertex` element".into()))?;
    let offset: usize = elements[..vertex_pos].iter().map(|e| e.count * e.stride()).sum();
    let vertex = &elements[vertex_pos];
    let total: usize = elements.iter().map(|e| e.count * e.stride()).sum();

    let find = |name: &str| vertex.properties.iter().position(|(n, _)| n == name);
    let require = |name: &str| find(name).ok_or_else(|| PlyError::MissingProperty(name.to_string()));
    let mut offsets = Vec::with_capacity(vertex.properties.len());
    let mut acc = 0;
    for (_, s) in &vertex.properties {
        offsets.push(acc);
        acc += s.size();
    }
    let stride = acc;

    let pos_idx = [require("x")?, require("y")?, require("z")?];
    let scale_idx = [require("scale_0")?, require("scale_1")?, require("scale_2")?];
    let rot_idx = [require("rot_0")?, require("rot_1")?, require("rot_2")?, require("rot_3")?];
    let opacity_idx = require("opacity")?;
    enum ColorSource {
        Direct([usize; 3]),
        ShDc([usize; 3]),
    }
    let color = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => ColorSource::Direct([r, g, b]),
        _ => ColorSource::ShDc([require("f_dc_0")?, require("f_dc_1")?, require("f_dc_2")?]),
    };
    let lang_idx: Vec<Option<usize>> = (0..LANG_DIM).map(|k| find(&format!("f_lang_{k}"))).collect();

    if body.len() < offset + vertex.count * stride {
        let vertex_at = body.len().saturating_sub(offset) / stride.max(1);
        return Err(PlyError::Truncated { vertex: vertex_at, declared: vertex.count });
    }
    if body.len() > total {
        return Err(PlyError::TrailingBytes(body.len() - total));
    }
    if body.len() < total {
        return Err(PlyError::Header("data ends inside an element after `vertex`".into()));
    }

    let mut scene = GaussianScene::with_capacity(vertex.count);
    for v in 0..vertex.count {
        let row = &body[offset + v * stride..offset + (v + 1) * stride];
        let get = |p: usize| -> Result<Value, PlyError> {
            let (name, scalar) = &vertex.properties[p];
            let val = scalar.read(&row[offsets[p]..]);
            let finite = match val {
                Value::Int(_) => true,
                Value::F32(x) => x.is_finite(),
                Value::F64(x) => x.is_finite(),
            };
            if finite {
                Ok(val)
            } else {
                Err(PlyError::NonFinite { vertex: v, property: name.clone() })
            }
        };
        let f3 =
            |idx: [usize; 3]| -> Result<[f32; 3], PlyError> { Ok([get(idx[0])?.as_f32(), get(idx[1])?.as_f32(), get(idx[2])?.as_f32()]) };
        let position = f3(pos_idx)?;
        let scale = f3(scale_idx)?;
        let mut rotation = [0.0f32; 4];
        for k in 0..4 {
            rotation[k] = get(rot_idx[k])?.as_f32();
        }
        let norm = quat_norm(rotation);
        if norm == 0.0 {
            return Err(PlyError::ZeroQuaternion { vertex: v });
        }
        if (norm - 1.0).abs() > QUAT_NORM_TOL {
            let n = norm as f64;
            rotation = rotation.map(|c| (c as f64 / n) as f32);
        }
        let color = match &color {
            ColorSource::Direct(idx) => {
                let mut c = [0.0f32; 3];
                for k in 0..3 {
                    c[k] = match (vertex.properties[idx[k]].1, get(idx[k])?) {
                        (Scalar::U8, Value::Int(x)) => (x / 255.0) as f32,
                        (_, val) => val.as_f32(),
                    };
                }
                c
            }
            ColorSource::ShDc(idx) => {
                let dc = f3(*idx)?;
                dc.map(|d| (0.5 + SH_C0 * d as f64).clamp(0.0, 1.0) as f32)
            }
        };
        let opacity_logit = get(opacity_idx)?.as_f32();
        let mut lang = [0.0f32; LANG_DIM];
        for (k, idx) in lang_idx.iter().enumerate() {
            if let Some(p) = idx {
                lang[k] = get(*p)?.as_f32();
            }
        }
        scene.positions.push(position);
        scene.scales.push(scale);
        scene.rotations.push(rotation);
        scene.colors.push(color);
        scene.opacity_logits.push(opacity_logit);
        scene.lang.push(lang);
    }
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<(), PlyError> {
    scene.validate()?;
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_scene(scene, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_scene<W: Write>(scene: &GaussianScene, w: &mut W) -> Result<(), PlyError> {
    scene.validate()?;
    let mut header = String::from("ply\nformat binary_little_endian 1.0\ncomment lesplat language-embedded gaussians\n");
    header.push_str(&format!("element vertex {}\n", scene.len()));
    let mut names: Vec<String> =
        ["x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity", "red", "green", "blue"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    names.extend((0..LANG_DIM).map(|k| format!("f_lang_{k}")));
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;

    let mut row = Vec::with_capacity(names.len() * 4);
    for i in 0..scene.len() {
        row.clear();
        let vals = scene.positions[i]
            .iter()
            .chain(&scene.scales[i])
            .chain(&scene.rotations[i])
            .chain(std::iter::once(&scene.opacity_logits[i]))
            .chain(&scene.colors[i])
            .chain(&scene.lang[i]);
        for v in vals {
            row.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&row)?;
    }
    Ok(())
}
