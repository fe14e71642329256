//! Little-endian binary containers shared with the feature exporter.
//!
//! | magic  | header            | body                                            |
//! |--------|-------------------|-------------------------------------------------|
//! | `TGRF` | u32 H, W, C       | `H·W·C` f32, row-major, channels innermost      |
//! | `TGRM` | u32 H, W, K       | K bitmaps of `⌈H·W/8⌉` bytes, LSB-first         |
//! | `TGRP` | u32 dim, k        | f32 mean (dim), components (k·dim), variances (k) |
//! | `TGRQ` | u32 dim           | f32 vector (dim), UTF-8 label to end of file    |

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::features::{FeatureError, FeatureMap, MaskSet, PcaBasis};
use crate::retrieval::QueryEmbedding;

pub const FEATURE_MAGIC: &[u8; 4] = b"TGRF";
pub const MASK_MAGIC: &[u8; 4] = b"TGRM";
pub const PCA_MAGIC: &[u8; 4] = b"TGRP";
pub const QUERY_MAGIC: &[u8; 4] = b"TGRQ";

/// Refuse headers describing more than this many payload values.
const MAX_VALUES: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("file ends early: {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("header describes an implausibly large payload")]
    TooLarge,
    #[error("label is not valid UTF-8")]
    BadLabel,
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("invalid query: {0}")]
    Query(String),
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<(), ContainerError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ContainerError::Truncated(what),
        _ => ContainerError::Io(e),
    })
}

fn read_magic(r: &mut impl Read, expected: &[u8; 4]) -> Result<(), ContainerError> {
    let mut m = [0u8; 4];
    read_exact(r, &mut m, "magic")?;
    if &m != expected {
        return Err(ContainerError::BadMagic {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(&m).into_owned(),
        });
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, ContainerError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, "header")?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize, what: &'static str) -> Result<Vec<f32>, ContainerError> {
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes, what)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn expect_eof(r: &mut impl Read) -> Result<(), ContainerError> {
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.is_empty() {
        Ok(())
    } else {
        Err(ContainerError::TrailingBytes(rest.len()))
    }
}

fn checked_count(dims: &[u32]) -> Result<usize, ContainerError> {
    let n = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64)).ok_or(ContainerError::TooLarge)?;
    if n > MAX_VALUES {
        return Err(ContainerError::TooLarge);
    }
    Ok(n as usize)
}

fn write_f32s(w: &mut impl Write, v: &[f32]) -> io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, ContainerError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>, ContainerError> {
    Ok(BufReader::new(File::open(path)?))
}

pub fn write_feature_map(map: &FeatureMap, w: &mut impl Write) -> Result<(), ContainerError> {
    w.write_all(FEATURE_MAGIC)?;
    for d in [map.height, map.width, map.dim] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    write_f32s(w, &map.data)?;
    Ok(())
}

/// Reads a feature map; the container carries no camera id, so the caller
/// supplies it.
pub fn read_feature_map(r: &mut impl Read, source_camera_id: &str) -> Result<FeatureMap, ContainerError> {
    read_magic(r, FEATURE_MAGIC)?;
    let (h, w, c) = (read_u32(r)?, read_u32(r)?, read_u32(r)?);
    let n = checked_count(&[h, w, c])?;
    let data = read_f32s(r, n, "feature data")?;
    expect_eof(r)?;
    Ok(FeatureMap::new(h as usize, w as usize, c as usize, data, source_camera_id)?)
}

pub fn save_feature_map(map: &FeatureMap, path: impl AsRef<Path>) -> Result<(), ContainerError> {
    let mut w = create(path.as_ref())?;
    write_feature_map(map, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_feature_map(path: impl AsRef<Path>, source_camera_id: &str) -> Result<FeatureMap, ContainerError> {
    read_feature_map(&mut open(path.as_ref())?, source_camera_id)
}

pub fn write_mask_set(masks: &MaskSet, w: &mut impl Write) -> Result<(), ContainerError> {
    w.write_all(MASK_MAGIC)?;
    for d in [masks.height, masks.width, masks.masks.len()] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let bytes = (masks.height * masks.width).div_ceil(8);
    for m in &masks.masks {
        let mut packed = vec![0u8; bytes];
        for (p, &on) in m.iter().enumerate() {
            if on {
                packed[p / 8] |= 1 << (p % 8);
            }
        }
        w.write_all(&packed)?;
    }
    Ok(())
}

pub fn read_mask_set(r: &mut impl Read) -> Result<MaskSet, ContainerError> {
    read_magic(r, MASK_MAGIC)?;
    let (h, w, k) = (read_u32(r)?, read_u32(r)?, read_u32(r)?);
    let pixels = checked_count(&[h, w])?;
    checked_count(&[h, w, k])?;
    let bytes = pixels.div_ceil(8);
    let mut set = MaskSet::new(h as usize, w as usize);
    let mut packed = vec![0u8; bytes];
    for _ in 0..k {
        read_exact(r, &mut packed, "mask bitmap")?;
        set.push((0..pixels).map(|p| packed[p / 8] >> (p % 8) & 1 == 1).collect());
    }
    expect_eof(r)?;
    Ok(set)
}

pub fn save_mask_set(masks: &MaskSet, path: impl AsRef<Path>) -> Result<(), ContainerError> {
    let mut w = create(path.as_ref())?;
    write_mask_set(masks, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_mask_set(path: impl AsRef<Path>) -> Result<MaskSet, ContainerError> {
    read_mask_set(&mut open(path.as_ref())?)
}

pub fn write_pca(basis: &PcaBasis, w: &mut impl Write) -> Result<(), ContainerError> {
    w.write_all(PCA_MAGIC)?;
    w.write_all(&(basis.dim as u32).to_le_bytes())?;
    w.write_all(&(basis.k as u32).to_le_bytes())?;
    write_f32s(w, &basis.mean)?;
    write_f32s(w, &basis.components)?;
    write_f32s(w, &basis.explained_variance)?;
    Ok(())
}

pub fn read_pca(r: &mut impl Read) -> Result<PcaBasis, ContainerError> {
    read_magic(r, PCA_MAGIC)?;
    let (dim, k) = (read_u32(r)?, read_u32(r)?);
    let n = checked_count(&[dim, k])?;
    let mean = read_f32s(r, dim as usize, "pca mean")?;
    let components = read_f32s(r, n, "pca components")?;
    let explained_variance = read_f32s(r, k as usize, "pca variances")?;
    expect_eof(r)?;
    Ok(PcaBasis { dim: dim as usize, k: k as usize, mean, components, explained_variance })
}

pub fn save_pca(basis: &PcaBasis, path: impl AsRef<Path>) -> Result<(), ContainerError> {
    let mut w = create(path.as_ref())?;
    write_pca(basis, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_pca(path: impl AsRef<Path>) -> Result<PcaBasis, ContainerError> {
    read_pca(&mut open(path.as_ref())?)
}

pub fn write_query(q: &QueryEmbedding, w: &mut impl Write) -> Result<(), ContainerError> {
    w.write_all(QUERY_MAGIC)?;
    w.write_all(&(q.vector.len() as u32).to_le_bytes())?;
    write_f32s(w, &q.vector)?;
    w.write_all(q.label.as_bytes())?;
    Ok(())
}

/// Reads a query; nonzero vectors are re-normalized on load.
pub fn read_query(r: &mut impl Read) -> Result<QueryEmbedding, ContainerError> {
    read_magic(r, QUERY_MAGIC)?;
    let dim = read_u32(r)?;
    checked_count(&[dim])?;
    let vector = read_f32s(r, dim as usize, "query vector")?;
    let mut label = Vec::new();
    r.read_to_end(&mut label)?;
    let label = String::from_utf8(label).map_err(|_| ContainerError::BadLabel)?;
    QueryEmbedding::new(vector, label).map_err(|e| ContainerError::Query(e.to_string()))
}

pub fn save_query(q: &QueryEmbedding, path: impl AsRef<Path>) -> Result<(), ContainerError> {
    let mut w = create(path.as_ref())?;
    write_query(q, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_query(path: impl AsRef<Path>) -> Result<QueryEmbedding, ContainerError> {
    read_query(&mut open(path.as_ref())?)
}
