//! JSON manifest pairing cameras with per-image feature files.
//!
//! ```json
//! {
//!   "cameras": [{"id": "0", "fx": 40, "fy": 40, "cx": 16, "cy": 16,
//!                "width": 32, "height": 32,
//!                "rotation": [[1,0,0],[0,1,0],[0,0,1]], "translation": [0,0,4]}],
//!   "images": [{"name": "frame_000", "camera_id": "0", "feature": "frame_000.tgrf"}]
//! }
//! ```
//!
//! Rotation and translation map world points to camera coordinates
//! (x right, y down, z forward). Feature paths are relative to the manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Camera, CameraError, Intrinsics};
use crate::container::{load_feature_map, ContainerError};
use crate::features::FeatureMap;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed manifest {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("camera `{0}` is not defined in the manifest")]
    UnknownCamera(String),
    #[error("camera `{0}` is defined twice")]
    DuplicateCamera(String),
    #[error("camera `{id}`: {source}")]
    Camera { id: String, source: CameraError },
    #[error("image `{name}`: {source}")]
    Container { name: String, source: ContainerError },
    #[error("image `{name}`: feature map is {got_w}x{got_h}, camera is {want_w}x{want_h}")]
    SizeMismatch { name: String, got_w: usize, got_h: usize, want_w: u32, want_h: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl CameraRecord {
    pub fn from_camera(id: impl Into<String>, cam: &Camera) -> Self {
        let r = &cam.rotation;
        CameraRecord {
            id: id.into(),
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [cam.translation.x, cam.translation.y, cam.translation.z],
        }
    }

    pub fn to_camera(&self) -> Result<Camera, DatasetError> {
        let intr = Intrinsics { fx: self.fx, fy: self.fy, cx: self.cx, cy: self.cy, width: self.width, height: self.height };
        let r = Matrix3::from_fn(|i, j| self.rotation[i][j]);
        let t = Vector3::from(self.translation);
        Camera::new(intr, r, t).map_err(|source| DatasetError::Camera { id: self.id.clone(), source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// File stem shared by the image's feature and mask containers.
    pub name: String,
    pub camera_id: String,
    pub feature: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub cameras: Vec<CameraRecord>,
    #[serde(default)]
    pub images: Vec<ImageRecord>,
}

impl DatasetManifest {
    /// Reads `manifest.json` from `dir` (or the file itself if `path` is one).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = manifest_path(path.as_ref());
        let text = fs::read_to_string(&path).map_err(|source| DatasetError::Io { path: path.clone(), source })?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|source| DatasetError::Json { path, source })?;
        m.check()?;
        Ok(m)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = dir.as_ref().join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|source| DatasetError::Io { path, source })
    }

    fn check(&self) -> Result<(), DatasetError> {
        let mut seen = BTreeSet::new();
        for c in &self.cameras {
            if !seen.insert(c.id.as_str()) {
                return Err(DatasetError::DuplicateCamera(c.id.clone()));
            }
            c.to_camera()?;
        }
        for img in &self.images {
            if !seen.contains(img.camera_id.as_str()) {
                return Err(DatasetError::UnknownCamera(img.camera_id.clone()));
            }
        }
        Ok(())
    }

    pub fn camera(&self, id: &str) -> Result<Camera, DatasetError> {
        self.cameras.iter().find(|c| c.id == id).ok_or_else(|| DatasetError::UnknownCamera(id.to_string()))?.to_camera()
    }

    pub fn cameras(&self) -> Result<Vec<Camera>, DatasetError> {
        self.cameras.iter().map(CameraRecord::to_camera).collect()
    }

    /// Loads every image's feature map paired with its camera.
    pub fn load_views(&self, dir: impl AsRef<Path>) -> Result<Vec<(Camera, FeatureMap)>, DatasetError> {
        let dir = manifest_dir(dir.as_ref());
        self.images
            .iter()
            .map(|img| {
                let cam = self.camera(&img.camera_id)?;
                let map = load_feature_map(dir.join(&img.feature), &img.camera_id)
                    .map_err(|source| DatasetError::Container { name: img.name.clone(), source })?;
                if map.width != cam.width as usize || map.height != cam.height as usize {
                    return Err(DatasetError::SizeMismatch {
                        name: img.name.clone(),
                        got_w: map.width,
                        got_h: map.height,
                        want_w: cam.width,
                        want_h: cam.height,
                    });
                }
                Ok((cam, map))
            })
            .collect()
    }
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_NAME)
    } else {
        p.to_path_buf()
    }
}

fn manifest_dir(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.to_path_buf()
    } else {
        p.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}
