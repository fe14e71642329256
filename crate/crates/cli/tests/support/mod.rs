//! Runs the `lesplat` binary and writes small input datasets for it.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lesplat_core::container::save_query;
use lesplat_core::dataset::{CameraRecord, DatasetManifest};
use lesplat_core::ply::save_scene;
use lesplat_core::retrieval::QueryEmbedding;
use lesplat_core::{Camera, GaussianScene};

pub struct Cli {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Cli {
    /// Value of the first `key: value` line on stdout.
    pub fn field(&self, key: &str) -> Option<&str> {
        self.stdout.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix(": "))
    }
}

impl std::fmt::Display for Cli {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit {}\n--- stdout\n{}--- stderr\n{}", self.code, self.stdout, self.stderr)
    }
}

/// Runs the binary in `cwd` so stray run logs land in a scratch directory.
pub fn lesplat(cwd: &Path, args: &[&str]) -> Cli {
    let Output { status, stdout, stderr } =
        Command::new(env!("CARGO_BIN_EXE_lesplat")).args(args).current_dir(cwd).output().expect("spawn lesplat");
    Cli {
        code: status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
    }
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Camera-only dataset manifest with ids `cam0`, `cam1`, ...
pub fn write_cameras(dir: &Path, cameras: &[Camera]) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let manifest = DatasetManifest {
        cameras: cameras.iter().enumerate().map(|(k, c)| CameraRecord::from_camera(format!("cam{k}"), c)).collect(),
        images: Vec::new(),
    };
    manifest.save(dir).unwrap();
    dir.to_path_buf()
}

pub fn write_scene(path: &Path, scene: &GaussianScene) -> PathBuf {
    save_scene(scene, path).unwrap();
    path.to_path_buf()
}

pub fn write_query(path: &Path, q: &QueryEmbedding) -> PathBuf {
    save_query(q, path).unwrap();
    path.to_path_buf()
}
