//! Append-only JSON-lines record of every run.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const RUN_LOG_NAME: &str = "runs.jsonl";

#[derive(Debug, Clone, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub started_unix: u64,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Collects what a command read, wrote and resolved while it runs.
pub struct Run {
    pub manifest: RunManifest,
    /// Where the manifest is appended; commands may fill this in from
    /// their output location.
    pub log_path: Option<PathBuf>,
    started: Instant,
    input_paths: Vec<PathBuf>,
}

impl Run {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Run {
            manifest: RunManifest {
                command: command.to_string(),
                args,
                version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix,
                seed: 0,
                config: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                timings_ms: BTreeMap::new(),
                exit_code: 0,
                error: None,
            },
            log_path: None,
            started: Instant::now(),
            input_paths: Vec::new(),
        }
    }

    pub fn input(&mut self, path: impl AsRef<Path>) {
        self.input_paths.push(path.as_ref().to_path_buf());
    }

    pub fn output(&mut self, path: impl AsRef<Path>) {
        self.manifest.outputs.push(path.as_ref().display().to_string());
    }

    pub fn config(&mut self, key: &str, value: impl ToString) {
        self.manifest.config.insert(key.to_string(), value.to_string());
    }

    /// Runs `f` and records its wall time under `label`.
    pub fn timed<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.manifest.timings_ms.insert(label.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }

    /// Default log location: `runs.jsonl` inside `dir`, unless already set.
    pub fn log_into(&mut self, dir: impl AsRef<Path>) {
        if self.log_path.is_none() {
            self.log_path = Some(dir.as_ref().join(RUN_LOG_NAME));
        }
    }

    /// Hashes the inputs and appends one line to the log.
    pub fn finish(mut self, exit_code: i32, error: Option<String>) -> io::Result<()> {
        self.manifest.timings_ms.insert("total".into(), self.started.elapsed().as_secs_f64() * 1e3);
        self.manifest.exit_code = exit_code;
        self.manifest.error = error;
        for p in std::mem::take(&mut self.input_paths) {
            self.manifest.inputs.extend(hash_path(&p));
        }
        let path = self.log_path.clone().unwrap_or_else(|| PathBuf::from(RUN_LOG_NAME));
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let line = serde_json::to_string(&self.manifest).expect("manifest serializes");
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(f, "{line}")
    }
}

fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// One entry per regular file under `path`, in sorted order. Unreadable
/// paths are recorded with an empty hash rather than failing the run.
fn hash_path(path: &Path) -> Vec<InputHash> {
    let mut files = Vec::new();
    collect_files(path, &mut files);
    files.sort();
    files.into_iter().map(|p| InputHash { sha256: sha256_file(&p).unwrap_or_default(), path: p.display().to_string() }).collect()
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) {
    if path.is_dir() {
        if let Ok(entries) = fs::read_dir(path) {
            for e in entries.flatten() {
                collect_files(&e.path(), out);
            }
        }
    } else {
        out.push(path.to_path_buf());
    }
}
