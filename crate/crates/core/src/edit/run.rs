//! The edit loop and its run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    csd_step, dataset_views, densify_and_prune, render_views, score_gate, select_views, weight_schedule, EditConfig, EditError, OptimState,
    Providers, StepInput, ViewMode,
};
use crate::camera::Camera;
use crate::guidance::{view_seed, Image};
use crate::retrieval::{relevance_scores, QueryEmbedding};
use crate::scene::{object_box, GaussianScene};

pub const CSV_HEADER: &str = "step,lambda1,lambda2,t,residual_ip_norm,residual_mv_norm,gaussians";

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    /// 1-based step number.
    pub step: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub t: f32,
    pub residual_ip_norm: f64,
    pub residual_mv_norm: f64,
    pub gaussians: usize,
}

impl StepLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.lambda1, self.lambda2, self.t, self.residual_ip_norm, self.residual_mv_norm, self.gaussians
        )
    }
}

/// Hook called after every step.
pub trait EditObserver {
    fn on_step(&mut self, _scene: &GaussianScene, _log: &StepLog, _renders: &[Image]) -> Result<(), EditError> {
        Ok(())
    }
}

impl EditObserver for () {}

#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub scene: GaussianScene,
    /// For each output Gaussian, the input Gaussian it continues, or `None`
    /// for Gaussians created by densification.
    pub origin: Vec<Option<usize>>,
    /// Gate of each output Gaussian.
    pub gate: Vec<f64>,
    /// Gaussians retrieved at `tau`.
    pub members: usize,
    pub log: Vec<StepLog>,
}

/// Generator for step `step`, derived from the master seed.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(view_seed(seed, step))
}

/// Retrieves the object, then runs `cfg.steps` score-distillation steps.
/// Conditioning renders always come from the unedited input scene.
pub fn edit(
    scene: &GaussianScene,
    query: &QueryEmbedding,
    cfg: &EditConfig,
    cameras: &[Camera],
    providers: Providers<'_>,
    observer: &mut dyn EditObserver,
) -> Result<EditOutcome, EditError> {
    cfg.validate()?;
    scene.validate()?;
    let scores = relevance_scores(scene, query)?;
    let members: Vec<usize> = (0..scene.len()).filter(|&i| scores[i] > cfg.tau).collect();
    if members.is_empty() {
        return Err(EditError::EmptyRetrieval { tau: cfg.tau });
    }
    let object = object_box(scene, &members)?;
    info!("editing {} retrieved gaussians around {:?}", members.len(), object.center);

    let snapshot = scene;
    let mut current = scene.clone();
    let mut gate: Vec<f64> = scores.iter().map(|&s| score_gate(s, cfg)).collect();
    let mut origin: Vec<Option<usize>> = (0..scene.len()).map(Some).collect();
    let mut state = OptimState::new(scene.len());
    let mut grad_sum = vec![0.0; scene.len()];
    let mut grad_count = vec![0u32; scene.len()];
    let mut log = Vec::with_capacity(cfg.steps);

    for s in 0..cfg.steps {
        let mut rng = step_rng(cfg.seed, s);
        let ring = match cfg.views {
            ViewMode::Ring => select_views(&object, cameras, &mut rng)?,
            ViewMode::Dataset => dataset_views(&object, cameras, &mut rng)?,
        };
        let originals = render_views(snapshot, &ring);
        let t = rng.random_range(cfg.t_min..=cfg.t_max);
        let seed = rng.random::<u64>();
        let lambda = weight_schedule(s as f64 / cfg.steps as f64, cfg);
        let input = StepInput { ring: &ring, originals: &originals, gate: &gate, lambda, t, seed };
        let report = csd_step(&mut current, &mut state, providers, &input, cfg)?;
        for (i, g) in report.grad_norms.iter().enumerate() {
            grad_sum[i] += g;
            grad_count[i] += 1;
        }

        let done = s + 1;
        if cfg.densify_interval > 0 && done % cfg.densify_interval == 0 && done < cfg.steps {
            let mean: Vec<f64> = grad_sum.iter().zip(&grad_count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
            let out = densify_and_prune(&current, &mean, &gate, cfg.densify_fraction, cfg.prune_opacity, &mut rng);
            debug!("step {done}: densified {}, pruned {}, {} gaussians", out.densified.len(), out.pruned.len(), out.scene.len());
            state.remap(&out.source);
            gate = out.parent.iter().map(|&p| gate[p]).collect();
            origin = out.source.iter().map(|src| src.and_then(|k| origin[k])).collect();
            grad_sum = vec![0.0; out.scene.len()];
            grad_count = vec![0; out.scene.len()];
            current = out.scene;
        }

        let entry = StepLog {
            step: done,
            lambda1: lambda.0,
            lambda2: lambda.1,
            t,
            residual_ip_norm: report.residual_norms.0,
            residual_mv_norm: report.residual_norms.1,
            gaussians: current.len(),
        };
        observer.on_step(&current, &entry, &report.renders)?;
        log.push(entry);
    }
    Ok(EditOutcome { scene: current, origin, gate, members: members.len(), log })
}

/// Writes the resolved config, periodic checkpoints and previews, and the
/// step log into one directory.
pub struct RunDirectory {
    pub root: PathBuf,
    checkpoint_interval: usize,
    csv: String,
}

impl RunDirectory {
    pub fn create(root: impl AsRef<Path>, cfg: &EditConfig) -> Result<Self, EditError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("checkpoints"))?;
        fs::create_dir_all(root.join("previews"))?;
        fs::write(root.join("config.cfg"), cfg.to_text())?;
        Ok(RunDirectory { root, checkpoint_interval: cfg.checkpoint_interval, csv: format!("{CSV_HEADER}\n") })
    }

    pub fn csv_path(&self) -> PathBuf {
        self.root.join("log.csv")
    }

    pub fn scene_path(&self) -> PathBuf {
        self.root.join("scene.ply")
    }

    fn flush_csv(&self) -> Result<(), EditError> {
        fs::write(self.csv_path(), &self.csv)?;
        Ok(())
    }

    pub fn finish(&self, scene: &GaussianScene) -> Result<(), EditError> {
        self.flush_csv()?;
        crate::ply::save_scene(scene, self.scene_path())?;
        Ok(())
    }
}

fn save_png(path: &Path, img: &Image) -> Result<(), EditError> {
    image::save_buffer(path, &img.to_rgb8(), img.width as u32, img.height as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| EditError::Output(format!("{}: {e}", path.display())))
}

impl EditObserver for RunDirectory {
    fn on_step(&mut self, scene: &GaussianScene, log: &StepLog, renders: &[Image]) -> Result<(), EditError> {
        let _ = writeln!(self.csv, "{}", log.csv_row());
        if self.checkpoint_interval > 0 && log.step.is_multiple_of(self.checkpoint_interval) {
            let tag = format!("step_{:06}", log.step);
            crate::ply::save_scene(scene, self.root.join("checkpoints").join(format!("{tag}.ply")))?;
            for (v, img) in renders.iter().enumerate() {
                save_png(&self.root.join("previews").join(format!("{tag}_view{v}.png")), img)?;
            }
            self.flush_csv()?;
        }
        Ok(())
    }
}

/// [`edit`] with all outputs written under `out_dir`.
pub fn run_edit(
    scene: &GaussianScene,
    query: &QueryEmbedding,
    cfg: &EditConfig,
    cameras: &[Camera],
    providers: Providers<'_>,
    out_dir: impl AsRef<Path>,
) -> Result<EditOutcome, EditError> {
    let mut dir = RunDirectory::create(out_dir, cfg)?;
    let outcome = edit(scene, query, cfg, cameras, providers, &mut dir)?;
    dir.finish(&outcome.scene)?;
    Ok(outcome)
}
