//! Score-distillation editing of a retrieved object.
//!
//! Each step renders four views around the object, asks an image-editing
//! provider and a multi-view provider for noise residuals, blends them with
//! a schedule that hands weight from the multi-view term to the image term,
//! and backpropagates the blend into the Gaussians. Updates are scaled per
//! Gaussian by a gate derived from its relevance to the query, so Gaussians
//! with gate 0 come out bit-identical.

mod config;
mod delete;
mod densify;
mod run;
mod step;
mod views;

use thiserror::Error;

pub use config::{EditConfig, ViewMode};
pub use delete::{delete_object, hole_mask, Deletion, HOLE_ALPHA};
pub use densify::{densify_and_prune, densify_count, Densify, DensifyOutcome, SPLIT_SHRINK};
pub use run::{edit, run_edit, step_rng, EditObserver, EditOutcome, RunDirectory, StepLog, CSV_HEADER};
pub use step::{combine_residuals, csd_step, provider_config, render_views, OptimState, Providers, StepInput, StepReport};
pub use views::{dataset_views, select_views, OrbitFrame, RingMode, ViewRing, FULL_CIRCLE_COVERAGE, MAX_ELEVATION};

use crate::camera::CameraError;
use crate::guidance::GuidanceError;
use crate::ply::PlyError;
use crate::raster::RenderError;
use crate::retrieval::RetrievalError;
use crate::scene::SceneError;

#[derive(Debug, Error)]
pub enum EditError {
    #[error("config: {0}")]
    Config(String),
    #[error("query matched no Gaussians at tau = {tau}")]
    EmptyRetrieval { tau: f64 },
    #[error("no dataset cameras to place views around")]
    NoCameras,
    #[error("dataset mode needs at least 4 cameras, got {0}")]
    NotEnoughCameras(usize),
    #[error("object box is degenerate")]
    DegenerateObject,
    #[error("state sizes disagree: {gaussians} gaussians, gate {gate}, optimizer {optimizer}")]
    StateMismatch { gaussians: usize, gate: usize, optimizer: usize },
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing output: {0}")]
    Output(String),
}

/// `(λ1, λ2)` at training progress `e ∈ [0, 1]`. The multi-view weight
/// decays linearly to zero at `mv_zero_fraction`; the image weight absorbs
/// what it loses so the sum stays constant.
pub fn weight_schedule(e: f64, cfg: &EditConfig) -> (f64, f64) {
    let l2 = cfg.lambda_mv0 * (1.0 - e / cfg.mv_zero_fraction).max(0.0);
    (cfg.lambda_ip0 + (cfg.lambda_mv0 - l2), l2)
}

/// Update multiplier for relevance `s`: 0 up to `tau_low`, 1 from
/// `tau_high`, linear in between.
pub fn score_gate(s: f64, cfg: &EditConfig) -> f64 {
    let g = (s - cfg.tau_low) / (cfg.tau_high - cfg.tau_low);
    if g.is_nan() {
        return 0.0;
    }
    g.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = EditConfig::default();
        let (a, b) = weight_schedule(0.0, &cfg);
        assert_eq!(a, 2.0 * b);
        assert_eq!(weight_schedule(0.75, &cfg).1, 0.0);
        assert_eq!(weight_schedule(1.0, &cfg), (1.5, 0.0));
    }

    #[test]
    fn gate_ramp() {
        let cfg = EditConfig::default();
        assert_eq!(score_gate(0.1, &cfg), 0.0);
        assert_eq!(score_gate(0.9, &cfg), 1.0);
        assert!((score_gate(0.55, &cfg) - 0.5).abs() < 1e-12);
        assert_eq!(score_gate(f64::NAN, &cfg), 0.0);
    }
}
