//! Fits per-Gaussian language embeddings to rendered feature supervision
//! while every other attribute stays fixed.

use log::debug;
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::Camera;
use crate::features::FeatureMap;
use crate::optim::{exp_decay, Adam};
use crate::raster::{render, render_backward, Channels, Upstream};
use crate::scene::GaussianScene;
use crate::LANG_DIM;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("no training views")]
    NoViews,
    #[error("view {view}: feature map has {got} channels, expected {expected}")]
    DimMismatch { view: usize, expected: usize, got: usize },
    #[error("view {view}: feature map is {map_w}x{map_h}, camera is {cam_w}x{cam_h}")]
    SizeMismatch { view: usize, map_w: usize, map_h: usize, cam_w: u32, cam_h: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Passes over the view list; one optimizer step per view.
    pub epochs: usize,
    /// Learning rate at the first step.
    pub lr: f64,
    /// Learning rate at the last step (exponential decay in between).
    pub lr_final: f64,
    pub l1_weight: f64,
    pub cosine_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, lr: 2.5e-3, lr_final: 2.5e-5, l1_weight: 1.0, cosine_weight: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean view loss per epoch, measured before each view's step.
    pub epoch_losses: Vec<f64>,
    /// Loss of the returned embeddings, averaged over all views.
    pub final_loss: f64,
}

/// Per-pixel loss `l1 · mean_c |f − t| + cos · (1 − cos(f, t))`, averaged
/// over pixels, and its gradient w.r.t. the rendered features. The cosine
/// term contributes neither loss nor gradient where either vector is zero.
pub fn feature_loss(rendered: &[f64], target: &[f32], config: &TrainConfig) -> (f64, Vec<f64>) {
    let pixels = rendered.len() / LANG_DIM;
    let scale = 1.0 / pixels as f64;
    let per_pixel: Vec<(f64, [f64; LANG_DIM])> = rendered
        .par_chunks(LANG_DIM)
        .zip(target.par_chunks(LANG_DIM))
        .map(|(f, t)| {
            let mut g = [0.0f64; LANG_DIM];
            let mut loss = 0.0;
            let l1 = config.l1_weight / LANG_DIM as f64;
            let (mut dot, mut nf, mut nt) = (0.0, 0.0, 0.0);
            for c in 0..LANG_DIM {
                let d = f[c] - t[c] as f64;
                loss += l1 * d.abs();
                g[c] = l1
                    * if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                dot += f[c] * t[c] as f64;
                nf += f[c] * f[c];
                nt += t[c] as f64 * t[c] as f64;
            }
            if nf > 0.0 && nt > 0.0 {
                let (lf, lt) = (nf.sqrt(), nt.sqrt());
                let cos = dot / (lf * lt);
                loss += config.cosine_weight * (1.0 - cos);
                for c in 0..LANG_DIM {
                    let d_cos = t[c] as f64 / (lf * lt) - cos * f[c] / nf;
                    g[c] -= config.cosine_weight * d_cos;
                }
            }
            (loss * scale, g.map(|v| v * scale))
        })
        .collect();
    let loss = per_pixel.iter().map(|p| p.0).sum();
    let grad = per_pixel.iter().flat_map(|p| p.1).collect();
    (loss, grad)
}

fn check_views(views: &[(Camera, FeatureMap)]) -> Result<(), TrainError> {
    if views.is_empty() {
        return Err(TrainError::NoViews);
    }
    for (view, (cam, map)) in views.iter().enumerate() {
        if map.dim != LANG_DIM {
            return Err(TrainError::DimMismatch { view, expected: LANG_DIM, got: map.dim });
        }
        if map.width != cam.width as usize || map.height != cam.height as usize {
            return Err(TrainError::SizeMismatch { view, map_w: map.width, map_h: map.height, cam_w: cam.width, cam_h: cam.height });
        }
    }
    Ok(())
}

/// Mean loss of the scene's current embeddings over all views.
pub fn evaluate_feature_loss(scene: &GaussianScene, views: &[(Camera, FeatureMap)], config: &TrainConfig) -> f64 {
    let total: f64 = views
        .iter()
        .map(|(cam, map)| {
            let out = render(scene, cam, Channels::FEATURE);
            feature_loss(out.feature.as_deref().unwrap_or_default(), &map.data, config).0
        })
        .sum();
    total / views.len() as f64
}

/// Optimizes only the `lang` attribute; everything else is copied through
/// unchanged.
pub fn train_language_embeddings(
    scene: &GaussianScene,
    views: &[(Camera, FeatureMap)],
    config: &TrainConfig,
) -> Result<(GaussianScene, TrainReport), TrainError> {
    check_views(views)?;
    let mut out = scene.clone();
    let n = scene.len();
    let mut adam = Adam::new(n, LANG_DIM, 1e-15);
    let steps = config.epochs * views.len();
    let mut params: Vec<f32> = out.lang.iter().flatten().copied().collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for (cam, map) in views {
            let rendered = render(&out, cam, Channels::FEATURE);
            let (loss, grad) = feature_loss(rendered.feature.as_deref().unwrap_or_default(), &map.data, config);
            epoch_loss += loss;
            let grads = render_backward(&out, cam, Channels::FEATURE, &Upstream::feature(grad)).expect("gradient shape matches render");
            let flat: Vec<f64> = grads.lang.iter().flatten().copied().collect();
            let lr = exp_decay(config.lr, config.lr_final, step, steps);
            step += 1;
            adam.step(&mut params, &flat, lr, step as u64, None);
            for (dst, src) in out.lang.iter_mut().zip(params.chunks_exact(LANG_DIM)) {
                dst.copy_from_slice(src);
            }
        }
        let mean = epoch_loss / views.len() as f64;
        debug!("epoch {epoch}: loss {mean:.6e}");
        epoch_losses.push(mean);
    }
    let final_loss = evaluate_feature_loss(&out, views, config);
    Ok((out, TrainReport { epoch_losses, final_loss }))
}
