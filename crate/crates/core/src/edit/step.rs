//! One score-distillation update.

use std::collections::BTreeMap;

use super::{EditConfig, EditError, ViewRing};
use crate::guidance::{GuidanceProvider, GuidanceRequest, Image, DESCRIPTION_KEY, SIGMA_SCALE_KEY, VIEW_COUNT};
use crate::optim::Adam;
use crate::raster::{render, render_backward, Channels, SceneGradients, Upstream};
use crate::scene::GaussianScene;

/// The image-editing provider and the optional multi-view provider.
#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub image: &'a dyn GuidanceProvider,
    pub multi_view: Option<&'a dyn GuidanceProvider>,
}

/// Adam moments for every optimized parameter class. Language embeddings
/// are never edited.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub positions: Adam,
    pub scales: Adam,
    pub rotations: Adam,
    pub colors: Adam,
    pub opacity_logits: Adam,
    /// Completed steps.
    pub step: u64,
}

const ADAM_EPS: f64 = 1e-15;

impl OptimState {
    pub fn new(n: usize) -> Self {
        OptimState {
            positions: Adam::new(n, 3, ADAM_EPS),
            scales: Adam::new(n, 3, ADAM_EPS),
            rotations: Adam::new(n, 4, ADAM_EPS),
            colors: Adam::new(n, 3, ADAM_EPS),
            opacity_logits: Adam::new(n, 1, ADAM_EPS),
            step: 0,
        }
    }

    pub fn remap(&mut self, source: &[Option<usize>]) {
        for a in [&mut self.positions, &mut self.scales, &mut self.rotations, &mut self.colors, &mut self.opacity_logits] {
            a.remap(source);
        }
    }
}

pub struct StepInput<'a> {
    pub ring: &'a ViewRing,
    /// Pre-edit renders of the ring views.
    pub originals: &'a [Image],
    /// Per-Gaussian update multipliers in `[0, 1]`.
    pub gate: &'a [f64],
    pub lambda: (f64, f64),
    pub t: f32,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    /// Per-Gaussian norm of the position gradient, before gating.
    pub grad_norms: Vec<f64>,
    /// Norms of the image and multi-view residuals (0 when not requested).
    pub residual_norms: (f64, f64),
    /// The renders the residuals were computed against.
    pub renders: Vec<Image>,
}

/// Renders the ring views of `scene` as guidance images.
pub fn render_views(scene: &GaussianScene, ring: &ViewRing) -> Vec<Image> {
    ring.cameras.iter().map(|c| Image::from_render(&render(scene, c, Channels::COLOR))).collect()
}

/// Backend settings sent with every request.
pub fn provider_config(cfg: &EditConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("image_guidance".to_string(), cfg.image_guidance.to_string());
    m.insert("text_guidance".to_string(), cfg.text_guidance.to_string());
    m.insert(SIGMA_SCALE_KEY.to_string(), cfg.sigma_scale.to_string());
    if !cfg.description.is_empty() {
        m.insert(DESCRIPTION_KEY.to_string(), cfg.description.clone());
    }
    m
}

/// `λ1 · r_ip + λ2 · r_mv` per value in f32, dropping zero-weight terms.
pub fn combine_residuals(lambda: (f64, f64), ip: Option<&Image>, mv: Option<&Image>, shape: (usize, usize)) -> Image {
    let (l1, l2) = (lambda.0 as f32, lambda.1 as f32);
    let mut out = Image::zeros(shape.0, shape.1);
    match (ip.filter(|_| l1 != 0.0), mv.filter(|_| l2 != 0.0)) {
        (Some(a), Some(b)) => {
            for ((o, x), y) in out.data.iter_mut().zip(&a.data).zip(&b.data) {
                *o = l1 * x + l2 * y;
            }
        }
        (Some(a), None) => out.data.iter_mut().zip(&a.data).for_each(|(o, x)| *o = l1 * x),
        (None, Some(b)) => out.data.iter_mut().zip(&b.data).for_each(|(o, y)| *o = l2 * y),
        (None, None) => {}
    }
    out
}

fn rate(cfg: &EditConfig) -> [f64; 5] {
    [cfg.lr_position, cfg.lr_scale, cfg.lr_rotation, cfg.lr_color, cfg.lr_opacity]
}

/// Renders the ring, asks the providers for residuals, backpropagates the
/// combined residual and applies one gated Adam update. Provider failures
/// return before anything is modified.
pub fn csd_step(
    scene: &mut GaussianScene,
    state: &mut OptimState,
    providers: Providers<'_>,
    input: &StepInput<'_>,
    cfg: &EditConfig,
) -> Result<StepReport, EditError> {
    let n = scene.len();
    if input.gate.len() != n || state.positions.len() != n {
        return Err(EditError::StateMismatch { gaussians: n, gate: input.gate.len(), optimizer: state.positions.len() });
    }
    if input.ring.cameras.len() != VIEW_COUNT || input.originals.len() != VIEW_COUNT {
        return Err(EditError::Config(format!("a step needs exactly {VIEW_COUNT} views")));
    }
    let renders = render_views(scene, input.ring);
    let request = GuidanceRequest {
        rendered_views: renders.clone(),
        original_views: input.originals.to_vec(),
        poses: input.ring.cameras.iter().map(|c| c.pose_f32()).collect(),
        t: input.t,
        seed: input.seed,
        prompt: cfg.prompt.clone(),
        config: provider_config(cfg),
    };
    let (l1, l2) = input.lambda;
    let ip = if l1 != 0.0 { Some(providers.image.guide(&request)?) } else { None };
    let mv = match providers.multi_view {
        Some(p) if l2 != 0.0 => Some(p.guide(&request)?),
        _ => None,
    };
    for resp in ip.iter().chain(&mv) {
        resp.validate_for(&request)?;
    }
    let norm = |r: &Option<crate::guidance::GuidanceResponse>| {
        r.as_ref().map_or(0.0, |r| r.residuals.iter().map(|i| i.norm().powi(2)).sum::<f64>().sqrt())
    };
    let residual_norms = (norm(&ip), norm(&mv));

    let mut grads = SceneGradients::zeros(n);
    for (v, cam) in input.ring.cameras.iter().enumerate() {
        let x = &renders[v];
        let combined = combine_residuals(
            input.lambda,
            ip.as_ref().map(|r| &r.residuals[v]),
            mv.as_ref().map(|r| &r.residuals[v]),
            (x.height, x.width),
        );
        // Expectation over the four views.
        let upstream: Vec<f64> = combined.to_interleaved().into_iter().map(|g| g / VIEW_COUNT as f64).collect();
        grads.accumulate(&render_backward(scene, cam, Channels::COLOR, &Upstream::color(upstream))?);
    }
    let grad_norms = grads.positions.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();

    state.step += 1;
    let t = state.step;
    let gate = Some(input.gate);
    let [lr_p, lr_s, lr_r, lr_c, lr_o] = rate(cfg);
    let before_rot = scene.rotations.clone();
    state.positions.step(scene.positions.as_flattened_mut(), grads.positions.as_flattened(), lr_p, t, gate);
    state.scales.step(scene.scales.as_flattened_mut(), grads.scales.as_flattened(), lr_s, t, gate);
    state.rotations.step(scene.rotations.as_flattened_mut(), grads.rotations.as_flattened(), lr_r, t, gate);
    state.colors.step(scene.colors.as_flattened_mut(), grads.colors.as_flattened(), lr_c, t, gate);
    state.opacity_logits.step(&mut scene.opacity_logits, &grads.opacity_logits, lr_o, t, gate);
    for i in 0..n {
        if scene.rotations[i] != before_rot[i] {
            scene.renormalize_rotation(i);
        }
        for c in &mut scene.colors[i] {
            *c = c.clamp(0.0, 1.0);
        }
    }
    Ok(StepReport { grad_norms, residual_norms, renders })
}
