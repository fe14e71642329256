//! Tile-based differentiable splatting.
//!
//! Every pixel blends the depth-sorted Gaussians whose 3σ ellipse contains the
//! pixel center:
//!
//! ```text
//! w_i = α_i · Π_{j<i} (1 − α_j),     out = Σ_i w_i · payload_i
//! α_i = min(0.999, o_i · exp(−½ dᵀ Σ₂⁻¹ d))
//! ```
//!
//! The payload is the RGB color, the 64-dim language embedding, or both; all
//! selected channels share one weight computation per pixel. The 2D
//! covariance is dilated by 0.3 px² on the diagonal (anti-aliasing floor).
//! Blending stops once transmittance falls below 1e-5, so the skipped tail
//! contributes less than 1e-5 times the largest payload magnitude.

mod backward;
mod forward;
mod project;
mod reference;

use thiserror::Error;

pub use backward::render_backward;
pub use forward::render;
pub use project::{project, ProjectedGaussian};
pub use reference::{render_reference, REFERENCE_MAX_GAUSSIANS};

use crate::LANG_DIM;

pub const TILE_SIZE: usize = 16;
/// Added to the diagonal of every projected covariance, in px².
pub const COV2D_DILATION: f64 = 0.3;
pub const NEAR_PLANE: f64 = 0.01;
/// Squared Mahalanobis radius of the support ellipse (3σ).
pub const CUTOFF_POWER: f64 = 9.0;
pub const ALPHA_MAX: f64 = 0.999;
pub const MIN_TRANSMITTANCE: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("upstream `{plane}` has {got} values, expected {expected}")]
    ShapeMismatch { plane: &'static str, expected: usize, got: usize },
    #[error("reference renderer is limited to {max} gaussians (got {got})")]
    OracleScale { got: usize, max: usize },
}

/// Which payload planes to render.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Channels {
    pub color: bool,
    pub feature: bool,
}

impl Channels {
    pub const COLOR: Channels = Channels { color: true, feature: false };
    pub const FEATURE: Channels = Channels { color: false, feature: true };
    pub const ALL: Channels = Channels { color: true, feature: true };
}

/// Rendered planes, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// `H × W × 3`.
    pub color: Option<Vec<f64>>,
    /// `H × W × 64`.
    pub feature: Option<Vec<f64>>,
    /// Accumulated opacity `Σ w_i`.
    pub alpha: Vec<f64>,
    /// Weighted depth `Σ w_i z_i`.
    pub depth: Vec<f64>,
}

impl RenderOutput {
    pub(crate) fn empty(width: usize, height: usize, channels: Channels) -> Self {
        let n = width * height;
        RenderOutput {
            width,
            height,
            color: channels.color.then(|| vec![0.0; n * 3]),
            feature: channels.feature.then(|| vec![0.0; n * LANG_DIM]),
            alpha: vec![0.0; n],
            depth: vec![0.0; n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn color_at(&self, x: usize, y: usize) -> Option<[f64; 3]> {
        let c = self.color.as_ref()?;
        let i = (y * self.width + x) * 3;
        Some([c[i], c[i + 1], c[i + 2]])
    }

    pub fn feature_at(&self, x: usize, y: usize) -> Option<&[f64]> {
        let f = self.feature.as_ref()?;
        let i = (y * self.width + x) * LANG_DIM;
        Some(&f[i..i + LANG_DIM])
    }

    pub fn alpha_at(&self, x: usize, y: usize) -> f64 {
        self.alpha[y * self.width + x]
    }

    /// 8-bit RGB preview (values clamped to `[0, 1]`).
    pub fn to_rgb8(&self) -> Option<Vec<u8>> {
        let c = self.color.as_ref()?;
        Some(c.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect())
    }
}

/// Gradients of a scalar loss w.r.t. the rendered planes. Absent planes are
/// treated as zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Upstream {
    pub color: Option<Vec<f64>>,
    pub feature: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    pub depth: Option<Vec<f64>>,
}

impl Upstream {
    pub fn color(color: Vec<f64>) -> Self {
        Upstream { color: Some(color), ..Default::default() }
    }

    pub fn feature(feature: Vec<f64>) -> Self {
        Upstream { feature: Some(feature), ..Default::default() }
    }

    pub(crate) fn check(&self, pixels: usize) -> Result<(), RenderError> {
        let planes: [(&'static str, &Option<Vec<f64>>, usize); 4] =
            [("color", &self.color, 3), ("feature", &self.feature, LANG_DIM), ("alpha", &self.alpha, 1), ("depth", &self.depth, 1)];
        for (plane, v, c) in planes {
            if let Some(v) = v {
                if v.len() != pixels * c {
                    return Err(RenderError::ShapeMismatch { plane, expected: pixels * c, got: v.len() });
                }
            }
        }
        Ok(())
    }
}

/// Per-Gaussian gradients, laid out like [`crate::GaussianScene`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGradients {
    pub positions: Vec<[f64; 3]>,
    pub scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
    pub lang: Vec<[f64; LANG_DIM]>,
}

impl SceneGradients {
    pub fn zeros(n: usize) -> Self {
        SceneGradients {
            positions: vec![[0.0; 3]; n],
            scales: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            opacity_logits: vec![0.0; n],
            colors: vec![[0.0; 3]; n],
            lang: vec![[0.0; LANG_DIM]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Adds `other` element-wise.
    pub fn accumulate(&mut self, other: &SceneGradients) {
        fn add<const N: usize>(a: &mut [[f64; N]], b: &[[f64; N]]) {
            for (x, y) in a.iter_mut().zip(b) {
                for k in 0..N {
                    x[k] += y[k];
                }
            }
        }
        add(&mut self.positions, &other.positions);
        add(&mut self.scales, &other.scales);
        add(&mut self.rotations, &other.rotations);
        add(&mut self.colors, &other.colors);
        add(&mut self.lang, &other.lang);
        for (x, y) in self.opacity_logits.iter_mut().zip(&other.opacity_logits) {
            *x += y;
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.positions.iter().flatten().all(|v| *v == 0.0)
            && self.scales.iter().flatten().all(|v| *v == 0.0)
            && self.rotations.iter().flatten().all(|v| *v == 0.0)
            && self.colors.iter().flatten().all(|v| *v == 0.0)
            && self.lang.iter().flatten().all(|v| *v == 0.0)
            && self.opacity_logits.iter().all(|v| *v == 0.0)
    }
}

/// Evaluated influence of one Gaussian at one pixel center.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Sample {
    pub dx: f64,
    pub dy: f64,
    /// `o · exp(−power/2)` before the clamp.
    pub raw_alpha: f64,
    pub alpha: f64,
}

#[inline]
pub(crate) fn sample(g: &ProjectedGaussian, px: f64, py: f64) -> Option<Sample> {
    let dx = px - g.mean2d[0];
    let dy = py - g.mean2d[1];
    let [a, b, c] = g.conic;
    let power = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    if !(power <= CUTOFF_POWER) {
        return None;
    }
    let raw_alpha = g.opacity * (-0.5 * power).exp();
    Some(Sample { dx, dy, raw_alpha, alpha: raw_alpha.min(ALPHA_MAX) })
}
