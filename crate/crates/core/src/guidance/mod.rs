//! Guidance providers: anything that turns four rendered views into
//! per-pixel image-space gradients (noise residuals).
//!
//! A provider sees the current renders `x_i`, the pre-edit renders used as
//! conditioning, the four camera poses, a noise level `t` and a seed, and
//! returns `ω(t) · (ε_model − ε)` per view. Built-in providers use `ω ≡ 1`
//! and the noise schedule `σ_t = sigma_scale · t` (`sigma_scale` defaults
//! to 1 and can be set through the request config).

mod image;
mod providers;
pub mod remote;
pub mod wire;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub use image::Image;
pub use providers::photometric_residual;
pub use providers::{FileTargetProvider, NullProvider, PhotometricProvider, TargetSource};
pub use remote::{serve_connection, spawn_echo_server, spawn_server, RemoteConfig, RemoteProvider, ServeOptions, ServerHandle};

pub const VIEW_COUNT: usize = 4;
pub const T_MIN: f32 = 0.02;
pub const T_MAX: f32 = 0.2;
/// Config key carrying the optional scene description for multi-view
/// backends.
pub const DESCRIPTION_KEY: &str = "description";
pub const SIGMA_SCALE_KEY: &str = "sigma_scale";

/// What a backend can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capability {
    /// Four independent single-image residuals.
    SingleView,
    /// One joint residual over all four views.
    MultiView,
}

impl Capability {
    pub fn bit(self) -> u32 {
        match self {
            Capability::SingleView => 1,
            Capability::MultiView => 2,
        }
    }
}

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("noise level {0} outside [{T_MIN}, {T_MAX}]")]
    NoiseLevel(f32),
    #[error("transport error: {0}")]
    Transport(#[from] std::io::Error),
    #[error("protocol version mismatch: client speaks {client}, server speaks {server}")]
    VersionMismatch { client: u16, server: u16 },
    /// `offered` is `None` when the server refused without listing its own.
    #[error("capability mismatch: need {needed:?}{}", offered_note(.offered))]
    CapabilityMismatch { needed: Capability, offered: Option<u32> },
    #[error("image {height}x{width} exceeds the negotiated maximum {max_h}x{max_w}")]
    Oversized { height: usize, width: usize, max_h: usize, max_w: usize },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("remote error {code}: {message}")]
    Remote { code: u16, message: String },
    #[error("no target image for view {0}")]
    MissingTarget(usize),
    #[error("provider failed: {0}")]
    Failed(String),
}

fn offered_note(offered: &Option<u32>) -> String {
    match offered {
        Some(bits) => format!(", server offers bits {bits:#x}"),
        None => ", refused by the server".to_string(),
    }
}

impl GuidanceError {
    /// Whether the failure came from an external service or transport.
    pub fn is_external(&self) -> bool {
        matches!(
            self,
            GuidanceError::Transport(_)
                | GuidanceError::VersionMismatch { .. }
                | GuidanceError::CapabilityMismatch { .. }
                | GuidanceError::Remote { .. }
                | GuidanceError::Malformed(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRequest {
    /// Current renders `x_i`, one per view.
    pub rendered_views: Vec<Image>,
    /// Pre-edit renders of the same views (conditioning images).
    pub original_views: Vec<Image>,
    /// World-to-camera `[R | t]`, row-major.
    pub poses: Vec<[f32; 12]>,
    pub t: f32,
    pub seed: u64,
    pub prompt: String,
    /// Opaque backend settings (guidance weights, description, schedule).
    pub config: BTreeMap<String, String>,
}

impl GuidanceRequest {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        let bad = |m: String| Err(GuidanceError::InvalidRequest(m));
        if self.rendered_views.len() != VIEW_COUNT || self.original_views.len() != VIEW_COUNT || self.poses.len() != VIEW_COUNT {
            return bad(format!(
                "expected {VIEW_COUNT} views, got {} rendered, {} original, {} poses",
                self.rendered_views.len(),
                self.original_views.len(),
                self.poses.len()
            ));
        }
        check_t(self.t)?;
        for (i, (r, o)) in self.rendered_views.iter().zip(&self.original_views).enumerate() {
            if (r.height, r.width) != (o.height, o.width) {
                return bad(format!("view {i}: rendered and original sizes differ"));
            }
            if !r.is_finite() || !o.is_finite() {
                return bad(format!("view {i}: non-finite pixels"));
            }
        }
        Ok(())
    }

    /// Noise scale for this request's `t`.
    pub fn sigma(&self) -> Result<f32, GuidanceError> {
        let scale = match self.config.get(SIGMA_SCALE_KEY) {
            Some(s) => s.parse::<f32>().map_err(|_| GuidanceError::InvalidRequest(format!("bad {SIGMA_SCALE_KEY} `{s}`")))?,
            None => 1.0,
        };
        Ok(scale * self.t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceResponse {
    pub residuals: Vec<Image>,
}

impl GuidanceResponse {
    pub fn validate_for(&self, req: &GuidanceRequest) -> Result<(), GuidanceError> {
        if self.residuals.len() != VIEW_COUNT {
            return Err(GuidanceError::Malformed(format!("{} residuals", self.residuals.len())));
        }
        for (i, (r, x)) in self.residuals.iter().zip(&req.rendered_views).enumerate() {
            if (r.height, r.width) != (x.height, x.width) {
                return Err(GuidanceError::Malformed(format!("residual {i} has the wrong size")));
            }
            if !r.is_finite() {
                return Err(GuidanceError::Malformed(format!("residual {i} is not finite")));
            }
        }
        Ok(())
    }
}

pub trait GuidanceProvider: Send + Sync {
    fn name(&self) -> &str;
    fn capability(&self) -> Capability;
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError>;
}

pub(crate) fn check_t(t: f32) -> Result<(), GuidanceError> {
    if !(T_MIN..=T_MAX).contains(&t) {
        return Err(GuidanceError::NoiseLevel(t));
    }
    Ok(())
}

/// `x + σ ε` with `ε ~ N(0, 1)` drawn from a ChaCha8 stream seeded by `seed`.
pub fn add_noise(image: &Image, t: f32, sigma: f32, seed: u64) -> Result<Image, GuidanceError> {
    check_t(t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    for v in &mut out.data {
        let e: f32 = StandardNormal.sample(&mut rng);
        *v += sigma * e;
    }
    Ok(out)
}

/// Decorrelated per-view seed (SplitMix64 finalizer).
pub fn view_seed(seed: u64, view: usize) -> u64 {
    let mut z = seed.wrapping_add((view as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
