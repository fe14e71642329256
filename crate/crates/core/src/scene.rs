//! Gaussian scene storage and geometric summaries.
//!
//! A scene is a struct of arrays: every per-Gaussian attribute lives in its
//! own `Vec` and all of them share one length. Parameters are stored the way
//! they are optimized: log-scales, a (possibly unnormalized during a step,
//! unit after it) quaternion `(w, x, y, z)`, an opacity logit, a diffuse RGB
//! color and a 64-dim language embedding.

use thiserror::Error;

use crate::math::sigmoid;
use crate::LANG_DIM;

/// Tolerance on `|q| - 1` accepted by [`GaussianScene::validate`].
pub const QUAT_NORM_TOL: f32 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("attribute `{field}` has {got} entries, expected {expected}")]
    LengthMismatch { field: &'static str, got: usize, expected: usize },
    #[error("gaussian {index}: non-finite {field}")]
    NonFinite { index: usize, field: &'static str },
    #[error("gaussian {index}: rotation quaternion has norm {norm}, expected 1")]
    NotUnitQuaternion { index: usize, norm: f32 },
    #[error("gaussian {index}: color component {value} outside [0, 1]")]
    ColorOutOfRange { index: usize, value: f32 },
    #[error("index {index} out of range for a scene of {count} gaussians")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("member set is empty")]
    EmptySelection,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianScene {
    pub positions: Vec<[f32; 3]>,
    pub scales: Vec<[f32; 3]>,
    pub rotations: Vec<[f32; 4]>,
    pub colors: Vec<[f32; 3]>,
    pub opacity_logits: Vec<f32>,
    pub lang: Vec<[f32; LANG_DIM]>,
}

/// One Gaussian pulled out of a scene, used for building and splicing scenes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub position: [f32; 3],
    pub scale: [f32; 3],
    pub rotation: [f32; 4],
    pub color: [f32; 3],
    pub opacity_logit: f32,
    pub lang: [f32; LANG_DIM],
}

impl Default for Gaussian {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            scale: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            color: [0.5; 3],
            opacity_logit: 0.0,
            lang: [0.0; LANG_DIM],
        }
    }
}

impl GaussianScene {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            positions: Vec::with_capacity(n),
            scales: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
            opacity_logits: Vec::with_capacity(n),
            lang: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, g: Gaussian) {
        self.positions.push(g.position);
        self.scales.push(g.scale);
        self.rotations.push(g.rotation);
        self.colors.push(g.color);
        self.opacity_logits.push(g.opacity_logit);
        self.lang.push(g.lang);
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.positions[i],
            scale: self.scales[i],
            rotation: self.rotations[i],
            color: self.colors[i],
            opacity_logit: self.opacity_logits[i],
            lang: self.lang[i],
        }
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i] as f64)
    }

    /// Keeps the Gaussians for which `keep` returns true, preserving order.
    pub fn retain_indices(&self, mut keep: impl FnMut(usize) -> bool) -> GaussianScene {
        let mut out = GaussianScene::with_capacity(self.len());
        for i in 0..self.len() {
            if keep(i) {
                out.push(self.get(i));
            }
        }
        out
    }

    /// Checks every structural and numeric invariant.
    pub fn validate(&self) -> Result<(), SceneError> {
        let n = self.positions.len();
        let lens = [
            ("scales", self.scales.len()),
            ("rotations", self.rotations.len()),
            ("colors", self.colors.len()),
            ("opacity_logits", self.opacity_logits.len()),
            ("lang", self.lang.len()),
        ];
        for (field, got) in lens {
            if got != n {
                return Err(SceneError::LengthMismatch { field, got, expected: n });
            }
        }
        for i in 0..n {
            let finite = |field, vals: &[f32]| {
                if vals.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(SceneError::NonFinite { index: i, field })
                }
            };
            finite("position", &self.positions[i])?;
            finite("scale", &self.scales[i])?;
            finite("rotation", &self.rotations[i])?;
            finite("color", &self.colors[i])?;
            finite("opacity", &[self.opacity_logits[i]])?;
            finite("lang", &self.lang[i])?;
            let norm = quat_norm(self.rotations[i]);
            if (norm - 1.0).abs() > QUAT_NORM_TOL {
                return Err(SceneError::NotUnitQuaternion { index: i, norm });
            }
            if let Some(&value) = self.colors[i].iter().find(|c| !(0.0..=1.0).contains(*c)) {
                return Err(SceneError::ColorOutOfRange { index: i, value });
            }
        }
        Ok(())
    }

    /// Renormalizes quaternions that drifted off the unit sphere. Quaternions
    /// already within tolerance are left bit-identical.
    pub fn renormalize_rotation(&mut self, i: usize) {
        let q = self.rotations[i];
        let norm = quat_norm(q);
        if (norm - 1.0).abs() > QUAT_NORM_TOL * 0.1 {
            let n = norm as f64;
            self.rotations[i] = q.map(|c| (c as f64 / n) as f32);
        }
    }
}

pub(crate) fn quat_norm(q: [f32; 4]) -> f32 {
    let s: f64 = q.iter().map(|&c| (c as f64) * (c as f64)).sum();
    s.sqrt() as f32
}

/// Axis-aligned box around a selected object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectBox {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    /// Members that survived outlier trimming.
    pub member_indices: Vec<usize>,
}

impl ObjectBox {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| (p[a] - self.center[a]).abs() <= self.half_extents[a] + 1e-9)
    }

    pub fn is_degenerate(&self) -> bool {
        self.center.iter().any(|c| !c.is_finite())
    }

    pub fn radius(&self) -> f64 {
        self.half_extents.iter().map(|h| h * h).sum::<f64>().sqrt()
    }
}

/// Lower and upper percentiles kept by [`object_box`].
pub const TRIM_PERCENTILES: (f64, f64) = (0.02, 0.98);

/// Nearest-rank percentile bounds of one axis.
fn percentile_bounds(mut values: Vec<f64>) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = |p: f64| (((p * n as f64).ceil() as usize).max(1) - 1).min(n - 1);
    (values[rank(TRIM_PERCENTILES.0)], values[rank(TRIM_PERCENTILES.1)])
}

/// Bounding box of the given members, after dropping members that fall
/// outside the per-axis [2nd, 98th] nearest-rank percentile range.
pub fn object_box(scene: &GaussianScene, member_indices: &[usize]) -> Result<ObjectBox, SceneError> {
    if member_indices.is_empty() {
        return Err(SceneError::EmptySelection);
    }
    let count = scene.len();
    if let Some(&index) = member_indices.iter().find(|&&i| i >= count) {
        return Err(SceneError::IndexOutOfRange { index, count });
    }
    let pos = |i: usize| scene.positions[i].map(|c| c as f64);
    let bounds: Vec<(f64, f64)> = (0..3).map(|a| percentile_bounds(member_indices.iter().map(|&i| pos(i)[a]).collect())).collect();
    let kept: Vec<usize> = member_indices
        .iter()
        .copied()
        .filter(|&i| {
            let p = pos(i);
            (0..3).all(|a| p[a] >= bounds[a].0 && p[a] <= bounds[a].1)
        })
        .collect();

    let mut center = [0.0f64; 3];
    for &i in &kept {
        let p = pos(i);
        for a in 0..3 {
            center[a] += p[a];
        }
    }
    center = center.map(|c| c / kept.len() as f64);
    let mut half_extents = [0.0f64; 3];
    for &i in &kept {
        let p = pos(i);
        for a in 0..3 {
            half_extents[a] = half_extents[a].max((p[a] - center[a]).abs());
        }
    }
    Ok(ObjectBox { center, half_extents, member_indices: kept })
}
