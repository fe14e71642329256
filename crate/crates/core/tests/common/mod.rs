//! Test oracles shared by the integration suites.
//!
//! `oracle_loss` re-implements projection and blending from scratch (no tiles,
//! no culling, no early termination) so it shares no code with the renderer
//! under test.

#![allow(dead_code)]

pub mod csd;
pub mod scenarios;

use lesplat_core::raster::SceneGradients;
use lesplat_core::{Camera, GaussianScene, LANG_DIM};
use nalgebra::{Matrix2x3, Matrix3, Vector3};
use rand::Rng;

pub struct OracleSplat {
    pub index: usize,
    pub mean: [f64; 2],
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
}

pub fn oracle_project(scene: &GaussianScene, cam: &Camera, i: usize) -> Option<OracleSplat> {
    let p = scene.positions[i].map(|v| v as f64);
    let c = cam.rotation * Vector3::new(p[0], p[1], p[2]) + cam.translation;
    if c.z <= 0.01 {
        return None;
    }
    let q = scene.rotations[i].map(|v| v as f64);
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let r = Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    );
    let s = Matrix3::from_diagonal(&Vector3::from(scene.scales[i].map(|v| (v as f64).exp())));
    let sigma = r * s * s * r.transpose();
    let sigma_cam = cam.rotation * sigma * cam.rotation.transpose();
    let j = Matrix2x3::new(cam.fx / c.z, 0.0, -cam.fx * c.x / (c.z * c.z), 0.0, cam.fy / c.z, -cam.fy * c.y / (c.z * c.z));
    let cov = j * sigma_cam * j.transpose();
    let (a, b, d) = (cov[(0, 0)] + 0.3, cov[(0, 1)], cov[(1, 1)] + 0.3);
    let det = a * d - b * b;
    if det <= 0.0 {
        return None;
    }
    let o = 1.0 / (1.0 + (-(scene.opacity_logits[i] as f64)).exp());
    Some(OracleSplat {
        index: i,
        mean: [cam.fx * c.x / c.z + cam.cx, cam.fy * c.y / c.z + cam.cy],
        conic: [d / det, -b / det, a / det],
        depth: c.z,
        opacity: o,
    })
}

/// Per-pixel `(gaussian, clamped)` lists in blend order.
pub type Support = Vec<Vec<(usize, bool)>>;

/// Weights applied to each rendered plane to form a scalar loss.
pub struct LossWeights {
    pub color: Vec<f64>,
    pub feature: Vec<f64>,
    pub alpha: Vec<f64>,
    pub depth: Vec<f64>,
}

impl LossWeights {
    pub fn random(rng: &mut impl Rng, pixels: usize) -> Self {
        let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        LossWeights { color: v(pixels * 3), feature: v(pixels * LANG_DIM), alpha: v(pixels), depth: v(pixels) }
    }
}

/// `Σ weights · planes` of an untiled render. With `frozen`, every pixel
/// blends exactly the recorded Gaussians in the recorded order and clamp
/// state, which makes the loss smooth in the parameters.
pub fn oracle_loss(scene: &GaussianScene, cam: &Camera, weights: &LossWeights, frozen: Option<&Support>) -> (f64, Support) {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let splats: Vec<Option<OracleSplat>> = (0..scene.len()).map(|i| oracle_project(scene, cam, i)).collect();
    let mut support = Vec::with_capacity(w * h);
    let mut total = 0.0f64;
    for py in 0..h {
        for px in 0..w {
            let q = py * w + px;
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let eval = |g: &OracleSplat| {
                let (dx, dy) = (x - g.mean[0], y - g.mean[1]);
                let power = g.conic[0] * dx * dx + 2.0 * g.conic[1] * dx * dy + g.conic[2] * dy * dy;
                (power, g.opacity * (-0.5 * power).exp())
            };
            let list: Vec<(usize, bool)> = match frozen {
                Some(f) => f[q].clone(),
                None => {
                    let mut hits: Vec<&OracleSplat> = splats.iter().flatten().filter(|g| eval(g).0 <= 9.0).collect();
                    hits.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
                    hits.iter().map(|g| (g.index, eval(g).1 >= 0.999)).collect()
                }
            };
            let mut t = 1.0;
            for &(i, clamped) in &list {
                let Some(g) = splats[i].as_ref() else { continue };
                let alpha = if clamped { 0.999 } else { eval(g).1 };
                let wgt = alpha * t;
                let mut dot = weights.alpha[q] + weights.depth[q] * g.depth;
                for c in 0..3 {
                    dot += weights.color[q * 3 + c] * scene.colors[i][c] as f64;
                }
                for c in 0..LANG_DIM {
                    dot += weights.feature[q * LANG_DIM + c] * scene.lang[i][c] as f64;
                }
                total += wgt * dot;
                t *= 1.0 - alpha;
            }
            support.push(list);
        }
    }
    (total, support)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamClass {
    Position,
    Scale,
    Rotation,
    Opacity,
    Color,
    Lang,
}

impl ParamClass {
    pub const ALL: [ParamClass; 6] =
        [ParamClass::Position, ParamClass::Scale, ParamClass::Rotation, ParamClass::Opacity, ParamClass::Color, ParamClass::Lang];

    pub fn width(self) -> usize {
        match self {
            ParamClass::Position | ParamClass::Scale | ParamClass::Color => 3,
            ParamClass::Rotation => 4,
            ParamClass::Opacity => 1,
            ParamClass::Lang => LANG_DIM,
        }
    }

    pub fn param(self, s: &mut GaussianScene, i: usize, k: usize) -> &mut f32 {
        match self {
            ParamClass::Position => &mut s.positions[i][k],
            ParamClass::Scale => &mut s.scales[i][k],
            ParamClass::Rotation => &mut s.rotations[i][k],
            ParamClass::Opacity => &mut s.opacity_logits[i],
            ParamClass::Color => &mut s.colors[i][k],
            ParamClass::Lang => &mut s.lang[i][k],
        }
    }

    pub fn grad(self, g: &SceneGradients, i: usize, k: usize) -> f64 {
        match self {
            ParamClass::Position => g.positions[i][k],
            ParamClass::Scale => g.scales[i][k],
            ParamClass::Rotation => g.rotations[i][k],
            ParamClass::Opacity => g.opacity_logits[i],
            ParamClass::Color => g.colors[i][k],
            ParamClass::Lang => g.lang[i][k],
        }
    }
}

/// `‖analytic − numeric‖ / ‖numeric‖` over one parameter class.
#[derive(Debug, Clone, Copy)]
pub struct ClassError {
    pub class: ParamClass,
    pub checked: usize,
    pub numeric_norm: f64,
    pub rel_error: f64,
}

/// Central differences with step `1e-3 · max(|x|, 1)` on the frozen oracle
/// loss. `lang_channels` limits the embedding channels checked per Gaussian.
pub fn fd_check(
    scene: &GaussianScene,
    cam: &Camera,
    weights: &LossWeights,
    analytic: &SceneGradients,
    lang_channels: &[usize],
) -> Vec<ClassError> {
    let (_, support) = oracle_loss(scene, cam, weights, None);
    let mut out = Vec::new();
    for class in ParamClass::ALL {
        let (mut diff2, mut num2, mut checked) = (0.0f64, 0.0f64, 0);
        for i in 0..scene.len() {
            let ks: Vec<usize> = if class == ParamClass::Lang { lang_channels.to_vec() } else { (0..class.width()).collect() };
            for k in ks {
                let mut s = scene.clone();
                let x0 = *class.param(&mut s, i, k);
                let h = 1e-3 * (x0.abs() as f64).max(1.0);
                let xp = (x0 as f64 + h) as f32;
                let xm = (x0 as f64 - h) as f32;
                *class.param(&mut s, i, k) = xp;
                let lp = oracle_loss(&s, cam, weights, Some(&support)).0;
                *class.param(&mut s, i, k) = xm;
                let lm = oracle_loss(&s, cam, weights, Some(&support)).0;
                let numeric = (lp - lm) / (xp as f64 - xm as f64);
                let a = class.grad(analytic, i, k);
                diff2 += (a - numeric).powi(2);
                num2 += numeric * numeric;
                checked += 1;
            }
        }
        out.push(ClassError { class, checked, numeric_norm: num2.sqrt(), rel_error: diff2.sqrt() / num2.sqrt().max(1e-300) });
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Per-pixel `(gaussian, blend weight)` lists of an untiled render.
pub fn oracle_weights(scene: &GaussianScene, cam: &Camera) -> Vec<Vec<(usize, f64)>> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let splats: Vec<OracleSplat> = (0..scene.len()).filter_map(|i| oracle_project(scene, cam, i)).collect();
    let mut out = Vec::with_capacity(w * h);
    for py in 0..h {
        for px in 0..w {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut hits: Vec<(f64, usize, f64)> = splats
                .iter()
                .filter_map(|g| {
                    let (dx, dy) = (x - g.mean[0], y - g.mean[1]);
                    let power = g.conic[0] * dx * dx + 2.0 * g.conic[1] * dx * dy + g.conic[2] * dy * dy;
                    (power <= 9.0).then(|| (g.depth, g.index, (g.opacity * (-0.5 * power).exp()).min(0.999)))
                })
                .collect();
            hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut t = 1.0;
            let mut list = Vec::with_capacity(hits.len());
            for (_, i, alpha) in hits {
                list.push((i, alpha * t));
                t *= 1.0 - alpha;
            }
            out.push(list);
        }
    }
    out
}
