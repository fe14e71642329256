use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use super::forward::TileBins;
use super::{project, sample, Channels, ProjectedGaussian, RenderError, SceneGradients, Upstream, ALPHA_MAX, MIN_TRANSMITTANCE};
use crate::camera::Camera;
use crate::math::quat_matrix_backward;
use crate::scene::GaussianScene;
use crate::LANG_DIM;

/// Screen-space gradients of one projected Gaussian.
#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    mean: [f64; 2],
    /// w.r.t. conic `(a, b, c)` where `b` appears twice in the quadratic form.
    conic: [f64; 3],
    opacity: f64,
    depth: f64,
    color: [f64; 3],
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
    }
}

struct Contribution {
    slot: usize,
    dx: f64,
    dy: f64,
    raw_alpha: f64,
    alpha: f64,
    transmittance: f64,
}

/// Backpropagates per-pixel gradients of the rendered planes to every scene
/// parameter. Culled Gaussians get zero gradients. Per-tile partial sums are
/// combined in tile order, so results are deterministic.
pub fn render_backward(
    scene: &GaussianScene,
    camera: &Camera,
    channels: Channels,
    upstream: &Upstream,
) -> Result<SceneGradients, RenderError> {
    let width = camera.width as usize;
    let height = camera.height as usize;
    upstream.check(width * height)?;
    let mut grads = SceneGradients::zeros(scene.len());

    let up_color = upstream.color.as_deref().filter(|_| channels.color);
    let up_feature = upstream.feature.as_deref().filter(|_| channels.feature);
    let up_alpha = upstream.alpha.as_deref();
    let up_depth = upstream.depth.as_deref();
    if up_color.is_none() && up_feature.is_none() && up_alpha.is_none() && up_depth.is_none() {
        return Ok(grads);
    }

    let projected = project(scene, camera);
    let bins = TileBins::build(&projected, width, height);

    let partials: Vec<(Vec<ScreenGrad>, Vec<f64>)> = (0..bins.lists.len())
        .into_par_iter()
        .map(|t| {
            let list = &bins.lists[t];
            let mut sg = vec![ScreenGrad::default(); list.len()];
            let mut lang = vec![0.0f64; if up_feature.is_some() { list.len() * LANG_DIM } else { 0 }];
            let (x0, y0, x1, y1) = bins.bounds(t, width, height);
            let mut contribs: Vec<Contribution> = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    let q = y * width + x;
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    contribs.clear();
                    let mut transmittance = 1.0f64;
                    for (slot, &k) in list.iter().enumerate() {
                        let g = &projected[k as usize];
                        let Some(s) = sample(g, px, py) else { continue };
                        contribs.push(Contribution { slot, dx: s.dx, dy: s.dy, raw_alpha: s.raw_alpha, alpha: s.alpha, transmittance });
                        transmittance *= 1.0 - s.alpha;
                        if transmittance < MIN_TRANSMITTANCE {
                            break;
                        }
                    }

                    // Σ_{k>i} w_k (upstream · payload_k), built back to front.
                    let mut behind = 0.0f64;
                    for c in contribs.iter().rev() {
                        let g = &projected[list[c.slot] as usize];
                        let w = c.alpha * c.transmittance;
                        let mut dot = 0.0;
                        let out = &mut sg[c.slot];
                        if let Some(up) = up_color {
                            let col = scene.colors[g.index];
                            for ch in 0..3 {
                                dot += up[q * 3 + ch] * col[ch] as f64;
                                out.color[ch] += w * up[q * 3 + ch];
                            }
                        }
                        if let Some(up) = up_feature {
                            let l = &scene.lang[g.index];
                            let upq = &up[q * LANG_DIM..(q + 1) * LANG_DIM];
                            let dst = &mut lang[c.slot * LANG_DIM..(c.slot + 1) * LANG_DIM];
                            for ch in 0..LANG_DIM {
                                dot += upq[ch] * l[ch] as f64;
                                dst[ch] += w * upq[ch];
                            }
                        }
                        if let Some(up) = up_alpha {
                            dot += up[q];
                        }
                        if let Some(up) = up_depth {
                            dot += up[q] * g.depth;
                            out.depth += w * up[q];
                        }
                        let d_alpha = c.transmittance * dot - behind / (1.0 - c.alpha);
                        behind += w * dot;

                        if c.raw_alpha < ALPHA_MAX {
                            let gauss = c.raw_alpha / g.opacity;
                            out.opacity += d_alpha * gauss;
                            let d_power = -0.5 * c.raw_alpha * d_alpha;
                            let [a, b, cc] = g.conic;
                            out.mean[0] -= d_power * 2.0 * (a * c.dx + b * c.dy);
                            out.mean[1] -= d_power * 2.0 * (b * c.dx + cc * c.dy);
                            out.conic[0] += d_power * c.dx * c.dx;
                            out.conic[1] += d_power * 2.0 * c.dx * c.dy;
                            out.conic[2] += d_power * c.dy * c.dy;
                        }
                    }
                }
            }
            (sg, lang)
        })
        .collect();

    let mut screen = vec![ScreenGrad::default(); projected.len()];
    let mut lang = vec![0.0f64; if up_feature.is_some() { projected.len() * LANG_DIM } else { 0 }];
    for (t, (sg, tl)) in partials.iter().enumerate() {
        for (slot, &k) in bins.lists[t].iter().enumerate() {
            let k = k as usize;
            screen[k].add(&sg[slot]);
            if !tl.is_empty() {
                for ch in 0..LANG_DIM {
                    lang[k * LANG_DIM + ch] += tl[slot * LANG_DIM + ch];
                }
            }
        }
    }

    let world: Vec<WorldGrad> = projected.par_iter().zip(screen.par_iter()).map(|(g, s)| to_world(scene, camera, g, s)).collect();
    for (k, (g, w)) in projected.iter().zip(world).enumerate() {
        let i = g.index;
        grads.positions[i] = w.position;
        grads.scales[i] = w.scale;
        grads.rotations[i] = w.rotation;
        grads.opacity_logits[i] = w.opacity_logit;
        grads.colors[i] = screen[k].color;
        if !lang.is_empty() {
            grads.lang[i].copy_from_slice(&lang[k * LANG_DIM..(k + 1) * LANG_DIM]);
        }
    }
    Ok(grads)
}

struct WorldGrad {
    position: [f64; 3],
    scale: [f64; 3],
    rotation: [f64; 4],
    opacity_logit: f64,
}

/// Chain rule from screen space back to the stored parameters.
fn to_world(scene: &GaussianScene, camera: &Camera, g: &ProjectedGaussian, s: &ScreenGrad) -> WorldGrad {
    let [a, b, c] = g.conic;
    let conic = Matrix2::new(a, b, b, c);
    // The off-diagonal conic parameter feeds two symmetric entries.
    let d_conic = Matrix2::new(s.conic[0], 0.5 * s.conic[1], 0.5 * s.conic[1], s.conic[2]);
    let d_cov2d = -(conic * d_conic * conic);

    let j = &g.jacobian;
    let d_cov_cam: Matrix3<f64> = j.transpose() * d_cov2d * j;
    let d_j = 2.0 * d_cov2d * j * g.cov_cam;

    let (fx, fy) = (camera.fx, camera.fy);
    let (x, y, z) = (g.cam_pos.x, g.cam_pos.y, g.cam_pos.z);
    let z2 = z * z;
    let z3 = z2 * z;
    let d_cam = Vector3::new(
        s.mean[0] * fx / z - d_j[(0, 2)] * fx / z2,
        s.mean[1] * fy / z - d_j[(1, 2)] * fy / z2,
        -s.mean[0] * fx * x / z2 - s.mean[1] * fy * y / z2 - d_j[(0, 0)] * fx / z2 - d_j[(1, 1)] * fy / z2
            + d_j[(0, 2)] * 2.0 * fx * x / z3
            + d_j[(1, 2)] * 2.0 * fy * y / z3
            + s.depth,
    );
    let d_pos = camera.rotation.transpose() * d_cam;

    let d_cov_world = camera.rotation.transpose() * d_cov_cam * camera.rotation;
    let m = g.rotation * Matrix3::from_diagonal(&g.scale);
    let d_m = 2.0 * d_cov_world * m;
    let mut scale = [0.0; 3];
    let mut d_rot = Matrix3::zeros();
    for col in 0..3 {
        let mut acc = 0.0;
        for row in 0..3 {
            acc += d_m[(row, col)] * g.rotation[(row, col)];
            d_rot[(row, col)] = d_m[(row, col)] * g.scale[col];
        }
        scale[col] = acc * g.scale[col];
    }
    let rotation = quat_matrix_backward(scene.rotations[g.index].map(|v| v as f64), &d_rot);
    WorldGrad { position: [d_pos.x, d_pos.y, d_pos.z], scale, rotation, opacity_logit: s.opacity * g.opacity * (1.0 - g.opacity) }
}
