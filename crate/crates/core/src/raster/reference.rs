//! Brute-force renderer used as ground truth for [`super::render`]: no tiles,
//! no culling beyond the near plane, a full per-pixel sort, no early
//! termination, and compensated summation.

use super::project::project_one;
use super::{sample, Channels, RenderError, RenderOutput};
use crate::camera::Camera;
use crate::scene::GaussianScene;
use crate::LANG_DIM;

pub const REFERENCE_MAX_GAUSSIANS: usize = 10_000;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

pub fn render_reference(scene: &GaussianScene, camera: &Camera, channels: Channels) -> Result<RenderOutput, RenderError> {
    if scene.len() > REFERENCE_MAX_GAUSSIANS {
        return Err(RenderError::OracleScale { got: scene.len(), max: REFERENCE_MAX_GAUSSIANS });
    }
    let width = camera.width as usize;
    let height = camera.height as usize;
    let gaussians: Vec<_> = (0..scene.len()).filter_map(|i| project_one(scene, camera, i)).collect();
    let mut out = RenderOutput::empty(width, height, channels);

    let mut hits = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            hits.clear();
            for g in &gaussians {
                if let Some(s) = sample(g, px, py) {
                    hits.push((g.depth, g.index, s.alpha));
                }
            }
            hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

            let mut color = [CompensatedSum::default(); 3];
            let mut feature = [CompensatedSum::default(); LANG_DIM];
            let mut alpha = CompensatedSum::default();
            let mut depth = CompensatedSum::default();
            let mut transmittance = 1.0f64;
            for &(z, i, a) in &hits {
                let w = a * transmittance;
                if channels.color {
                    for ch in 0..3 {
                        color[ch].add(w * scene.colors[i][ch] as f64);
                    }
                }
                if channels.feature {
                    for ch in 0..LANG_DIM {
                        feature[ch].add(w * scene.lang[i][ch] as f64);
                    }
                }
                alpha.add(w);
                depth.add(w * z);
                transmittance *= 1.0 - a;
            }
            let q = y * width + x;
            out.alpha[q] = alpha.value();
            out.depth[q] = depth.value();
            if let Some(c) = out.color.as_mut() {
                for ch in 0..3 {
                    c[q * 3 + ch] = color[ch].value();
                }
            }
            if let Some(f) = out.feature.as_mut() {
                for ch in 0..LANG_DIM {
                    f[q * LANG_DIM + ch] = feature[ch].value();
                }
            }
        }
    }
    Ok(out)
}
