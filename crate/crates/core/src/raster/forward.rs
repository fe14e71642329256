use rayon::prelude::*;

use super::{project, sample, Channels, ProjectedGaussian, RenderOutput, MIN_TRANSMITTANCE, TILE_SIZE};
use crate::camera::Camera;
use crate::scene::GaussianScene;
use crate::LANG_DIM;

/// Per-tile lists of indices into the projected (depth-sorted) array. Each
/// list inherits the global depth order.
pub(crate) struct TileBins {
    pub tiles_x: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn build(projected: &[ProjectedGaussian], width: usize, height: usize) -> Self {
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        for (k, g) in projected.iter().enumerate() {
            let [x0, y0, x1, y1] = g.pixel_rect;
            for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
                for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                    lists[ty * tiles_x + tx].push(k as u32);
                }
            }
        }
        TileBins { tiles_x, lists }
    }

    /// Pixel bounds `(x0, y0, x1, y1)` (exclusive upper) of tile `t`.
    pub fn bounds(&self, t: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, y0, (x0 + TILE_SIZE).min(width), (y0 + TILE_SIZE).min(height))
    }
}

struct TileOut {
    color: Vec<f64>,
    feature: Vec<f64>,
    alpha: Vec<f64>,
    depth: Vec<f64>,
}

/// Renders the selected channels. Output is a pure function of the inputs:
/// tiles are independent and every pixel accumulates in depth order.
pub fn render(scene: &GaussianScene, camera: &Camera, channels: Channels) -> RenderOutput {
    let width = camera.width as usize;
    let height = camera.height as usize;
    let projected = project(scene, camera);
    let bins = TileBins::build(&projected, width, height);

    let tiles: Vec<TileOut> = (0..bins.lists.len())
        .into_par_iter()
        .map(|t| {
            let (x0, y0, x1, y1) = bins.bounds(t, width, height);
            let n = (x1 - x0) * (y1 - y0);
            let mut out = TileOut {
                color: vec![0.0; if channels.color { n * 3 } else { 0 }],
                feature: vec![0.0; if channels.feature { n * LANG_DIM } else { 0 }],
                alpha: vec![0.0; n],
                depth: vec![0.0; n],
            };
            let list = &bins.lists[t];
            let mut p = 0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut transmittance = 1.0f64;
                    for &k in list {
                        let g = &projected[k as usize];
                        let Some(s) = sample(g, px, py) else { continue };
                        let w = s.alpha * transmittance;
                        if channels.color {
                            let c = scene.colors[g.index];
                            for ch in 0..3 {
                                out.color[p * 3 + ch] += w * c[ch] as f64;
                            }
                        }
                        if channels.feature {
                            let l = &scene.lang[g.index];
                            let acc = &mut out.feature[p * LANG_DIM..(p + 1) * LANG_DIM];
                            for ch in 0..LANG_DIM {
                                acc[ch] += w * l[ch] as f64;
                            }
                        }
                        out.alpha[p] += w;
                        out.depth[p] += w * g.depth;
                        transmittance *= 1.0 - s.alpha;
                        if transmittance < MIN_TRANSMITTANCE {
                            break;
                        }
                    }
                    p += 1;
                }
            }
            out
        })
        .collect();

    let mut out = RenderOutput::empty(width, height, channels);
    for (t, tile) in tiles.into_iter().enumerate() {
        let (x0, y0, x1, y1) = bins.bounds(t, width, height);
        let tw = x1 - x0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = (y - y0) * tw + (x - x0);
                let q = y * width + x;
                out.alpha[q] = tile.alpha[p];
                out.depth[q] = tile.depth[p];
                if let Some(c) = out.color.as_mut() {
                    c[q * 3..q * 3 + 3].copy_from_slice(&tile.color[p * 3..p * 3 + 3]);
                }
                if let Some(f) = out.feature.as_mut() {
                    f[q * LANG_DIM..(q + 1) * LANG_DIM].copy_from_slice(&tile.feature[p * LANG_DIM..(p + 1) * LANG_DIM]);
                }
            }
        }
    }
    out
}
