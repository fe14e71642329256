//! Gradient-driven densification restricted to gated Gaussians.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::math::{normalize_quat, quat_to_matrix};
use crate::scene::{Gaussian, GaussianScene};

/// Split children shrink by this factor per axis.
pub const SPLIT_SHRINK: f64 = 1.6;

/// `⌈fraction · candidates⌉`, treating products within 1e-9 of an integer as
/// that integer so decimal fractions like 0.01 count exactly.
pub fn densify_count(fraction: f64, candidates: usize) -> usize {
    let x = fraction * candidates as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * r.max(1.0) { r } else { x.ceil() };
    (k as usize).min(candidates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Densify {
    Clone,
    Split,
}

#[derive(Debug, Clone)]
pub struct DensifyOutcome {
    pub scene: GaussianScene,
    /// For each output Gaussian, the input index it carries over unchanged,
    /// or `None` for new children.
    pub source: Vec<Option<usize>>,
    /// For each output Gaussian, the input index it came from (children
    /// point at their parent).
    pub parent: Vec<usize>,
    /// Densified input indices with the rule applied to each.
    pub densified: Vec<(usize, Densify)>,
    pub pruned: Vec<usize>,
}

fn max_extent(scene: &GaussianScene, i: usize) -> f64 {
    scene.scales[i].iter().map(|&s| (s as f64).exp()).fold(f64::MIN, f64::max)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Densifies the `⌈fraction · |candidates|⌉` gate-positive Gaussians with the
/// largest accumulated gradient (ties to the lower index), then prunes
/// gate-positive Gaussians whose opacity is below `prune_opacity`.
///
/// Gaussians larger than the scene median (by largest axis) are split into
/// two shrunken children sampled inside the parent; the rest are cloned.
/// Children copy every attribute they do not resample, so their language
/// embedding equals the parent's bit for bit. Kept Gaussians stay in input
/// order; children are appended.
pub fn densify_and_prune(
    scene: &GaussianScene,
    grad_accum: &[f64],
    gate: &[f64],
    fraction: f64,
    prune_opacity: f64,
    rng: &mut impl Rng,
) -> DensifyOutcome {
    let n = scene.len();
    assert_eq!(grad_accum.len(), n, "gradient statistics");
    assert_eq!(gate.len(), n, "gate");
    let mut candidates: Vec<usize> = (0..n).filter(|&i| gate[i] > 0.0).collect();
    let k = densify_count(fraction, candidates.len());
    candidates.sort_by(|&a, &b| grad_accum[b].total_cmp(&grad_accum[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = candidates[..k].to_vec();
    chosen.sort_unstable();

    let threshold = median((0..n).map(|i| max_extent(scene, i)).collect());
    let densified: Vec<(usize, Densify)> =
        chosen.iter().map(|&i| (i, if max_extent(scene, i) > threshold { Densify::Split } else { Densify::Clone })).collect();
    let mut removed = vec![false; n];
    for &(i, d) in &densified {
        removed[i] = d == Densify::Split;
    }
    let mut pruned = Vec::new();
    for i in 0..n {
        if gate[i] > 0.0 && !chosen.contains(&i) && scene.opacity(i) < prune_opacity {
            removed[i] = true;
            pruned.push(i);
        }
    }

    let mut out = GaussianScene::with_capacity(n + 2 * k);
    let mut source = Vec::with_capacity(n + 2 * k);
    let mut parent = Vec::with_capacity(n + 2 * k);
    for i in (0..n).filter(|&i| !removed[i]) {
        out.push(scene.get(i));
        source.push(Some(i));
        parent.push(i);
    }
    for &(i, d) in &densified {
        let g = scene.get(i);
        match d {
            Densify::Clone => {
                out.push(g);
                source.push(None);
                parent.push(i);
            }
            Densify::Split => {
                let r = quat_to_matrix(normalize_quat(g.rotation.map(f64::from)).0);
                let s = g.scale.map(|v| (v as f64).exp());
                for _ in 0..2 {
                    let z: [f64; 3] = std::array::from_fn(|a| s[a] * rng.sample::<f64, _>(StandardNormal));
                    let offset = r * nalgebra::Vector3::from(z);
                    let child = Gaussian {
                        position: std::array::from_fn(|a| (g.position[a] as f64 + offset[a]) as f32),
                        scale: g.scale.map(|v| (v as f64 - SPLIT_SHRINK.ln()) as f32),
                        ..g
                    };
                    out.push(child);
                    source.push(None);
                    parent.push(i);
                }
            }
        }
    }
    DensifyOutcome { scene: out, source, parent, densified, pruned }
}
