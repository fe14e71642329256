//! Dense language-feature preprocessing: PCA down to the embedding width and
//! mask-averaged boundary refinement.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

/// Pixels drawn across all maps when fitting the PCA basis.
pub const PCA_SAMPLE_COUNT: usize = 1 << 18;

/// Variances at or below this fraction of the leading variance are reported
/// as exactly zero.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("sample dimension {dim} is smaller than the requested {k} components")]
    DimTooSmall { dim: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("shape mismatch: feature map is {map_w}x{map_h}, masks are {mask_w}x{mask_h}")]
    ShapeMismatch { map_w: usize, map_h: usize, mask_w: usize, mask_h: usize },
    #[error("non-finite feature value at flat index {0}")]
    NonFinite(usize),
    #[error("no feature maps given")]
    Empty,
}

/// Per-pixel feature image, `height × width × dim`, channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    pub source_camera_id: String,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>, source_camera_id: impl Into<String>) -> Result<Self, FeatureError> {
        if data.len() != height * width * dim {
            return Err(FeatureError::DimMismatch { expected: height * width * dim, got: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(i));
        }
        Ok(FeatureMap { height, width, dim, data, source_camera_id: source_camera_id.into() })
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }
}

/// Principal subspace of a feature distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub dim: usize,
    pub k: usize,
    pub mean: Vec<f32>,
    /// `k × dim`, orthonormal rows.
    pub components: Vec<f32>,
    /// Non-increasing; trailing zeros past the data rank.
    pub explained_variance: Vec<f32>,
}

impl PcaBasis {
    pub fn component(&self, r: usize) -> &[f32] {
        &self.components[r * self.dim..(r + 1) * self.dim]
    }

    /// Number of components with nonzero variance. Below `k` the input was
    /// rank-deficient and the trailing components span only the null space.
    pub fn effective_rank(&self) -> usize {
        self.explained_variance.iter().filter(|v| **v > 0.0).count()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.effective_rank() < self.k
    }

    /// `components · (v − mean)`.
    pub fn project(&self, v: &[f32], out: &mut [f32]) {
        for (r, o) in out.iter_mut().enumerate().take(self.k) {
            let row = self.component(r);
            let mut acc = 0.0f64;
            for d in 0..self.dim {
                acc += row[d] as f64 * (v[d] as f64 - self.mean[d] as f64);
            }
            *o = acc as f32;
        }
    }

    /// `mean + componentsᵀ · c`.
    pub fn reconstruct(&self, coeffs: &[f32]) -> Vec<f32> {
        let mut out: Vec<f64> = self.mean.iter().map(|&m| m as f64).collect();
        for (r, &c) in coeffs.iter().enumerate().take(self.k) {
            for (o, &b) in out.iter_mut().zip(self.component(r)) {
                *o += c as f64 * b as f64;
            }
        }
        out.into_iter().map(|v| v as f32).collect()
    }
}

/// Uniform subsample (without replacement) of pixel vectors across maps,
/// returned row-major. All pixels are used when there are fewer than
/// `count`.
pub fn sample_pixels(maps: &[FeatureMap], count: usize, seed: u64) -> Result<(Vec<f32>, usize), FeatureError> {
    let first = maps.first().ok_or(FeatureError::Empty)?;
    let dim = first.dim;
    if let Some(m) = maps.iter().find(|m| m.dim != dim) {
        return Err(FeatureError::DimMismatch { expected: dim, got: m.dim });
    }
    let total: usize = maps.iter().map(FeatureMap::pixel_count).sum();
    let mut picks: Vec<usize> = if total <= count {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        index::sample(&mut rng, total, count).into_vec()
    };
    picks.sort_unstable();
    let mut out = Vec::with_capacity(picks.len() * dim);
    let mut map_idx = 0;
    let mut base = 0;
    for p in &picks {
        while p - base >= maps[map_idx].pixel_count() {
            base += maps[map_idx].pixel_count();
            map_idx += 1;
        }
        let off = (p - base) * dim;
        out.extend_from_slice(&maps[map_idx].data[off..off + dim]);
    }
    Ok((out, dim))
}

/// Fits the top-`k` principal components of row-major `samples`
/// (`n × dim`). Variance uses the unbiased `1/(n−1)` normalization.
pub fn fit_pca(samples: &[f32], dim: usize, k: usize) -> Result<PcaBasis, FeatureError> {
    if dim < k {
        return Err(FeatureError::DimTooSmall { dim, k });
    }
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(FeatureError::DimMismatch { expected: dim, got: samples.len() });
    }
    let n = samples.len() / dim;
    if n < k.max(2) {
        return Err(FeatureError::InsufficientSamples { needed: k.max(2), got: n });
    }
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite(i));
    }

    let mut mean = vec![0.0f64; dim];
    for row in samples.chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    // Chunked Xᵀ X; partial sums are reduced in chunk order.
    const CHUNK: usize = 2048;
    let partials: Vec<DMatrix<f64>> = samples
        .par_chunks(CHUNK * dim)
        .map(|chunk| {
            let rows = chunk.len() / dim;
            let x = DMatrix::from_fn(rows, dim, |r, c| chunk[r * dim + c] as f64 - mean[c]);
            x.transpose() * &x
        })
        .collect();
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for p in &partials {
        cov += p;
    }
    cov /= (n - 1) as f64;
    // Symmetrize against rounding before the eigensolver.
    let cov = (&cov + cov.transpose()) * 0.5;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let lead = eig.eigenvalues[order[0]].max(0.0);

    let mut components = Vec::with_capacity(k * dim);
    let mut explained_variance = Vec::with_capacity(k);
    for &o in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(o).iter().copied().collect();
        // Sign convention: largest-magnitude entry positive.
        let pivot = v.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0))).map(|(_, &x)| x).unwrap_or(1.0);
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.extend(v.iter().map(|&x| x as f32));
        let var = eig.eigenvalues[o];
        explained_variance.push(if var <= lead * RANK_TOLERANCE { 0.0 } else { var as f32 });
    }
    Ok(PcaBasis { dim, k, mean: mean.into_iter().map(|m| m as f32).collect(), components, explained_variance })
}

/// Projects every pixel through the basis.
pub fn project_features(map: &FeatureMap, basis: &PcaBasis) -> Result<FeatureMap, FeatureError> {
    if map.dim != basis.dim {
        return Err(FeatureError::DimMismatch { expected: basis.dim, got: map.dim });
    }
    let k = basis.k;
    let mut data = vec![0.0f32; map.pixel_count() * k];
    data.par_chunks_mut(k).zip(map.data.par_chunks(map.dim)).for_each(|(out, px)| basis.project(px, out));
    Ok(FeatureMap { height: map.height, width: map.width, dim: k, data, source_camera_id: map.source_camera_id.clone() })
}

/// Binary masks for one image, `height × width` each, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub height: usize,
    pub width: usize,
    pub masks: Vec<Vec<bool>>,
}

impl MaskSet {
    pub fn new(height: usize, width: usize) -> Self {
        MaskSet { height, width, masks: Vec::new() }
    }

    pub fn push(&mut self, mask: Vec<bool>) {
        assert_eq!(mask.len(), self.height * self.width, "mask size");
        self.masks.push(mask);
    }

    /// For each pixel, the smallest-area mask covering it (lowest index on
    /// equal area).
    pub fn owners(&self) -> Vec<Option<usize>> {
        let areas: Vec<usize> = self.masks.iter().map(|m| m.iter().filter(|&&b| b).count()).collect();
        (0..self.height * self.width)
            .map(|p| self.masks.iter().enumerate().filter(|(_, m)| m[p]).min_by_key(|(i, _)| (areas[*i], *i)).map(|(i, _)| i))
            .collect()
    }
}

/// Replaces features by per-mask averages. Every covered pixel is assigned
/// to its smallest covering mask; each mask's value is the mean over the
/// pixels assigned to it. Uncovered pixels are untouched. Averaging over
/// the assigned region (rather than the full mask) makes the operation
/// idempotent when masks nest.
pub fn refine_with_masks(map: &FeatureMap, masks: &MaskSet) -> Result<FeatureMap, FeatureError> {
    if masks.height != map.height || masks.width != map.width {
        return Err(FeatureError::ShapeMismatch { map_w: map.width, map_h: map.height, mask_w: masks.width, mask_h: masks.height });
    }
    let dim = map.dim;
    let owners = masks.owners();
    let mut sums = vec![vec![0.0f64; dim]; masks.masks.len()];
    let mut counts = vec![0usize; masks.masks.len()];
    for (p, owner) in owners.iter().enumerate() {
        if let Some(m) = *owner {
            counts[m] += 1;
            for (s, &v) in sums[m].iter_mut().zip(&map.data[p * dim..(p + 1) * dim]) {
                *s += v as f64;
            }
        }
    }
    let means: Vec<Vec<f32>> = sums.iter().zip(&counts).map(|(s, &c)| s.iter().map(|v| (v / c.max(1) as f64) as f32).collect()).collect();
    let mut out = map.clone();
    for (p, owner) in owners.iter().enumerate() {
        if let Some(m) = *owner {
            out.data[p * dim..(p + 1) * dim].copy_from_slice(&means[m]);
        }
    }
    Ok(out)
}
