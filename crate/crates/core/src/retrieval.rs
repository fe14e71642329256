//! Open-vocabulary retrieval: per-Gaussian relevance, thresholded selection,
//! rendered relevance maps and argmax localization scoring.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::camera::Camera;
use crate::math::cosine;
use crate::raster::{render, Channels};
use crate::scene::{object_box, GaussianScene, ObjectBox};
use crate::LANG_DIM;

pub const DEFAULT_TAU: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("query has {got} components, scene embeddings have {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("query contains non-finite values")]
    NonFinite,
    #[error("threshold {0} is outside [-1, 1]")]
    BadThreshold(f64),
    #[error("no views to evaluate")]
    EmptyEvaluation,
    #[error("view {0} has no ground-truth boxes")]
    NoBoxes(usize),
    #[error("line {line}: {msg}")]
    BoxParse { line: usize, msg: String },
}

/// A text query embedded in the scene's language space.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding {
    /// Unit norm unless all zero.
    pub vector: Vec<f32>,
    pub label: String,
}

impl QueryEmbedding {
    /// Normalizes nonzero vectors to unit length.
    pub fn new(vector: Vec<f32>, label: String) -> Result<Self, RetrievalError> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        let norm = vector.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        let vector = if norm > 0.0 { vector.iter().map(|&v| (v as f64 / norm) as f32).collect() } else { vector };
        Ok(QueryEmbedding { vector, label })
    }

    pub fn is_zero(&self) -> bool {
        self.vector.iter().all(|&v| v == 0.0)
    }

    fn check(&self) -> Result<(), RetrievalError> {
        if self.vector.len() != LANG_DIM {
            return Err(RetrievalError::DimMismatch { expected: LANG_DIM, got: self.vector.len() });
        }
        Ok(())
    }
}

#[cfg(test)]
thread_local! {
    static SCORE_EVALS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// Cosine similarity of every Gaussian's embedding with the query, with
/// zero vectors scoring 0. One evaluation per Gaussian.
pub fn relevance_scores(scene: &GaussianScene, query: &QueryEmbedding) -> Result<Vec<f64>, RetrievalError> {
    query.check()?;
    #[cfg(test)]
    SCORE_EVALS.with(|c| c.set(c.get() + scene.len()));
    Ok(scene.lang.par_iter().map(|l| cosine(l.iter().copied(), query.vector.iter().copied())).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub tau: f64,
    pub scores: Vec<f64>,
    /// Exactly the indices with `score > tau`, ascending.
    pub member_indices: Vec<usize>,
    /// Absent when nothing matched.
    pub bbox: Option<ObjectBox>,
}

impl RetrievalResult {
    pub fn is_empty(&self) -> bool {
        self.member_indices.is_empty()
    }
}

/// Selects the Gaussians scoring strictly above `tau`.
pub fn retrieve(scene: &GaussianScene, query: &QueryEmbedding, tau: f64) -> Result<RetrievalResult, RetrievalError> {
    if !(-1.0..=1.0).contains(&tau) {
        return Err(RetrievalError::BadThreshold(tau));
    }
    let scores = relevance_scores(scene, query)?;
    Ok(select(scores, tau, scene))
}

/// Thresholds precomputed scores.
pub fn select(scores: Vec<f64>, tau: f64, scene: &GaussianScene) -> RetrievalResult {
    let member_indices: Vec<usize> = scores.iter().enumerate().filter(|(_, &s)| s > tau).map(|(i, _)| i).collect();
    let bbox = if member_indices.is_empty() { None } else { Some(object_box(scene, &member_indices).expect("members are valid indices")) };
    RetrievalResult { tau, scores, member_indices, bbox }
}

/// A per-pixel score image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub width: usize,
    pub height: usize,
    pub scores: Vec<f64>,
}

impl ScoreMap {
    /// Highest-scoring pixel `(x, y)`; the first in row-major order wins ties.
    /// NaN never wins.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] || self.scores[best].is_nan() && !s.is_nan() {
                best = i;
            }
        }
        (best % self.width.max(1), best / self.width.max(1))
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.scores[y * self.width + x]
    }
}

/// Cosine between the rendered feature and the query at every pixel.
/// Pixels with no coverage score 0.
pub fn render_relevance_map(scene: &GaussianScene, camera: &Camera, query: &QueryEmbedding) -> Result<ScoreMap, RetrievalError> {
    query.check()?;
    let out = render(scene, camera, Channels::FEATURE);
    let feature = out.feature.expect("feature plane requested");
    let scores = feature.par_chunks(LANG_DIM).map(|f| cosine(f.iter().copied(), query.vector.iter().copied())).collect();
    Ok(ScoreMap { width: out.width, height: out.height, scores })
}

/// Ground-truth box in pixel coordinates, inclusive on both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct GtBox {
    pub label: String,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl GtBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as f64, y as f64);
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Parses lines `label x_min y_min x_max y_max`. The label may contain
/// spaces; the last four fields are the coordinates. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_gt_boxes(text: &str) -> Result<Vec<GtBox>, RetrievalError> {
    let mut boxes = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| RetrievalError::BoxParse { line: n + 1, msg: msg.to_string() };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 5 {
            return Err(err("expected `label x_min y_min x_max y_max`"));
        }
        let split = fields.len() - 4;
        let mut coords = [0.0f64; 4];
        for (c, f) in coords.iter_mut().zip(&fields[split..]) {
            *c = f.parse().map_err(|_| err(&format!("bad coordinate `{f}`")))?;
        }
        if coords[0] > coords[2] || coords[1] > coords[3] {
            return Err(err("min exceeds max"));
        }
        boxes.push(GtBox { label: fields[..split].join(" "), x_min: coords[0], y_min: coords[1], x_max: coords[2], y_max: coords[3] });
    }
    Ok(boxes)
}

pub fn load_gt_boxes(path: impl AsRef<Path>) -> std::io::Result<Result<Vec<GtBox>, RetrievalError>> {
    Ok(parse_gt_boxes(&std::fs::read_to_string(path)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    pub argmax: Vec<(usize, usize)>,
    pub correct: Vec<bool>,
}

impl LocalizationReport {
    pub fn hits(&self) -> usize {
        self.correct.iter().filter(|&&c| c).count()
    }

    pub fn total(&self) -> usize {
        self.correct.len()
    }

    pub fn accuracy(&self) -> f64 {
        self.hits() as f64 / self.total() as f64
    }
}

impl fmt::Display for LocalizationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}", self.accuracy())
    }
}

/// A view is correct iff its argmax pixel lies inside any of its boxes.
pub fn evaluate_localization(views: &[(ScoreMap, Vec<GtBox>)]) -> Result<LocalizationReport, RetrievalError> {
    if views.is_empty() {
        return Err(RetrievalError::EmptyEvaluation);
    }
    let mut argmax = Vec::with_capacity(views.len());
    let mut correct = Vec::with_capacity(views.len());
    for (i, (map, boxes)) in views.iter().enumerate() {
        if boxes.is_empty() {
            return Err(RetrievalError::NoBoxes(i));
        }
        let (x, y) = map.argmax();
        argmax.push((x, y));
        correct.push(boxes.iter().any(|b| b.contains(x, y)));
    }
    Ok(LocalizationReport { argmax, correct })
}

/// Turbo colormap, polynomial fit; `x` is clamped to `[0, 1]`.
pub fn turbo(x: f64) -> [u8; 3] {
    let x = x.clamp(0.0, 1.0);
    let poly = |c: [f64; 6]| c.iter().rev().fold(0.0, |acc, &k| acc * x + k);
    let r = poly([0.13572138, 4.61539260, -42.66032258, 132.13108234, -152.94239396, 59.28637943]);
    let g = poly([0.09140261, 2.19418839, 4.84296658, -14.18503333, 4.27729857, 2.82956604]);
    let b = poly([0.10667330, 12.64194608, -60.58204836, 110.36276771, -89.90310912, 27.34824973]);
    [r, g, b].map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Heatmap RGB bytes, with scores min-max normalized over the map.
pub fn heatmap_rgb8(map: &ScoreMap) -> Vec<u8> {
    let (lo, hi) =
        map.scores.iter().filter(|s| s.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let span = hi - lo;
    map.scores.iter().flat_map(|&s| turbo(if span > 0.0 { (s - lo) / span } else { 0.0 })).collect()
}
