//! Object removal with hole masks for external inpainting.

use super::EditError;
use crate::camera::Camera;
use crate::features::MaskSet;
use crate::raster::{render, Channels, RenderOutput};
use crate::retrieval::{retrieve, QueryEmbedding};
use crate::scene::GaussianScene;

/// Pixels covered at or above this alpha count as occupied.
pub const HOLE_ALPHA: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct Deletion {
    pub scene: GaussianScene,
    /// Removed input indices, ascending.
    pub removed: Vec<usize>,
    /// One single-mask set per camera.
    pub holes: Vec<MaskSet>,
}

/// Pixels occupied before and no longer occupied after.
pub fn hole_mask(before: &RenderOutput, after: &RenderOutput) -> Vec<bool> {
    before.alpha.iter().zip(&after.alpha).map(|(&a, &b)| a >= HOLE_ALPHA && b < HOLE_ALPHA).collect()
}

/// Removes the Gaussians retrieved at `tau` and reports, per camera, which
/// pixels lost their coverage.
pub fn delete_object(scene: &GaussianScene, query: &QueryEmbedding, tau: f64, cameras: &[Camera]) -> Result<Deletion, EditError> {
    let result = retrieve(scene, query, tau)?;
    if result.is_empty() {
        return Err(EditError::EmptyRetrieval { tau });
    }
    let mut drop = vec![false; scene.len()];
    for &i in &result.member_indices {
        drop[i] = true;
    }
    let reduced = scene.retain_indices(|i| !drop[i]);
    let holes = cameras
        .iter()
        .map(|cam| {
            let before = render(scene, cam, Channels::COLOR);
            let after = render(&reduced, cam, Channels::COLOR);
            let mut set = MaskSet::new(cam.height as usize, cam.width as usize);
            set.push(hole_mask(&before, &after));
            set
        })
        .collect();
    Ok(Deletion { scene: reduced, removed: result.member_indices, holes })
}
