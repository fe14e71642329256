use nalgebra::{Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use super::{COV2D_DILATION, CUTOFF_POWER, NEAR_PLANE};
use crate::camera::Camera;
use crate::math::{normalize_quat, quat_to_matrix, sigmoid, vec3};
use crate::scene::GaussianScene;

/// A Gaussian in screen space, plus what the backward pass needs to get back
/// to world space.
#[derive(Debug, Clone)]
pub struct ProjectedGaussian {
    /// Index into the source scene.
    pub index: usize,
    pub mean2d: [f64; 2],
    /// Dilated 2D covariance `(xx, xy, yy)` in px².
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, `(xx, xy, yy)`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    /// Inclusive pixel range `[x0, x1] × [y0, y1]` whose centers may fall in
    /// the 3σ ellipse.
    pub pixel_rect: [usize; 4],
    pub(crate) cam_pos: Vector3<f64>,
    pub(crate) cov_cam: Matrix3<f64>,
    pub(crate) jacobian: Matrix2x3<f64>,
    pub(crate) rotation: Matrix3<f64>,
    pub(crate) scale: Vector3<f64>,
}

/// Projects without culling against the image; `None` behind the near plane
/// or for numerically degenerate Gaussians.
pub(crate) fn project_one(scene: &GaussianScene, camera: &Camera, i: usize) -> Option<ProjectedGaussian> {
    let cam_pos = camera.to_camera(&vec3(scene.positions[i]));
    let (x, y, z) = (cam_pos.x, cam_pos.y, cam_pos.z);
    if !(z > NEAR_PLANE) {
        return None;
    }
    let (q, _) = normalize_quat(scene.rotations[i].map(|c| c as f64));
    let rotation = quat_to_matrix(q);
    let scale = vec3(scene.scales[i]).map(f64::exp);
    let m = rotation * Matrix3::from_diagonal(&scale);
    let cov_world = m * m.transpose();
    let cov_cam = camera.rotation * cov_world * camera.rotation.transpose();
    let jacobian = Matrix2x3::new(camera.fx / z, 0.0, -camera.fx * x / (z * z), 0.0, camera.fy / z, -camera.fy * y / (z * z));
    let cov = jacobian * cov_cam * jacobian.transpose();
    let cov2d = [cov[(0, 0)] + COV2D_DILATION, cov[(0, 1)], cov[(1, 1)] + COV2D_DILATION];
    let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cov2d[2] / det, -cov2d[1] / det, cov2d[0] / det];
    let mean2d = [camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy];
    Some(ProjectedGaussian {
        index: i,
        mean2d,
        cov2d,
        conic,
        depth: z,
        opacity: sigmoid(scene.opacity_logits[i] as f64),
        pixel_rect: [0; 4],
        cam_pos,
        cov_cam,
        jacobian,
        rotation,
        scale,
    })
}

/// Inclusive pixel-index range of centers `k + 0.5` inside `[lo, hi]`,
/// clipped to `[0, n)`.
fn pixel_span(lo: f64, hi: f64, n: u32) -> Option<(usize, usize)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    (first <= last).then_some((first as usize, last as usize))
}

/// Projects and culls the scene, returning Gaussians sorted by ascending
/// depth (ties broken by scene index). A Gaussian is culled when it sits
/// behind the near plane or when no pixel center lies inside the bounding
/// box of its 3σ ellipse.
pub fn project(scene: &GaussianScene, camera: &Camera) -> Vec<ProjectedGaussian> {
    let mut out: Vec<ProjectedGaussian> = (0..scene.len())
        .into_par_iter()
        .filter_map(|i| {
            let mut g = project_one(scene, camera, i)?;
            let r = CUTOFF_POWER.sqrt();
            let ex = r * g.cov2d[0].sqrt();
            let ey = r * g.cov2d[2].sqrt();
            let (x0, x1) = pixel_span(g.mean2d[0] - ex, g.mean2d[0] + ex, camera.width)?;
            let (y0, y1) = pixel_span(g.mean2d[1] - ey, g.mean2d[1] + ey, camera.height)?;
            g.pixel_rect = [x0, y0, x1, y1];
            Some(g)
        })
        .collect();
    out.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    out
}
