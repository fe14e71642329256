//! Four-view camera rings around the edited object.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rand::Rng;

use super::EditError;
use crate::camera::Camera;
use crate::scene::ObjectBox;

/// Azimuth coverage (degrees) above which the dataset counts as a full orbit.
pub const FULL_CIRCLE_COVERAGE: f64 = 300.0;
/// Elevations are clamped to this magnitude (degrees) to keep look-at
/// cameras well defined.
pub const MAX_ELEVATION: f64 = 85.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingMode {
    /// 90° spacing with a random starting azimuth.
    FullCircle,
    /// Evenly spaced between the dataset's azimuth bounds.
    Arc,
    /// Cameras taken from the dataset as they are.
    Dataset,
}

#[derive(Debug, Clone)]
pub struct ViewRing {
    pub cameras: Vec<Camera>,
    /// Azimuth of each camera about the object center, degrees in `[0, 360)`.
    pub azimuths: Vec<f64>,
    pub mode: RingMode,
}

/// Orbit frame around an object: world up plus two horizontal axes.
#[derive(Debug, Clone, Copy)]
pub struct OrbitFrame {
    pub center: Vector3<f64>,
    pub up: Vector3<f64>,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
}

impl OrbitFrame {
    /// Look-at cameras keep their right vector level, so world up is the
    /// direction orthogonal to every camera's right vector, signed to agree
    /// with the mean image-up. When the right vectors do not span a plane
    /// the mean image-up is used directly.
    pub fn new(center: [f64; 3], cameras: &[Camera]) -> Self {
        let mut mean_up: Vector3<f64> = cameras.iter().map(|c| c.up()).sum();
        if mean_up.norm() < 1e-9 {
            mean_up = -Vector3::y();
        }
        let scatter: Matrix3<f64> = cameras
            .iter()
            .map(|c| {
                let r = c.rotation.row(0).transpose();
                r * r.transpose()
            })
            .sum();
        let eig = SymmetricEigen::new(scatter);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let up = if eig.eigenvalues[order[1]] > 1e-6 * eig.eigenvalues.sum() {
            let n = eig.eigenvectors.column(order[0]).into_owned();
            if n.dot(&mean_up) < 0.0 {
                -n
            } else {
                n
            }
        } else {
            mean_up.normalize()
        };
        let helper = if up.x.abs() < 0.9 { Vector3::x() } else { Vector3::z() };
        let e1 = (helper - up * up.dot(&helper)).normalize();
        let e2 = up.cross(&e1);
        OrbitFrame { center: Vector3::from(center), up, e1, e2 }
    }

    /// `(azimuth°, elevation°, radius)` of a point.
    pub fn spherical(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        let d = p - self.center;
        let r = d.norm();
        let az = d.dot(&self.e2).atan2(d.dot(&self.e1)).to_degrees().rem_euclid(360.0);
        let el = if r > 0.0 { (d.dot(&self.up) / r).clamp(-1.0, 1.0).asin().to_degrees() } else { 0.0 };
        (az, el, r)
    }

    pub fn point(&self, az_deg: f64, el_deg: f64, r: f64) -> Vector3<f64> {
        let (az, el) = (az_deg.to_radians(), el_deg.to_radians());
        self.center + r * (el.cos() * (az.cos() * self.e1 + az.sin() * self.e2) + el.sin() * self.up)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Start and angular span of the smallest arc holding every azimuth.
fn azimuth_arc(mut az: Vec<f64>) -> (f64, f64) {
    az.sort_by(f64::total_cmp);
    let n = az.len();
    let (mut gap, mut start) = (360.0 - az[n - 1] + az[0], az[0]);
    for k in 1..n {
        let g = az[k] - az[k - 1];
        if g > gap {
            gap = g;
            start = az[k];
        }
    }
    (start, 360.0 - gap)
}

/// Four look-at cameras around `object`, using the intrinsics of the first
/// dataset camera and the median dataset radius and elevation.
pub fn select_views(object: &ObjectBox, dataset: &[Camera], rng: &mut impl Rng) -> Result<ViewRing, EditError> {
    if dataset.is_empty() {
        return Err(EditError::NoCameras);
    }
    if object.is_degenerate() {
        return Err(EditError::DegenerateObject);
    }
    let frame = OrbitFrame::new(object.center, dataset);
    let sph: Vec<(f64, f64, f64)> = dataset.iter().map(|c| frame.spherical(&c.center())).collect();
    let radius = median(sph.iter().map(|s| s.2).collect());
    let elevation = median(sph.iter().map(|s| s.1).collect()).clamp(-MAX_ELEVATION, MAX_ELEVATION);
    let (arc_start, span) = azimuth_arc(sph.iter().map(|s| s.0).collect());
    let (mode, azimuths): (RingMode, Vec<f64>) = if span >= FULL_CIRCLE_COVERAGE {
        let start = rng.random_range(0.0..360.0);
        (RingMode::FullCircle, (0..4).map(|k| start + 90.0 * k as f64).collect())
    } else {
        (RingMode::Arc, (0..4).map(|k| arc_start + span * k as f64 / 3.0).collect())
    };
    let intr = dataset[0].intrinsics();
    let cameras = azimuths
        .iter()
        .map(|&az| Camera::look_at(intr, frame.point(az, elevation, radius.max(1e-6)), frame.center, frame.up))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ViewRing { cameras, azimuths: azimuths.into_iter().map(|a| a.rem_euclid(360.0)).collect(), mode })
}

/// Four distinct dataset cameras in ascending dataset order.
pub fn dataset_views(object: &ObjectBox, dataset: &[Camera], rng: &mut impl Rng) -> Result<ViewRing, EditError> {
    if dataset.len() < 4 {
        return Err(EditError::NotEnoughCameras(dataset.len()));
    }
    let mut idx = sample(rng, dataset.len(), 4).into_vec();
    idx.sort_unstable();
    let frame = OrbitFrame::new(object.center, dataset);
    let cameras: Vec<Camera> = idx.iter().map(|&i| dataset[i].clone()).collect();
    Ok(ViewRing { azimuths: cameras.iter().map(|c| frame.spherical(&c.center()).0).collect(), cameras, mode: RingMode::Dataset })
}
