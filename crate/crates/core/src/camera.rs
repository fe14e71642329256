//! Pinhole cameras.
//!
//! Camera space follows the computer-vision convention: +x right, +y down,
//! +z forward. Pixel `(u, v)` covers `[u, u+1) x [v, v+1)` and is sampled at
//! its center `(u + 0.5, v + 0.5)`.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::math::orthonormal_defect;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("focal lengths must be positive and finite (fx = {fx}, fy = {fy})")]
    BadFocal { fx: f64, fy: f64 },
    #[error("image size must be at least 1x1 (got {width}x{height})")]
    BadSize { width: u32, height: u32 },
    #[error("rotation is not orthonormal (defect {defect:e})")]
    NotOrthonormal { defect: f64 },
    #[error("camera pose contains non-finite values")]
    NonFinite,
    #[error("degenerate look-at: eye coincides with target or up is parallel to the view direction")]
    DegenerateLookAt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
}

/// Intrinsics shared by look-at constructions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(intr: Intrinsics, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, CameraError> {
        let cam =
            Camera { fx: intr.fx, fy: intr.fy, cx: intr.cx, cy: intr.cy, width: intr.width, height: intr.height, rotation, translation };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    pub fn look_at(intr: Intrinsics, eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self, CameraError> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(CameraError::DegenerateLookAt);
        }
        let forward = forward.normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(CameraError::DegenerateLookAt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Camera::new(intr, rotation, translation)
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics { fx: self.fx, fy: self.fy, cx: self.cx, cy: self.cy, width: self.width, height: self.height }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(CameraError::BadFocal { fx: self.fx, fy: self.fy });
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::BadSize { width: self.width, height: self.height });
        }
        if !(self.cx.is_finite() && self.cy.is_finite())
            || self.rotation.iter().any(|v| !v.is_finite())
            || self.translation.iter().any(|v| !v.is_finite())
        {
            return Err(CameraError::NonFinite);
        }
        let defect = orthonormal_defect(&self.rotation);
        if defect > 1e-6 {
            return Err(CameraError::NotOrthonormal { defect });
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Viewing direction in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    /// Image-up direction in world coordinates.
    pub fn up(&self) -> Vector3<f64> {
        -self.rotation.row(1).transpose()
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Projects a world point; `None` when it is not in front of the camera.
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z))
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Row-major `[R | t]` as 12 floats (the wire-protocol pose layout).
    pub fn pose_f32(&self) -> [f32; 12] {
        let mut out = [0.0f32; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)] as f32;
            }
            out[r * 4 + 3] = self.translation[r] as f32;
        }
        out
    }

    /// Inverse of [`Camera::pose_f32`] given intrinsics. The rotation is
    /// re-orthonormalized to absorb f32 rounding.
    pub fn from_pose_f32(intr: Intrinsics, pose: &[f32; 12]) -> Result<Self, CameraError> {
        let m = Matrix3::from_fn(|r, c| pose[r * 4 + c] as f64);
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.ok_or(CameraError::NonFinite)?, svd.v_t.ok_or(CameraError::NonFinite)?);
        let rotation = u * vt;
        let translation = Vector3::new(pose[3] as f64, pose[7] as f64, pose[11] as f64);
        Camera::new(intr, rotation, translation)
    }
}
