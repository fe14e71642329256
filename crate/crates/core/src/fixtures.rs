//! Synthetic scenes and cameras for tests, demos and the acceptance suite.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::camera::{Camera, Intrinsics};
use crate::scene::{Gaussian, GaussianScene};
use crate::LANG_DIM;

/// Camera at the origin looking down +z, focal length `1.2 · width`.
pub fn front_camera(width: u32, height: u32) -> Camera {
    let intr =
        Intrinsics { fx: 1.2 * width as f64, fy: 1.2 * width as f64, cx: width as f64 / 2.0, cy: height as f64 / 2.0, width, height };
    Camera::new(intr, Matrix3::identity(), Vector3::zeros()).expect("valid camera")
}

/// Uniformly random unit quaternion `(w, x, y, z)`.
pub fn random_quat(rng: &mut impl Rng) -> [f32; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-3 {
            return q.map(|c| (c / n) as f32);
        }
    }
}

/// Value ranges for [`random_scene`].
#[derive(Debug, Clone, Copy)]
pub struct RandomSceneParams {
    pub depth: (f64, f64),
    pub log_scale: (f64, f64),
    pub opacity_logit: (f64, f64),
    /// Fraction of the frustum half-width used for placement (>1 places some
    /// Gaussians partly off-screen).
    pub spread: f64,
}

impl Default for RandomSceneParams {
    fn default() -> Self {
        RandomSceneParams { depth: (2.0, 6.0), log_scale: (-3.2, -0.9), opacity_logit: (-3.0, 3.0), spread: 1.1 }
    }
}

/// `n` Gaussians scattered through the frustum of `camera`, with random
/// colors in `[0, 1]` and embeddings in `[-1, 1]`.
pub fn random_scene(rng: &mut impl Rng, n: usize, camera: &Camera, params: &RandomSceneParams) -> GaussianScene {
    let mut scene = GaussianScene::with_capacity(n);
    let inv = camera.rotation.transpose();
    for _ in 0..n {
        let z = rng.random_range(params.depth.0..params.depth.1);
        let u = rng.random_range(-params.spread..params.spread) * camera.width as f64 / 2.0;
        let v = rng.random_range(-params.spread..params.spread) * camera.height as f64 / 2.0;
        let cam = Vector3::new(u * z / camera.fx, v * z / camera.fy, z);
        let world = inv * (cam - camera.translation);
        let mut lang = [0.0f32; LANG_DIM];
        lang.iter_mut().for_each(|l| *l = rng.random_range(-1.0..1.0));
        scene.push(Gaussian {
            position: [world.x as f32, world.y as f32, world.z as f32],
            scale: std::array::from_fn(|_| rng.random_range(params.log_scale.0..params.log_scale.1) as f32),
            rotation: random_quat(rng),
            color: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            opacity_logit: rng.random_range(params.opacity_logit.0..params.opacity_logit.1) as f32,
            lang,
        });
    }
    scene
}

/// Seeded [`random_scene`] with default ranges.
pub fn seeded_scene(seed: u64, n: usize, camera: &Camera) -> GaussianScene {
    random_scene(&mut ChaCha8Rng::seed_from_u64(seed), n, camera, &RandomSceneParams::default())
}

/// Unit vector along axis `k` of the embedding space.
pub fn basis_lang(k: usize) -> [f32; LANG_DIM] {
    let mut v = [0.0; LANG_DIM];
    v[k] = 1.0;
    v
}

/// 50 Gaussians embedded along axis 0 (clustered near `x = −1`) followed by
/// 50 along axis 1 (near `x = +1`), all at `z ≈ 4`.
pub fn two_cluster_scene(seed: u64) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = GaussianScene::with_capacity(100);
    for (axis, cx) in [(0usize, -1.0f32), (1, 1.0)] {
        for _ in 0..50 {
            scene.push(Gaussian {
                position: [cx + rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 4.0 + rng.random_range(-0.3..0.3)],
                scale: [-2.5; 3],
                rotation: random_quat(&mut rng),
                color: [0.5; 3],
                opacity_logit: 2.0,
                lang: basis_lang(axis),
            });
        }
    }
    scene
}

/// Square intrinsics with the principal point at the image center and a
/// horizontal field of view of about 45°.
pub fn square_intrinsics(size: u32) -> Intrinsics {
    Intrinsics { fx: 1.2 * size as f64, fy: 1.2 * size as f64, cx: size as f64 / 2.0, cy: size as f64 / 2.0, width: size, height: size }
}

/// World up for the orbit fixtures (`−y`, since camera `y` points down).
pub fn world_up() -> Vector3<f64> {
    -Vector3::y()
}

/// Point at azimuth `az_deg` (measured from +x toward +z), elevation
/// `el_deg` above the `y = 0` plane and distance `radius` from `center`.
pub fn orbit_point(center: [f64; 3], az_deg: f64, el_deg: f64, radius: f64) -> Vector3<f64> {
    let (az, el) = (az_deg.to_radians(), el_deg.to_radians());
    Vector3::from(center) + radius * Vector3::new(el.cos() * az.cos(), -el.sin(), el.cos() * az.sin())
}

/// `count` look-at cameras on an orbit around `center`, at azimuths
/// `az_start + k · step`. A span of 360° spaces them over the full circle;
/// any other span includes both endpoints.
pub fn orbit_cameras(count: usize, center: [f64; 3], radius: f64, el_deg: f64, az_start: f64, az_span: f64, size: u32) -> Vec<Camera> {
    let step = if az_span >= 360.0 { 360.0 / count as f64 } else { az_span / (count.max(2) - 1) as f64 };
    (0..count)
        .map(|k| {
            let eye = orbit_point(center, az_start + step * k as f64, el_deg, radius);
            Camera::look_at(square_intrinsics(size), eye, Vector3::from(center), world_up()).expect("valid orbit camera")
        })
        .collect()
}

fn blob(rng: &mut impl Rng, scene: &mut GaussianScene, n: usize, center: [f32; 3], radius: f32, color: [f32; 3], lang: [f32; LANG_DIM]) {
    for _ in 0..n {
        scene.push(Gaussian {
            position: std::array::from_fn(|a| center[a] + rng.random_range(-radius..radius)),
            scale: [-2.3; 3],
            rotation: random_quat(rng),
            color,
            opacity_logit: 2.0,
            lang,
        });
    }
}

/// Object A (40 gray Gaussians embedded along axis 0, near `x = −0.5`)
/// followed by object B (40 blue Gaussians along axis 1, near `x = +0.5`).
pub fn two_object_scene(seed: u64) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = GaussianScene::with_capacity(80);
    blob(&mut rng, &mut scene, 40, [-0.5, 0.0, 0.0], 0.25, [0.6; 3], basis_lang(0));
    blob(&mut rng, &mut scene, 40, [0.5, 0.0, 0.0], 0.25, [0.2, 0.4, 0.8], basis_lang(1));
    scene
}

/// A 12 × 12 grid of flat floor Gaussians at `y = 0.4` (embedded along axis
/// 1) followed by a 30-Gaussian object resting on it (axis 0).
pub fn object_on_floor_scene(seed: u64) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = GaussianScene::with_capacity(174);
    for i in 0..12 {
        for j in 0..12 {
            scene.push(Gaussian {
                position: [-1.1 + 0.2 * i as f32, 0.4, -1.1 + 0.2 * j as f32],
                scale: [-1.8, -4.5, -1.8],
                rotation: [1.0, 0.0, 0.0, 0.0],
                color: [0.4, 0.3, 0.2],
                opacity_logit: 3.0,
                lang: basis_lang(1),
            });
        }
    }
    blob(&mut rng, &mut scene, 30, [0.0, 0.1, 0.0], 0.2, [0.9, 0.9, 0.1], basis_lang(0));
    scene
}
