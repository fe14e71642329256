//! Fixtures for single score-distillation steps and densification.

use std::sync::Arc;

use lesplat_core::edit::*;
use lesplat_core::fixtures::{orbit_cameras, two_object_scene};
use lesplat_core::guidance::*;
use lesplat_core::retrieval::relevance_scores;
use lesplat_core::GaussianScene;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::scenarios::{axis_query, bits};

pub struct Failing;

impl GuidanceProvider for Failing {
    fn name(&self) -> &str {
        "failing"
    }
    fn capability(&self) -> Capability {
        Capability::MultiView
    }
    fn guide(&self, _: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        Err(GuidanceError::Failed("backend down".into()))
    }
}

/// Returns `λ1 · a + λ2 · b` of two inner providers, combined the way the
/// step combines them.
pub struct PreCombined<'a> {
    pub a: &'a dyn GuidanceProvider,
    pub b: &'a dyn GuidanceProvider,
    pub lambda: (f64, f64),
}

impl GuidanceProvider for PreCombined<'_> {
    fn name(&self) -> &str {
        "precombined"
    }
    fn capability(&self) -> Capability {
        Capability::SingleView
    }
    fn guide(&self, r: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        let (ra, rb) = (self.a.guide(r)?, self.b.guide(r)?);
        let (l1, l2) = (self.lambda.0 as f32, self.lambda.1 as f32);
        let residuals = ra
            .residuals
            .iter()
            .zip(&rb.residuals)
            .map(|(x, y)| Image {
                height: x.height,
                width: x.width,
                data: x.data.iter().zip(&y.data).map(|(p, q)| l1 * p + l2 * q).collect(),
            })
            .collect();
        Ok(GuidanceResponse { residuals })
    }
}

pub fn tint() -> PhotometricProvider {
    PhotometricProvider::new(TargetSource::Tint { rgb: [1.0, 0.0, 0.0], strength: 0.6 }, Capability::SingleView)
}

pub fn swirl() -> PhotometricProvider {
    PhotometricProvider::new(
        TargetSource::Transform(Arc::new(|v, img: &Image| {
            let mut out = img.clone();
            for (k, x) in out.data.iter_mut().enumerate() {
                *x = (*x + 0.1 * ((k + 7 * v) % 5) as f32).min(1.0);
            }
            out
        })),
        Capability::MultiView,
    )
}

pub struct Setup {
    pub scene: GaussianScene,
    pub ring: ViewRing,
    pub originals: Vec<Image>,
    pub gate: Vec<f64>,
    pub cfg: EditConfig,
}

pub fn setup() -> Setup {
    let scene = two_object_scene(5);
    let cameras = orbit_cameras(4, [0.0; 3], 3.5, 20.0, 30.0, 360.0, 32);
    let ring = ViewRing { azimuths: vec![0.0; 4], cameras, mode: RingMode::Dataset };
    let originals = render_views(&scene, &ring);
    let cfg = EditConfig { lr_color: 1e-2, lr_position: 1e-3, ..EditConfig::default() };
    let scores = relevance_scores(&scene, &axis_query(0)).unwrap();
    let gate = scores.iter().map(|&s| score_gate(s, &cfg)).collect();
    Setup { scene, ring, originals, gate, cfg }
}

pub fn step(
    s: &Setup,
    scene: &mut GaussianScene,
    state: &mut OptimState,
    providers: Providers<'_>,
    lambda: (f64, f64),
    seed: u64,
) -> Result<StepReport, EditError> {
    let input = StepInput { ring: &s.ring, originals: &s.originals, gate: &s.gate, lambda, t: 0.1, seed };
    csd_step(scene, state, providers, &input, &s.cfg)
}

pub fn scene_bits(s: &GaussianScene) -> Vec<Vec<u32>> {
    (0..s.len()).map(|i| bits(&s.get(i))).collect()
}

pub fn densify_fixture(n: usize, candidates: usize, seed: u64) -> (GaussianScene, Vec<f64>, Vec<f64>) {
    let cam = lesplat_core::fixtures::front_camera(32, 32);
    let mut scene = lesplat_core::fixtures::seeded_scene(seed, n, &cam);
    for (i, l) in scene.lang.iter_mut().enumerate() {
        l[0] = i as f32;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let grads: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
    let mut gate = vec![0.0; n];
    for g in gate.iter_mut().take(candidates) {
        *g = 0.5;
    }
    // Shuffle which Gaussians are candidates.
    let perm = rand::seq::index::sample(&mut rng, n, n).into_vec();
    let gate = perm.iter().map(|&p| gate[p]).collect();
    (scene, grads, gate)
}
