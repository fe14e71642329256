//! End-to-end edit scenarios shared by the edit suite and the acceptance run.

use std::path::Path;
use std::time::{Duration, Instant};

use lesplat_core::dataset::{CameraRecord, DatasetManifest, ImageRecord};
use lesplat_core::edit::{edit, EditConfig, EditObserver, EditOutcome, Providers, StepLog, ViewMode};
use lesplat_core::features::FeatureMap;
use lesplat_core::fixtures::{basis_lang, orbit_cameras, random_quat, two_object_scene};
use lesplat_core::guidance::{Capability, FileTargetProvider, Image};
use lesplat_core::raster::{render, Channels};
use lesplat_core::retrieval::{retrieve, GtBox, QueryEmbedding, ScoreMap};
use lesplat_core::{Camera, Gaussian, GaussianScene, LANG_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle_weights;

pub fn axis_query(axis: usize) -> QueryEmbedding {
    QueryEmbedding::new(basis_lang(axis).to_vec(), format!("axis {axis}")).unwrap()
}

pub fn bits(g: &Gaussian) -> Vec<u32> {
    let mut v: Vec<u32> = g.position.iter().chain(&g.scale).chain(&g.rotation).chain(&g.color).map(|x| x.to_bits()).collect();
    v.push(g.opacity_logit.to_bits());
    v.extend(g.lang.iter().map(|x| x.to_bits()));
    v
}

/// Input Gaussians with gate 0 that are missing from the output or changed.
pub fn frozen_violations(input: &GaussianScene, gate0: &[usize], out: &EditOutcome) -> usize {
    gate0
        .iter()
        .filter(|&&i| match out.origin.iter().position(|o| *o == Some(i)) {
            Some(j) => bits(&out.scene.get(j)) != bits(&input.get(i)),
            None => true,
        })
        .count()
}

/// Writes targets as a dataset directory of 3-channel feature containers.
pub fn write_targets(dir: &Path, cameras: &[Camera], targets: &[Image]) {
    let mut manifest = DatasetManifest::default();
    for (k, (cam, img)) in cameras.iter().zip(targets).enumerate() {
        let id = format!("cam{k}");
        let name = format!("{id}.tgrf");
        lesplat_core::container::save_feature_map(&img.to_feature_map(&id), dir.join(&name)).unwrap();
        manifest.cameras.push(CameraRecord::from_camera(&id, cam));
        manifest.images.push(ImageRecord { name: id.clone(), camera_id: id, feature: name });
    }
    manifest.save(dir).unwrap();
}

/// Mean Euclidean RGB distance between two images over the masked pixels.
pub fn masked_distance(a: &Image, b: &Image, mask: &[bool]) -> (f64, usize) {
    let n = a.pixel_count();
    let (mut sum, mut count) = (0.0, 0);
    for p in (0..n).filter(|&p| mask[p]) {
        let d2: f64 = (0..3).map(|c| (a.data[c * n + p] as f64 - b.data[c * n + p] as f64).powi(2)).sum();
        sum += d2.sqrt();
        count += 1;
    }
    (sum, count)
}

pub struct RedTint {
    pub members: usize,
    pub gate_zero: usize,
    pub frozen_violations: usize,
    pub distance_before: f64,
    pub distance_after: f64,
    pub final_gaussians: usize,
    pub elapsed: Duration,
}

/// Two-object scene; file-based targets tint object A toward red in every
/// view. The edit retrieves A and must leave B untouched.
pub fn red_tint_edit(steps: usize, workdir: &Path) -> RedTint {
    let scene = two_object_scene(7);
    let cameras = orbit_cameras(8, [0.0; 3], 3.5, 20.0, 10.0, 360.0, 48);
    let mut tinted = scene.clone();
    for c in &mut tinted.colors[..40] {
        *c = [0.3 * c[0] + 0.7, 0.3 * c[1], 0.3 * c[2]];
    }
    let targets: Vec<Image> = cameras.iter().map(|c| Image::from_render(&render(&tinted, c, Channels::COLOR))).collect();
    write_targets(workdir, &cameras, &targets);
    let provider = FileTargetProvider::load(workdir, Capability::SingleView).unwrap();

    let only_a = scene.retain_indices(|i| i < 40);
    let masks: Vec<Vec<bool>> =
        cameras.iter().map(|c| render(&only_a, c, Channels::COLOR).alpha.iter().map(|&a| a >= 0.5).collect()).collect();
    let distance = |s: &GaussianScene| {
        let (mut sum, mut count) = (0.0, 0);
        for ((cam, target), mask) in cameras.iter().zip(&targets).zip(&masks) {
            let (s, n) = masked_distance(&Image::from_render(&render(s, cam, Channels::COLOR)), target, mask);
            sum += s;
            count += n;
        }
        sum / count as f64
    };

    let cfg = EditConfig {
        prompt: "make the left object red".into(),
        steps,
        views: ViewMode::Dataset,
        lr_color: 1e-2,
        seed: 3,
        ..EditConfig::default()
    };
    let start = Instant::now();
    let out = edit(&scene, &axis_query(0), &cfg, &cameras, Providers { image: &provider, multi_view: Some(&provider) }, &mut ()).unwrap();
    let elapsed = start.elapsed();
    let gate0: Vec<usize> = (40..80).collect();
    RedTint {
        members: out.members,
        gate_zero: gate0.len(),
        frozen_violations: frozen_violations(&scene, &gate0, &out),
        distance_before: distance(&scene),
        distance_after: distance(&out.scene),
        final_gaussians: out.scene.len(),
        elapsed,
    }
}

/// 50 Gaussians in a ball of radius 0.5 around the origin, all embedded
/// along axis 0.
pub fn ball_scene(seed: u64) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = GaussianScene::with_capacity(50);
    for _ in 0..50 {
        scene.push(Gaussian {
            position: std::array::from_fn(|_| rng.random_range(-0.5..0.5)),
            scale: std::array::from_fn(|_| rng.random_range(-2.4..-1.8)),
            rotation: random_quat(&mut rng),
            color: std::array::from_fn(|_| rng.random_range(0.1..0.9)),
            opacity_logit: rng.random_range(0.0..2.0),
            lang: basis_lang(0),
        });
    }
    scene
}

struct Curve<'a> {
    targets: &'a [Image],
    all: Vec<bool>,
    values: Vec<f64>,
}

impl EditObserver for Curve<'_> {
    fn on_step(&mut self, _: &GaussianScene, _: &StepLog, renders: &[Image]) -> Result<(), lesplat_core::edit::EditError> {
        let (mut sum, mut count) = (0.0, 0);
        for (r, t) in renders.iter().zip(self.targets) {
            let (s, n) = masked_distance(r, t, &self.all);
            sum += s;
            count += n;
        }
        self.values.push(sum / count as f64);
        Ok(())
    }
}

/// Color-only photometric edit toward red-tinted targets, alongside an
/// independent gradient-descent loop built on oracle blend weights. Returns
/// the per-step mean pixel distance of both, measured before each update.
pub fn photometric_curves(steps: usize, lr: f64) -> (Vec<f64>, Vec<f64>) {
    let scene = ball_scene(21);
    let cameras = orbit_cameras(4, [0.0; 3], 3.0, 15.0, 0.0, 360.0, 24);
    let mut tinted = scene.clone();
    for c in &mut tinted.colors {
        *c = [0.5 * c[0] + 0.5, 0.5 * c[1], 0.5 * c[2]];
    }
    let targets: Vec<Image> = cameras.iter().map(|c| Image::from_render(&render(&tinted, c, Channels::COLOR))).collect();
    let provider = FileTargetProvider::from_targets(
        cameras.iter().map(|c| c.pose_f32()).zip(targets.iter().cloned()).collect(),
        Capability::SingleView,
    );

    let cfg = EditConfig {
        steps,
        views: ViewMode::Dataset,
        lambda_mv0: 0.0,
        densify_interval: 0,
        lr_position: 0.0,
        lr_scale: 0.0,
        lr_rotation: 0.0,
        lr_opacity: 0.0,
        lr_color: lr,
        ..EditConfig::default()
    };
    let mut curve = Curve { targets: &targets, all: vec![true; 24 * 24], values: Vec::new() };
    edit(&scene, &axis_query(0), &cfg, &cameras, Providers { image: &provider, multi_view: None }, &mut curve).unwrap();

    // Oracle: fixed geometry, so each view is linear in the colors.
    let weights: Vec<Vec<Vec<(usize, f64)>>> = cameras.iter().map(|c| oracle_weights(&scene, c)).collect();
    let target: Vec<Vec<[f64; 3]>> = targets
        .iter()
        .map(|t| {
            let n = t.pixel_count();
            (0..n).map(|p| std::array::from_fn(|c| t.data[c * n + p] as f64)).collect()
        })
        .collect();
    let n = scene.len();
    let mut colors: Vec<[f64; 3]> = scene.colors.iter().map(|c| c.map(f64::from)).collect();
    let (mut m, mut v) = (vec![[0.0f64; 3]; n], vec![[0.0f64; 3]; n]);
    let mut oracle = Vec::with_capacity(steps);
    for step in 1..=steps {
        let mut grad = vec![[0.0f64; 3]; n];
        let (mut dist, mut count) = (0.0, 0);
        for (w, t) in weights.iter().zip(&target) {
            for (pix, tp) in w.iter().zip(t) {
                let mut x = [0.0f64; 3];
                for &(i, wi) in pix {
                    for c in 0..3 {
                        x[c] += wi * colors[i][c];
                    }
                }
                let r: [f64; 3] = std::array::from_fn(|c| x[c] - tp[c]);
                dist += r.iter().map(|e| e * e).sum::<f64>().sqrt();
                count += 1;
                for &(i, wi) in pix {
                    for c in 0..3 {
                        grad[i][c] += wi * r[c] / 4.0;
                    }
                }
            }
        }
        oracle.push(dist / count as f64);
        let (b1, b2) = (0.9f64, 0.999f64);
        for i in 0..n {
            for c in 0..3 {
                m[i][c] = b1 * m[i][c] + (1.0 - b1) * grad[i][c];
                v[i][c] = b2 * v[i][c] + (1.0 - b2) * grad[i][c].powi(2);
                let mh = m[i][c] / (1.0 - b1.powi(step as i32));
                let vh = v[i][c] / (1.0 - b2.powi(step as i32));
                colors[i][c] = (colors[i][c] - lr * mh / (vh.sqrt() + 1e-15)).clamp(0.0, 1.0);
            }
        }
    }
    (curve.values, oracle)
}

/// `views` synthetic 32×32 score maps with one box each. The peak lands
/// inside the box in exactly `hits` of them, chosen at random.
pub fn localization_fixture(views: usize, hits: usize, seed: u64) -> Vec<(ScoreMap, Vec<GtBox>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inside = vec![false; views];
    for i in rand::seq::index::sample(&mut rng, views, hits) {
        inside[i] = true;
    }
    let size = 32;
    inside
        .iter()
        .map(|&hit| {
            let mut scores: Vec<f64> = (0..size * size).map(|_| rng.random_range(0.0..0.5)).collect();
            let (x0, y0) = (rng.random_range(0..20), rng.random_range(0..20));
            let (x1, y1) = (x0 + rng.random_range(0..12), y0 + rng.random_range(0..12));
            let gt = GtBox { label: "target object".into(), x_min: x0 as f64, y_min: y0 as f64, x_max: x1 as f64, y_max: y1 as f64 };
            let (px, py) = loop {
                let (x, y) = (rng.random_range(0..size), rng.random_range(0..size));
                if gt.contains(x, y) == hit {
                    break (x, y);
                }
            };
            scores[py * size + px] = 1.0;
            (ScoreMap { width: size, height: size, scores }, vec![gt])
        })
        .collect()
}

/// Writes score maps as one-channel feature containers under `maps` and
/// boxes as text files with the same stem under `gt`.
pub fn write_localization(maps: &Path, gt: &Path, views: &[(ScoreMap, Vec<GtBox>)]) {
    std::fs::create_dir_all(maps).unwrap();
    std::fs::create_dir_all(gt).unwrap();
    for (i, (map, boxes)) in views.iter().enumerate() {
        let stem = format!("view_{i:03}");
        let data = map.scores.iter().map(|&s| s as f32).collect();
        let fm = FeatureMap::new(map.height, map.width, 1, data, &stem).unwrap();
        lesplat_core::container::save_feature_map(&fm, maps.join(format!("{stem}.tgrf"))).unwrap();
        let text: String = boxes.iter().map(|b| format!("{} {} {} {} {}\n", b.label, b.x_min, b.y_min, b.x_max, b.y_max)).collect();
        std::fs::write(gt.join(format!("{stem}.txt")), text).unwrap();
    }
}

/// Scene with random embeddings, including some exact zero vectors.
pub fn random_lang_scene(rng: &mut impl Rng, n: usize) -> GaussianScene {
    let mut scene = GaussianScene::with_capacity(n);
    for _ in 0..n {
        let zero = rng.random_range(0..10) == 0;
        let lang: [f32; LANG_DIM] = std::array::from_fn(|_| if zero { 0.0 } else { rng.random_range(-1.0..1.0) });
        scene.push(Gaussian {
            position: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            scale: [-2.0; 3],
            rotation: random_quat(rng),
            color: [0.5; 3],
            opacity_logit: 0.0,
            lang,
        });
    }
    scene
}

/// Cosine computed independently in f64; zero vectors score 0.
pub fn oracle_score(lang: &[f32], query: &[f32]) -> f64 {
    let d: f64 = lang.iter().zip(query).map(|(&a, &b)| a as f64 * b as f64).sum();
    let na = lang.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let nb = query.iter().map(|&b| (b as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        d / (na * nb)
    }
}

/// Random (scene, query, tau1 < tau2) draws. Returns the number of draws
/// where the tau2 set is not a subset of the tau1 set, and the number where
/// either set differs from a brute-force strict threshold of the oracle
/// scores.
pub fn retrieval_monotonicity(draws: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut subset, mut exact) = (0, 0);
    for _ in 0..draws {
        let n = rng.random_range(1..200);
        let scene = random_lang_scene(&mut rng, n);
        // Queries near an existing embedding give a spread of high scores.
        let base = scene.lang[rng.random_range(0..scene.len())];
        let q: Vec<f32> = base.iter().map(|&v| v + rng.random_range(-0.5..0.5)).collect();
        let query = QueryEmbedding::new(q, "draw".into()).unwrap();
        let mut taus = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        taus.sort_by(f64::total_cmp);
        let [low, high] = taus.map(|t| retrieve(&scene, &query, t).unwrap());
        if !high.member_indices.iter().all(|i| low.member_indices.binary_search(i).is_ok()) {
            subset += 1;
        }
        for r in [&low, &high] {
            let expect: Vec<usize> = (0..scene.len()).filter(|&i| oracle_score(&scene.lang[i], &query.vector) > r.tau).collect();
            if expect != r.member_indices {
                exact += 1;
            }
        }
    }
    (subset, exact)
}
