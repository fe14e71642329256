//! Release acceptance suite. Every criterion runs to completion and prints
//! one PASS/FAIL line; the test fails if any criterion failed.
//!
//! Run with `cargo test -p lesplat-cli --test acceptance -- --nocapture`.

#[path = "../../core/tests/common/mod.rs"]
mod common;
mod support;

use std::collections::BTreeMap;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::csd::{densify_fixture, scene_bits, setup, step, swirl, tint, Failing, PreCombined};
use common::scenarios::{axis_query, localization_fixture, red_tint_edit, retrieval_monotonicity, write_localization};
use common::{fd_check, max_abs_diff, oracle_weights, LossWeights};
use lesplat_core::edit::{densify_and_prune, weight_schedule, EditConfig, OptimState, Providers};
use lesplat_core::features::fit_pca;
use lesplat_core::fixtures::{
    basis_lang, front_camera, orbit_cameras, random_scene, two_cluster_scene, two_object_scene, RandomSceneParams,
};
use lesplat_core::guidance::wire::{self, code, Kind, PROTOCOL_VERSION};
use lesplat_core::guidance::*;
use lesplat_core::raster::{render, render_backward, render_reference, Channels, Upstream};
use lesplat_core::retrieval::{retrieve, QueryEmbedding};
use lesplat_core::LANG_DIM;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{lesplat, s, write_cameras, write_query, write_scene};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rasterizer_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let cam = front_camera(32, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=200);
        let scene = random_scene(&mut rng, n, &cam, &RandomSceneParams::default());
        let a = render(&scene, &cam, Channels::ALL);
        let b = render_reference(&scene, &cam, Channels::ALL).map_err(|e| e.to_string())?;
        worst = worst
            .max(max_abs_diff(a.color.as_ref().unwrap(), b.color.as_ref().unwrap()))
            .max(max_abs_diff(a.feature.as_ref().unwrap(), b.feature.as_ref().unwrap()))
            .max(max_abs_diff(&a.alpha, &b.alpha));
    }
    let elapsed = start.elapsed();
    ensure(worst < 1e-5 && elapsed < Duration::from_secs(60), format!("100 scenes, max deviation {worst:.2e}, {elapsed:.1?}"))
}

fn gradient_correctness() -> Outcome {
    let cam = front_camera(16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    let mut worst = (0.0f64, String::new());
    let configs = 20;
    for config in 0..configs {
        let n = rng.random_range(2..=20);
        let scene = random_scene(&mut rng, n, &cam, &RandomSceneParams::default());
        let w = LossWeights::random(&mut rng, 256);
        let up = Upstream {
            color: Some(w.color.clone()),
            feature: Some(w.feature.clone()),
            alpha: Some(w.alpha.clone()),
            depth: Some(w.depth.clone()),
        };
        let analytic = render_backward(&scene, &cam, Channels::ALL, &up).map_err(|e| e.to_string())?;
        let channels: Vec<usize> = (0..4).map(|_| rng.random_range(0..LANG_DIM)).collect();
        for e in fd_check(&scene, &cam, &w, &analytic, &channels) {
            if e.rel_error >= worst.0 {
                worst = (e.rel_error, format!("config {config} {:?}", e.class));
            }
        }
    }
    ensure(worst.0 < 1e-3, format!("{configs} configs, 6 parameter classes, worst relative error {:.2e} ({})", worst.0, worst.1))
}

fn weight_law() -> Outcome {
    // With one-hot payloads feature channel i is the blend weight of
    // Gaussian i, so the weights can be read off the rendered planes.
    let cam = front_camera(16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(0x3E1);
    let (mut pixels, mut sum_err, mut oracle_err, mut negative) = (0usize, 0.0f64, 0.0f64, 0usize);
    let scenes = 1000;
    for _ in 0..scenes {
        let n = rng.random_range(1..=LANG_DIM);
        let mut scene = random_scene(&mut rng, n, &cam, &RandomSceneParams { opacity_logit: (-2.0, 8.0), ..Default::default() });
        for i in 0..n {
            scene.lang[i] = basis_lang(i);
        }
        let out = render(&scene, &cam, Channels::FEATURE);
        let feature = out.feature.as_ref().unwrap();
        for p in 0..out.pixel_count() {
            let w = &feature[p * LANG_DIM..(p + 1) * LANG_DIM];
            negative += w.iter().filter(|&&v| v < 0.0).count();
            sum_err = sum_err.max((w.iter().sum::<f64>() - out.alpha[p]).abs());
            pixels += 1;
        }
        // One random pixel per scene against the untiled oracle weights.
        let p = rng.random_range(0..out.pixel_count());
        let mut expect = [0.0f64; LANG_DIM];
        for (i, wi) in &oracle_weights(&scene, &cam)[p] {
            expect[*i] += wi;
        }
        oracle_err = oracle_err.max(max_abs_diff(&feature[p * LANG_DIM..(p + 1) * LANG_DIM], &expect));
    }
    ensure(
        negative == 0 && sum_err <= 1e-6 && oracle_err <= 1e-6,
        format!("{scenes} scenes, {pixels} pixels: {negative} negative weights, |sum - alpha| <= {sum_err:.1e}, oracle deviation {oracle_err:.1e}"),
    )
}

fn retrieval_exactness() -> Outcome {
    let scene = two_cluster_scene(0xC1);
    let q = QueryEmbedding::new(basis_lang(0).to_vec(), "cluster a".into()).map_err(|e| e.to_string())?;
    let got = retrieve(&scene, &q, 0.5).map_err(|e| e.to_string())?.member_indices;
    let exact = got == (0..50).collect::<Vec<_>>();
    let (subset, brute) = retrieval_monotonicity(50, 0x50);
    ensure(
        exact && subset == 0 && brute == 0,
        format!("{} members at tau 0.5 (exact: {exact}); 50 draws: {subset} subset violations, {brute} brute-force mismatches", got.len()),
    )
}

fn localization_counting() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (maps, gt) = (dir.path().join("maps"), dir.path().join("gt"));
    write_localization(&maps, &gt, &localization_fixture(100, 87, 0x87));
    let out = lesplat(dir.path(), &["eval-loc", "--maps", s(&maps), "--gt", s(&gt)]);
    ensure(out.code == 0 && out.stdout == "0.870\n", format!("eval-loc printed {:?} (exit {})", out.stdout.trim(), out.code))
}

fn schedule_constants() -> Outcome {
    let cfg = EditConfig::default();
    let (l1, l2) = weight_schedule(0.0, &cfg);
    let late: Vec<f64> = (0..=250).map(|k| weight_schedule(0.75 + k as f64 / 1000.0, &cfg).1).collect();
    let zero_late = late.iter().all(|&v| v == 0.0);
    ensure(l1 / l2 == 2.0 && l1 == 2.0 * l2 && zero_late, format!("start ratio {}; second weight zero on [0.75, 1]: {zero_late}", l1 / l2))
}

fn frozen_background() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let r = red_tint_edit(300, dir.path());
    ensure(
        r.frozen_violations == 0 && r.distance_after <= 0.5 * r.distance_before && r.elapsed < Duration::from_secs(300),
        format!(
            "{} frozen Gaussians, {} changed; distance {:.4} -> {:.4}; {:.1?}",
            r.gate_zero, r.frozen_violations, r.distance_before, r.distance_after, r.elapsed
        ),
    )
}

fn csd_linearity() -> Outcome {
    let s = setup();
    let (ip, mv) = (tint(), swirl());
    let mut warm = s.scene.clone();
    let mut state = OptimState::new(warm.len());
    for k in 0..3 {
        step(&s, &mut warm, &mut state, Providers { image: &ip, multi_view: Some(&mv) }, (1.0, 0.5), k).map_err(|e| e.to_string())?;
    }
    let mut mismatched = Vec::new();
    let lambdas = [(1.3, 0.45), (1.0, 0.5), (0.7, 2.0)];
    for lambda in lambdas {
        let (mut a, mut b) = (warm.clone(), warm.clone());
        let (mut sa, mut sb) = (state.clone(), state.clone());
        step(&s, &mut a, &mut sa, Providers { image: &ip, multi_view: Some(&mv) }, lambda, 9).map_err(|e| e.to_string())?;
        let pre = PreCombined { a: &ip, b: &mv, lambda };
        step(&s, &mut b, &mut sb, Providers { image: &pre, multi_view: Some(&Failing) }, (1.0, 0.0), 9).map_err(|e| e.to_string())?;
        if scene_bits(&a) != scene_bits(&b) || sa != sb || scene_bits(&a) == scene_bits(&warm) {
            mismatched.push(lambda);
        }
    }
    ensure(mismatched.is_empty(), format!("{} weight pairs, bit mismatches: {mismatched:?}", lambdas.len()))
}

fn densification_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xDE);
    let mut failures = Vec::new();
    let mut events = 0;
    let mut cases: Vec<(usize, usize)> = vec![(300, 200)];
    cases.extend((0..60).map(|_| {
        let n = rng.random_range(1..400);
        (n, rng.random_range(1..=n))
    }));
    let mut two_hundred = 0;
    for (k, &(n, candidates)) in cases.iter().enumerate() {
        let (scene, grads, gate) = densify_fixture(n, candidates, k as u64);
        let out = densify_and_prune(&scene, &grads, &gate, 0.01, 0.005, &mut ChaCha8Rng::seed_from_u64(k as u64));
        let expected = (0.01 * candidates as f64).ceil() as usize;
        let lang_ok = (0..out.scene.len()).all(|j| out.scene.lang[j].map(f32::to_bits) == scene.lang[out.parent[j]].map(f32::to_bits));
        if k == 0 {
            two_hundred = out.densified.len();
        }
        if out.densified.len() != expected || !lang_ok {
            failures.push((n, candidates, out.densified.len()));
        }
        events += 1;
    }
    ensure(
        failures.is_empty() && two_hundred == 2,
        format!("{events} events, 200 candidates densify {two_hundred}; failures (n, candidates, densified): {failures:?}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let scene = write_scene(&root.join("scene.ply"), &two_object_scene(2));
    let query = write_query(&root.join("query.tgrq"), &axis_query(0));
    let cameras = write_cameras(&root.join("cams"), &orbit_cameras(6, [0.0; 3], 3.5, 20.0, 0.0, 360.0, 24));
    let run = |out: &str| {
        let out = root.join(out);
        #[rustfmt::skip]
        let r = lesplat(root, &[
            "--seed", "11", "edit", "--scene", s(&scene), "--query", s(&query), "--cameras", s(&cameras),
            "--set", "steps=40", "--set", "densify_interval=10", "--provider", "mock", "--out", s(&out),
        ]);
        (r, out)
    };
    let ((ra, a), (rb, b)) = (run("a"), run("b"));
    if ra.code != 0 || rb.code != 0 {
        return Err(format!("edit failed:\n{ra}\n{rb}"));
    }
    let mut differing = Vec::new();
    for f in ["scene.ply", "log.csv"] {
        if std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok() {
            differing.push(f);
        }
    }
    ensure(
        differing.is_empty(),
        format!(
            "two seeded mock runs, {} steps, gaussians {}; differing files: {differing:?}",
            ra.field("steps").unwrap_or("?"),
            ra.field("gaussians").unwrap_or("?")
        ),
    )
}

/// Answers with the rendered views, folding the other request fields into
/// the first value so every field must survive the trip.
struct Mirror;

impl GuidanceProvider for Mirror {
    fn name(&self) -> &str {
        "mirror"
    }
    fn capability(&self) -> Capability {
        Capability::MultiView
    }
    fn guide(&self, r: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        let mut residuals = r.rendered_views.clone();
        residuals[0].data[0] = r.t + r.seed as f32 + r.poses[3][11] + r.original_views[3].data[5] + r.config.len() as f32;
        Ok(GuidanceResponse { residuals })
    }
}

fn wire_protocol() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x71);
    let image = |rng: &mut ChaCha8Rng| Image { height: 6, width: 5, data: (0..90).map(|_| rng.random_range(-2.0f32..2.0)).collect() };
    let mut config = BTreeMap::new();
    config.insert(DESCRIPTION_KEY.to_string(), "a wooden chair".to_string());
    let req = GuidanceRequest {
        rendered_views: (0..4).map(|_| image(&mut rng)).collect(),
        original_views: (0..4).map(|_| image(&mut rng)).collect(),
        poses: (0..4).map(|_| std::array::from_fn(|_| rng.random_range(-1.0f32..1.0))).collect(),
        t: 0.137,
        seed: u64::MAX - 3,
        prompt: "turn it into marble".into(),
        config,
    };
    let bits = |r: &GuidanceResponse| r.residuals.iter().flat_map(|i| i.data.iter().map(|v| v.to_bits())).collect::<Vec<_>>();

    // The echo server answers zeros of the request's shape.
    let echo = spawn_echo_server(Capability::MultiView, ServeOptions::default()).map_err(|e| e.to_string())?;
    let cfg = RemoteConfig { required: Capability::MultiView, ..RemoteConfig::default() };
    let zeros = RemoteProvider::connect(echo.addr(), cfg.clone()).and_then(|c| c.guide(&req)).map_err(|e| e.to_string())?;
    let echo_ok = zeros.residuals.len() == 4
        && zeros.residuals.iter().all(|r| (r.height, r.width) == (6, 5) && r.data.iter().all(|v| v.to_bits() == 0));

    let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let mirror = spawn_server(listener, Arc::new(Mirror), ServeOptions::default()).map_err(|e| e.to_string())?;
    let remote = RemoteProvider::connect(mirror.addr(), cfg).and_then(|c| c.guide(&req)).map_err(|e| e.to_string())?;
    let exact = bits(&remote) == bits(&Mirror.guide(&req).unwrap());

    let bad = spawn_echo_server(Capability::SingleView, ServeOptions { version: PROTOCOL_VERSION + 1, ..ServeOptions::default() })
        .map_err(|e| e.to_string())?;
    let client_err = RemoteProvider::connect(bad.addr(), RemoteConfig::default()).err();
    let mut raw = TcpStream::connect(bad.addr()).map_err(|e| e.to_string())?;
    let hello = wire::Handshake { capabilities: 1, max_height: 0, max_width: 0, name: "raw".into() };
    wire::write_message(&mut raw, PROTOCOL_VERSION, Kind::Handshake, &wire::encode_handshake(&hello)).map_err(|e| e.to_string())?;
    raw.flush().map_err(|e| e.to_string())?;
    let reply = wire::read_message(&mut raw).map_err(|e| e.to_string())?.ok_or("server closed without replying")?;
    let code_seen = if reply.kind == Kind::Error { wire::decode_error(&reply.payload).map(|e| e.0).ok() } else { None };
    let mismatch_ok = matches!(client_err, Some(GuidanceError::VersionMismatch { .. })) && code_seen == Some(code::VERSION_MISMATCH);

    ensure(
        echo_ok && exact && mismatch_ok,
        format!("echo zeros: {echo_ok}; mirror bit-exact: {exact}; version mismatch error code {code_seen:?}"),
    )
}

fn pca_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9CA);
    let dim = 512;
    let gram_schmidt = |vs: &mut Vec<Vec<f64>>| {
        for i in 0..vs.len() {
            for j in 0..i {
                let d: f64 = vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum();
                let vj = vs[j].clone();
                vs[i].iter_mut().zip(&vj).for_each(|(a, b)| *a -= d * b);
            }
            let n = vs[i].iter().map(|a| a * a).sum::<f64>().sqrt();
            vs[i].iter_mut().for_each(|a| *a /= n);
        }
    };
    let mut q: Vec<Vec<f64>> = (0..2).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    gram_schmidt(&mut q);
    let mut samples = Vec::new();
    for _ in 0..500 {
        let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0));
        samples.extend((0..dim).map(|d| (0.1 + a * q[0][d] + b * q[1][d]) as f32));
    }
    let rank2 = fit_pca(&samples, dim, 64).map_err(|e| e.to_string())?;
    let nonzero = rank2.explained_variance.iter().filter(|&&v| v != 0.0).count();

    let (mut ortho, mut sorted) = (0.0f64, true);
    let mut bases = vec![rank2];
    for _ in 0..10 {
        let (d, n) = (rng.random_range(8..96), rng.random_range(70..200));
        let data: Vec<f32> = (0..d * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        bases.push(fit_pca(&data, d, d.min(64)).map_err(|e| e.to_string())?);
    }
    for basis in &bases {
        for a in 0..basis.k {
            for b in 0..basis.k {
                let dot: f64 = basis.component(a).iter().zip(basis.component(b)).map(|(x, y)| *x as f64 * *y as f64).sum();
                let want = if a == b && basis.explained_variance[a] != 0.0 {
                    1.0
                } else if a == b {
                    dot
                } else {
                    0.0
                };
                ortho = ortho.max((dot - want).abs());
            }
        }
        sorted &= basis.explained_variance.windows(2).all(|w| w[0] >= w[1]);
    }
    ensure(
        nonzero == 2 && ortho < 1e-5 && sorted,
        format!(
            "rank-2 input in R^512: {nonzero} nonzero variances; {} bases, orthonormality error {ortho:.1e}, sorted {sorted}",
            bases.len()
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 12] = [
        ("rasterizer oracle equivalence", rasterizer_oracle_equivalence),
        ("gradient correctness", gradient_correctness),
        ("blend weight law", weight_law),
        ("retrieval exactness", retrieval_exactness),
        ("localization counting", localization_counting),
        ("schedule constants", schedule_constants),
        ("frozen background", frozen_background),
        ("csd linearity", csd_linearity),
        ("densification law", densification_law),
        ("determinism", determinism),
        ("wire protocol", wire_protocol),
        ("pca properties", pca_properties),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<30} {detail} [{secs:.1}s]"),
            Err(detail) => {
                println!("FAIL  {name:<30} {detail} [{secs:.1}s]");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
