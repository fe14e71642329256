//! One function per subcommand. Each resolves its arguments, calls the
//! library, writes outputs and reports what it did on stdout.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use lesplat_core::container::{load_feature_map, load_mask_set, load_query, save_feature_map, save_mask_set, save_pca};
use lesplat_core::dataset::{DatasetManifest, ImageRecord};
use lesplat_core::edit::{delete_object, run_edit, EditConfig, EditError, Providers};
use lesplat_core::features::{fit_pca, project_features, refine_with_masks, sample_pixels, FeatureMap, PCA_SAMPLE_COUNT};
use lesplat_core::guidance::{spawn_server, Capability, GuidanceError, NullProvider, ServeOptions};
use lesplat_core::ply::{load_scene, save_scene};
use lesplat_core::raster::{render, Channels};
use lesplat_core::retrieval::{evaluate_localization, heatmap_rgb8, load_gt_boxes, render_relevance_map, retrieve, ScoreMap};
use lesplat_core::train::{train_language_embeddings, TrainConfig};
use lesplat_core::GaussianScene;

use crate::providers::{BuildError, ProviderSpec};
use crate::run_log::Run;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_EXTERNAL: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

pub type CmdResult = Result<(), Failure>;

pub fn invalid(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_VALIDATION, error: error.into() }
}

pub fn internal(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_INTERNAL, error: error.into() }
}

fn guidance_failure(e: GuidanceError) -> Failure {
    Failure { code: if e.is_external() { EXIT_EXTERNAL } else { EXIT_VALIDATION }, error: e.into() }
}

fn edit_failure(e: EditError) -> Failure {
    match e {
        EditError::Guidance(g) => guidance_failure(g),
        e @ (EditError::StateMismatch { .. } | EditError::Render(_)) => internal(e),
        e => invalid(e),
    }
}

fn load_ply(run: &mut Run, path: &Path) -> Result<GaussianScene, Failure> {
    run.input(path);
    load_scene(path).with_context(|| format!("loading {}", path.display())).map_err(invalid)
}

fn write_ply(run: &mut Run, scene: &GaussianScene, path: &Path) -> CmdResult {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(invalid)?;
    }
    save_scene(scene, path).with_context(|| format!("writing {}", path.display())).map_err(invalid)?;
    run.output(path);
    Ok(())
}

fn load_manifest(run: &mut Run, dir: &Path) -> Result<DatasetManifest, Failure> {
    run.input(dir);
    DatasetManifest::load(dir).with_context(|| format!("reading dataset manifest in {}", dir.display())).map_err(invalid)
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(invalid)
}

fn save_png(run: &mut Run, path: &Path, rgb: &[u8], width: usize, height: usize) -> CmdResult {
    image::save_buffer(path, rgb, width as u32, height as u32, image::ExtendedColorType::Rgb8)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(invalid)?;
    run.output(path);
    Ok(())
}

pub struct PreprocessArgs {
    pub features: PathBuf,
    pub masks: PathBuf,
    pub out: PathBuf,
    pub pca_dim: usize,
    pub seed: u64,
}

/// PCA over all maps, projection, then mask refinement.
pub fn preprocess_features(run: &mut Run, a: &PreprocessArgs) -> CmdResult {
    run.log_into(&a.out);
    run.manifest.seed = a.seed;
    run.config("pca_dim", a.pca_dim);
    run.config("pca_samples", PCA_SAMPLE_COUNT);
    let manifest = load_manifest(run, &a.features)?;
    run.input(&a.masks);
    if manifest.images.is_empty() {
        return Err(invalid(anyhow!("{} lists no images", a.features.display())));
    }
    let mut mask_sets = Vec::with_capacity(manifest.images.len());
    for img in &manifest.images {
        let path = a.masks.join(format!("{}.tgrm", img.name));
        if !path.is_file() {
            return Err(invalid(anyhow!("image `{}` has no mask file {}", img.name, path.display())));
        }
        mask_sets.push(load_mask_set(&path).with_context(|| format!("image `{}`", img.name)).map_err(invalid)?);
    }
    let views = manifest.load_views(&a.features).map_err(invalid)?;
    let maps: Vec<FeatureMap> = views.into_iter().map(|(_, m)| m).collect();
    if let Some((img, m)) = manifest.images.iter().zip(&maps).find(|(_, m)| m.dim != maps[0].dim) {
        return Err(invalid(anyhow!("image `{}` has {} channels, the first image has {}", img.name, m.dim, maps[0].dim)));
    }

    let basis = run.timed("pca", || -> Result<_, Failure> {
        let (samples, dim) = sample_pixels(&maps, PCA_SAMPLE_COUNT, a.seed).map_err(invalid)?;
        fit_pca(&samples, dim, a.pca_dim).map_err(invalid)
    })?;
    if basis.is_rank_deficient() {
        log::warn!("features span only {} of {} requested dimensions", basis.effective_rank(), a.pca_dim);
    }
    create_dir(&a.out)?;
    let pca_path = a.out.join("pca.tgrp");
    save_pca(&basis, &pca_path).map_err(invalid)?;
    run.output(&pca_path);

    let mut out_manifest = DatasetManifest { cameras: manifest.cameras.clone(), images: Vec::new() };
    let start = std::time::Instant::now();
    for ((img, map), masks) in manifest.images.iter().zip(&maps).zip(&mask_sets) {
        let projected = project_features(map, &basis).map_err(invalid)?;
        let refined = refine_with_masks(&projected, masks).with_context(|| format!("image `{}`", img.name)).map_err(invalid)?;
        let name = format!("{}.tgrf", img.name);
        let path = a.out.join(&name);
        save_feature_map(&refined, &path).map_err(invalid)?;
        run.output(&path);
        out_manifest.images.push(ImageRecord { name: img.name.clone(), camera_id: img.camera_id.clone(), feature: name });
    }
    run.manifest.timings_ms.insert("project_refine".into(), start.elapsed().as_secs_f64() * 1e3);
    out_manifest.save(&a.out).map_err(invalid)?;
    run.output(a.out.join(lesplat_core::dataset::MANIFEST_NAME));
    println!("images: {}", maps.len());
    println!("pca: {} -> {} (effective rank {})", basis.dim, basis.k, basis.effective_rank());
    Ok(())
}

pub struct TrainArgs {
    pub scene: PathBuf,
    pub features: PathBuf,
    pub out: PathBuf,
    pub config: TrainConfig,
}

pub fn train_language(run: &mut Run, a: &TrainArgs) -> CmdResult {
    run.log_into(a.out.parent().unwrap_or(Path::new(".")));
    let c = &a.config;
    run.config("epochs", c.epochs);
    run.config("lr", c.lr);
    run.config("lr_final", c.lr_final);
    run.config("l1_weight", c.l1_weight);
    run.config("cosine_weight", c.cosine_weight);
    let scene = load_ply(run, &a.scene)?;
    let manifest = load_manifest(run, &a.features)?;
    let views = manifest.load_views(&a.features).map_err(invalid)?;
    let (trained, report) = run.timed("train", || train_language_embeddings(&scene, &views, c)).map_err(invalid)?;
    write_ply(run, &trained, &a.out)?;
    println!("views: {}", views.len());
    println!("final loss: {:.6e}", report.final_loss);
    Ok(())
}

pub struct QueryArgs {
    pub scene: PathBuf,
    pub query: PathBuf,
    pub tau: f64,
    pub heatmap: Option<String>,
    pub cameras: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn query(run: &mut Run, a: &QueryArgs) -> CmdResult {
    if let Some(out) = &a.out {
        run.log_into(out);
    }
    run.config("tau", a.tau);
    let scene = load_ply(run, &a.scene)?;
    run.input(&a.query);
    let q = load_query(&a.query).with_context(|| format!("loading {}", a.query.display())).map_err(invalid)?;
    let result = retrieve(&scene, &q, a.tau).map_err(invalid)?;
    println!("members: {}", result.member_indices.len());
    match &result.bbox {
        Some(b) => {
            println!("center: {} {} {}", b.center[0], b.center[1], b.center[2]);
            println!("half_extents: {} {} {}", b.half_extents[0], b.half_extents[1], b.half_extents[2]);
        }
        None => println!("box: none"),
    }

    if let Some(cam_id) = &a.heatmap {
        let (Some(cameras), Some(out)) = (&a.cameras, &a.out) else {
            return Err(invalid(anyhow!("--heatmap needs --cameras and --out")));
        };
        run.config("heatmap", cam_id);
        let manifest = load_manifest(run, cameras)?;
        let cam = manifest.camera(cam_id).map_err(invalid)?;
        let map = run.timed("heatmap", || render_relevance_map(&scene, &cam, &q)).map_err(invalid)?;
        create_dir(out)?;
        save_png(run, &out.join(format!("heatmap_{cam_id}.png")), &heatmap_rgb8(&map), map.width, map.height)?;
        let raw =
            FeatureMap::new(map.height, map.width, 1, map.scores.iter().map(|&s| s as f32).collect(), cam_id.as_str()).map_err(internal)?;
        let raw_path = out.join(format!("heatmap_{cam_id}.tgrf"));
        save_feature_map(&raw, &raw_path).map_err(invalid)?;
        run.output(&raw_path);
        let (x, y) = map.argmax();
        println!("argmax: {x} {y}");
    }
    Ok(())
}

pub struct EditArgs {
    pub scene: PathBuf,
    pub query: PathBuf,
    pub cameras: PathBuf,
    pub config: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub provider: ProviderSpec,
    pub mv_provider: Option<ProviderSpec>,
    pub out: PathBuf,
}

fn build_provider(spec: &ProviderSpec, capability: Capability) -> Result<Box<dyn lesplat_core::guidance::GuidanceProvider>, Failure> {
    spec.build(capability).map_err(|e| match e {
        BuildError::Dataset(e) => invalid(e),
        BuildError::Guidance(e) => guidance_failure(e),
    })
}

/// Resolves the config: file, then `--set` overrides, then `--seed`.
pub fn resolve_edit_config(path: Option<&Path>, overrides: &[(String, String)], seed: Option<u64>) -> Result<EditConfig, Failure> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(invalid)?;
            let mut c = EditConfig::default();
            c.apply_text(&text).map_err(invalid)?;
            c
        }
        None => EditConfig::default(),
    };
    for (k, v) in overrides {
        cfg.set(k, v).map_err(invalid)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(invalid)?;
    Ok(cfg)
}

pub fn edit(run: &mut Run, a: &EditArgs) -> CmdResult {
    run.log_into(&a.out);
    if let Some(c) = &a.config {
        run.input(c);
    }
    let cfg = resolve_edit_config(a.config.as_deref(), &a.overrides, a.seed)?;
    run.manifest.seed = cfg.seed;
    for line in cfg.to_text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            run.config(k, v);
        }
    }
    run.config("provider", format!("{:?}", a.provider));
    let scene = load_ply(run, &a.scene)?;
    run.input(&a.query);
    let q = load_query(&a.query).map_err(invalid)?;
    let cameras = load_manifest(run, &a.cameras)?.cameras().map_err(invalid)?;

    let image = build_provider(&a.provider, Capability::SingleView)?;
    // The multi-view provider is only consulted while its weight is nonzero.
    let multi_view = if cfg.lambda_mv0 > 0.0 {
        Some(build_provider(a.mv_provider.as_ref().unwrap_or(&a.provider), Capability::MultiView)?)
    } else {
        None
    };
    let providers = Providers { image: image.as_ref(), multi_view: multi_view.as_deref() };
    let outcome = run.timed("edit", || run_edit(&scene, &q, &cfg, &cameras, providers, &a.out)).map_err(edit_failure)?;
    for f in ["config.cfg", "log.csv", "scene.ply"] {
        run.output(a.out.join(f));
    }
    println!("members: {}", outcome.members);
    println!("gaussians: {} -> {}", scene.len(), outcome.scene.len());
    println!("steps: {}", outcome.log.len());
    Ok(())
}

pub struct DeleteArgs {
    pub scene: PathBuf,
    pub query: PathBuf,
    pub tau: f64,
    pub cameras: PathBuf,
    pub out: PathBuf,
}

pub fn delete(run: &mut Run, a: &DeleteArgs) -> CmdResult {
    run.log_into(&a.out);
    run.config("tau", a.tau);
    let scene = load_ply(run, &a.scene)?;
    run.input(&a.query);
    let q = load_query(&a.query).map_err(invalid)?;
    let manifest = load_manifest(run, &a.cameras)?;
    let cameras = manifest.cameras().map_err(invalid)?;
    let deletion = run.timed("delete", || delete_object(&scene, &q, a.tau, &cameras)).map_err(edit_failure)?;
    write_ply(run, &deletion.scene, &a.out.join("scene.ply"))?;
    let holes = a.out.join("holes");
    create_dir(&holes)?;
    for (rec, mask) in manifest.cameras.iter().zip(&deletion.holes) {
        let path = holes.join(format!("{}.tgrm", rec.id));
        save_mask_set(mask, &path).map_err(invalid)?;
        run.output(&path);
    }
    println!("removed: {}", deletion.removed.len());
    println!("remaining: {}", deletion.scene.len());
    Ok(())
}

pub struct EvalLocArgs {
    pub maps: PathBuf,
    pub gt: PathBuf,
}

/// Pairs `maps/<stem>.tgrf` (one channel) with `gt/<stem>.txt`.
pub fn eval_loc(run: &mut Run, a: &EvalLocArgs) -> CmdResult {
    run.input(&a.maps);
    run.input(&a.gt);
    let mut stems: Vec<(String, PathBuf)> = fs::read_dir(&a.maps)
        .with_context(|| format!("listing {}", a.maps.display()))
        .map_err(invalid)?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "tgrf"))
        .filter_map(|p| Some((p.file_stem()?.to_string_lossy().into_owned(), p)))
        .collect();
    stems.sort();
    let mut views = Vec::with_capacity(stems.len());
    for (stem, path) in &stems {
        let map = load_feature_map(path, stem).with_context(|| format!("loading {}", path.display())).map_err(invalid)?;
        if map.dim != 1 {
            return Err(invalid(anyhow!("{}: score maps have one channel, found {}", path.display(), map.dim)));
        }
        let gt_path = a.gt.join(format!("{stem}.txt"));
        let boxes = load_gt_boxes(&gt_path)
            .with_context(|| format!("view `{stem}`: reading {}", gt_path.display()))
            .map_err(invalid)?
            .with_context(|| format!("view `{stem}`"))
            .map_err(invalid)?;
        let scores = map.data.iter().map(|&v| v as f64).collect();
        views.push((ScoreMap { width: map.width, height: map.height, scores }, boxes));
    }
    let report = evaluate_localization(&views).map_err(invalid)?;
    run.config("views", report.total());
    run.config("hits", report.hits());
    println!("{report}");
    Ok(())
}

pub struct RenderArgs {
    pub scene: PathBuf,
    pub cameras: PathBuf,
    pub camera: String,
    pub out: PathBuf,
    pub features: Option<PathBuf>,
}

pub fn render_view(run: &mut Run, a: &RenderArgs) -> CmdResult {
    run.log_into(a.out.parent().unwrap_or(Path::new(".")));
    run.config("camera", &a.camera);
    let scene = load_ply(run, &a.scene)?;
    let cam = load_manifest(run, &a.cameras)?.camera(&a.camera).map_err(invalid)?;
    let channels = if a.features.is_some() { Channels::ALL } else { Channels::COLOR };
    let out = run.timed("render", || render(&scene, &cam, channels));
    let rgb = out.to_rgb8().ok_or_else(|| internal(anyhow!("color plane missing")))?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_png(run, &a.out, &rgb, out.width, out.height)?;
    if let Some(path) = &a.features {
        let feature = out.feature.as_ref().ok_or_else(|| internal(anyhow!("feature plane missing")))?;
        let dim = feature.len() / out.pixel_count().max(1);
        let map = FeatureMap::new(out.height, out.width, dim, feature.iter().map(|&v| v as f32).collect(), a.camera.as_str())
            .map_err(internal)?;
        save_feature_map(&map, path).map_err(invalid)?;
        run.output(path);
    }
    println!("rendered {}x{}", out.width, out.height);
    Ok(())
}

pub struct ServeArgs {
    pub listen: String,
    pub capability: Capability,
    pub options: ServeOptions,
}

/// Serves zero residuals until killed. Prints the bound address first so
/// callers can bind port 0.
pub fn serve_echo(a: &ServeArgs) -> CmdResult {
    let listener = std::net::TcpListener::bind(&a.listen)
        .with_context(|| format!("binding {}", a.listen))
        .map_err(|e| Failure { code: EXIT_EXTERNAL, error: e })?;
    let provider = std::sync::Arc::new(NullProvider::new(a.capability));
    let server = spawn_server(listener, provider, a.options.clone()).map_err(internal)?;
    println!("listening on {}", server.addr());
    use std::io::Write;
    let _ = std::io::stdout().flush();
    loop {
        std::thread::park();
    }
}
