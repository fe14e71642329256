//! `lesplat`: language-embedded Gaussian splatting from the command line.
//!
//! Exit codes: 0 success, 2 invalid input, 3 guidance service failure,
//! 4 internal invariant violation.

mod commands;
mod providers;
mod run_log;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lesplat_core::guidance::wire::PROTOCOL_VERSION;
use lesplat_core::guidance::{Capability, ServeOptions};
use lesplat_core::retrieval::DEFAULT_TAU;
use lesplat_core::train::TrainConfig;

use commands::*;
use providers::ProviderSpec;
use run_log::Run;

#[derive(Parser)]
#[command(name = "lesplat", version, about = "Language-embedded Gaussian splatting: retrieval and text-guided editing")]
struct Cli {
    /// Seed for every random choice (PCA subsample, view sampling, noise).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Append the run manifest here instead of `runs.jsonl` next to the outputs.
    #[arg(long, global = true)]
    run_log: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reduce raw feature maps with PCA and average them within masks.
    PreprocessFeatures {
        /// Directory with a dataset manifest and raw feature containers.
        #[arg(long)]
        features: PathBuf,
        /// Directory with one `<image name>.tgrm` mask set per image.
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = lesplat_core::LANG_DIM)]
        pca_dim: usize,
    },
    /// Fit per-Gaussian language embeddings to refined feature maps.
    TrainLanguage {
        #[arg(long)]
        scene: PathBuf,
        /// Directory with a dataset manifest and 64-channel feature maps.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lr_final: Option<f64>,
    },
    /// Select the Gaussians matching a query embedding.
    Query {
        #[arg(long)]
        scene: PathBuf,
        /// Query embedding container (TGRQ).
        #[arg(long)]
        query: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        /// Render a relevance heatmap from this camera id.
        #[arg(long, requires_all = ["cameras", "out"])]
        heatmap: Option<String>,
        /// Dataset manifest (file or directory) with the cameras.
        #[arg(long)]
        cameras: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Edit the queried object under text guidance.
    Edit {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        query: PathBuf,
        /// Dataset manifest (file or directory) with the training cameras.
        #[arg(long)]
        cameras: PathBuf,
        /// `key = value` edit config; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key, e.g. `--set steps=500`. Repeatable.
        #[arg(long = "set", value_parser = parse_override)]
        overrides: Vec<(String, String)>,
        /// Image-conditioned guidance: mock, tint:R,G,B[,S], files:DIR or remote:ADDR.
        #[arg(long, default_value = "mock")]
        provider: ProviderSpec,
        /// Multi-view guidance; defaults to the same spec as --provider.
        #[arg(long)]
        mv_provider: Option<ProviderSpec>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove the queried object and write hole masks for inpainting.
    Delete {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score argmax localization of relevance maps against boxes.
    EvalLoc {
        /// One-channel score maps `<stem>.tgrf`.
        #[arg(long)]
        maps: PathBuf,
        /// Box files `<stem>.txt` with lines `label x_min y_min x_max y_max`.
        #[arg(long)]
        gt: PathBuf,
    },
    /// Render one camera to PNG, optionally with the feature plane.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        camera: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the rendered language features as a TGRF container.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Run a guidance server that answers every request with zero residuals.
    ServeEcho {
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        #[arg(long, value_enum, default_value_t = CapabilityArg::Single)]
        capability: CapabilityArg,
        #[arg(long, default_value_t = PROTOCOL_VERSION)]
        protocol_version: u16,
        #[arg(long, default_value_t = 4096)]
        max_size: u32,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CapabilityArg {
    Single,
    Multi,
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::PreprocessFeatures { .. } => "preprocess-features",
        Command::TrainLanguage { .. } => "train-language",
        Command::Query { .. } => "query",
        Command::Edit { .. } => "edit",
        Command::Delete { .. } => "delete",
        Command::EvalLoc { .. } => "eval-loc",
        Command::Render { .. } => "render",
        Command::ServeEcho { .. } => "serve-echo",
    }
}

fn dispatch(cli: Cli, run: &mut Run) -> CmdResult {
    let seed = cli.seed;
    run.manifest.seed = seed.unwrap_or(0);
    match cli.command {
        Command::PreprocessFeatures { features, masks, out, pca_dim } => {
            preprocess_features(run, &PreprocessArgs { features, masks, out, pca_dim, seed: seed.unwrap_or(0) })
        }
        Command::TrainLanguage { scene, features, out, epochs, lr, lr_final } => {
            let d = TrainConfig::default();
            let config =
                TrainConfig { epochs: epochs.unwrap_or(d.epochs), lr: lr.unwrap_or(d.lr), lr_final: lr_final.unwrap_or(d.lr_final), ..d };
            train_language(run, &TrainArgs { scene, features, out, config })
        }
        Command::Query { scene, query, tau, heatmap, cameras, out } => {
            commands::query(run, &QueryArgs { scene, query, tau, heatmap, cameras, out })
        }
        Command::Edit { scene, query, cameras, config, overrides, provider, mv_provider, out } => {
            commands::edit(run, &EditArgs { scene, query, cameras, config, overrides, seed, provider, mv_provider, out })
        }
        Command::Delete { scene, query, tau, cameras, out } => commands::delete(run, &DeleteArgs { scene, query, tau, cameras, out }),
        Command::EvalLoc { maps, gt } => eval_loc(run, &EvalLocArgs { maps, gt }),
        Command::Render { scene, cameras, camera, out, features } => {
            render_view(run, &RenderArgs { scene, cameras, camera, out, features })
        }
        Command::ServeEcho { listen, capability, protocol_version, max_size } => serve_echo(&ServeArgs {
            listen,
            capability: match capability {
                CapabilityArg::Single => Capability::SingleView,
                CapabilityArg::Multi => Capability::MultiView,
            },
            options: ServeOptions { version: protocol_version, max_height: max_size, max_width: max_size, ..ServeOptions::default() },
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut run = Run::new(command_name(&cli.command), std::env::args().skip(1).collect());
    run.log_path = cli.run_log.clone();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| dispatch(cli, &mut run)));
    let (code, error) = match result {
        Ok(Ok(())) => (0, None),
        Ok(Err(f)) => {
            eprintln!("error: {:#}", f.error);
            (f.code, Some(format!("{:#}", f.error)))
        }
        // The panic message is already on stderr.
        Err(_) => (EXIT_INTERNAL, Some("internal error (panic)".to_string())),
    };
    if let Err(e) = run.finish(code, error) {
        eprintln!("warning: could not append run manifest: {e}");
    }
    ExitCode::from(code as u8)
}
