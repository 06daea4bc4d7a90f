//! `acne`: patch extraction, rolling augmentation, head training, panel
//! evaluation, single-image scoring and the HTTP service.
//!
//! Exit codes: 0 success, 2 input error, 3 training failure, 4 scoring failure.

mod commands;
mod detectors;
mod failure;
mod patches;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::Failure;
use settings::CliConfig;

#[derive(Debug, Parser)]
#[command(name = "acne", version, about = "Acne severity grading from selfies")]
struct Cli {
    /// `key=value` settings file; flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Backend {
    /// ONNX backbone.
    #[arg(long, value_name = "FILE", conflicts_with = "test_backend")]
    backbone: Option<PathBuf>,
    /// Seeded random-projection embeddings instead of a backbone.
    #[arg(long)]
    test_backend: bool,
    /// Backbone input side in pixels.
    #[arg(long)]
    input_side: Option<u32>,
}

#[derive(Debug, Args)]
struct Landmarks {
    /// Directory of `<image stem>.landmarks` / `.eye` annotation files.
    #[arg(long, value_name = "DIR")]
    landmarks: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut skin patches from the images of a training manifest.
    ExtractPatches {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        landmarks: Landmarks,
        /// Also write each image with its patch rectangles drawn.
        #[arg(long)]
        overlays: bool,
    },
    /// Add rolled copies of labeled patches to balance the classes.
    Augment {
        #[arg(long)]
        patches: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_mild: Option<usize>,
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// Train the regression head on patch embeddings.
    Train {
        #[arg(long)]
        patches: PathBuf,
        #[command(flatten)]
        backend: Backend,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        validation_fraction: Option<f64>,
        /// Hidden widths, comma separated.
        #[arg(long)]
        hidden: Option<String>,
    },
    /// Score a golden set and compare against its rater panel.
    Evaluate {
        #[arg(long)]
        golden: PathBuf,
        #[arg(long)]
        head: Option<PathBuf>,
        #[command(flatten)]
        backend: Backend,
        #[command(flatten)]
        landmarks: Landmarks,
        #[arg(long)]
        report: PathBuf,
    },
    /// Score one image and print the result as JSON.
    Score {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        head: Option<PathBuf>,
        #[command(flatten)]
        backend: Backend,
        #[command(flatten)]
        landmarks: Landmarks,
    },
    /// Run the HTTP service until interrupted.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
}

fn apply_backend(cfg: &mut CliConfig, b: Backend) {
    cfg.flag("backbone_path", b.backbone.map(|p| p.display().to_string()));
    cfg.switch("test_backend", b.test_backend);
    cfg.flag("input_side", b.input_side);
}

fn path_flag(cfg: &mut CliConfig, key: &str, p: Option<PathBuf>) {
    cfg.flag(key, p.map(|p| p.display().to_string()));
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = CliConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::ExtractPatches {
            manifest,
            out,
            landmarks,
            overlays,
        } => {
            path_flag(&mut cfg, "landmarks_dir", landmarks.landmarks);
            commands::extract_patches_cmd(&cfg, &manifest, &out, overlays)
        }
        Command::Augment {
            patches,
            out,
            n_mild,
            n_max,
        } => {
            cfg.flag("n_mild", n_mild);
            cfg.flag("n_max", n_max);
            commands::augment_cmd(&cfg, &patches, &out)
        }
        Command::Train {
            patches,
            backend,
            out,
            seed,
            epochs,
            learning_rate,
            batch_size,
            validation_fraction,
            hidden,
        } => {
            apply_backend(&mut cfg, backend);
            cfg.flag("seed", seed);
            cfg.flag("epochs", epochs);
            cfg.flag("learning_rate", learning_rate);
            cfg.flag("batch_size", batch_size);
            cfg.flag("validation_fraction", validation_fraction);
            cfg.flag("hidden", hidden);
            commands::train_cmd(&cfg, &patches, &out)
        }
        Command::Evaluate {
            golden,
            head,
            backend,
            landmarks,
            report,
        } => {
            apply_backend(&mut cfg, backend);
            path_flag(&mut cfg, "head_path", head);
            path_flag(&mut cfg, "landmarks_dir", landmarks.landmarks);
            commands::evaluate_cmd(&cfg, &golden, &report)
        }
        Command::Score {
            image,
            head,
            backend,
            landmarks,
        } => {
            apply_backend(&mut cfg, backend);
            path_flag(&mut cfg, "head_path", head);
            path_flag(&mut cfg, "landmarks_dir", landmarks.landmarks);
            commands::score_cmd(&cfg, &image)
        }
        Command::Serve { listen } => {
            cfg.flag("listen_addr", listen);
            commands::serve_cmd(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { failure::INPUT } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.render());
            ExitCode::from(f.exit_code)
        }
    }
}
