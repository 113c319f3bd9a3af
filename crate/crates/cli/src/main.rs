//! Command-line entry point. Argument handling and exit-code mapping live
//! here; the stages themselves are in the library part of this package.
//!
//! Exit codes: 0 on success, 2 for configuration and usage problems, 3 when
//! a pipeline stage fails (partial artifacts are left in place for
//! inspection).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use varassim::config::{self, ExperimentConfig};
use varassim::pipeline::{self, RunDir};
use varassim::presets;

#[derive(Parser)]
#[command(
    name = "varassim",
    version,
    about = "Variational reconstruction of gridded sea surface height from sparse track samples",
    after_help = "Setting VARASSIM_DETERMINISTIC acknowledges the reproducibility contract: \
                  every computation is deterministic for a fixed configuration and seed."
)]
struct Cli {
    /// Print per-step progress detail.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic truth, sampling mask, observations, and the
    /// coarse interpolation product.
    GenData {
        /// Experiment TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Run directory to create (default: output_root/run_name from the
        /// config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite an existing run directory.
        #[arg(long)]
        force: bool,
    },
    /// Train the configured models on a generated run directory.
    Train {
        /// Run directory produced by gen-data.
        #[arg(long)]
        dir: PathBuf,
        /// Train only this model instead of all configured ones.
        #[arg(long)]
        model: Option<String>,
        /// Overwrite existing checkpoints.
        #[arg(long)]
        force: bool,
    },
    /// Apply trained models to the test windows and stitch the results.
    Reconstruct {
        /// Run directory with trained checkpoints.
        #[arg(long)]
        dir: PathBuf,
        /// Reconstruct only this model instead of all configured ones.
        #[arg(long)]
        model: Option<String>,
        /// Overwrite existing reconstructions.
        #[arg(long)]
        force: bool,
    },
    /// Write the interpolation baseline and its SST spectral complement
    /// over the test period.
    Baseline {
        /// Run directory produced by gen-data.
        #[arg(long)]
        dir: PathBuf,
        /// Overwrite existing baseline reconstructions.
        #[arg(long)]
        force: bool,
    },
    /// Score reconstructions against the truth and emit the report table,
    /// JSON, and comparison maps.
    Eval {
        /// Run directory; scores everything under its recon/ tree.
        #[arg(long, conflicts_with_all = ["truth", "recon", "out"])]
        dir: Option<PathBuf>,
        /// Truth series file (standalone mode).
        #[arg(long, requires = "out")]
        truth: Option<PathBuf>,
        /// NAME=PATH reconstruction to score (standalone mode; repeatable).
        #[arg(long = "recon", value_name = "NAME=PATH")]
        recon: Vec<String>,
        /// Method the gain scores compare against.
        #[arg(long, default_value = "oi")]
        baseline: String,
        /// Report directory (standalone mode).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite an existing report.
        #[arg(long)]
        force: bool,
    },
    /// Render the learned SST feature maps of a trained multimodal model.
    Features {
        /// Run directory with trained checkpoints.
        #[arg(long)]
        dir: PathBuf,
        /// Model whose feature maps to render.
        #[arg(long)]
        model: String,
        /// Day within the test period (default: its middle).
        #[arg(long)]
        day: Option<usize>,
        /// Overwrite existing feature maps.
        #[arg(long)]
        force: bool,
    },
    /// Render shared-scale SSH/gradient/Laplacian maps for one test day.
    Plot {
        /// Run directory with reconstructions.
        #[arg(long)]
        dir: PathBuf,
        /// Day within the test period (default: the configured plot day,
        /// else its middle).
        #[arg(long)]
        day: Option<usize>,
        /// Overwrite existing maps for that day.
        #[arg(long)]
        force: bool,
    },
    /// Run the whole pipeline: gen-data, train, reconstruct, baseline, eval.
    Run {
        /// Experiment TOML file.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Built-in experiment: benchmark, ablation-mm, mm-dims,
        /// sst-resolution.
        #[arg(long)]
        preset: Option<String>,
        /// Run directory to create (default: output_root/run_name).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured data seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overwrite an existing run directory.
        #[arg(long)]
        force: bool,
    },
}

enum CliError {
    Config(anyhow::Error),
    Stage { name: &'static str, source: anyhow::Error },
}

/// Wraps errors of the configuration phase (exit code 2).
fn cfg_phase<T>(r: anyhow::Result<T>) -> Result<T, CliError> {
    r.map_err(CliError::Config)
}

/// Wraps errors of a pipeline stage (exit code 3).
fn stage<T>(name: &'static str, r: anyhow::Result<T>) -> Result<T, CliError> {
    r.map_err(|source| CliError::Stage { name, source })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(filter))
        .format_timestamp(None)
        .init();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Stage { name, source }) => {
            eprintln!("stage {name} failed: {source:#}");
            ExitCode::from(3)
        }
    }
}

/// Every computation here is deterministic for a fixed configuration and
/// seed; the environment variable just acknowledges (or questions) that.
fn note_determinism() {
    match std::env::var("VARASSIM_DETERMINISTIC") {
        Ok(v) if v == "0" => log::warn!(
            "VARASSIM_DETERMINISTIC=0 requested, but every computation is deterministic by construction; running deterministically"
        ),
        Ok(_) => log::info!(
            "deterministic mode confirmed: results are bitwise reproducible for this configuration and seed"
        ),
        Err(_) => {}
    }
}

fn run_dir_for(cfg: &ExperimentConfig, out: Option<PathBuf>) -> RunDir {
    RunDir::new(out.unwrap_or_else(|| cfg.default_run_dir()))
}

fn load_run_for(name: &'static str, dir: PathBuf) -> Result<(ExperimentConfig, pipeline::Dataset, RunDir), CliError> {
    let dir = RunDir::new(dir);
    let (cfg, ds) = stage(name, pipeline::load_run(&dir))?;
    Ok((cfg, ds, dir))
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::GenData { config, out, force } => {
            note_determinism();
            let cfg = cfg_phase(config::load_config(&config))?;
            let dir = run_dir_for(&cfg, out);
            stage("gen-data", pipeline::gen_data(&cfg, &dir, force).map(|_| ()))?;
            println!("data directory ready: {}", dir.root.display());
            Ok(())
        }
        Cmd::Train { dir, model, force } => {
            let (cfg, ds, dir) = load_run_for("train", dir)?;
            stage("train", pipeline::train_models(&cfg, &ds, &dir, model.as_deref(), force))?;
            println!("checkpoints written under {}", dir.root.join("models").display());
            Ok(())
        }
        Cmd::Reconstruct { dir, model, force } => {
            let (cfg, ds, dir) = load_run_for("reconstruct", dir)?;
            let labels = stage(
                "reconstruct",
                pipeline::reconstruct_models(&cfg, &ds, &dir, model.as_deref(), force),
            )?;
            println!("reconstructed: {}", labels.join(", "));
            Ok(())
        }
        Cmd::Baseline { dir, force } => {
            let (cfg, ds, dir) = load_run_for("baseline", dir)?;
            stage("baseline", pipeline::baselines(&cfg, &ds, &dir, force))?;
            println!("baselines written under {}", dir.root.join("recon").display());
            Ok(())
        }
        Cmd::Eval { dir, truth, recon, baseline, out, force } => {
            if let Some(dir) = dir {
                let (cfg, ds, dir) = load_run_for("eval", dir)?;
                let rows = stage("eval", pipeline::evaluate(&cfg, &ds, &dir, force))?;
                print!("{}", pipeline::format_report(&rows));
                println!("report written under {}", dir.report_dir().display());
                return Ok(());
            }
            let (truth, out) = cfg_phase(
                truth
                    .zip(out)
                    .context("standalone eval needs --truth, --out, and at least one --recon"),
            )?;
            let recons = cfg_phase(parse_recon_args(&recon))?;
            let rows =
                stage("eval", pipeline::evaluate_files(&truth, &recons, &baseline, &out, force))?;
            print!("{}", pipeline::format_report(&rows));
            println!("report written under {}", out.display());
            Ok(())
        }
        Cmd::Features { dir, model, day, force } => {
            let (cfg, ds, dir) = load_run_for("features", dir)?;
            let written =
                stage("features", pipeline::render_features(&cfg, &ds, &dir, &model, day, force))?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(())
        }
        Cmd::Plot { dir, day, force } => {
            let (cfg, ds, dir) = load_run_for("plot", dir)?;
            let written = stage("plot", pipeline::render_plots(&cfg, &ds, &dir, day, force))?;
            println!("{} maps written under {}", written.len(), dir.plots_dir().display());
            Ok(())
        }
        Cmd::Run { config, preset, out, seed, force } => {
            note_determinism();
            let mut cfg = cfg_phase(match (config, preset) {
                (Some(path), None) => config::load_config(&path),
                (None, Some(name)) => presets::preset(&name, seed.unwrap_or(0)),
                _ => Err(anyhow::anyhow!("pass exactly one of --config or --preset")),
            })?;
            if let Some(seed) = seed {
                cfg.seed = seed;
                cfg.train.seed = seed;
                cfg.windowing.noise_seed = seed;
                cfg_phase(cfg.validate().context("after applying --seed"))?;
            }
            let dir = run_dir_for(&cfg, out);
            run_all(&cfg, &dir, force)
        }
    }
}

fn run_all(cfg: &ExperimentConfig, dir: &RunDir, force: bool) -> Result<(), CliError> {
    let ds = stage("gen-data", pipeline::gen_data(cfg, dir, force))?;
    stage("train", pipeline::train_models(cfg, &ds, dir, None, force))?;
    stage("reconstruct", pipeline::reconstruct_models(cfg, &ds, dir, None, force).map(|_| ()))?;
    stage("baseline", pipeline::baselines(cfg, &ds, dir, force))?;
    let rows = stage("eval", pipeline::evaluate(cfg, &ds, dir, force))?;
    print!("{}", pipeline::format_report(&rows));
    println!("run complete: {}", dir.root.display());
    Ok(())
}

fn parse_recon_args(items: &[String]) -> anyhow::Result<Vec<(String, PathBuf)>> {
    if items.is_empty() {
        bail!("standalone eval needs at least one --recon NAME=PATH");
    }
    items
        .iter()
        .map(|item| {
            let (name, path) = item
                .split_once('=')
                .with_context(|| format!("--recon {item:?} must look like NAME=PATH"))?;
            if name.is_empty() || path.is_empty() {
                bail!("--recon {item:?} must look like NAME=PATH");
            }
            Ok((name.to_string(), PathBuf::from(path)))
        })
        .collect()
}
