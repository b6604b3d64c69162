//! Command-line orchestration over the `surfwatch` pipeline.
//!
//! Exit codes: 0 success or no anomaly, 1 anomaly found (detect, watch `--once`),
//! 2 operational error.

pub mod commands;
pub mod config;
pub mod error;
pub mod layout;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::AppConfig;
pub use error::{CliError, CliResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ANOMALY: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "surfwatch", version, about = "Reconstruction-based surface anomaly detection")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Start from the small 64x48 preset instead of the full-resolution defaults.
    #[arg(long, global = true)]
    pub desk: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Write the effective configuration to this file before running.
    #[arg(long, global = true)]
    pub dump_config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the training manifest from the frames in the data directory.
    BuildDataset {
        #[arg(long)]
        held_out: Option<usize>,
        #[arg(long)]
        n_aug: Option<usize>,
    },
    /// Train one model per region.
    Train {
        #[arg(long)]
        region: Option<usize>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Detect anomalies in frames (or single region tiles with `--tile`).
    Detect {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        region: Option<usize>,
        /// Inputs are already region tiles at network resolution; requires `--region`.
        #[arg(long, requires = "region")]
        tile: bool,
        #[arg(long)]
        dump_intermediates: bool,
    },
    /// Build the evaluation set: each held-out normal plus one injected image per category.
    Inject {
        #[arg(long)]
        region: Option<usize>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run detection over the evaluation set and summarize per category.
    Evaluate {
        #[arg(long)]
        region: Option<usize>,
        #[arg(long)]
        dump_intermediates: bool,
    },
    /// Poll a directory and append one report per region to the alert log.
    Watch {
        dir: PathBuf,
        /// Process what is there now and exit.
        #[arg(long)]
        once: bool,
        #[arg(long)]
        poll_secs: Option<f64>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

/// Resolves the effective configuration: file (or preset), then environment, then flags.
pub fn effective_config(common: &Common, env: impl Fn(&str) -> Option<String>) -> CliResult<AppConfig> {
    let mut cfg = match &common.config {
        Some(p) => AppConfig::load(p)?,
        None if common.desk => AppConfig::desk(),
        None => AppConfig::default(),
    };
    cfg.apply_env(env);
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(p) = &common.out {
        cfg.paths.output_dir = p.clone();
    }
    if let Some(p) = &common.data_dir {
        cfg.paths.data_dir = p.clone();
    }
    if let Some(p) = &common.checkpoint_dir {
        cfg.paths.checkpoint_dir = p.clone();
    }
    Ok(cfg)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match try_run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn try_run(cli: Cli) -> CliResult<i32> {
    let mut cfg = effective_config(&cli.common, |k| std::env::var(k).ok())?;
    match &cli.command {
        Command::BuildDataset { held_out, n_aug } => {
            if let Some(h) = held_out {
                cfg.dataset.held_out = *h;
            }
            if let Some(n) = n_aug {
                cfg.dataset.n_aug_per_image = *n;
            }
        }
        Command::Train { epochs: Some(e), .. } => cfg.train.epochs = *e,
        Command::Watch { poll_secs, workers, .. } => {
            if let Some(p) = poll_secs {
                cfg.watch.poll_secs = *p;
            }
            if let Some(w) = workers {
                cfg.watch.workers = *w;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    if let Some(p) = &cli.common.dump_config {
        std::fs::write(p, cfg.to_toml()?)?;
    }

    match cli.command {
        Command::BuildDataset { .. } => {
            let (manifest, path) = commands::build_dataset(&cfg)?;
            println!(
                "train: {}, held-out: {} (excluded {}) -> {}",
                manifest.train_items.len(),
                manifest.held_out.len(),
                manifest.excluded.len(),
                path.display()
            );
            Ok(EXIT_OK)
        }
        Command::Train { region, manifest, .. } => {
            let outcomes = commands::train(&cfg, manifest.as_deref(), region)?;
            for o in &outcomes {
                match o.final_e_rec {
                    Some(e) => println!("region {}: held-out E_rec {e:.3}% -> {}", o.region, o.checkpoint.display()),
                    None => println!("region {}: -> {}", o.region, o.checkpoint.display()),
                }
            }
            Ok(EXIT_OK)
        }
        Command::Detect {
            images,
            region,
            tile,
            dump_intermediates,
        } => {
            let out = commands::detect(&cfg, &images, region, tile, dump_intermediates);
            for r in &out.reports {
                println!(
                    "{} region {}: {} (area {})",
                    r.file,
                    r.region,
                    if r.summary.anomaly_present { "ANOMALY" } else { "clean" },
                    r.summary.anomaly_area
                );
            }
            for (p, e) in &out.errors {
                eprintln!("error: {}: {e}", p.display());
            }
            Ok(out.exit_code())
        }
        Command::Inject { region, manifest } => {
            let set = commands::inject(&cfg, manifest.as_deref(), region)?;
            let anomalous = set.entries.iter().filter(|e| e.category.is_some()).count();
            println!(
                "evaluation set: {} images ({} anomalous, {} clean)",
                set.entries.len(),
                anomalous,
                set.entries.len() - anomalous
            );
            Ok(EXIT_OK)
        }
        Command::Evaluate { region, dump_intermediates } => {
            let results = commands::evaluate(&cfg, region, dump_intermediates)?;
            for (r, res) in &results {
                println!("region {r}");
                print!("{}", commands::format_table(res));
            }
            Ok(EXIT_OK)
        }
        Command::Watch { dir, once, .. } => {
            let stats = commands::watch(&cfg, &dir, once, None)?;
            println!("processed {} frames, {} alerts", stats.frames, stats.alerts);
            Ok(if once && stats.alerts > 0 { EXIT_ANOMALY } else { EXIT_OK })
        }
    }
}
