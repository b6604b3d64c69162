use std::fs;
use std::path::PathBuf;

use surfwatch::preprocess::{self, DatasetManifest};

use crate::config::AppConfig;
use crate::error::CliResult;
use crate::layout;

/// Builds the manifest for the configured data directory and writes it to `<out>/manifest.json`.
pub fn build_dataset(cfg: &AppConfig) -> CliResult<(DatasetManifest, PathBuf)> {
    let manifest = preprocess::build_dataset(
        &cfg.paths.data_dir,
        cfg.paths.exclusions.as_deref(),
        &cfg.region,
        cfg.dataset.n_aug_per_image,
        cfg.dataset.held_out,
        cfg.seed,
        cfg.dataset.bounds,
    )?;
    fs::create_dir_all(&cfg.paths.output_dir)?;
    let path = layout::manifest(cfg);
    manifest.save(&path)?;
    Ok((manifest, path))
}
