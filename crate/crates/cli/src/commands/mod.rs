mod build;
mod detect;
mod eval;
mod train;
mod watch;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use surfwatch::checkpoint::load_checkpoint;
use surfwatch::image::{load_image, ImageTensor};
use surfwatch::model::Ganomaly;
use surfwatch::postprocess::{PostprocessConfig, ReportSummary};
use surfwatch::preprocess::{partition_regions, resize_region};

pub use build::build_dataset;
pub use detect::{detect, DetectOutcome};
pub use eval::{evaluate, format_table, inject, EvalEntry, EvalSet};
pub use train::{train, TrainOutcome};
pub use watch::{watch, WatchStats};

use crate::config::AppConfig;
use crate::error::{CliError, CliResult};
use crate::layout;

/// One region's verdict on one input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub file: String,
    pub region: usize,
    #[serde(flatten)]
    pub summary: ReportSummary,
}

/// Calibrated thresholds stored next to a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredThresholds {
    pub tau_ms: f64,
    pub tau_ssim: f64,
}

/// Post-processing settings for `region`: calibrated thresholds when available.
pub fn region_postprocess(cfg: &AppConfig, region: usize) -> CliResult<PostprocessConfig> {
    let mut pp = cfg.postprocess.clone();
    let path = layout::thresholds(cfg, region);
    if cfg.calibration.enabled && path.exists() {
        let t: StoredThresholds = serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| CliError::at(&path, e))?;
        pp.tau_ms = t.tau_ms;
        pp.tau_ssim = t.tau_ssim;
    }
    Ok(pp)
}

/// Loads the region model and checks it matches the configured input size.
pub fn load_region_model(cfg: &AppConfig, region: usize) -> CliResult<Ganomaly> {
    let path = layout::checkpoint(cfg, region);
    if !path.exists() {
        return Err(CliError::MissingCheckpoint(path));
    }
    let ckpt = load_checkpoint(&path).map_err(|e| CliError::at(&path, e))?;
    let n = ckpt.network_config();
    if (n.input_width, n.input_height) != (cfg.region.target_width, cfg.region.target_height) {
        return Err(CliError::at(
            &path,
            CliError::Config(format!(
                "model input {}x{} differs from region target {}x{}",
                n.input_width, n.input_height, cfg.region.target_width, cfg.region.target_height
            )),
        ));
    }
    Ok(ckpt.model)
}

/// Region indices selected by an optional `--region` flag.
pub fn selected_regions(cfg: &AppConfig, region: Option<usize>) -> CliResult<Vec<usize>> {
    let n = cfg.region.region_count();
    match region {
        Some(r) if r >= n => Err(CliError::Config(format!("region {r} out of range (grid has {n})"))),
        Some(r) => Ok(vec![r]),
        None => Ok((0..n).collect()),
    }
}

/// Cuts a frame into region tiles at network resolution.
pub fn frame_tiles(cfg: &AppConfig, frame: &ImageTensor) -> CliResult<Vec<ImageTensor>> {
    let tiles = partition_regions(frame, &cfg.region)?;
    tiles
        .iter()
        .map(|t| Ok(resize_region(t, cfg.region.target_width, cfg.region.target_height)?))
        .collect()
}

pub fn load_frame_tiles(cfg: &AppConfig, path: &Path) -> CliResult<Vec<ImageTensor>> {
    let frame = load_image(path).map_err(|e| CliError::at(path, e))?;
    frame_tiles(cfg, &frame).map_err(|e| CliError::at(path, e))
}
