use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use surfwatch::checkpoint::{save_checkpoint, ModelCheckpoint};
use surfwatch::postprocess::calibrate;
use surfwatch::preprocess::{list_images, load_region_dataset, DatasetManifest};
use surfwatch::trainer::train_region;

use super::{load_frame_tiles, selected_regions, StoredThresholds};
use crate::config::AppConfig;
use crate::error::{CliError, CliResult};
use crate::layout;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub region: usize,
    pub checkpoint: PathBuf,
    pub final_e_rec: Option<f64>,
    pub thresholds: Option<StoredThresholds>,
}

pub fn e_rec_csv(ckpt: &ModelCheckpoint) -> String {
    let mut s = String::from("epoch,e_rec\n");
    for (ep, e) in ckpt.e_rec_epochs.iter().zip(&ckpt.e_rec_history) {
        let _ = writeln!(s, "{ep},{e}");
    }
    s
}

/// Trains the selected regions. Regions that finish keep their files even when
/// a later region fails; the failure is reported at the end.
pub fn train(cfg: &AppConfig, manifest: Option<&Path>, region: Option<usize>) -> CliResult<Vec<TrainOutcome>> {
    let manifest_path = manifest.map(Path::to_path_buf).unwrap_or_else(|| layout::manifest(cfg));
    let manifest = DatasetManifest::load(&manifest_path)?;
    fs::create_dir_all(&cfg.paths.checkpoint_dir)?;
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for r in selected_regions(cfg, region)? {
        match train_one(cfg, &manifest, r) {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                log::error!("region {r}: {e}");
                failures.push(format!("region {r}: {e}"));
            }
        }
    }
    if failures.is_empty() {
        Ok(outcomes)
    } else {
        Err(CliError::Failed(format!(
            "{} region(s) failed ({} finished): {}",
            failures.len(),
            outcomes.len(),
            failures.join("; ")
        )))
    }
}

fn train_one(cfg: &AppConfig, manifest: &DatasetManifest, region: usize) -> CliResult<TrainOutcome> {
    let data = load_region_dataset(manifest, &cfg.region, region, cfg.network.input_width, cfg.network.input_height)?;
    let train_cfg = cfg.region_train_config(region);
    let mut ckpt = train_region(&data, &cfg.network, &train_cfg, |s| {
        if let Some(e) = s.held_out_e_rec {
            log::info!("region {region} epoch {}: held-out E_rec {e:.3}%", s.epoch);
        }
    })?;
    let path = layout::checkpoint(cfg, region);
    save_checkpoint(&ckpt, &path)?;
    fs::write(layout::e_rec_log(cfg, region), e_rec_csv(&ckpt))?;

    let thresholds = if cfg.calibration.enabled {
        // The held-out frames stay untouched for evaluation.
        let clean: Vec<_> = match &cfg.calibration.data_dir {
            Some(dir) => list_images(dir)?
                .iter()
                .map(|f| Ok(load_frame_tiles(cfg, &dir.join(f))?.swap_remove(region)))
                .collect::<CliResult<_>>()?,
            None => manifest
                .train_items
                .iter()
                .zip(&data.train)
                .filter(|(item, _)| item.augmentation.is_none())
                .map(|(_, img)| img.clone())
                .collect(),
        };
        let pp = calibrate(&mut ckpt.model, &clean, &cfg.postprocess, &cfg.calibration.targets)?;
        let t = StoredThresholds {
            tau_ms: pp.tau_ms,
            tau_ssim: pp.tau_ssim,
        };
        fs::write(layout::thresholds(cfg, region), serde_json::to_string_pretty(&t)?)?;
        Some(t)
    } else {
        None
    };
    Ok(TrainOutcome {
        region,
        checkpoint: path,
        final_e_rec: ckpt.final_e_rec(),
        thresholds,
    })
}
