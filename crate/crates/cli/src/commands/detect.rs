use std::fs;
use std::path::{Path, PathBuf};

use surfwatch::image::load_image;
use surfwatch::model::Ganomaly;
use surfwatch::postprocess::{detect as detect_one, PostprocessConfig};

use super::{load_frame_tiles, load_region_model, region_postprocess, selected_regions, FrameReport};
use crate::config::AppConfig;
use crate::error::{CliError, CliResult};
use crate::{layout, EXIT_ANOMALY, EXIT_ERROR, EXIT_OK};

#[derive(Debug, Default)]
pub struct DetectOutcome {
    pub reports: Vec<FrameReport>,
    pub errors: Vec<(PathBuf, CliError)>,
}

impl DetectOutcome {
    pub fn anomaly_found(&self) -> bool {
        self.reports.iter().any(|r| r.summary.anomaly_present)
    }

    pub fn exit_code(&self) -> i32 {
        if !self.errors.is_empty() {
            EXIT_ERROR
        } else if self.anomaly_found() {
            EXIT_ANOMALY
        } else {
            EXIT_OK
        }
    }
}

struct RegionModel {
    region: usize,
    model: Ganomaly,
    pp: PostprocessConfig,
}

/// Runs every selected region model on every image. Reports and masks go to `<out>/detect`.
pub fn detect(cfg: &AppConfig, images: &[PathBuf], region: Option<usize>, tile: bool, intermediates: bool) -> DetectOutcome {
    let mut out = DetectOutcome::default();
    let mut models = match load_models(cfg, region) {
        Ok(m) => m,
        Err(e) => {
            let msg = e.to_string();
            out.errors.extend(images.iter().map(|p| (p.clone(), CliError::Failed(msg.clone()))));
            return out;
        }
    };
    let dir = layout::detect_dir(cfg);
    for path in images {
        match detect_file(cfg, path, &dir, &mut models, tile, intermediates) {
            Ok(reports) => out.reports.extend(reports),
            Err(e) => out.errors.push((path.clone(), e)),
        }
    }
    out
}

fn load_models(cfg: &AppConfig, region: Option<usize>) -> CliResult<Vec<RegionModel>> {
    selected_regions(cfg, region)?
        .into_iter()
        .map(|r| {
            Ok(RegionModel {
                region: r,
                model: load_region_model(cfg, r)?,
                pp: region_postprocess(cfg, r)?,
            })
        })
        .collect()
}

fn detect_file(
    cfg: &AppConfig,
    path: &Path,
    dir: &Path,
    models: &mut [RegionModel],
    tile: bool,
    intermediates: bool,
) -> CliResult<Vec<FrameReport>> {
    let tiles = if tile {
        let img = load_image(path).map_err(|e| CliError::at(path, e))?;
        if img.dims() != (cfg.region.target_height, cfg.region.target_width) {
            return Err(CliError::at(
                path,
                CliError::Config(format!(
                    "tile is {}x{}, models expect {}x{}",
                    img.width(),
                    img.height(),
                    cfg.region.target_width,
                    cfg.region.target_height
                )),
            ));
        }
        vec![img]
    } else {
        load_frame_tiles(cfg, path)?
    };
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let stem = layout::stem(path);
    let mut reports = Vec::with_capacity(models.len());
    for m in models.iter_mut() {
        let x = if tile { &tiles[0] } else { &tiles[m.region] };
        let report = detect_one(x, &mut m.model, &m.pp).map_err(|e| CliError::at(path, e))?;
        let tag = format!("{stem}_r{}", m.region);
        report.save_artifacts(dir, &tag, intermediates)?;
        let fr = FrameReport {
            file: name.clone(),
            region: m.region,
            summary: report.summary(),
        };
        fs::write(dir.join(format!("{tag}_report.json")), serde_json::to_string_pretty(&fr)?)?;
        reports.push(fr);
    }
    Ok(reports)
}
