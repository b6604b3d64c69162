use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use surfwatch::evalkit::{evaluate_detection, inject_anomaly, panel, AnomalyCategory, AnomalySpec, EvalResult, GroundTruth};
use surfwatch::image::{load_image, save_image, BinaryMask};
use surfwatch::postprocess::detect as detect_one;
use surfwatch::preprocess::{load_region_tile, DatasetManifest};

use super::{load_region_model, region_postprocess, selected_regions};
use crate::config::AppConfig;
use crate::error::{CliError, CliResult};
use crate::layout;

/// One evaluation image; paths are relative to the evaluation directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub image: PathBuf,
    pub region: usize,
    /// Held-out frame the image was cut from.
    pub frame: String,
    pub category: Option<AnomalyCategory>,
    pub mask: Option<PathBuf>,
    pub anomaly: Option<AnomalySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub entries: Vec<EvalEntry>,
}

fn anomaly_seed(seed: u64, region: usize, frame: usize, category: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((region as u64) << 32)
        .wrapping_add((frame as u64) << 8)
        .wrapping_add(category as u64)
}

/// Writes, per selected region, every held-out tile plus one injected copy per
/// category, with ground-truth masks, and the listing `set.json`.
pub fn inject(cfg: &AppConfig, manifest: Option<&Path>, region: Option<usize>) -> CliResult<EvalSet> {
    let manifest_path = manifest.map(Path::to_path_buf).unwrap_or_else(|| layout::manifest(cfg));
    let manifest = DatasetManifest::load(&manifest_path)?;
    if manifest.held_out.is_empty() {
        return Err(CliError::Failed("manifest has no held-out frames".into()));
    }
    let dir = layout::eval_dir(cfg);
    let (w, h) = (cfg.region.target_width, cfg.region.target_height);
    let mut entries = Vec::new();
    for r in selected_regions(cfg, region)? {
        let rdir = PathBuf::from(format!("region_{r}"));
        fs::create_dir_all(dir.join(&rdir))?;
        for (fi, frame) in manifest.held_out.iter().enumerate() {
            let tile = load_region_tile(&manifest.source_dir.join(frame), &cfg.region, r, w, h)?;
            let stem = layout::stem(Path::new(frame));
            let image = rdir.join(format!("{fi:03}_{stem}_clean.png"));
            save_image(&tile, dir.join(&image))?;
            entries.push(EvalEntry {
                image,
                region: r,
                frame: frame.clone(),
                category: None,
                mask: None,
                anomaly: None,
            });
            for (ci, c) in AnomalyCategory::ALL.into_iter().enumerate() {
                let spec = AnomalySpec::new(c, anomaly_seed(cfg.seed, r, fi, ci));
                let (img, mask) = inject_anomaly(&tile, &spec)?;
                let image = rdir.join(format!("{fi:03}_{stem}_{c}.png"));
                let mask_path = rdir.join(format!("{fi:03}_{stem}_{c}_truth.png"));
                save_image(&img, dir.join(&image))?;
                mask.save_png(dir.join(&mask_path))?;
                entries.push(EvalEntry {
                    image,
                    region: r,
                    frame: frame.clone(),
                    category: Some(c),
                    mask: Some(mask_path),
                    anomaly: Some(spec),
                });
            }
        }
    }
    let set = EvalSet { entries };
    fs::write(layout::eval_set(cfg), serde_json::to_string_pretty(&set)?)?;
    Ok(set)
}

/// Detects on every evaluation image of the selected regions and writes one
/// `EvalResult` per region plus a panel per image.
pub fn evaluate(cfg: &AppConfig, region: Option<usize>, intermediates: bool) -> CliResult<BTreeMap<usize, EvalResult>> {
    let dir = layout::eval_dir(cfg);
    let set_path = layout::eval_set(cfg);
    let set: EvalSet = serde_json::from_str(
        &fs::read_to_string(&set_path).map_err(|e| CliError::at(&set_path, e))?,
    )?;
    let panels = dir.join("panels");
    fs::create_dir_all(&panels)?;
    let mut results = BTreeMap::new();
    for r in selected_regions(cfg, region)? {
        let entries: Vec<&EvalEntry> = set.entries.iter().filter(|e| e.region == r).collect();
        if entries.is_empty() {
            continue;
        }
        let mut model = load_region_model(cfg, r)?;
        let pp = region_postprocess(cfg, r)?;
        let mut reports = Vec::with_capacity(entries.len());
        let mut truths = Vec::with_capacity(entries.len());
        for e in entries {
            let x = load_image(dir.join(&e.image))?;
            let report = detect_one(&x, &mut model, &pp).map_err(|err| CliError::at(&e.image, err))?;
            let truth = match (&e.category, &e.mask) {
                (Some(c), Some(m)) => GroundTruth::Anomaly {
                    category: *c,
                    mask: BinaryMask::load_png(dir.join(m))?,
                },
                _ => GroundTruth::Clean,
            };
            let truth_mask = match &truth {
                GroundTruth::Anomaly { mask, .. } => Some(mask),
                GroundTruth::Clean => None,
            };
            let stem = layout::stem(&e.image);
            save_image(&panel(&x, &report, truth_mask), panels.join(format!("r{r}_{stem}.png")))?;
            if intermediates {
                report.save_artifacts(&dir.join("intermediates"), &format!("r{r}_{stem}"), true)?;
            }
            reports.push(report);
            truths.push(truth);
        }
        let res = evaluate_detection(&reports, &truths)?;
        fs::write(layout::eval_result(cfg, r), serde_json::to_string_pretty(&res)?)?;
        results.insert(r, res);
    }
    Ok(results)
}

/// Per-category table of detection and localization rates.
pub fn format_table(res: &EvalResult) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>5} {:>9} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "category", "n", "detected", "hit", "ms", "ssim", "prec", "rec", "iou"
    );
    for (c, cs) in &res.per_class {
        let _ = writeln!(
            s,
            "{:<14} {:>5} {:>9.2} {:>6.2} {:>6.2} {:>6.2} {:>6.2} {:>6.2} {:>6.2}",
            c.name(),
            cs.count,
            cs.detection_rate,
            cs.hit_rate,
            cs.ms_hit_rate,
            cs.ssim_hit_rate,
            cs.mean_precision,
            cs.mean_recall,
            cs.mean_iou
        );
    }
    let _ = writeln!(s, "false alarms: {}/{} clean images", res.false_alarms, res.clean_images);
    s
}
