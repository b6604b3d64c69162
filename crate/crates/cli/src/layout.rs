//! File names of everything the commands read and write.

use std::path::{Path, PathBuf};

use crate::config::AppConfig;

pub fn manifest(cfg: &AppConfig) -> PathBuf {
    cfg.paths.output_dir.join("manifest.json")
}

pub fn checkpoint(cfg: &AppConfig, region: usize) -> PathBuf {
    cfg.paths.checkpoint_dir.join(format!("region_{region}.ckpt"))
}

/// CSV with `epoch,e_rec` rows.
pub fn e_rec_log(cfg: &AppConfig, region: usize) -> PathBuf {
    cfg.paths.checkpoint_dir.join(format!("region_{region}_erec.csv"))
}

pub fn thresholds(cfg: &AppConfig, region: usize) -> PathBuf {
    cfg.paths.checkpoint_dir.join(format!("region_{region}_thresholds.json"))
}

pub fn detect_dir(cfg: &AppConfig) -> PathBuf {
    cfg.paths.output_dir.join("detect")
}

pub fn eval_dir(cfg: &AppConfig) -> PathBuf {
    cfg.paths.output_dir.join("eval")
}

pub fn eval_set(cfg: &AppConfig) -> PathBuf {
    eval_dir(cfg).join("set.json")
}

pub fn eval_result(cfg: &AppConfig, region: usize) -> PathBuf {
    eval_dir(cfg).join(format!("result_region_{region}.json"))
}

pub fn alert_log(cfg: &AppConfig) -> PathBuf {
    cfg.paths.output_dir.join("alerts.jsonl")
}

pub fn watch_ledger(cfg: &AppConfig) -> PathBuf {
    cfg.paths.output_dir.join("watch_ledger.json")
}

pub fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string()
}
