//! Application configuration: one TOML file, environment overrides for paths,
//! command-line flags on top.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use surfwatch::model::NetworkConfig;
use surfwatch::postprocess::{CalibrationTargets, PostprocessConfig};
use surfwatch::preprocess::{AugmentationBounds, RegionSpec};
use surfwatch::trainer::{LrSchedule, TrainConfig};

use crate::error::{CliError, CliResult};

/// Bumped whenever a key is renamed or its meaning changes.
pub const CONFIG_VERSION: u32 = 1;

pub const ENV_DATA_DIR: &str = "SURFWATCH_DATA_DIR";
pub const ENV_CHECKPOINT_DIR: &str = "SURFWATCH_CHECKPOINT_DIR";
pub const ENV_OUTPUT_DIR: &str = "SURFWATCH_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Optional list of frame names to drop (one per line).
    pub exclusions: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            checkpoint_dir: PathBuf::from("checkpoints"),
            output_dir: PathBuf::from("out"),
            exclusions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_aug_per_image: usize,
    pub held_out: usize,
    pub bounds: AugmentationBounds,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_aug_per_image: 2,
            held_out: 9,
            bounds: AugmentationBounds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Calibrate thresholds after training.
    pub enabled: bool,
    pub targets: CalibrationTargets,
    /// Clean frames to calibrate on; the unaugmented training tiles when absent.
    pub data_dir: Option<PathBuf>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            targets: CalibrationTargets::default(),
            data_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WatchConfig {
    pub poll_secs: f64,
    pub workers: usize,
}

impl Default for WatchConfig {
    fn default() -> Self {
        Self {
            poll_secs: 5.0,
            workers: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub version: u32,
    pub seed: u64,
    pub paths: Paths,
    pub region: RegionSpec,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub postprocess: PostprocessConfig,
    pub dataset: DatasetConfig,
    pub calibration: CalibrationConfig,
    pub watch: WatchConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        let network = NetworkConfig::default();
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            paths: Paths::default(),
            region: RegionSpec::default(),
            postprocess: PostprocessConfig::for_resolution(network.input_height, network.input_width),
            network,
            train: TrainConfig::default(),
            dataset: DatasetConfig::default(),
            calibration: CalibrationConfig::default(),
            watch: WatchConfig::default(),
        }
    }
}

impl AppConfig {
    /// Small-network preset for 64x48 region tiles.
    pub fn desk() -> Self {
        let network = NetworkConfig::desk_scale();
        let mut cfg = Self {
            region: RegionSpec {
                target_width: network.input_width,
                target_height: network.input_height,
                ..RegionSpec::default()
            },
            postprocess: PostprocessConfig {
                ssim_window: 3,
                min_area: 10,
                ..PostprocessConfig::default()
            },
            network,
            ..Self::default()
        };
        cfg.train = TrainConfig {
            epochs: 150,
            eval_every: 10,
            lr_schedule: LrSchedule::Cosine { final_fraction: 0.05 },
            ema_decay: Some(0.995),
            disc_reset_below: Some(0.25),
            ..cfg.train
        };
        cfg
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Replaces paths with the values of the `SURFWATCH_*_DIR` variables that are set.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get(ENV_DATA_DIR) {
            self.paths.data_dir = v.into();
        }
        if let Some(v) = get(ENV_CHECKPOINT_DIR) {
            self.paths.checkpoint_dir = v.into();
        }
        if let Some(v) = get(ENV_OUTPUT_DIR) {
            self.paths.output_dir = v.into();
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.region.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        self.postprocess.validate()?;
        if (self.region.target_width, self.region.target_height) != (self.network.input_width, self.network.input_height) {
            return Err(CliError::Config(format!(
                "region target {}x{} differs from network input {}x{}",
                self.region.target_width, self.region.target_height, self.network.input_width, self.network.input_height
            )));
        }
        // TOML integers are signed.
        if self.seed > i64::MAX as u64 {
            return Err(CliError::Config(format!("seed {} exceeds {}", self.seed, i64::MAX)));
        }
        if self.watch.workers == 0 || !(self.watch.poll_secs > 0.0) {
            return Err(CliError::Config("watch.workers and watch.poll_secs must be > 0".into()));
        }
        Ok(())
    }

    /// Training seed for one region: the global seed offset by the region index.
    pub fn region_train_config(&self, region: usize) -> TrainConfig {
        TrainConfig {
            seed: self.seed.wrapping_add(region as u64),
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for cfg in [AppConfig::default(), AppConfig::desk()] {
            let text = cfg.to_toml().unwrap();
            assert_eq!(AppConfig::from_toml(&text).unwrap(), cfg);
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(AppConfig::from_toml("seed = 1\nsede = 2\n").is_err());
        assert!(AppConfig::from_toml("[network]\nlatent_dimm = 3\n").is_err());
        assert!(AppConfig::from_toml("[postprocess.registration]\nenabeld = true\n").is_err());
    }

    #[test]
    fn partial_sections_take_defaults() {
        let cfg = AppConfig::from_toml("seed = 5\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.network, NetworkConfig::default());
    }

    #[test]
    fn env_overrides_paths() {
        let mut cfg = AppConfig::default();
        cfg.apply_env(|k| (k == ENV_OUTPUT_DIR).then(|| "/tmp/x".to_string()));
        assert_eq!(cfg.paths.output_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.paths.data_dir, PathBuf::from("data"));
    }

    #[test]
    fn mismatched_target_rejected() {
        let mut cfg = AppConfig::desk();
        cfg.region.target_width = 32;
        assert!(cfg.validate().is_err());
    }
}
