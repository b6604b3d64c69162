//! From an (input, reconstruction) pair to an anomaly mask.
//!
//! Stages: register the reconstruction onto the input, match its colours, build
//! the matrix-subtraction and SSIM maps, threshold each, drop small components,
//! and take the union.

mod mask;
mod registration;
mod similarity;

pub use mask::{binarize_with, denoise_with, iou, label_components, union_masks, BoundingBox, Component, Connectivity};
pub use registration::{
    estimate_transform, match_features, register_images, register_images_with, warp_image, Feature, FeatureExtractor,
    HarrisExtractor, Homography, RegistrationConfig, RegistrationInfo, TransformModel,
};
pub use similarity::{lower_median, match_colors, matrix_subtraction, ssim_map, MapKind, SimilarityMatrix, SsimParams, SIGMA_EPS};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{save_image, BinaryMask, GrayscaleRule, ImageTensor};
use crate::model::Ganomaly;

/// Reference resolution at which `DEFAULT_MIN_AREA` applies.
pub const REFERENCE_PIXELS: usize = 640 * 480;
pub const DEFAULT_MIN_AREA: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    #[serde(default)]
    pub registration: RegistrationConfig,
    pub ssim_window: usize,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    #[serde(default)]
    pub grayscale: GrayscaleRule,
    pub tau_ms: f64,
    pub tau_ssim: f64,
    pub min_area: usize,
    #[serde(default)]
    pub connectivity: Connectivity,
}

impl Default for PostprocessConfig {
    /// Thresholds here are placeholders; use [`calibrate`] or explicit values.
    fn default() -> Self {
        Self {
            registration: RegistrationConfig::default(),
            ssim_window: 8,
            ssim_k1: 0.01,
            ssim_k2: 0.03,
            grayscale: GrayscaleRule::Mean,
            tau_ms: 0.3,
            tau_ssim: 0.3,
            min_area: DEFAULT_MIN_AREA,
            connectivity: Connectivity::Eight,
        }
    }
}

/// `DEFAULT_MIN_AREA` scaled by pixel count relative to 640x480, at least 1.
pub fn scaled_min_area(height: usize, width: usize) -> usize {
    let a = DEFAULT_MIN_AREA as f64 * (height * width) as f64 / REFERENCE_PIXELS as f64;
    (a.round() as usize).max(1)
}

impl PostprocessConfig {
    pub fn for_resolution(height: usize, width: usize) -> Self {
        Self {
            min_area: scaled_min_area(height, width),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ssim_window < 3 {
            return Err(Error::InvalidArgument("ssim_window must be >= 3".into()));
        }
        if !self.tau_ms.is_finite() || !self.tau_ssim.is_finite() {
            return Err(Error::InvalidArgument("thresholds must be finite".into()));
        }
        if !(self.ssim_k1 > 0.0 && self.ssim_k2 > 0.0) {
            return Err(Error::InvalidArgument("ssim_k1 and ssim_k2 must be > 0".into()));
        }
        if !(self.registration.ransac_reproj_tol > 0.0) {
            return Err(Error::InvalidArgument("ransac_reproj_tol must be > 0".into()));
        }
        Ok(())
    }

    pub fn ssim_params(&self) -> SsimParams {
        SsimParams {
            window: self.ssim_window,
            k1: self.ssim_k1,
            k2: self.ssim_k2,
            grayscale: self.grayscale,
        }
    }
}

pub fn binarize(m: &SimilarityMatrix, cfg: &PostprocessConfig) -> BinaryMask {
    match m.kind {
        MapKind::Difference => binarize_with(m, cfg.tau_ms),
        MapKind::Similarity => binarize_with(m, cfg.tau_ssim),
    }
}

pub fn denoise_mask(mask: &BinaryMask, cfg: &PostprocessConfig) -> BinaryMask {
    denoise_with(mask, cfg.min_area, cfg.connectivity)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tau_ms: f64,
    pub tau_ssim: f64,
    pub min_area: usize,
    pub connectivity: Connectivity,
}

/// Everything produced along the way for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub anomaly_present: bool,
    pub final_mask: BinaryMask,
    pub ms_mask: BinaryMask,
    pub ssim_mask: BinaryMask,
    pub ms_map: SimilarityMatrix,
    pub ssim_map: SimilarityMatrix,
    pub registration: RegistrationInfo,
    pub thresholds: Thresholds,
    pub components: Vec<Component>,
    pub reconstruction: ImageTensor,
    pub registered: ImageTensor,
    pub color_matched: ImageTensor,
}

/// JSON-facing part of a [`DetectionReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub anomaly_present: bool,
    pub anomaly_area: usize,
    pub ms_area: usize,
    pub ssim_area: usize,
    pub components: Vec<Component>,
    pub thresholds: Thresholds,
    pub registration: RegistrationInfo,
}

impl DetectionReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            anomaly_present: self.anomaly_present,
            anomaly_area: self.final_mask.area(),
            ms_area: self.ms_mask.area(),
            ssim_area: self.ssim_mask.area(),
            components: self.components.clone(),
            thresholds: self.thresholds,
            registration: self.registration.clone(),
        }
    }

    /// Writes the masks, heat maps and intermediate images into `dir` with the given stem.
    pub fn save_artifacts(&self, dir: &Path, stem: &str, intermediates: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.final_mask.save_png(dir.join(format!("{stem}_mask.png")))?;
        if intermediates {
            self.ms_mask.save_png(dir.join(format!("{stem}_mask_ms.png")))?;
            self.ssim_mask.save_png(dir.join(format!("{stem}_mask_ssim.png")))?;
            save_image(&heatmap(&self.ms_map), dir.join(format!("{stem}_heat_ms.png")))?;
            save_image(&heatmap(&self.ssim_map), dir.join(format!("{stem}_heat_ssim.png")))?;
            save_image(&self.reconstruction.clipped(), dir.join(format!("{stem}_recon.png")))?;
            save_image(&self.registered.clipped(), dir.join(format!("{stem}_registered.png")))?;
            save_image(&self.color_matched.clipped(), dir.join(format!("{stem}_color_matched.png")))?;
        }
        Ok(())
    }
}

/// Maps a similarity matrix to a blue-to-red image: high difference or low SSIM is red.
pub fn heatmap(m: &SimilarityMatrix) -> ImageTensor {
    let (lo, hi) = match m.kind {
        MapKind::Difference => (0.0, m.min_max().1.max(1e-12)),
        MapKind::Similarity => (-1.0, 1.0),
    };
    ImageTensor::from_fn(m.height, m.width, |y, x, c| {
        let mut t = ((m.get(y, x) - lo) / (hi - lo)).clamp(0.0, 1.0);
        if m.kind == MapKind::Similarity {
            t = 1.0 - t;
        }
        match c {
            0 => (1.5 - (4.0 * t - 3.0).abs()).clamp(0.0, 1.0),
            1 => (1.5 - (4.0 * t - 2.0).abs()).clamp(0.0, 1.0),
            _ => (1.5 - (4.0 * t - 1.0).abs()).clamp(0.0, 1.0),
        }
    })
}

/// Registration plus colour matching of a reconstruction.
pub fn align(x: &ImageTensor, x_hat: &ImageTensor, cfg: &PostprocessConfig) -> Result<(ImageTensor, ImageTensor, RegistrationInfo)> {
    x.ensure_same_dims(x_hat)?;
    let (registered, info) = if cfg.registration.enabled {
        register_images(x, x_hat, &cfg.registration)?
    } else {
        (
            x_hat.clone(),
            RegistrationInfo {
                model: TransformModel::Identity,
                transform: Homography::IDENTITY,
                keypoints_input: 0,
                keypoints_reconstruction: 0,
                matches: 0,
                inliers: 0,
                inlier_ratio: 0.0,
                low_confidence: false,
            },
        )
    };
    let matched = match_colors(x, &registered)?;
    Ok((registered, matched, info))
}

/// Runs every stage after reconstruction.
pub fn detect_pair(x: &ImageTensor, x_hat: &ImageTensor, cfg: &PostprocessConfig) -> Result<DetectionReport> {
    cfg.validate()?;
    let (registered, matched, registration) = align(x, x_hat, cfg)?;
    let ms_map = matrix_subtraction(x, &matched)?;
    let ssim = ssim_map(x, &matched, &cfg.ssim_params())?;
    let ms_mask = denoise_mask(&binarize(&ms_map, cfg), cfg);
    let ssim_mask = denoise_mask(&binarize(&ssim, cfg), cfg);
    let final_mask = union_masks(&ms_mask, &ssim_mask)?;
    let (_, components) = label_components(&final_mask, cfg.connectivity);
    Ok(DetectionReport {
        anomaly_present: !final_mask.is_empty(),
        final_mask,
        ms_mask,
        ssim_mask,
        ms_map,
        ssim_map: ssim,
        registration,
        thresholds: Thresholds {
            tau_ms: cfg.tau_ms,
            tau_ssim: cfg.tau_ssim,
            min_area: cfg.min_area,
            connectivity: cfg.connectivity,
        },
        components,
        reconstruction: x_hat.clone(),
        registered,
        color_matched: matched,
    })
}

/// Full pipeline: reconstruct with `model`, then [`detect_pair`].
pub fn detect(x: &ImageTensor, model: &mut Ganomaly, cfg: &PostprocessConfig) -> Result<DetectionReport> {
    let x_hat = model.reconstruct(x)?;
    detect_pair(x, &x_hat, cfg)
}

/// Linear-interpolated percentile (`p` in [0, 100]) of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("percentile of empty set".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p.clamp(0.0, 100.0) / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (rank - lo as f64))
}

/// Percentiles of the pooled clean-image map values used as thresholds. The
/// defaults take the most extreme clean response of each map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationTargets {
    pub ms_percentile: f64,
    pub ssim_percentile: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            ms_percentile: 100.0,
            ssim_percentile: 0.0,
        }
    }
}

/// Sets `tau_ms` and `tau_ssim` from the pooled map values of clean images.
pub fn calibrate(
    model: &mut Ganomaly,
    clean: &[ImageTensor],
    cfg: &PostprocessConfig,
    targets: &CalibrationTargets,
) -> Result<PostprocessConfig> {
    let mut pairs = Vec::with_capacity(clean.len());
    for x in clean {
        pairs.push((x.clone(), model.reconstruct(x)?));
    }
    calibrate_pairs(&pairs, cfg, targets)
}

pub fn calibrate_pairs(
    pairs: &[(ImageTensor, ImageTensor)],
    cfg: &PostprocessConfig,
    targets: &CalibrationTargets,
) -> Result<PostprocessConfig> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("calibration needs at least one clean image".into()));
    }
    let mut ms = Vec::new();
    let mut ss = Vec::new();
    for (x, x_hat) in pairs {
        let (_, matched, _) = align(x, x_hat, cfg)?;
        ms.extend(matrix_subtraction(x, &matched)?.values);
        ss.extend(ssim_map(x, &matched, &cfg.ssim_params())?.values);
    }
    Ok(PostprocessConfig {
        tau_ms: percentile(&ms, targets.ms_percentile)?,
        tau_ssim: percentile(&ss, targets.ssim_percentile)?,
        ..cfg.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::stone_texture;

    #[test]
    fn own_reconstruction_is_never_anomalous() {
        let x = stone_texture(48, 64, 9);
        let r = detect_pair(&x, &x, &PostprocessConfig::for_resolution(48, 64)).unwrap();
        assert!(!r.anomaly_present);
        assert!(r.ms_map.values.iter().all(|&v| v < 1e-6));
    }

    #[test]
    fn blob_is_found() {
        let x = stone_texture(48, 64, 9);
        let mut y = x.clone();
        for yy in 20..28 {
            for xx in 30..40 {
                y.set_pixel(yy, xx, [0.95, 0.95, 0.92]);
            }
        }
        let cfg = PostprocessConfig {
            tau_ms: 0.2,
            min_area: 4,
            ..PostprocessConfig::default()
        };
        let r = detect_pair(&y, &x, &cfg).unwrap();
        assert!(r.anomaly_present);
        assert!(r.final_mask.get(24, 35));
        assert!(r.summary().components.iter().any(|c| c.area >= 40));
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(percentile(&v, 50.0).unwrap(), 3.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 5.0);
        assert!((percentile(&v, 12.5).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn min_area_scaling() {
        assert_eq!(scaled_min_area(480, 640), 64);
        assert_eq!(scaled_min_area(240, 320), 16);
        assert_eq!(scaled_min_area(48, 64), 1);
    }
}
