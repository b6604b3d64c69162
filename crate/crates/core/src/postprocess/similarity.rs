//! Colour matching and the two per-pixel similarity maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_grayscale_with, GrayscaleRule, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// Larger is more anomalous (matrix subtraction).
    Difference,
    /// Smaller is more anomalous (SSIM).
    Similarity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub kind: MapKind,
}

impl SimilarityMatrix {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Below this the reconstruction channel is treated as constant.
pub const SIGMA_EPS: f64 = 1e-12;

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-channel affine remap of `x_hat_reg` onto the mean and standard deviation of `x`.
/// A constant reconstruction channel maps to the constant `mean(x_k)`.
pub fn match_colors(x: &ImageTensor, x_hat_reg: &ImageTensor) -> Result<ImageTensor> {
    x.ensure_same_dims(x_hat_reg)?;
    let mut out = x_hat_reg.clone();
    for k in 0..3 {
        let (mu_x, sd_x) = mean_std(&x.channel(k));
        let (mu_r, sd_r) = mean_std(&x_hat_reg.channel(k));
        let (gain, offset) = if sd_r > SIGMA_EPS {
            (sd_x / sd_r, mu_x - mu_r * sd_x / sd_r)
        } else {
            (0.0, mu_x)
        };
        for px in out.data_mut().chunks_exact_mut(3) {
            px[k] = px[k] * gain + offset;
        }
    }
    Ok(out)
}

/// Lower median (element `(n - 1) / 2` of the sorted values).
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let k = (v.len() - 1) / 2;
    let (_, m, _) = v.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *m
}

/// `sum_k |x_k - xhat_k - med_k(x_k - xhat_k)|` per pixel.
pub fn matrix_subtraction(x: &ImageTensor, x_hat_cm: &ImageTensor) -> Result<SimilarityMatrix> {
    x.ensure_same_dims(x_hat_cm)?;
    let (h, w) = x.dims();
    let mut values = vec![0.0; h * w];
    for k in 0..3 {
        let diff: Vec<f64> = x
            .data()
            .iter()
            .zip(x_hat_cm.data())
            .skip(k)
            .step_by(3)
            .map(|(a, b)| a - b)
            .collect();
        let med = lower_median(&diff);
        for (v, d) in values.iter_mut().zip(&diff) {
            *v += (d - med).abs();
        }
    }
    Ok(SimilarityMatrix {
        height: h,
        width: w,
        values,
        kind: MapKind::Difference,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    #[serde(default)]
    pub grayscale: GrayscaleRule,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 8,
            k1: 0.01,
            k2: 0.03,
            grayscale: GrayscaleRule::Mean,
        }
    }
}

/// Summed-area table with a zero first row/column.
struct Integral {
    w: usize,
    t: Vec<f64>,
}

impl Integral {
    fn new(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Self {
        let mut t = vec![0.0; (h + 1) * (w + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(y * w + x);
                t[(y + 1) * (w + 1) + x + 1] = t[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, t }
    }

    #[inline]
    fn sum(&self, y: usize, x: usize, s: usize) -> f64 {
        let w = self.w + 1;
        self.t[(y + s) * w + x + s] - self.t[y * w + x + s] - self.t[(y + s) * w + x] + self.t[y * w + x]
    }
}

/// Windowed SSIM map on grayscale versions of both images. Each pixel holds the
/// SSIM of the `window x window` patch whose top-left corner it is; positions
/// where the patch would leave the image copy the nearest valid value.
pub fn ssim_map(x: &ImageTensor, x_hat_cm: &ImageTensor, params: &SsimParams) -> Result<SimilarityMatrix> {
    x.ensure_same_dims(x_hat_cm)?;
    let (h, w) = x.dims();
    let s = params.window;
    if s < 1 || s > h || s > w {
        return Err(Error::InvalidArgument(format!("SSIM window {s} does not fit a {h}x{w} image")));
    }
    let a = to_grayscale_with(x, params.grayscale);
    let b = to_grayscale_with(x_hat_cm, params.grayscale);
    let (ad, bd) = (a.data(), b.data());
    let ia = Integral::new(h, w, |i| ad[i]);
    let ib = Integral::new(h, w, |i| bd[i]);
    let iaa = Integral::new(h, w, |i| ad[i] * ad[i]);
    let ibb = Integral::new(h, w, |i| bd[i] * bd[i]);
    let iab = Integral::new(h, w, |i| ad[i] * bd[i]);
    let c1 = params.k1 * params.k1;
    let c2 = params.k2 * params.k2;
    let n = (s * s) as f64;
    let (vh, vw) = (h - s + 1, w - s + 1);
    let mut valid = vec![0.0; vh * vw];
    for y in 0..vh {
        for x in 0..vw {
            let mu_a = ia.sum(y, x, s) / n;
            let mu_b = ib.sum(y, x, s) / n;
            let var_a = (iaa.sum(y, x, s) / n - mu_a * mu_a).max(0.0);
            let var_b = (ibb.sum(y, x, s) / n - mu_b * mu_b).max(0.0);
            let cov = iab.sum(y, x, s) / n - mu_a * mu_b;
            valid[y * vw + x] = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
    }
    let mut values = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            values[y * w + x] = valid[y.min(vh - 1) * vw + x.min(vw - 1)];
        }
    }
    Ok(SimilarityMatrix {
        height: h,
        width: w,
        values,
        kind: MapKind::Similarity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize, s: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, |y, x, c| (((y * 7 + x * 3 + c * 11 + s) * 2654435761usize) % 1000) as f64 / 1000.0)
    }

    #[test]
    fn color_matching_fixed_point_and_moments() {
        let x = textured(12, 9, 0);
        let same = match_colors(&x, &x).unwrap();
        for (a, b) in same.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        let r = textured(12, 9, 5).map(|v| 0.3 * v + 0.1);
        let out = match_colors(&x, &r).unwrap();
        for k in 0..3 {
            let (m1, s1) = mean_std(&out.channel(k));
            let (m2, s2) = mean_std(&x.channel(k));
            assert!((m1 - m2).abs() < 1e-9 && (s1 - s2).abs() < 1e-9);
        }
    }

    #[test]
    fn color_matching_example_value() {
        // Reconstruction channel: mean 0.4, std 0.1; input: mean 0.5, std 0.2.
        let r = ImageTensor::new(1, 2, vec![0.3, 0.3, 0.3, 0.5, 0.5, 0.5]).unwrap();
        let x = ImageTensor::new(1, 2, vec![0.3, 0.3, 0.3, 0.7, 0.7, 0.7]).unwrap();
        let out = match_colors(&x, &r).unwrap();
        // (0.5 - 0.4) / 0.1 * 0.2 + 0.5 = 0.7
        assert!((out.get(0, 1, 0) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn color_matching_constant_channel() {
        let x = textured(4, 4, 1);
        let r = ImageTensor::filled(4, 4, [0.3, 0.3, 0.3]);
        let out = match_colors(&x, &r).unwrap();
        let (mu, _) = mean_std(&x.channel(1));
        assert!(out.channel(1).iter().all(|v| (v - mu).abs() < 1e-12));
    }

    #[test]
    fn ms_single_bright_pixel() {
        let x = textured(5, 5, 2);
        let mut y = x.clone();
        y.set(2, 3, 1, x.get(2, 3, 1) - 0.3);
        let m = matrix_subtraction(&x, &y).unwrap();
        assert!((m.get(2, 3) - 0.3).abs() < 1e-12);
        assert_eq!(m.values.iter().filter(|&&v| v > 1e-12).count(), 1);
        let z = matrix_subtraction(&x, &x).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ms_ignores_channel_offsets() {
        let x = textured(6, 7, 3);
        let y = textured(6, 7, 9);
        let base = matrix_subtraction(&x, &y).unwrap();
        let mut shifted = x.clone();
        for px in shifted.data_mut().chunks_exact_mut(3) {
            px[2] += 0.25;
        }
        let m = matrix_subtraction(&shifted, &y).unwrap();
        for (a, b) in base.values.iter().zip(&m.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lower_median_of_even_count() {
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), 2.0);
        assert_eq!(lower_median(&[5.0, 1.0, 3.0]), 3.0);
    }

    #[test]
    fn ssim_identity_inversion_and_bounds() {
        let x = textured(16, 16, 4);
        let p = SsimParams::default();
        let same = ssim_map(&x, &x, &p).unwrap();
        assert!(same.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
        let inv = x.map(|v| 1.0 - v);
        let m = ssim_map(&x, &inv, &p).unwrap();
        assert!(m.values.iter().all(|&v| v < 0.0));
        let big = SsimParams { window: 17, ..p };
        assert!(ssim_map(&x, &x, &big).is_err());
    }
}
