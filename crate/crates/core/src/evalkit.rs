//! Synthetic anomaly injection and detection metrics.
//!
//! Every renderer produces a coverage map `alpha` and a target colour per pixel;
//! the output is `x * (1 - alpha) + colour * alpha`. Pixels with
//! `alpha <= 1/255` are left untouched, and the ground-truth mask is exactly
//! the set of touched pixels.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageTensor};
use crate::postprocess::{heatmap, DetectionReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyCategory {
    Carving,
    Crack,
    Moss,
    Doodle,
    Salt,
    WaterStain,
    BirdDropping,
}

impl AnomalyCategory {
    pub const ALL: [AnomalyCategory; 7] = [
        AnomalyCategory::Carving,
        AnomalyCategory::Crack,
        AnomalyCategory::Moss,
        AnomalyCategory::Doodle,
        AnomalyCategory::Salt,
        AnomalyCategory::WaterStain,
        AnomalyCategory::BirdDropping,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnomalyCategory::Carving => "carving",
            AnomalyCategory::Crack => "crack",
            AnomalyCategory::Moss => "moss",
            AnomalyCategory::Doodle => "doodle",
            AnomalyCategory::Salt => "salt",
            AnomalyCategory::WaterStain => "water_stain",
            AnomalyCategory::BirdDropping => "bird_dropping",
        }
    }
}

impl fmt::Display for AnomalyCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnomalyCategory {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AnomalyCategory::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown anomaly category '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySpec {
    pub category: AnomalyCategory,
    pub seed: u64,
    /// Scales the blend opacity, in `(0, 1]`.
    pub intensity: f64,
    /// Box the anomaly is drawn in; a seeded box of about a third of the
    /// shorter image side is used when absent.
    #[serde(default)]
    pub placement: Option<Rect>,
}

impl AnomalySpec {
    pub fn new(category: AnomalyCategory, seed: u64) -> Self {
        Self {
            category,
            seed,
            intensity: 1.0,
            placement: None,
        }
    }
}

const ALPHA_MIN: f64 = 1.0 / 255.0;

struct Canvas {
    h: usize,
    w: usize,
    alpha: Vec<f64>,
    color: Vec<[f64; 3]>,
}

impl Canvas {
    fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            alpha: vec![0.0; h * w],
            color: vec![[0.0; 3]; h * w],
        }
    }

    /// Paints with coverage `a` (the stronger coverage wins).
    fn put(&mut self, y: isize, x: isize, a: f64, c: [f64; 3]) {
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            return;
        }
        let i = y as usize * self.w + x as usize;
        if a > self.alpha[i] {
            self.alpha[i] = a.min(1.0);
            self.color[i] = c.map(|v| v.clamp(0.0, 1.0));
        }
    }

    /// Anti-aliased disc of radius `r` around `(cy, cx)`; `color` sees the pixel position.
    fn disc(&mut self, cy: f64, cx: f64, r: f64, color: &dyn Fn(usize, usize) -> [f64; 3]) {
        let reach = r.ceil() as isize + 1;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (y, x) = (cy.round() as isize + dy, cx.round() as isize + dx);
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                let a = (r + 0.5 - d).clamp(0.0, 1.0);
                if a > 0.0 && y >= 0 && x >= 0 && (y as usize) < self.h && (x as usize) < self.w {
                    self.put(y, x, a, color(y as usize, x as usize));
                }
            }
        }
    }
}

fn default_box(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Rect {
    let side = (h.min(w) as f64 * 0.36).round().max(4.0) as usize;
    let side_w = side.min(w);
    let side_h = side.min(h);
    let margin = |n: usize, s: usize| (n - s) / 8;
    let (mx, my) = (margin(w, side_w), margin(h, side_h));
    Rect {
        x: rng.gen_range(mx..=w - side_w - mx),
        y: rng.gen_range(my..=h - side_h - my),
        width: side_w,
        height: side_h,
    }
}

fn smooth_noise(h: usize, w: usize, cell: f64, rng: &mut ChaCha8Rng) -> impl Fn(f64, f64) -> f64 {
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.gen::<f64>()).collect();
    move |y: f64, x: f64| {
        let (gy, gx) = ((y / cell).max(0.0), (x / cell).max(0.0));
        let (y0, x0) = ((gy.floor() as usize).min(gh - 2), (gx.floor() as usize).min(gw - 2));
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (fy, fx) = (s((gy - y0 as f64).min(1.0)), s((gx - x0 as f64).min(1.0)));
        let g = |a: usize, b: usize| grid[a * gw + b];
        (g(y0, x0) * (1.0 - fx) + g(y0, x0 + 1) * fx) * (1.0 - fy) + (g(y0 + 1, x0) * (1.0 - fx) + g(y0 + 1, x0 + 1) * fx) * fy
    }
}

/// Smooth random curve inside `r` as a list of points spaced about half a pixel apart.
fn random_curve(r: &Rect, rng: &mut ChaCha8Rng, turns: f64) -> Vec<(f64, f64)> {
    let (x0, y0) = (r.x as f64, r.y as f64);
    let (w, h) = (r.width as f64, r.height as f64);
    let mut y = y0 + rng.gen_range(0.2..0.8) * h;
    let mut x = x0 + rng.gen_range(0.05..0.25) * w;
    let mut heading: f64 = rng.gen_range(-0.6..0.6);
    let length = w.max(h) * rng.gen_range(0.8..1.1);
    let steps = (length * 2.0) as usize;
    let mut pts = Vec::with_capacity(steps);
    for _ in 0..steps {
        pts.push((y, x));
        heading += rng.gen_range(-turns..turns);
        x += 0.5 * heading.cos();
        y += 0.5 * heading.sin();
        x = x.clamp(x0, x0 + w - 1.0);
        y = y.clamp(y0, y0 + h - 1.0);
    }
    pts
}

fn render(x: &ImageTensor, spec: &AnomalySpec, r: &Rect, rng: &mut ChaCha8Rng) -> Canvas {
    let (h, w) = x.dims();
    let mut cv = Canvas::new(h, w);
    let px = |y: usize, xx: usize| x.pixel(y, xx);
    let (cy, cx) = (r.y as f64 + r.height as f64 / 2.0, r.x as f64 + r.width as f64 / 2.0);
    let (ry, rx) = (r.height as f64 / 2.0, r.width as f64 / 2.0);
    match spec.category {
        AnomalyCategory::Carving => {
            // Two or three engraved strokes: dark groove plus a lit lower-right lip.
            for _ in 0..rng.gen_range(2..=3) {
                let pts = random_curve(r, rng, 0.08);
                for &(py, pxx) in &pts {
                    cv.disc(py + 1.0, pxx + 1.0, 0.9, &|y, xx| px(y, xx).map(|v| v * 1.25 + 0.12));
                }
                for &(py, pxx) in &pts {
                    let dark = |y: usize, xx: usize| px(y, xx).map(|v| v * 0.35);
                    cv.disc(py, pxx, 1.0, &dark);
                    let i = (py.round() as usize).min(h - 1) * w + (pxx.round() as usize).min(w - 1);
                    cv.alpha[i] = 1.0;
                    cv.color[i] = dark(i / w, i % w);
                }
            }
        }
        AnomalyCategory::Crack => {
            let pts = random_curve(r, rng, 0.5);
            let branch_at = pts.len() / 2;
            let mut all = pts.clone();
            let (mut by, mut bx) = pts[branch_at];
            let mut heading: f64 = rng.gen_range(0.8..2.3);
            for _ in 0..pts.len() / 3 {
                heading += rng.gen_range(-0.5..0.5);
                bx = (bx + 0.5 * heading.cos()).clamp(r.x as f64, (r.x + r.width - 1) as f64);
                by = (by + 0.5 * heading.sin()).clamp(r.y as f64, (r.y + r.height - 1) as f64);
                all.push((by, bx));
            }
            for (py, pxx) in all {
                cv.disc(py, pxx, 0.6, &|y, xx| px(y, xx).map(|v| v * 0.2));
            }
        }
        AnomalyCategory::Moss => {
            let shape = smooth_noise(h, w, (r.width.min(r.height) as f64 / 2.5).max(2.0), rng);
            let tex = smooth_noise(h, w, 2.0, rng);
            for y in r.y..r.y + r.height {
                for xx in r.x..r.x + r.width {
                    let d = (((y as f64 - cy) / ry).powi(2) + ((xx as f64 - cx) / rx).powi(2)).sqrt();
                    let v = 0.6 * shape(y as f64, xx as f64) + 0.8 * (1.0 - d);
                    let a = ((v - 0.55) * 4.0).clamp(0.0, 0.9);
                    let t = tex(y as f64, xx as f64);
                    cv.put(y as isize, xx as isize, a, [0.22 + 0.15 * t, 0.40 + 0.2 * t, 0.12 + 0.08 * t]);
                }
            }
        }
        AnomalyCategory::Doodle => {
            let palette = [[0.85, 0.1, 0.1], [0.1, 0.25, 0.85], [0.95, 0.55, 0.0], [0.1, 0.6, 0.2]];
            let c = palette[rng.gen_range(0..palette.len())];
            for _ in 0..2 {
                for (py, pxx) in random_curve(r, rng, 0.25) {
                    cv.disc(py, pxx, 1.1, &|_, _| c);
                }
            }
        }
        AnomalyCategory::Salt => {
            let density = smooth_noise(h, w, 3.0, rng);
            for y in r.y..r.y + r.height {
                for xx in r.x..r.x + r.width {
                    let d = (((y as f64 - cy) / ry).powi(2) + ((xx as f64 - cx) / rx).powi(2)).sqrt();
                    let p = (1.0 - d).clamp(0.0, 1.0) * (0.4 + 0.9 * density(y as f64, xx as f64));
                    if rng.gen::<f64>() < p {
                        let g = rng.gen_range(0.9..0.98);
                        cv.put(y as isize, xx as isize, 1.0, [g, g, g - 0.02]);
                    }
                }
            }
        }
        AnomalyCategory::WaterStain => {
            let shape = smooth_noise(h, w, (r.width.min(r.height) as f64 / 2.0).max(2.0), rng);
            for y in r.y..r.y + r.height {
                for xx in r.x..r.x + r.width {
                    let d = (((y as f64 - cy) / ry).powi(2) + ((xx as f64 - cx) / rx).powi(2)).sqrt();
                    let v = 1.0 - d + 0.25 * (shape(y as f64, xx as f64) - 0.5);
                    let a = (v * 2.5).clamp(0.0, 1.0) * 0.55;
                    cv.put(y as isize, xx as isize, a, px(y, xx).map(|c| c * 0.45));
                }
            }
        }
        AnomalyCategory::BirdDropping => {
            let shape = smooth_noise(h, w, (r.width.min(r.height) as f64 / 3.0).max(2.0), rng);
            let tex = smooth_noise(h, w, 1.5, rng);
            let scale = rng.gen_range(0.6..0.8);
            for y in r.y..r.y + r.height {
                for xx in r.x..r.x + r.width {
                    let d = (((y as f64 - cy) / (ry * scale)).powi(2) + ((xx as f64 - cx) / (rx * scale)).powi(2)).sqrt();
                    if d + 0.35 * (shape(y as f64, xx as f64) - 0.5) < 1.0 {
                        let t = tex(y as f64, xx as f64);
                        cv.put(y as isize, xx as isize, 1.0, [0.9 + 0.07 * t, 0.89 + 0.07 * t, 0.84 + 0.06 * t]);
                    }
                }
            }
        }
    }
    cv
}

/// Draws one synthetic anomaly. Returns the edited image and its exact mask.
pub fn inject_anomaly(x: &ImageTensor, spec: &AnomalySpec) -> Result<(ImageTensor, BinaryMask)> {
    let (h, w) = x.dims();
    if !(spec.intensity > 0.0 && spec.intensity <= 1.0) {
        return Err(Error::InvalidArgument(format!("intensity {} outside (0, 1]", spec.intensity)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (spec.category as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let rect = match spec.placement {
        Some(r) => {
            if r.width == 0 || r.height == 0 || r.x + r.width > w || r.y + r.height > h {
                return Err(Error::InvalidArgument(format!("placement {r:?} outside {h}x{w} image")));
            }
            r
        }
        None => default_box(h, w, &mut rng),
    };
    let cv = render(x, spec, &rect, &mut rng);
    let mut out = x.clone();
    let mut mask = BinaryMask::empty(h, w);
    for y in 0..h {
        for xx in 0..w {
            let i = y * w + xx;
            let a = cv.alpha[i] * spec.intensity;
            if a <= ALPHA_MIN {
                continue;
            }
            let src = x.pixel(y, xx);
            let c = cv.color[i];
            out.set_pixel(y, xx, [0, 1, 2].map(|k| src[k] * (1.0 - a) + c[k] * a));
            mask.set(y, xx, true);
        }
    }
    Ok((out, mask))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
}

/// Precision, recall and IoU of `pred` against `truth`; undefined ratios
/// (nothing predicted, nothing true) count as 1.
pub fn pixel_metrics(pred: &BinaryMask, truth: &BinaryMask) -> Result<PixelMetrics> {
    if pred.dims() != truth.dims() {
        return Err(Error::shape(
            format!("{}x{}", truth.height(), truth.width()),
            format!("{}x{}", pred.height(), pred.width()),
        ));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok(PixelMetrics {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        iou: ratio(tp, tp + fp + fn_),
    })
}

fn overlaps(a: &BinaryMask, b: &BinaryMask) -> bool {
    a.data().iter().zip(b.data()).any(|(&p, &q)| p && q)
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Clean,
    Anomaly { category: AnomalyCategory, mask: BinaryMask },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub index: usize,
    /// `None` for clean images.
    pub category: Option<AnomalyCategory>,
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    /// Final mask is nonempty.
    pub detected: bool,
    /// Final mask overlaps the ground truth.
    pub hit: bool,
    /// Matrix-subtraction mask overlaps the ground truth.
    pub hit_ms: bool,
    /// SSIM mask overlaps the ground truth.
    pub hit_ssim: bool,
    pub false_alarm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub count: usize,
    pub detection_rate: f64,
    pub hit_rate: f64,
    pub ms_hit_rate: f64,
    pub ssim_hit_rate: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub images: Vec<ImageResult>,
    pub per_class: BTreeMap<AnomalyCategory, ClassSummary>,
    pub clean_images: usize,
    pub false_alarms: usize,
}

pub fn evaluate_detection(reports: &[DetectionReport], truths: &[GroundTruth]) -> Result<EvalResult> {
    if reports.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} reports but {} ground truths",
            reports.len(),
            truths.len()
        )));
    }
    let mut images = Vec::with_capacity(reports.len());
    for (index, (r, t)) in reports.iter().zip(truths).enumerate() {
        let (category, truth) = match t {
            GroundTruth::Clean => (None, BinaryMask::empty(r.final_mask.height(), r.final_mask.width())),
            GroundTruth::Anomaly { category, mask } => (Some(*category), mask.clone()),
        };
        let m = pixel_metrics(&r.final_mask, &truth)?;
        images.push(ImageResult {
            index,
            category,
            precision: m.precision,
            recall: m.recall,
            iou: m.iou,
            detected: r.anomaly_present,
            hit: overlaps(&r.final_mask, &truth),
            hit_ms: overlaps(&r.ms_mask, &truth),
            hit_ssim: overlaps(&r.ssim_mask, &truth),
            false_alarm: category.is_none() && r.anomaly_present,
        });
    }
    let mut per_class = BTreeMap::new();
    for c in AnomalyCategory::ALL {
        let rows: Vec<&ImageResult> = images.iter().filter(|i| i.category == Some(c)).collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&ImageResult) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        per_class.insert(
            c,
            ClassSummary {
                count: rows.len(),
                detection_rate: mean(&|r| r.detected as u8 as f64),
                hit_rate: mean(&|r| r.hit as u8 as f64),
                ms_hit_rate: mean(&|r| r.hit_ms as u8 as f64),
                ssim_hit_rate: mean(&|r| r.hit_ssim as u8 as f64),
                mean_precision: mean(&|r| r.precision),
                mean_recall: mean(&|r| r.recall),
                mean_iou: mean(&|r| r.iou),
            },
        );
    }
    let clean_images = images.iter().filter(|i| i.category.is_none()).count();
    let false_alarms = images.iter().filter(|i| i.false_alarm).count();
    Ok(EvalResult {
        images,
        per_class,
        clean_images,
        false_alarms,
    })
}

fn mask_rgb(m: &BinaryMask) -> ImageTensor {
    ImageTensor::from_fn(m.height(), m.width(), |y, x, _| if m.get(y, x) { 1.0 } else { 0.0 })
}

/// Side-by-side strip: input, reconstruction, MS heat map, SSIM heat map, MS
/// mask, SSIM mask, final mask and (when given) ground truth, separated by
/// 2-pixel gaps.
pub fn panel(input: &ImageTensor, report: &DetectionReport, truth: Option<&BinaryMask>) -> ImageTensor {
    let mut tiles = vec![
        input.clipped(),
        report.reconstruction.clipped(),
        heatmap(&report.ms_map),
        heatmap(&report.ssim_map),
        mask_rgb(&report.ms_mask),
        mask_rgb(&report.ssim_mask),
        mask_rgb(&report.final_mask),
    ];
    if let Some(t) = truth {
        tiles.push(mask_rgb(t));
    }
    let (h, w) = input.dims();
    let gap = 2;
    let mut out = ImageTensor::filled(h, tiles.len() * (w + gap) - gap, [0.5, 0.5, 0.5]);
    for (i, t) in tiles.iter().enumerate() {
        out.paste(t, 0, i * (w + gap)).expect("tiles fit the strip");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::stone_texture;

    #[test]
    fn every_category_changes_only_masked_pixels() {
        let x = stone_texture(48, 64, 3);
        for c in AnomalyCategory::ALL {
            let (y, m) = inject_anomaly(&x, &AnomalySpec::new(c, 11)).unwrap();
            assert!(m.area() > 0, "{c} produced an empty mask");
            for yy in 0..48 {
                for xx in 0..64 {
                    if x.pixel(yy, xx) != y.pixel(yy, xx) {
                        assert!(m.get(yy, xx), "{c} changed an unmasked pixel");
                    }
                }
            }
            assert!(y.is_unit_range());
            assert_eq!(inject_anomaly(&x, &AnomalySpec::new(c, 11)).unwrap().0, y);
        }
    }

    #[test]
    fn vanishing_intensity_is_identity() {
        let x = stone_texture(48, 64, 3);
        for c in AnomalyCategory::ALL {
            let spec = AnomalySpec {
                intensity: 1e-4,
                ..AnomalySpec::new(c, 2)
            };
            let (y, m) = inject_anomaly(&x, &spec).unwrap();
            assert!(m.is_empty());
            assert_eq!(y, x);
        }
    }

    #[test]
    fn bad_placement_is_rejected() {
        let x = stone_texture(32, 32, 3);
        let spec = AnomalySpec {
            placement: Some(Rect {
                x: 20,
                y: 0,
                width: 20,
                height: 4,
            }),
            ..AnomalySpec::new(AnomalyCategory::Salt, 1)
        };
        assert!(inject_anomaly(&x, &spec).is_err());
    }

    #[test]
    fn halo_metrics() {
        // Truth: 10 pixels in a 10x10 mask; prediction adds an equal-area halo.
        let mut truth = BinaryMask::empty(10, 10);
        let mut pred = BinaryMask::empty(10, 10);
        for x in 0..10 {
            truth.set(4, x, true);
            pred.set(4, x, true);
            pred.set(5, x, true);
        }
        let m = pixel_metrics(&pred, &truth).unwrap();
        assert_eq!((m.precision, m.recall, m.iou), (0.5, 1.0, 0.5));
        let same = pixel_metrics(&truth, &truth).unwrap();
        assert_eq!(same.iou, 1.0);
        let empty = BinaryMask::empty(10, 10);
        assert_eq!(pixel_metrics(&empty, &empty).unwrap().iou, 1.0);
    }

    #[test]
    fn category_names_round_trip() {
        for c in AnomalyCategory::ALL {
            assert_eq!(c.name().parse::<AnomalyCategory>().unwrap(), c);
        }
        assert!("graffiti".parse::<AnomalyCategory>().is_err());
    }
}
