//! Feature-based alignment of a reconstruction onto its input.
//!
//! The default extractor finds Harris corners (with sub-pixel refinement) and
//! describes each by a contrast-normalized grey patch. Matches pass a ratio test
//! and a mutual-nearest check; a projective transform is then fitted by RANSAC,
//! with a similarity transform as fallback.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::{to_grayscale, GrayImage, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub enabled: bool,
    pub min_matches: usize,
    /// RANSAC inlier tolerance in pixels.
    pub ransac_reproj_tol: f64,
    #[serde(default = "default_iterations")]
    pub ransac_iterations: usize,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    /// Transforms moving any image corner further than this fraction of the
    /// image diagonal are rejected as implausible.
    #[serde(default = "default_max_shift")]
    pub max_corner_shift: f64,
    #[serde(default)]
    pub seed: u64,
    /// Keep an estimated warp only if it raises the normalized cross-correlation
    /// with the input; otherwise fall back to identity.
    #[serde(default = "default_require_improvement")]
    pub require_improvement: bool,
}

fn default_require_improvement() -> bool {
    true
}

fn default_iterations() -> usize {
    800
}
fn default_ratio() -> f64 {
    0.8
}
fn default_max_shift() -> f64 {
    0.2
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            min_matches: 8,
            ransac_reproj_tol: 1.5,
            ransac_iterations: default_iterations(),
            ratio: default_ratio(),
            max_corner_shift: default_max_shift(),
            seed: 0,
            require_improvement: default_require_improvement(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformModel {
    Identity,
    Similarity,
    Homography,
}

/// 3x3 row-major matrix mapping input pixel coordinates `(x, y, 1)` to
/// reconstruction coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography(pub [f64; 9]);

impl Homography {
    pub const IDENTITY: Homography = Homography([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let h = &self.0;
        let w = h[6] * x + h[7] * y + h[8];
        ((h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w)
    }

    /// Rotation by `theta` radians about `(cx, cy)` followed by a translation.
    pub fn rigid(theta: f64, tx: f64, ty: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Homography([c, -s, cx - c * cx + s * cy + tx, s, c, cy - s * cx - c * cy + ty, 0.0, 0.0, 1.0])
    }

    pub fn inverse(&self) -> Option<Self> {
        let m = &self.0;
        let det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6]);
        if det.abs() < 1e-15 {
            return None;
        }
        let inv = [
            m[4] * m[8] - m[5] * m[7],
            m[2] * m[7] - m[1] * m[8],
            m[1] * m[5] - m[2] * m[4],
            m[5] * m[6] - m[3] * m[8],
            m[0] * m[8] - m[2] * m[6],
            m[2] * m[3] - m[0] * m[5],
            m[3] * m[7] - m[4] * m[6],
            m[1] * m[6] - m[0] * m[7],
            m[0] * m[4] - m[1] * m[3],
        ];
        Some(Homography(inv.map(|v| v / det)))
    }

    /// Mean distance between where the two transforms send the image corners.
    pub fn corner_error(&self, other: &Homography, height: usize, width: usize) -> f64 {
        corners(height, width)
            .iter()
            .map(|&(x, y)| {
                let (a, b) = (self.apply(x, y), other.apply(x, y));
                ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
            })
            .sum::<f64>()
            / 4.0
    }
}

fn corners(height: usize, width: usize) -> [(f64, f64); 4] {
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationInfo {
    pub model: TransformModel,
    pub transform: Homography,
    pub keypoints_input: usize,
    pub keypoints_reconstruction: usize,
    pub matches: usize,
    pub inliers: usize,
    pub inlier_ratio: f64,
    /// Set when the transform could not be estimated reliably and identity was used.
    pub low_confidence: bool,
}

/// A located keypoint with its descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub x: f64,
    pub y: f64,
    pub descriptor: Vec<f64>,
}

pub trait FeatureExtractor {
    fn extract(&self, img: &GrayImage) -> Vec<Feature>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarrisExtractor {
    pub k: f64,
    /// Corners weaker than `quality * max_response` are dropped.
    pub quality: f64,
    pub nms_radius: usize,
    pub max_corners: usize,
    pub patch_radius: usize,
    pub smoothing_sigma: f64,
    pub integration_sigma: f64,
}

impl Default for HarrisExtractor {
    fn default() -> Self {
        Self {
            k: 0.04,
            quality: 0.01,
            nms_radius: 2,
            max_corners: 400,
            patch_radius: 5,
            smoothing_sigma: 1.0,
            integration_sigma: 1.5,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * src[y * w + clamp(x as i64 + i as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[clamp(y as i64 + i as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

fn bilinear(data: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = data[y0 * w + x0] * (1.0 - fx) + data[y0 * w + x1] * fx;
    let bot = data[y1 * w + x0] * (1.0 - fx) + data[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

fn parabolic_offset(a: f64, b: f64, c: f64) -> f64 {
    let denom = a - 2.0 * b + c;
    if denom.abs() < 1e-18 {
        0.0
    } else {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    }
}

impl FeatureExtractor for HarrisExtractor {
    fn extract(&self, img: &GrayImage) -> Vec<Feature> {
        let (h, w) = (img.height(), img.width());
        let margin = self.patch_radius + 2;
        if h <= 2 * margin || w <= 2 * margin {
            return Vec::new();
        }
        let smooth = blur(img.data(), h, w, self.smoothing_sigma);
        let mut ixx = vec![0.0; h * w];
        let mut iyy = vec![0.0; h * w];
        let mut ixy = vec![0.0; h * w];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let gx = 0.5 * (smooth[y * w + x + 1] - smooth[y * w + x - 1]);
                let gy = 0.5 * (smooth[(y + 1) * w + x] - smooth[(y - 1) * w + x]);
                ixx[y * w + x] = gx * gx;
                iyy[y * w + x] = gy * gy;
                ixy[y * w + x] = gx * gy;
            }
        }
        let (sxx, syy, sxy) = (
            blur(&ixx, h, w, self.integration_sigma),
            blur(&iyy, h, w, self.integration_sigma),
            blur(&ixy, h, w, self.integration_sigma),
        );
        let resp: Vec<f64> = (0..h * w)
            .map(|i| {
                let tr = sxx[i] + syy[i];
                sxx[i] * syy[i] - sxy[i] * sxy[i] - self.k * tr * tr
            })
            .collect();
        let max_r = resp.iter().cloned().fold(0.0, f64::max);
        if max_r <= 1e-14 {
            return Vec::new();
        }
        let r = self.nms_radius;
        let mut cands = Vec::new();
        for y in margin..h - margin {
            for x in margin..w - margin {
                let v = resp[y * w + x];
                if v <= self.quality * max_r {
                    continue;
                }
                let mut is_max = true;
                'nb: for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                    for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                        let o = resp[yy * w + xx];
                        // Ties go to the earlier pixel in raster order.
                        if o > v || (o == v && (yy, xx) < (y, x)) {
                            is_max = false;
                            break 'nb;
                        }
                    }
                }
                if is_max {
                    cands.push((v, y, x));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        cands.truncate(self.max_corners);

        let pr = self.patch_radius as i64;
        cands
            .into_iter()
            .filter_map(|(_, y, x)| {
                let at = |yy: usize, xx: usize| resp[yy * w + xx];
                let fx = x as f64 + parabolic_offset(at(y, x - 1), at(y, x), at(y, x + 1));
                let fy = y as f64 + parabolic_offset(at(y - 1, x), at(y, x), at(y + 1, x));
                let mut d = Vec::with_capacity(((2 * pr + 1) * (2 * pr + 1)) as usize);
                for dy in -pr..=pr {
                    for dx in -pr..=pr {
                        d.push(bilinear(&smooth, h, w, fx + dx as f64, fy + dy as f64));
                    }
                }
                let mean = d.iter().sum::<f64>() / d.len() as f64;
                d.iter_mut().for_each(|v| *v -= mean);
                let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < 1e-9 {
                    return None;
                }
                d.iter_mut().for_each(|v| *v /= norm);
                Some(Feature { x: fx, y: fy, descriptor: d })
            })
            .collect()
    }
}

fn ssd(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mutual nearest neighbours that also pass Lowe's ratio test. Returns index pairs.
pub fn match_features(a: &[Feature], b: &[Feature], ratio: f64) -> Vec<(usize, usize)> {
    if a.is_empty() || b.len() < 2 {
        return Vec::new();
    }
    let dist: Vec<Vec<f64>> = a.iter().map(|fa| b.iter().map(|fb| ssd(&fa.descriptor, &fb.descriptor)).collect()).collect();
    let best_in_a: Vec<usize> = (0..b.len())
        .map(|j| (0..a.len()).min_by(|&p, &q| dist[p][j].total_cmp(&dist[q][j])).unwrap())
        .collect();
    let mut out = Vec::new();
    for (i, row) in dist.iter().enumerate() {
        let (mut b1, mut b2) = (usize::MAX, usize::MAX);
        for j in 0..row.len() {
            if b1 == usize::MAX || row[j] < row[b1] {
                b2 = b1;
                b1 = j;
            } else if b2 == usize::MAX || row[j] < row[b2] {
                b2 = j;
            }
        }
        if row[b1] < ratio * ratio * row[b2] && best_in_a[b1] == i {
            out.push((i, b1));
        }
    }
    out
}

/// Solves `a x = b` (`a` is n x n row-major) by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| a[p * n + col].abs().total_cmp(&a[q * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-12 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    Some(x)
}

type Pt = (f64, f64);

/// Similarity transform that maps points to zero mean and mean distance sqrt(2).
fn normalizer(pts: &[Pt]) -> [f64; 3] {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let md = pts.iter().map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if md > 1e-12 { std::f64::consts::SQRT_2 / md } else { 1.0 };
    [s, cx, cy]
}

fn fit_homography(src: &[Pt], dst: &[Pt]) -> Option<Homography> {
    let ns = normalizer(src);
    let nd = normalizer(dst);
    let mut ata = vec![0.0; 64];
    let mut atb = vec![0.0; 8];
    for (p, q) in src.iter().zip(dst) {
        let (x, y) = ((p.0 - ns[1]) * ns[0], (p.1 - ns[2]) * ns[0]);
        let (u, v) = ((q.0 - nd[1]) * nd[0], (q.1 - nd[2]) * nd[0]);
        let rows = [
            ([x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y], u),
            ([0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y], v),
        ];
        for (r, rhs) in rows {
            for i in 0..8 {
                atb[i] += r[i] * rhs;
                for j in 0..8 {
                    ata[i * 8 + j] += r[i] * r[j];
                }
            }
        }
    }
    let h = solve(ata, atb, 8)?;
    let hn = [h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0];
    // Undo the normalizations: H = Nd^-1 * Hn * Ns.
    let tn = [ns[0], 0.0, -ns[0] * ns[1], 0.0, ns[0], -ns[0] * ns[2], 0.0, 0.0, 1.0];
    let td_inv = [1.0 / nd[0], 0.0, nd[1], 0.0, 1.0 / nd[0], nd[2], 0.0, 0.0, 1.0];
    let m = mul3(&td_inv, &mul3(&hn, &tn));
    if !m.iter().all(|v| v.is_finite()) || m[8].abs() < 1e-12 {
        return None;
    }
    Some(Homography(m.map(|v| v / m[8])))
}

fn fit_similarity(src: &[Pt], dst: &[Pt]) -> Option<Homography> {
    let mut ata = vec![0.0; 16];
    let mut atb = vec![0.0; 4];
    for (p, q) in src.iter().zip(dst) {
        let rows = [([p.0, -p.1, 1.0, 0.0], q.0), ([p.1, p.0, 0.0, 1.0], q.1)];
        for (r, rhs) in rows {
            for i in 0..4 {
                atb[i] += r[i] * rhs;
                for j in 0..4 {
                    ata[i * 4 + j] += r[i] * r[j];
                }
            }
        }
    }
    let s = solve(ata, atb, 4)?;
    Some(Homography([s[0], -s[1], s[2], s[1], s[0], s[3], 0.0, 0.0, 1.0]))
}

fn mul3(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut c = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            c[i * 3 + j] = (0..3).map(|k| a[i * 3 + k] * b[k * 3 + j]).sum();
        }
    }
    c
}

fn residual(h: &Homography, p: Pt, q: Pt) -> f64 {
    let (x, y) = h.apply(p.0, p.1);
    ((x - q.0).powi(2) + (y - q.1).powi(2)).sqrt()
}

struct Fit {
    h: Homography,
    inliers: Vec<usize>,
}

fn ransac(
    src: &[Pt],
    dst: &[Pt],
    minimal: usize,
    fit: fn(&[Pt], &[Pt]) -> Option<Homography>,
    cfg: &RegistrationConfig,
) -> Option<Fit> {
    let n = src.len();
    if n < minimal {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tol = cfg.ransac_reproj_tol;
    let score = |h: &Homography| -> (Vec<usize>, f64) {
        let mut idx = Vec::new();
        let mut err = 0.0;
        for i in 0..n {
            let r = residual(h, src[i], dst[i]);
            if r.is_finite() && r < tol {
                idx.push(i);
                err += r;
            }
        }
        (idx, err)
    };
    let mut best: Option<(Vec<usize>, f64, Homography)> = None;
    for _ in 0..cfg.ransac_iterations {
        let pick = sample(&mut rng, n, minimal).into_vec();
        let s: Vec<Pt> = pick.iter().map(|&i| src[i]).collect();
        let d: Vec<Pt> = pick.iter().map(|&i| dst[i]).collect();
        let Some(h) = fit(&s, &d) else { continue };
        let (idx, err) = score(&h);
        let better = match &best {
            None => true,
            Some((bi, be, _)) => idx.len() > bi.len() || (idx.len() == bi.len() && err < *be),
        };
        if better {
            best = Some((idx, err, h));
        }
    }
    let (mut inliers, _, mut h) = best?;
    if inliers.len() < minimal {
        return None;
    }
    for _ in 0..3 {
        let s: Vec<Pt> = inliers.iter().map(|&i| src[i]).collect();
        let d: Vec<Pt> = inliers.iter().map(|&i| dst[i]).collect();
        let Some(refit) = fit(&s, &d) else { break };
        let (idx, _) = score(&refit);
        if idx.len() < inliers.len() {
            break;
        }
        h = refit;
        inliers = idx;
    }
    Some(Fit { h, inliers })
}

fn plausible(h: &Homography, height: usize, width: usize, max_shift: f64) -> bool {
    let diag = ((height * height + width * width) as f64).sqrt();
    corners(height, width).iter().all(|&(x, y)| {
            let (u, v) = h.apply(x, y);
            let d = ((u - x).powi(2) + (v - y).powi(2)).sqrt();
            d.is_finite() && d <= max_shift * diag
        })
}

/// Estimates the transform from input coordinates to reconstruction coordinates.
pub fn estimate_transform(
    x: &ImageTensor,
    x_hat: &ImageTensor,
    cfg: &RegistrationConfig,
    extractor: &dyn FeatureExtractor,
) -> Result<RegistrationInfo> {
    x.ensure_same_dims(x_hat)?;
    let (h, w) = x.dims();
    let fa = extractor.extract(&to_grayscale(x));
    let fb = extractor.extract(&to_grayscale(x_hat));
    let pairs = match_features(&fa, &fb, cfg.ratio);
    let mut info = RegistrationInfo {
        model: TransformModel::Identity,
        transform: Homography::IDENTITY,
        keypoints_input: fa.len(),
        keypoints_reconstruction: fb.len(),
        matches: pairs.len(),
        inliers: 0,
        inlier_ratio: 0.0,
        low_confidence: true,
    };
    if pairs.len() < cfg.min_matches.max(4) {
        return Ok(info);
    }
    let src: Vec<Pt> = pairs.iter().map(|&(i, _)| (fa[i].x, fa[i].y)).collect();
    let dst: Vec<Pt> = pairs.iter().map(|&(_, j)| (fb[j].x, fb[j].y)).collect();

    let candidates = [
        (TransformModel::Homography, ransac(&src, &dst, 4, fit_homography, cfg), cfg.min_matches.max(4)),
        (TransformModel::Similarity, ransac(&src, &dst, 2, fit_similarity, cfg), (cfg.min_matches / 2).max(3)),
    ];
    for (model, fit, needed) in candidates {
        let Some(fit) = fit else { continue };
        if fit.inliers.len() >= needed && plausible(&fit.h, h, w, cfg.max_corner_shift) {
            info.model = model;
            info.transform = fit.h;
            info.inliers = fit.inliers.len();
            info.inlier_ratio = fit.inliers.len() as f64 / pairs.len() as f64;
            info.low_confidence = fit.inliers.len() < cfg.min_matches;
            return Ok(info);
        }
    }
    Ok(info)
}

/// Resamples `img` so that output pixel `p` takes the (bilinear, edge-clamped)
/// value of `img` at `t(p)`.
pub fn warp_image(img: &ImageTensor, t: &Homography) -> ImageTensor {
    let (h, w) = img.dims();
    let chans: Vec<Vec<f64>> = (0..3).map(|c| img.channel(c)).collect();
    let mut out = ImageTensor::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = t.apply(x as f64, y as f64);
            for (c, ch) in chans.iter().enumerate() {
                out.set(y, x, c, bilinear(ch, h, w, u, v));
            }
        }
    }
    out
}

/// Aligns `x_hat` onto `x` with the default Harris extractor.
pub fn register_images(
    x: &ImageTensor,
    x_hat: &ImageTensor,
    cfg: &RegistrationConfig,
) -> Result<(ImageTensor, RegistrationInfo)> {
    register_images_with(x, x_hat, cfg, &HarrisExtractor::default())
}

pub fn register_images_with(
    x: &ImageTensor,
    x_hat: &ImageTensor,
    cfg: &RegistrationConfig,
    extractor: &dyn FeatureExtractor,
) -> Result<(ImageTensor, RegistrationInfo)> {
    let mut info = estimate_transform(x, x_hat, cfg, extractor)?;
    if info.model == TransformModel::Identity {
        return Ok((x_hat.clone(), info));
    }
    let out = warp_image(x_hat, &info.transform);
    if cfg.require_improvement {
        let gx = to_grayscale(x);
        if ncc(&gx, &to_grayscale(&out)) <= ncc(&gx, &to_grayscale(x_hat)) {
            info.model = TransformModel::Identity;
            info.transform = Homography::IDENTITY;
            return Ok((x_hat.clone(), info));
        }
    }
    Ok((out, info))
}

/// Normalized cross-correlation of two equally sized gray images.
fn ncc(a: &GrayImage, b: &GrayImage) -> f64 {
    let n = a.data().len() as f64;
    let ma = a.data().iter().sum::<f64>() / n;
    let mb = b.data().iter().sum::<f64>() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (p, q) in a.data().iter().zip(b.data()) {
        let (p, q) = (p - ma, q - mb);
        ab += p * q;
        aa += p * p;
        bb += q * q;
    }
    let d = (aa * bb).sqrt();
    if d > 0.0 {
        ab / d
    } else {
        0.0
    }
}
