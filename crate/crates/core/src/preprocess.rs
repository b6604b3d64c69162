//! Training-set construction: frame exclusion, region partitioning, resizing and
//! photometric (exposure / white-balance) augmentation.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{delinearize, linearize, load_image, ImageTensor};
use crate::trainer::RegionDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSpec {
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub region_index: usize,
    pub target_width: usize,
    pub target_height: usize,
}

impl Default for RegionSpec {
    fn default() -> Self {
        Self {
            grid_cols: 3,
            grid_rows: 2,
            region_index: 0,
            target_width: 640,
            target_height: 480,
        }
    }
}

impl RegionSpec {
    pub fn region_count(&self) -> usize {
        self.grid_cols * self.grid_rows
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_cols == 0 || self.grid_rows == 0 {
            return Err(Error::InvalidArgument("grid dimensions must be >= 1".into()));
        }
        if self.region_index >= self.region_count() {
            return Err(Error::InvalidArgument(format!(
                "region_index {} out of range for a {}x{} grid",
                self.region_index, self.grid_cols, self.grid_rows
            )));
        }
        if self.target_width == 0 || self.target_height == 0 {
            return Err(Error::InvalidArgument("target dimensions must be > 0".into()));
        }
        Ok(())
    }

    pub fn with_region(&self, region_index: usize) -> Self {
        Self {
            region_index,
            ..self.clone()
        }
    }
}

/// Splits a frame into `grid_cols x grid_rows` equal tiles in row-major order.
/// Remainder columns/rows on the right/bottom edges are cropped away.
pub fn partition_regions(img: &ImageTensor, spec: &RegionSpec) -> Result<Vec<ImageTensor>> {
    if spec.grid_cols == 0 || spec.grid_rows == 0 {
        return Err(Error::InvalidArgument("grid dimensions must be >= 1".into()));
    }
    if spec.grid_cols > img.width() || spec.grid_rows > img.height() {
        return Err(Error::InvalidArgument(format!(
            "grid {}x{} larger than image {}x{}",
            spec.grid_cols,
            spec.grid_rows,
            img.width(),
            img.height()
        )));
    }
    let tw = img.width() / spec.grid_cols;
    let th = img.height() / spec.grid_rows;
    let mut tiles = Vec::with_capacity(spec.region_count());
    for r in 0..spec.grid_rows {
        for c in 0..spec.grid_cols {
            tiles.push(img.crop(r * th, c * tw, th, tw)?);
        }
    }
    Ok(tiles)
}

/// Inverse of [`partition_regions`] on the cropped frame.
pub fn assemble_regions(tiles: &[ImageTensor], grid_cols: usize, grid_rows: usize) -> Result<ImageTensor> {
    if tiles.len() != grid_cols * grid_rows || tiles.is_empty() {
        return Err(Error::shape(grid_cols * grid_rows, tiles.len()));
    }
    let (th, tw) = tiles[0].dims();
    let mut out = ImageTensor::zeros(th * grid_rows, tw * grid_cols);
    for (i, t) in tiles.iter().enumerate() {
        if t.dims() != (th, tw) {
            return Err(Error::shape(format!("{th}x{tw}"), format!("{}x{}", t.height(), t.width())));
        }
        out.paste(t, (i / grid_cols) * th, (i % grid_cols) * tw)?;
    }
    Ok(out)
}

/// Bilinear resize with pixel-centre alignment; same-size resizing is the identity.
pub fn resize_region(tile: &ImageTensor, w: usize, h: usize) -> Result<ImageTensor> {
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument(format!("target size {w}x{h} must be positive")));
    }
    if (h, w) == tile.dims() {
        return Ok(tile.clone());
    }
    let (ih, iw) = tile.dims();
    let sy = ih as f64 / h as f64;
    let sx = iw as f64 / w as f64;
    let sample_axis = |o: usize, scale: f64, n: usize| {
        let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..w).map(|x| sample_axis(x, sx, iw)).collect();
    let mut out = ImageTensor::zeros(h, w);
    for y in 0..h {
        let (y0, y1, fy) = sample_axis(y, sy, ih);
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            let a = tile.pixel(y0, x0);
            let b = tile.pixel(y0, x1);
            let c = tile.pixel(y1, x0);
            let d = tile.pixel(y1, x1);
            let mut px = [0.0; 3];
            for k in 0..3 {
                let top = a[k] + (b[k] - a[k]) * fx;
                let bot = c[k] + (d[k] - c[k]) * fx;
                px[k] = (top + (bot - top) * fy).clamp(0.0, 1.0);
            }
            out.set_pixel(y, x, px);
        }
    }
    Ok(out)
}

/// Exposure shift in linear light: one EV doubles the light.
pub fn augment_exposure(img: &ImageTensor, delta_ev: f64) -> ImageTensor {
    let gain = 2f64.powf(delta_ev);
    delinearize(&linearize(img).map(|v| v * gain)).clipped()
}

pub const DEFAULT_REFERENCE_KELVIN: f64 = 5500.0;
pub const KELVIN_RANGE: (f64, f64) = (1000.0, 12000.0);

fn asym_gauss(x: f64, mu: f64, s1: f64, s2: f64) -> f64 {
    let s = if x < mu { s1 } else { s2 };
    (-0.5 * ((x - mu) / s).powi(2)).exp()
}

/// Linear-sRGB colour of a blackbody at `kelvin`, normalized to G = 1.
///
/// Planck's law integrated (1 nm steps, 360-830 nm) against a multi-lobe Gaussian
/// fit of the CIE 1931 2-degree colour-matching functions, then XYZ -> linear sRGB.
pub fn blackbody_rgb(kelvin: f64) -> Result<[f64; 3]> {
    if !(KELVIN_RANGE.0..=KELVIN_RANGE.1).contains(&kelvin) {
        return Err(Error::InvalidArgument(format!(
            "colour temperature {kelvin} K outside [{}, {}] K",
            KELVIN_RANGE.0, KELVIN_RANGE.1
        )));
    }
    const H: f64 = 6.626_070_15e-34;
    const C: f64 = 2.997_924_58e8;
    const K: f64 = 1.380_649e-23;
    let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
    for nm in 360..=830 {
        let l = nm as f64;
        let m = l * 1e-9;
        let radiance = 1.0 / (m.powi(5) * ((H * C / (m * K * kelvin)).exp() - 1.0));
        let xb = 1.056 * asym_gauss(l, 599.8, 37.9, 31.0) + 0.362 * asym_gauss(l, 442.0, 16.0, 26.7)
            - 0.065 * asym_gauss(l, 501.1, 20.4, 26.2);
        let yb = 0.821 * asym_gauss(l, 568.8, 46.9, 40.5) + 0.286 * asym_gauss(l, 530.9, 16.3, 31.1);
        let zb = 1.217 * asym_gauss(l, 437.0, 11.8, 36.0) + 0.681 * asym_gauss(l, 459.0, 26.0, 13.8);
        x += radiance * xb;
        y += radiance * yb;
        z += radiance * zb;
    }
    let (x, z) = (x / y, z / y);
    let r = 3.240_454_2 * x - 1.537_138_5 - 0.498_531_4 * z;
    let g = -0.969_266 * x + 1.876_010_8 + 0.041_556 * z;
    let b = 0.055_643_4 * x - 0.204_025_9 + 1.057_225_2 * z;
    Ok([r / g, 1.0, b / g])
}

/// Per-channel gains `(g_R, 1, g_B)` that move a scene lit at `reference_kelvin`
/// to `reference_kelvin + delta_kelvin`.
pub fn white_balance_gains(delta_kelvin: f64, reference_kelvin: f64) -> Result<[f64; 3]> {
    let target = blackbody_rgb(reference_kelvin + delta_kelvin)?;
    let reference = blackbody_rgb(reference_kelvin)?;
    Ok([
        (target[0] / reference[0]).max(0.0),
        1.0,
        (target[2] / reference[2]).max(0.0),
    ])
}

/// Von Kries-style diagonal white-balance shift applied in linear light.
pub fn augment_white_balance(img: &ImageTensor, delta_kelvin: f64) -> Result<ImageTensor> {
    augment_white_balance_at(img, delta_kelvin, DEFAULT_REFERENCE_KELVIN)
}

pub fn augment_white_balance_at(img: &ImageTensor, delta_kelvin: f64, reference_kelvin: f64) -> Result<ImageTensor> {
    let gains = white_balance_gains(delta_kelvin, reference_kelvin)?;
    let mut lin = linearize(img);
    for px in lin.data_mut().chunks_exact_mut(3) {
        for k in 0..3 {
            px[k] *= gains[k];
        }
    }
    Ok(delinearize(&lin).clipped())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationBounds {
    pub max_ev: f64,
    pub max_kelvin: f64,
}

impl Default for AugmentationBounds {
    fn default() -> Self {
        Self {
            max_ev: 1.0,
            max_kelvin: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub delta_ev: f64,
    pub delta_kelvin: f64,
    pub seed: u64,
}

impl AugmentationParams {
    pub fn sample(rng: &mut impl Rng, bounds: &AugmentationBounds) -> Self {
        Self {
            delta_ev: rng.gen_range(-bounds.max_ev..=bounds.max_ev),
            delta_kelvin: rng.gen_range(-bounds.max_kelvin..=bounds.max_kelvin),
            seed: rng.gen(),
        }
    }

    pub fn check(&self, bounds: &AugmentationBounds) -> Result<()> {
        if self.delta_ev.abs() > bounds.max_ev || self.delta_kelvin.abs() > bounds.max_kelvin {
            return Err(Error::InvalidArgument(format!(
                "augmentation ({} EV, {} K) exceeds bounds (±{} EV, ±{} K)",
                self.delta_ev, self.delta_kelvin, bounds.max_ev, bounds.max_kelvin
            )));
        }
        Ok(())
    }

    /// Exposure shift followed by white-balance shift.
    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        augment_white_balance(&augment_exposure(img, self.delta_ev), self.delta_kelvin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainItem {
    pub file: String,
    pub region_index: usize,
    /// `None` for the unmodified original.
    pub augmentation: Option<AugmentationParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source_dir: PathBuf,
    pub excluded: Vec<String>,
    pub train_items: Vec<TrainItem>,
    /// Frames whose originals are reserved for evaluation.
    pub held_out: Vec<String>,
    pub seed: u64,
    pub spec: RegionSpec,
    pub n_aug_per_image: usize,
    pub bounds: AugmentationBounds,
}

impl DatasetManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_json(&s)
    }

    pub fn total_items(&self) -> usize {
        self.train_items.len() + self.held_out.len()
    }
}

/// Parses an exclusion list: one file name per line, blank lines and `#` comments ignored.
pub fn parse_exclusions(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

pub fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Sorted image file names directly inside `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::Load {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })? {
        let path = entry?.path();
        if path.is_file() && is_image_file(&path) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

/// Manifest over the frames of `source_dir`. Every usable frame contributes its
/// original plus `n_aug_per_image` photometric variants; the originals of
/// `held_out` randomly chosen frames are reserved for evaluation.
pub fn build_dataset(
    source_dir: &Path,
    exclusions: Option<&Path>,
    spec: &RegionSpec,
    n_aug_per_image: usize,
    held_out: usize,
    seed: u64,
    bounds: AugmentationBounds,
) -> Result<DatasetManifest> {
    spec.validate()?;
    let files = list_images(source_dir)?;
    let excluded_set = match exclusions {
        Some(p) => parse_exclusions(&fs::read_to_string(p).map_err(|e| Error::Load {
            path: p.to_path_buf(),
            reason: e.to_string(),
        })?),
        None => BTreeSet::new(),
    };
    let excluded: Vec<String> = files.iter().filter(|f| excluded_set.contains(*f)).cloned().collect();
    let usable: Vec<String> = files.into_iter().filter(|f| !excluded_set.contains(f)).collect();
    if usable.is_empty() {
        return Err(Error::EmptyDataset("no usable images".into()));
    }
    if usable.len() < held_out + 1 {
        return Err(Error::EmptyDataset(format!(
            "{} usable images cannot cover {held_out} held-out frames plus training data",
            usable.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = usable.clone();
    shuffled.shuffle(&mut rng);
    let held: BTreeSet<String> = shuffled.into_iter().take(held_out).collect();

    let mut train_items = Vec::with_capacity(usable.len() * (n_aug_per_image + 1));
    for file in &usable {
        if !held.contains(file) {
            train_items.push(TrainItem {
                file: file.clone(),
                region_index: spec.region_index,
                augmentation: None,
            });
        }
        for _ in 0..n_aug_per_image {
            train_items.push(TrainItem {
                file: file.clone(),
                region_index: spec.region_index,
                augmentation: Some(AugmentationParams::sample(&mut rng, &bounds)),
            });
        }
    }
    Ok(DatasetManifest {
        source_dir: source_dir.to_path_buf(),
        excluded,
        train_items,
        held_out: held.into_iter().collect(),
        seed,
        spec: spec.clone(),
        n_aug_per_image,
        bounds,
    })
}

/// Loads frame `file`, cuts region `region` and resizes it to `w x h`.
pub fn load_region_tile(path: &Path, spec: &RegionSpec, region: usize, w: usize, h: usize) -> Result<ImageTensor> {
    let frame = load_image(path)?;
    let mut tiles = partition_regions(&frame, spec)?;
    if region >= tiles.len() {
        return Err(Error::InvalidArgument(format!("region {region} out of range")));
    }
    resize_region(&tiles.swap_remove(region), w, h)
}

/// Materializes one region's training and held-out images at `w x h`.
pub fn load_region_dataset(
    manifest: &DatasetManifest,
    spec: &RegionSpec,
    region: usize,
    w: usize,
    h: usize,
) -> Result<RegionDataset> {
    let spec = spec.with_region(region);
    spec.validate()?;
    let mut tiles: HashMap<String, ImageTensor> = HashMap::new();
    let mut tile = |file: &str| -> Result<ImageTensor> {
        if let Some(t) = tiles.get(file) {
            return Ok(t.clone());
        }
        let t = load_region_tile(&manifest.source_dir.join(file), &spec, region, w, h)?;
        tiles.insert(file.to_string(), t.clone());
        Ok(t)
    };
    let mut train = Vec::with_capacity(manifest.train_items.len());
    for item in &manifest.train_items {
        let base = tile(&item.file)?;
        train.push(match &item.augmentation {
            Some(a) => a.apply(&base)?,
            None => base,
        });
    }
    let mut held = Vec::with_capacity(manifest.held_out.len());
    for f in &manifest.held_out {
        held.push(tile(f)?);
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset("manifest has no training items".into()));
    }
    Ok(RegionDataset::new(region, train, held))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, |y, x, c| ((y * 31 + x * 17 + c * 7) % 101) as f64 / 100.0)
    }

    #[test]
    fn partition_of_camera_frame_gives_six_tiles() {
        // Dimensions only; 3840x2748 tiles into 1280x1374.
        let spec = RegionSpec::default();
        let img = ImageTensor::zeros(2748, 3840);
        let tiles = partition_regions(&img, &spec).unwrap();
        assert_eq!(tiles.len(), 6);
        assert!(tiles.iter().all(|t| t.dims() == (1374, 1280)));
    }

    #[test]
    fn partition_reassembles_and_crops_remainder() {
        let img = gradient_image(13, 20);
        let spec = RegionSpec::default();
        let tiles = partition_regions(&img, &spec).unwrap();
        assert!(tiles.iter().all(|t| t.dims() == (6, 6)));
        let back = assemble_regions(&tiles, 3, 2).unwrap();
        assert_eq!(back, img.crop(0, 0, 12, 18).unwrap());
        let one = RegionSpec {
            grid_cols: 1,
            grid_rows: 1,
            ..RegionSpec::default()
        };
        assert_eq!(partition_regions(&img, &one).unwrap()[0], img);
        let huge = RegionSpec {
            grid_cols: 30,
            ..RegionSpec::default()
        };
        assert!(partition_regions(&img, &huge).is_err());
    }

    #[test]
    fn resize_contracts() {
        let img = gradient_image(10, 12);
        assert_eq!(resize_region(&img, 12, 10).unwrap(), img);
        let tile = ImageTensor::filled(1374, 1280, [0.25, 0.5, 0.75]);
        let out = resize_region(&tile, 640, 480).unwrap();
        assert_eq!(out.dims(), (480, 640));
        assert!(out.data().chunks(3).all(|p| (p[0] - 0.25).abs() < 1e-12 && (p[2] - 0.75).abs() < 1e-12));
        assert!(resize_region(&img, 0, 5).is_err());
        let up = resize_region(&img, 37, 23).unwrap();
        assert!(up.is_unit_range());
    }

    #[test]
    fn exposure_contracts() {
        let img = gradient_image(8, 8);
        let same = augment_exposure(&img, 0.0);
        for (a, b) in same.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let brighter = augment_exposure(&img, 1.0);
        assert!(brighter.data().iter().zip(img.data()).all(|(a, b)| a >= b));
        // linear 0.2 doubles to 0.4
        let v = crate::image::linear_to_srgb(0.2);
        let out = augment_exposure(&ImageTensor::filled(1, 1, [v; 3]), 1.0);
        assert!((crate::image::srgb_to_linear(out.get(0, 0, 0)) - 0.4).abs() < 1e-9);
        assert_eq!(brighter.dims(), img.dims());
    }

    #[test]
    fn white_balance_contracts() {
        let gray = ImageTensor::filled(4, 4, [0.5; 3]);
        let same = augment_white_balance(&gray, 0.0).unwrap();
        assert!(same.data().iter().all(|v| (v - 0.5).abs() < 1e-6));
        let warm = augment_white_balance(&gray, -1000.0).unwrap();
        let ratio = |im: &ImageTensor| {
            let r: f64 = im.channel(0).iter().sum();
            let b: f64 = im.channel(2).iter().sum();
            r / b
        };
        assert!(ratio(&warm) > ratio(&gray));
        assert!(augment_white_balance(&gray, -5000.0).is_err());
        let g = white_balance_gains(1000.0, 5500.0).unwrap();
        assert_eq!(g[1], 1.0);
        assert!(g[0] < 1.0 && g[2] > 1.0);
    }

    /// Independent route: Planckian-locus chromaticity from the Kim et al. cubic
    /// approximation, converted to linear sRGB.
    fn locus_rgb(t: f64) -> [f64; 3] {
        let x = if t < 4000.0 {
            -0.266_123_9e9 / t.powi(3) - 0.234_358_9e6 / t.powi(2) + 0.877_695_6e3 / t + 0.179_910
        } else {
            -3.025_846_9e9 / t.powi(3) + 2.107_037_9e6 / t.powi(2) + 0.222_634_7e3 / t + 0.240_390
        };
        let y = if t < 2222.0 {
            -1.106_381_4 * x.powi(3) - 1.348_110_20 * x.powi(2) + 2.185_558_32 * x - 0.202_196_83
        } else if t < 4000.0 {
            -0.954_947_6 * x.powi(3) - 1.374_185_93 * x.powi(2) + 2.091_370_15 * x - 0.167_488_67
        } else {
            3.081_758_0 * x.powi(3) - 5.873_386_70 * x.powi(2) + 3.751_129_97 * x - 0.370_014_83
        };
        let (xx, zz) = (x / y, (1.0 - x - y) / y);
        let r = 3.240_454_2 * xx - 1.537_138_5 - 0.498_531_4 * zz;
        let g = -0.969_266 * xx + 1.876_010_8 + 0.041_556 * zz;
        let b = 0.055_643_4 * xx - 0.204_025_9 + 1.057_225_2 * zz;
        [r / g, 1.0, b / g]
    }

    #[test]
    fn gains_match_planckian_locus_table_within_two_percent() {
        for t in [4500.0, 5500.0, 6500.0] {
            let a = blackbody_rgb(t).unwrap();
            let b = locus_rgb(t);
            for k in [0, 2] {
                assert!((a[k] / b[k] - 1.0).abs() < 0.02, "{t} K channel {k}: {} vs {}", a[k], b[k]);
            }
        }
        let g = white_balance_gains(-1000.0, 5500.0).unwrap();
        let (r45, r55) = (locus_rgb(4500.0), locus_rgb(5500.0));
        assert!((g[0] / (r45[0] / r55[0]) - 1.0).abs() < 0.02);
        assert!((g[2] / (r45[2] / r55[2]) - 1.0).abs() < 0.02);
    }

    #[test]
    fn augmentation_bounds_check() {
        let b = AugmentationBounds::default();
        let p = AugmentationParams {
            delta_ev: 1.5,
            delta_kelvin: 0.0,
            seed: 0,
        };
        assert!(p.check(&b).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            assert!(AugmentationParams::sample(&mut rng, &b).check(&b).is_ok());
        }
    }

    #[test]
    fn exclusion_list_parsing() {
        let set = parse_exclusions("# rejected frames\nimg_001.png\n\n  img_007.png  \n#img_009.png\n");
        assert_eq!(set.len(), 2);
        assert!(set.contains("img_007.png"));
    }
}
