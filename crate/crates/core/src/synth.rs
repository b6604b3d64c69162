//! Procedural stone-like surface textures for desk-scale experiments.
//!
//! A normal frame is one fixed base texture under a random photometric condition
//! (exposure and white-balance shifts within the augmentation bounds) plus a small
//! amount of sensor noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::image::ImageTensor;
use crate::preprocess::{AugmentationBounds, AugmentationParams};

fn value_noise(h: usize, w: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.gen::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let gy = y as f64 / cell as f64;
        let y0 = gy.floor() as usize;
        let fy = smooth(gy - y0 as f64);
        for x in 0..w {
            let gx = x as f64 / cell as f64;
            let x0 = gx.floor() as usize;
            let fx = smooth(gx - x0 as f64);
            let a = grid[y0 * gw + x0];
            let b = grid[y0 * gw + x0 + 1];
            let c = grid[(y0 + 1) * gw + x0];
            let d = grid[(y0 + 1) * gw + x0 + 1];
            out[y * w + x] = (a + (b - a) * fx) * (1.0 - fy) + (c + (d - c) * fx) * fy;
        }
    }
    out
}

/// Deterministic weathered-stone texture of size `h x w`.
///
/// Band-limited on purpose: the finest structure is a few pixels wide, so a
/// small reconstruction network can represent it.
pub fn stone_texture(h: usize, w: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let octaves = [(16usize, 0.5), (8, 0.32), (4, 0.18)];
    let mut lum = vec![0.0; h * w];
    for &(cell, amp) in &octaves {
        let cell = cell.max(1).min(h.max(w));
        for (l, n) in lum.iter_mut().zip(value_noise(h, w, cell, &mut rng)) {
            *l += amp * n;
        }
    }
    let tint = value_noise(h, w, 24.min(h.max(w)), &mut rng);
    // Soft dark pits give registration something to lock onto.
    let pits = (h * w) / 150;
    for _ in 0..pits {
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let depth = rng.gen_range(0.12..0.3);
        let sigma: f64 = rng.gen_range(1.2..2.0);
        let r = (3.0 * sigma).ceil() as isize;
        for dy in -r..=r {
            for dx in -r..=r {
                let (y, x) = (cy as isize + dy, cx as isize + dx);
                if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                    continue;
                }
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                lum[y as usize * w + x as usize] -= depth * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    ImageTensor::from_fn(h, w, |y, x, c| {
        let l = lum[y * w + x];
        let t = tint[y * w + x] - 0.5;
        let base = [0.62, 0.57, 0.50][c];
        let tint_dir = [0.06, 0.02, -0.05][c];
        (base * (1.0 + 0.75 * (l - 0.5)) + tint_dir * t).clamp(0.02, 0.98)
    })
}

/// One "normal" observation of `base`: random exposure/white-balance plus Gaussian sensor noise.
pub fn jittered_normal(
    base: &ImageTensor,
    bounds: &AugmentationBounds,
    noise_std: f64,
    rng: &mut impl Rng,
) -> Result<ImageTensor> {
    let params = AugmentationParams::sample(rng, bounds);
    let mut img = params.apply(base)?;
    if noise_std > 0.0 {
        let dist = Normal::new(0.0, noise_std).expect("valid noise std");
        for v in img.data_mut() {
            *v = (*v + dist.sample(rng)).clamp(0.0, 1.0);
        }
    }
    Ok(img)
}

/// Replicates a tile over a `cols x rows` grid, producing a frame whose regions are identical.
pub fn tile_frame(tile: &ImageTensor, cols: usize, rows: usize) -> ImageTensor {
    let (th, tw) = tile.dims();
    ImageTensor::from_fn(th * rows, tw * cols, |y, x, c| tile.get(y % th, x % tw, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_is_deterministic_and_in_range() {
        let a = stone_texture(48, 64, 7);
        assert_eq!(a, stone_texture(48, 64, 7));
        assert_ne!(a, stone_texture(48, 64, 8));
        assert!(a.is_unit_range());
        let mean: f64 = a.data().iter().sum::<f64>() / a.data().len() as f64;
        assert!(mean > 0.3 && mean < 0.7, "mean {mean}");
    }

    #[test]
    fn tiled_frame_repeats() {
        let t = stone_texture(8, 10, 1);
        let f = tile_frame(&t, 3, 2);
        assert_eq!(f.dims(), (16, 30));
        assert_eq!(f.pixel(9, 21), t.pixel(1, 1));
    }
}
