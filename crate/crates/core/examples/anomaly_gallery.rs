//! Writes one image per anomaly category next to the clean texture.
//!
//! `cargo run --release -p surfwatch-core --example anomaly_gallery -- out.png [scale]`

use surfwatch::evalkit::{inject_anomaly, AnomalyCategory, AnomalySpec};
use surfwatch::image::{save_image, ImageTensor};
use surfwatch::synth::stone_texture;

fn main() -> surfwatch::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "gallery.png".into());
    let scale: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let x = stone_texture(48, 64, 2024);
    let mut tiles = vec![x.clone()];
    for c in AnomalyCategory::ALL {
        tiles.push(inject_anomaly(&x, &AnomalySpec::new(c, 5))?.0);
    }
    let (h, w) = (48 * scale, 64 * scale);
    let mut strip = ImageTensor::filled(h, tiles.len() * (w + 4), [1.0, 1.0, 1.0]);
    for (i, t) in tiles.iter().enumerate() {
        let big = ImageTensor::from_fn(h, w, |y, xx, c| t.get(y / scale, xx / scale, c));
        strip.paste(&big, 0, i * (w + 4))?;
    }
    save_image(&strip, out)
}
