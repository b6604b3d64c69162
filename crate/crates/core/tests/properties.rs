use proptest::prelude::*;
use surfwatch::checkpoint::{decode_checkpoint, encode_checkpoint};
use surfwatch::image::{BinaryMask, ImageTensor};
use surfwatch::model::{Ganomaly, NetworkConfig};
use surfwatch::postprocess::{
    iou, lower_median, match_colors, matrix_subtraction, percentile, ssim_map, union_masks, SsimParams,
};
use surfwatch::preprocess::{
    assemble_regions, augment_exposure, augment_white_balance, partition_regions, AugmentationBounds,
    AugmentationParams, RegionSpec,
};
use surfwatch::trainer::{reconstruction_error, train_region, RegionDataset, TrainConfig};

fn image(max_edge: usize, lo: f64, hi: f64) -> impl Strategy<Value = ImageTensor> {
    (2..=max_edge, 2..=max_edge).prop_flat_map(move |(h, w)| {
        prop::collection::vec(lo..hi, h * w * 3).prop_map(move |d| ImageTensor::new(h, w, d).unwrap())
    })
}

fn image_pair(max_edge: usize) -> impl Strategy<Value = (ImageTensor, ImageTensor)> {
    (2..=max_edge, 2..=max_edge).prop_flat_map(|(h, w)| {
        let px = prop::collection::vec(0.0..1.0f64, h * w * 3);
        (px.clone(), px).prop_map(move |(a, b)| (ImageTensor::new(h, w, a).unwrap(), ImageTensor::new(h, w, b).unwrap()))
    })
}

fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1..20usize, 1..20usize).prop_flat_map(|(h, w)| {
        let bits = prop::collection::vec(any::<bool>(), h * w);
        (bits.clone(), bits).prop_map(move |(a, b)| (BinaryMask::new(h, w, a).unwrap(), BinaryMask::new(h, w, b).unwrap()))
    })
}

fn stats(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ssim_bounded_and_reflexive((x, y) in image_pair(24), window in 2usize..8) {
        prop_assume!(x.height() >= window && x.width() >= window);
        let p = SsimParams { window, ..SsimParams::default() };
        let m = ssim_map(&x, &y, &p).unwrap();
        prop_assert_eq!(m.values.len(), x.height() * x.width());
        prop_assert!(m.values.iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
        let same = ssim_map(&x, &x, &p).unwrap();
        prop_assert!(same.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn subtraction_nonnegative_and_offset_invariant((x, y) in image_pair(16), off in prop::array::uniform3(-0.3..0.3f64)) {
        let m = matrix_subtraction(&x, &y).unwrap();
        prop_assert!(m.values.iter().all(|&v| v >= 0.0));
        prop_assert!(matrix_subtraction(&x, &x).unwrap().values.iter().all(|&v| v == 0.0));
        let shifted = ImageTensor::from_fn(y.height(), y.width(), |r, c, k| y.get(r, c, k) + off[k]);
        let m2 = matrix_subtraction(&x, &shifted).unwrap();
        for (a, b) in m.values.iter().zip(&m2.values) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn lower_median_is_an_element(v in prop::collection::vec(-10.0..10.0f64, 1..50)) {
        let m = lower_median(&v);
        prop_assert!(v.contains(&m));
        let below = v.iter().filter(|&&a| a < m).count();
        let at_most = v.iter().filter(|&&a| a <= m).count();
        prop_assert!(below <= (v.len() - 1) / 2 && at_most > (v.len() - 1) / 2);
    }

    #[test]
    fn colour_match_takes_input_moments((x, r) in image_pair(16)) {
        let out = match_colors(&x, &r).unwrap();
        for k in 0..3 {
            let (mo, so) = stats(&out.channel(k));
            let (mx, sx) = stats(&x.channel(k));
            prop_assert!((mo - mx).abs() < 1e-9);
            let (_, sr) = stats(&r.channel(k));
            if sr > 1e-9 {
                prop_assert!((so - sx).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reconstruction_error_properties((y, z) in image_pair(12), k in 0.1..5.0f64) {
        prop_assume!(y.data().iter().any(|&v| v > 0.0));
        let e = reconstruction_error(&y, &z).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert_eq!(reconstruction_error(&y, &y).unwrap(), 0.0);
        prop_assert_eq!(e == 0.0, y == z);
        let (ys, zs) = (y.map(|v| v * k), z.map(|v| v * k));
        prop_assert!((reconstruction_error(&ys, &zs).unwrap() - e).abs() < 1e-9 * e.max(1.0));
    }

    #[test]
    fn augmentation_stays_in_range(x in image(12, 0.0, 1.0), ev in -1.0..1.0f64, kelvin in -1000.0..1000.0f64) {
        let out = augment_white_balance(&augment_exposure(&x, ev), kelvin).unwrap();
        prop_assert!(out.is_unit_range());
        let p = AugmentationParams { delta_ev: ev, delta_kelvin: kelvin, seed: 0 };
        prop_assert!(p.check(&AugmentationBounds::default()).is_ok());
        let identity = augment_white_balance(&augment_exposure(&x, 0.0), 0.0).unwrap();
        for (a, b) in identity.data().iter().zip(x.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn partition_assemble_round_trip(cols in 1usize..4, rows in 1usize..4, th in 1usize..6, tw in 1usize..6, seed in any::<u8>()) {
        let frame = ImageTensor::from_fn(rows * th, cols * tw, |r, c, k| ((r * 31 + c * 7 + k + seed as usize) % 17) as f64 / 16.0);
        let spec = RegionSpec { grid_cols: cols, grid_rows: rows, region_index: 0, target_width: tw, target_height: th };
        let tiles = partition_regions(&frame, &spec).unwrap();
        prop_assert_eq!(tiles.len(), cols * rows);
        prop_assert_eq!(assemble_regions(&tiles, cols, rows).unwrap(), frame);
    }

    #[test]
    fn mask_union_and_iou((a, b) in mask_pair()) {
        let u = union_masks(&a, &b).unwrap();
        prop_assert_eq!(&u, &union_masks(&b, &a).unwrap());
        prop_assert!(u.area() >= a.area().max(b.area()));
        let j = iou(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(j, iou(&b, &a).unwrap());
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn percentile_monotone(v in prop::collection::vec(-5.0..5.0f64, 1..40), p in 0.0..100.0f64, q in 0.0..100.0f64) {
        let (lo, hi) = (p.min(q), p.max(q));
        let a = percentile(&v, lo).unwrap();
        let b = percentile(&v, hi).unwrap();
        prop_assert!(a <= b);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a >= min && b <= max);
    }
}

fn tiny() -> NetworkConfig {
    NetworkConfig {
        input_width: 16,
        input_height: 16,
        latent_dim: 4,
        base_channels: 2,
        n_down_blocks: 2,
        ..NetworkConfig::desk_scale()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), epochs in 1usize..3) {
        let imgs: Vec<ImageTensor> = (0..4)
            .map(|i| ImageTensor::from_fn(16, 16, |r, c, k| ((r + c + k + i) % 5) as f64 / 5.0 + 0.1))
            .collect();
        let data = RegionDataset::new(0, imgs.clone(), imgs[..1].to_vec());
        let cfg = TrainConfig { epochs, batch_size: 2, eval_every: 1, seed, ..TrainConfig::default() };
        let ckpt = train_region(&data, &tiny(), &cfg, |_| {}).unwrap();
        prop_assert_eq!(ckpt.e_rec_history.len(), epochs);
        let bytes = encode_checkpoint(&ckpt).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        let mut m1 = ckpt.model.clone();
        let mut m2: Ganomaly = back.model;
        prop_assert_eq!(m1.reconstruct(&imgs[0]).unwrap(), m2.reconstruct(&imgs[0]).unwrap());
    }
}
