use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use surfwatch::preprocess::{build_dataset, load_region_dataset, AugmentationBounds, RegionSpec};
use surfwatch::synth::{stone_texture, tile_frame};
use surfwatch::Error;
use tempfile::TempDir;

fn touch_frames(dir: &Path, n: usize) {
    for i in 0..n {
        fs::write(dir.join(format!("img_{i:04}.png")), b"").unwrap();
    }
}

#[test]
fn field_campaign_counts() {
    let dir = TempDir::new().unwrap();
    touch_frames(dir.path(), 290);
    let excl = dir.path().join("rejected.txt");
    let rejected: String = (283..290).map(|i| format!("img_{i:04}.png\n")).collect();
    fs::write(&excl, format!("# noisy frames\n{rejected}")).unwrap();
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();

    let m = build_dataset(dir.path(), Some(&excl), &RegionSpec::default(), 2, 9, 1, AugmentationBounds::default()).unwrap();
    assert_eq!(m.excluded.len(), 7);
    assert_eq!(m.total_items(), 849);
    assert_eq!(m.train_items.len(), 840);
    assert_eq!(m.held_out.len(), 9);
}

#[test]
fn empty_directory_rejected() {
    let dir = TempDir::new().unwrap();
    let r = build_dataset(dir.path(), None, &RegionSpec::default(), 2, 9, 1, AugmentationBounds::default());
    assert!(matches!(r, Err(Error::EmptyDataset(ref s)) if s.contains("no usable images")));
}

#[test]
fn region_dataset_materializes_manifest() {
    let dir = TempDir::new().unwrap();
    for i in 0..4 {
        let frame = tile_frame(&stone_texture(24, 32, i), 3, 2);
        surfwatch::image::save_image(&frame, dir.path().join(format!("f{i}.png"))).unwrap();
    }
    let spec = RegionSpec {
        target_width: 16,
        target_height: 12,
        ..RegionSpec::default()
    };
    let m = build_dataset(dir.path(), None, &spec, 2, 1, 5, AugmentationBounds::default()).unwrap();
    let d = load_region_dataset(&m, &spec, 4, 16, 12).unwrap();
    assert_eq!(d.train.len(), 3 + 4 * 2);
    assert_eq!(d.held_out.len(), 1);
    assert!(d.train.iter().chain(&d.held_out).all(|t| t.dims() == (12, 16)));
    let again = load_region_dataset(&m, &spec, 4, 16, 12).unwrap();
    assert_eq!(d.fingerprint, again.fingerprint);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn manifest_invariants(n in 2usize..30, n_excl in 0usize..5, n_aug in 0usize..4, held in 0usize..6, seed in any::<u64>()) {
        let dir = TempDir::new().unwrap();
        touch_frames(dir.path(), n);
        let excl = dir.path().join("x.txt");
        let excluded: BTreeSet<String> = (0..n_excl.min(n)).map(|i| format!("img_{:04}.png", i * 3 % n)).collect();
        fs::write(&excl, excluded.iter().map(|s| format!("{s}\n")).collect::<String>()).unwrap();
        let usable = n - excluded.len();
        let bounds = AugmentationBounds::default();
        let r = build_dataset(dir.path(), Some(&excl), &RegionSpec::default(), n_aug, held, seed, bounds);
        if usable < held + 1 {
            prop_assert!(r.is_err());
            return Ok(());
        }
        let m = r.unwrap();
        prop_assert_eq!(m.held_out.len(), held);
        prop_assert_eq!(m.train_items.len(), usable * (n_aug + 1) - held);
        let held_set: BTreeSet<&String> = m.held_out.iter().collect();
        for item in &m.train_items {
            prop_assert!(!excluded.contains(&item.file));
            if item.augmentation.is_none() {
                prop_assert!(!held_set.contains(&item.file));
            }
            if let Some(a) = &item.augmentation {
                prop_assert!(a.check(&bounds).is_ok());
            }
        }
        let again = build_dataset(dir.path(), Some(&excl), &RegionSpec::default(), n_aug, held, seed, bounds).unwrap();
        prop_assert_eq!(m.to_json().unwrap(), again.to_json().unwrap());
    }
}
