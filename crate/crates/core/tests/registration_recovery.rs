use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surfwatch::image::ImageTensor;
use surfwatch::postprocess::{register_images, warp_image, Homography, RegistrationConfig, TransformModel};
use surfwatch::synth::stone_texture;

/// Content at `p` in `x` moves to `t(p)` in the returned image.
fn apply_warp(x: &ImageTensor, t: &Homography) -> ImageTensor {
    warp_image(x, &t.inverse().unwrap())
}

#[test]
fn random_rigid_warps_are_recovered() {
    let (h, w) = (96, 128);
    let x = stone_texture(h, w, 77);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut good = 0;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let theta = rng.gen_range(-2.0f64..2.0).to_radians();
        let t = Homography::rigid(theta, rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), w as f64 / 2.0, h as f64 / 2.0);
        let moved = apply_warp(&x, &t);
        let (_, info) = register_images(&x, &moved, &RegistrationConfig::default()).unwrap();
        let err = info.transform.corner_error(&t, h, w);
        worst = worst.max(err);
        if err <= 0.5 && info.model != TransformModel::Identity {
            good += 1;
        }
    }
    println!("recovered {good}/100, worst corner error {worst:.3}");
    assert!(good >= 95, "only {good}/100 warps recovered");
}
