//! Trains a desk-scale model on procedurally generated normals and prints progress.
//!
//! `cargo run --release -p surfwatch-core --example desk_train -- epochs=200 base=8 down=3 cosine=0.01 wadv=1 lr=0.001 d=128 noise=0.004`

use std::collections::HashMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use surfwatch::model::NetworkConfig;
use surfwatch::preprocess::{AugmentationBounds, AugmentationParams};
use surfwatch::synth::{jittered_normal, stone_texture};
use surfwatch::trainer::{train_region, LrSchedule, RegionDataset, TrainConfig};

fn main() -> surfwatch::Result<()> {
    let args: HashMap<String, f64> = std::env::args()
        .skip(1)
        .filter_map(|a| {
            let (k, v) = a.split_once('=')?;
            Some((k.to_string(), v.parse().ok()?))
        })
        .collect();
    let get = |k: &str, d: f64| args.get(k).copied().unwrap_or(d);
    let desk = NetworkConfig::desk_scale();

    let texture = stone_texture(48, 64, 2024);
    let bounds = AugmentationBounds {
        max_ev: get("ev", 1.0),
        max_kelvin: get("kelvin", 1000.0),
    };
    let natural = AugmentationBounds {
        max_ev: get("nat_ev", 0.25),
        max_kelvin: get("nat_kelvin", 250.0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frames = get("frames", 64.0) as usize;
    let n_aug = get("naug", 3.0) as usize;
    let mut originals = Vec::new();
    for _ in 0..frames {
        originals.push(jittered_normal(&texture, &natural, get("noise", 0.004), &mut rng)?);
    }
    let mut train = Vec::new();
    for (i, o) in originals.iter().enumerate() {
        if i >= 9 {
            train.push(o.clone());
        }
        for _ in 0..n_aug {
            train.push(AugmentationParams::sample(&mut rng, &bounds).apply(o)?);
        }
    }
    let held: Vec<_> = originals[..9].to_vec();
    let normals = train;
    let data = RegionDataset::new(0, normals, held);
    let net = NetworkConfig {
        base_channels: get("base", desk.base_channels as f64) as usize,
        n_down_blocks: get("down", desk.n_down_blocks as f64) as usize,
        latent_dim: get("d", desk.latent_dim as f64) as usize,
        w_adv: get("wadv", desk.w_adv),
        ..desk
    };
    let cfg = TrainConfig {
        epochs: get("epochs", 20.0) as usize,
        eval_every: get("every", 5.0) as usize,
        seed: 7,
        learning_rate: get("lr", 1e-3),
        lr_schedule: match args.get("cosine") {
            Some(&f) => LrSchedule::Cosine { final_fraction: f },
            None => LrSchedule::Constant,
        },
        beta1: get("beta1", 0.5),
        ema_decay: args.get("ema").copied(),
        disc_lr_scale: get("dlr", 1.0),
        disc_reset_below: args.get("dreset").copied(),
        ..TrainConfig::default()
    };
    println!("{net:?}\n{cfg:?}");
    let start = Instant::now();
    train_region(&data, &net, &cfg, |s| {
        if let Some(e) = s.held_out_e_rec {
            println!(
                "epoch {:4} {:7.1}s total {:.4} con {:.4} adv {:.4} enc {:.4} d {:.4} held-out E_rec {:.3}% train {:.3}%",
                s.epoch,
                start.elapsed().as_secs_f64(),
                s.generator.total,
                s.generator.contextual,
                s.generator.adversarial,
                s.generator.encoder,
                s.discriminator,
                e,
                s.train_e_rec.unwrap_or(f64::NAN)
            );
        }
    })?;
    Ok(())
}
