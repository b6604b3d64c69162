//! Central finite-difference oracle for the training objectives.
//!
//! Shared between the core integration tests and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surfwatch::image::ImageTensor;
use surfwatch::model::{images_to_tensor, Ganomaly, NetworkConfig};
use surfwatch::nn::{Grads, Sequential, Tensor};

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Contextual,
    Adversarial,
    Encoder,
    /// Weighted generator total with the model's configured weights.
    Total,
    Discriminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Net {
    Encoder,
    Decoder,
    Aux,
    DiscFeatures,
    DiscHead,
}

pub fn tiny_config() -> NetworkConfig {
    NetworkConfig {
        input_width: 16,
        input_height: 16,
        latent_dim: 8,
        base_channels: 4,
        n_down_blocks: 2,
        ..NetworkConfig::default()
    }
}

pub fn random_batch(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let imgs: Vec<ImageTensor> = (0..n)
        .map(|_| ImageTensor::from_fn(16, 16, |_, _, _| rng.gen_range(0.05..0.95)))
        .collect();
    images_to_tensor(&imgs.iter().collect::<Vec<_>>())
}

fn weights(model: &Ganomaly, obj: Objective) -> (f64, f64, f64) {
    match obj {
        Objective::Contextual => (0.0, 1.0, 0.0),
        Objective::Adversarial => (1.0, 0.0, 0.0),
        Objective::Encoder => (0.0, 0.0, 1.0),
        Objective::Total | Objective::Discriminator => (model.config.w_adv, model.config.w_con, model.config.w_enc),
    }
}

fn net_mut(model: &mut Ganomaly, net: Net) -> &mut Sequential {
    match net {
        Net::Encoder => &mut model.generator.encoder,
        Net::Decoder => &mut model.generator.decoder,
        Net::Aux => &mut model.aux_encoder.encoder,
        Net::DiscFeatures => &mut model.discriminator.features,
        Net::DiscHead => &mut model.discriminator.head,
    }
}

/// Objective value; analytic gradients are discarded.
pub fn loss(model: &mut Ganomaly, x: &Tensor, obj: Objective) -> f64 {
    match obj {
        Objective::Discriminator => model.discriminator_loss_on(x).0,
        _ => {
            let w = weights(model, obj);
            model.generator_objective(x, w).0.total
        }
    }
}

pub fn analytic(model: &mut Ganomaly, x: &Tensor, obj: Objective, net: Net) -> Grads {
    match obj {
        Objective::Discriminator => {
            let (_, feat, head) = model.discriminator_loss_on(x);
            match net {
                Net::DiscFeatures => feat,
                Net::DiscHead => head,
                _ => panic!("discriminator loss only has discriminator parameters"),
            }
        }
        _ => {
            let w = weights(model, obj);
            let g = model.generator_objective(x, w).1;
            match net {
                Net::Encoder => g.encoder,
                Net::Decoder => g.decoder,
                Net::Aux => g.aux,
                _ => panic!("generator objectives do not differentiate the discriminator"),
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Check {
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Compares analytic and central-difference gradients on `samples` random
/// coordinates of `net`. Coordinates where both gradients are below `floor` in
/// magnitude are compared absolutely against `floor * 1e-4`.
pub fn check(model: &Ganomaly, x: &Tensor, obj: Objective, net: Net, samples: usize, seed: u64) -> Check {
    let floor = 1e-6;
    let mut m = model.clone();
    let grads = analytic(&mut m, x, obj, net).flat();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..samples.min(grads.len()) {
        let flat_idx = rng.gen_range(0..grads.len());
        let mut probe = model.clone();
        let eval = |probe: &mut Ganomaly, delta: f64| {
            let mut params = net_mut(probe, net).params_mut();
            let mut idx = flat_idx;
            for p in params.iter_mut() {
                if idx < p.len() {
                    p[idx] += delta;
                    break;
                }
                idx -= p.len();
            }
            drop(params);
            let l = loss(probe, x, obj);
            let mut params = net_mut(probe, net).params_mut();
            let mut idx = flat_idx;
            for p in params.iter_mut() {
                if idx < p.len() {
                    p[idx] -= delta;
                    break;
                }
                idx -= p.len();
            }
            l
        };
        let numeric = (eval(&mut probe, STEP) - eval(&mut probe, -STEP)) / (2.0 * STEP);
        let a = grads[flat_idx];
        let scale = a.abs().max(numeric.abs());
        let rel = if scale < floor {
            (a - numeric).abs() / floor
        } else {
            (a - numeric).abs() / scale
        };
        max_rel = max_rel.max(rel);
        checked += 1;
    }
    Check {
        checked,
        max_rel_err: max_rel,
    }
}

/// Every (objective, network) pair with a nonzero dependency.
pub fn all_pairs() -> Vec<(Objective, Net)> {
    use Net as N;
    use Objective as O;
    vec![
        (O::Contextual, N::Encoder),
        (O::Contextual, N::Decoder),
        (O::Adversarial, N::Encoder),
        (O::Adversarial, N::Decoder),
        (O::Encoder, N::Encoder),
        (O::Encoder, N::Decoder),
        (O::Encoder, N::Aux),
        (O::Total, N::Encoder),
        (O::Total, N::Decoder),
        (O::Total, N::Aux),
        (O::Discriminator, N::DiscFeatures),
        (O::Discriminator, N::DiscHead),
    ]
}
