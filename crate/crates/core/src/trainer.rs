//! Alternating generator/discriminator optimization and the relative L2
//! reconstruction metric.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{ModelCheckpoint, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::model::{images_to_tensor, Ganomaly, GeneratorLosses, NetworkConfig};
use crate::nn::{Adam, AdamConfig, BatchNorm, Layer, Mode, Sequential};
use crate::preprocess::{load_region_dataset, DatasetManifest, RegionSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// Held-out reconstruction error is measured every `eval_every` epochs and at the last epoch.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    /// When set, the returned model carries an exponential moving average of the
    /// generator and auxiliary-encoder weights (updated after every batch).
    #[serde(default)]
    pub ema_decay: Option<f64>,
    /// Discriminator learning rate relative to `learning_rate`.
    #[serde(default = "default_disc_lr_scale")]
    pub disc_lr_scale: f64,
    /// Reinitialize the discriminator after any epoch whose mean loss falls below this.
    #[serde(default)]
    pub disc_reset_below: Option<f64>,
}

/// Per-epoch learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `learning_rate` down to `learning_rate * final_fraction` at the last epoch.
    Cosine { final_fraction: f64 },
}

impl LrSchedule {
    /// Learning rate for 1-based `epoch` out of `epochs`.
    pub fn rate(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { final_fraction } => {
                let t = if epochs > 1 { (epoch - 1) as f64 / (epochs - 1) as f64 } else { 1.0 };
                let f = final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
                base * f
            }
        }
    }
}

fn default_beta1() -> f64 {
    0.5
}

fn default_beta2() -> f64 {
    0.999
}

fn default_disc_lr_scale() -> f64 {
    1.0
}

fn default_eval_every() -> usize {
    50
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-7,
            batch_size: 16,
            epochs: 1200,
            seed: 0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eval_every: default_eval_every(),
            lr_schedule: LrSchedule::Constant,
            ema_decay: None,
            disc_lr_scale: default_disc_lr_scale(),
            disc_reset_below: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::InvalidArgument("batch_size, epochs and eval_every must be >= 1".into()));
        }
        if let LrSchedule::Cosine { final_fraction } = self.lr_schedule {
            if !(0.0..=1.0).contains(&final_fraction) {
                return Err(Error::InvalidArgument("cosine final_fraction must lie in [0, 1]".into()));
            }
        }
        if !(self.disc_lr_scale > 0.0) || !self.disc_lr_scale.is_finite() {
            return Err(Error::InvalidArgument("disc_lr_scale must be > 0".into()));
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::InvalidArgument("ema_decay must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
            weight_decay: self.weight_decay,
        }
    }
}

/// Relative L2 error in percent, treating each image as one flattened vector.
pub fn reconstruction_error(y: &ImageTensor, y_tilde: &ImageTensor) -> Result<f64> {
    y.ensure_same_dims(y_tilde)?;
    let norm = y.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("ground truth has zero norm".into()));
    }
    let diff = y
        .data()
        .iter()
        .zip(y_tilde.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm * 100.0)
}

/// Mean E_rec of the model's inference-mode reconstructions over `images`.
pub fn mean_reconstruction_error(model: &mut Ganomaly, images: &[ImageTensor]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::EmptyDataset("no images to evaluate".into()));
    }
    let mut total = 0.0;
    for chunk in images.chunks(16) {
        let refs: Vec<&ImageTensor> = chunk.iter().collect();
        for (y, yt) in chunk.iter().zip(model.reconstruct_batch(&refs)?) {
            total += reconstruction_error(y, &yt)?;
        }
    }
    Ok(total / images.len() as f64)
}

/// Images already cut, resized and augmented for one region.
#[derive(Debug, Clone)]
pub struct RegionDataset {
    pub region_index: usize,
    pub train: Vec<ImageTensor>,
    pub held_out: Vec<ImageTensor>,
    /// Hex SHA-256 over the training and held-out samples.
    pub fingerprint: String,
}

impl RegionDataset {
    pub fn new(region_index: usize, train: Vec<ImageTensor>, held_out: Vec<ImageTensor>) -> Self {
        let mut h = Sha256::new();
        for img in train.iter().chain(&held_out) {
            h.update((img.height() as u64).to_le_bytes());
            h.update((img.width() as u64).to_le_bytes());
            for v in img.data() {
                h.update(v.to_le_bytes());
            }
        }
        Self {
            region_index,
            train,
            held_out,
            fingerprint: format!("{:x}", h.finalize()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub generator: GeneratorLosses,
    pub discriminator: f64,
    /// Held-out E_rec (percent), when measured this epoch.
    pub held_out_e_rec: Option<f64>,
    /// E_rec on a fixed subset of training images, when measured this epoch.
    pub train_e_rec: Option<f64>,
}

/// Exponential moving average of the reconstruction-path parameters.
struct Ema {
    decay: f64,
    shadow: Vec<Vec<f64>>,
}

fn averaged_params(model: &mut Ganomaly) -> Vec<&mut Vec<f64>> {
    let mut v: Vec<&mut Vec<f64>> = Vec::new();
    for net in [&mut model.generator.encoder, &mut model.generator.decoder, &mut model.aux_encoder.encoder] {
        v.extend(net.params_mut());
    }
    v
}

impl Ema {
    fn new(decay: f64, model: &mut Ganomaly) -> Self {
        Self {
            decay,
            shadow: averaged_params(model).into_iter().map(|a| a.clone()).collect(),
        }
    }

    fn update(&mut self, model: &mut Ganomaly) {
        let d = self.decay;
        for (s, a) in self.shadow.iter_mut().zip(averaged_params(model)) {
            for (sv, &av) in s.iter_mut().zip(a.iter()) {
                *sv = d * *sv + (1.0 - d) * av;
            }
        }
    }

    /// Copy of `model` carrying the averaged parameters, with batch-norm
    /// statistics re-estimated on `images` to match them.
    fn averaged(&self, model: &Ganomaly, images: &[ImageTensor], batch: usize) -> Ganomaly {
        let mut m = model.clone();
        for (a, s) in averaged_params(&mut m).into_iter().zip(&self.shadow) {
            a.copy_from_slice(s);
        }
        recalibrate_batch_norm(&mut m, images, batch);
        m
    }
}

fn for_each_batch_norm(model: &mut Ganomaly, mut f: impl FnMut(&mut BatchNorm)) {
    for net in [&mut model.generator.encoder, &mut model.generator.decoder, &mut model.aux_encoder.encoder] {
        for layer in &mut net.layers {
            if let Layer::BatchNorm(b) = layer {
                f(b);
            }
        }
    }
}

/// Replaces the running statistics of the reconstruction path with their
/// plain average over `images`.
fn recalibrate_batch_norm(model: &mut Ganomaly, images: &[ImageTensor], batch: usize) {
    let mut saved = Vec::new();
    for_each_batch_norm(model, |b| {
        saved.push(b.momentum);
        b.running_mean.fill(0.0);
        b.running_var.fill(0.0);
    });
    for (k, chunk) in images.chunks(batch.max(2)).filter(|c| c.len() >= 2).enumerate() {
        let momentum = 1.0 / (k + 1) as f64;
        for_each_batch_norm(model, |b| b.momentum = momentum);
        let refs: Vec<&ImageTensor> = chunk.iter().collect();
        let (z, _) = model.generator.encoder.forward(&images_to_tensor(&refs), Mode::Train);
        let (xhat, _) = model.generator.decoder.forward(&z, Mode::Train);
        model.aux_encoder.encoder.forward(&xhat, Mode::Train);
    }
    let mut it = saved.into_iter();
    for_each_batch_norm(model, |b| b.momentum = it.next().unwrap_or(b.momentum));
}

struct Optimizers {
    encoder: Adam,
    decoder: Adam,
    aux: Adam,
    disc_features: Adam,
    disc_head: Adam,
}

fn adam_for(cfg: &TrainConfig, net: &Sequential) -> Adam {
    Adam::new(cfg.adam(), net)
}

/// Trains one region model. `on_epoch` observes per-epoch statistics.
pub fn train_region(
    data: &RegionDataset,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<ModelCheckpoint> {
    net_cfg.validate()?;
    train_cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyDataset(format!("region {} has no training items", data.region_index)));
    }
    if data.train.len() < train_cfg.batch_size {
        return Err(Error::EmptyDataset(format!(
            "region {} has {} training items, fewer than batch size {}",
            data.region_index,
            data.train.len(),
            train_cfg.batch_size
        )));
    }
    for img in data.train.iter().chain(&data.held_out) {
        if img.dims() != (net_cfg.input_height, net_cfg.input_width) {
            return Err(Error::shape(
                format!("{}x{}", net_cfg.input_height, net_cfg.input_width),
                format!("{}x{}", img.height(), img.width()),
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut model = Ganomaly::new(net_cfg.clone(), train_cfg.seed)?;
    let mut opt = Optimizers {
        encoder: adam_for(train_cfg, &model.generator.encoder),
        decoder: adam_for(train_cfg, &model.generator.decoder),
        aux: adam_for(train_cfg, &model.aux_encoder.encoder),
        disc_features: adam_for(train_cfg, &model.discriminator.features),
        disc_head: adam_for(train_cfg, &model.discriminator.head),
    };
    let mut ema = train_cfg.ema_decay.map(|d| Ema::new(d, &mut model));
    let weights = (net_cfg.w_adv, net_cfg.w_con, net_cfg.w_enc);
    let probe: Vec<ImageTensor> = data.train.iter().take(16).cloned().collect();

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut held_out_history = Vec::new();
    let mut history = Vec::with_capacity(train_cfg.epochs);
    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let lr = train_cfg.lr_schedule.rate(train_cfg.learning_rate, epoch, train_cfg.epochs);
        for o in [&mut opt.encoder, &mut opt.decoder, &mut opt.aux] {
            o.set_lr(lr);
        }
        for o in [&mut opt.disc_features, &mut opt.disc_head] {
            o.set_lr(lr * train_cfg.disc_lr_scale);
        }
        let mut sum = GeneratorLosses {
            adversarial: 0.0,
            contextual: 0.0,
            encoder: 0.0,
            total: 0.0,
        };
        let mut d_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(train_cfg.batch_size).enumerate() {
            // A single-sample batch degenerates batch statistics; fold it away.
            if idx.len() < 2 {
                continue;
            }
            let imgs: Vec<&ImageTensor> = idx.iter().map(|&i| &data.train[i]).collect();
            let x = images_to_tensor(&imgs);

            let (losses, grads, pass, _) = model.generator_objective(&x, weights);
            if !losses.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("non-finite generator loss {losses:?}"),
                });
            }
            opt.encoder.step(&mut model.generator.encoder, &grads.encoder);
            opt.decoder.step(&mut model.generator.decoder, &grads.decoder);
            if !net_cfg.freeze_aux_encoder {
                opt.aux.step(&mut model.aux_encoder.encoder, &grads.aux);
            }

            let (d_loss, g_feat, g_head) = model.discriminator_objective(&pass);
            if !d_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("non-finite discriminator loss {d_loss}"),
                });
            }
            opt.disc_features.step(&mut model.discriminator.features, &g_feat);
            opt.disc_head.step(&mut model.discriminator.head, &g_head);
            if let Some(e) = ema.as_mut() {
                e.update(&mut model);
            }

            sum.adversarial += losses.adversarial;
            sum.contextual += losses.contextual;
            sum.encoder += losses.encoder;
            sum.total += losses.total;
            d_sum += d_loss;
            batches += 1;
        }
        let nb = batches.max(1) as f64;
        if train_cfg.disc_reset_below.is_some_and(|t| d_sum / nb < t) {
            let fresh = Ganomaly::new(net_cfg.clone(), train_cfg.seed.wrapping_add(epoch as u64))?;
            model.discriminator = fresh.discriminator;
            opt.disc_features = adam_for(train_cfg, &model.discriminator.features);
            opt.disc_head = adam_for(train_cfg, &model.discriminator.head);
            log::debug!("region {} epoch {epoch}: discriminator reinitialized", data.region_index);
        }
        let measure = epoch % train_cfg.eval_every == 0 || epoch == train_cfg.epochs || epoch == 1;
        let mut averaged = match (&ema, measure) {
            (Some(e), true) => Some(e.averaged(&model, &data.train, train_cfg.batch_size)),
            _ => None,
        };
        let eval_model = averaged.as_mut().unwrap_or(&mut model);
        let held_out_e_rec = if measure && !data.held_out.is_empty() {
            let e = mean_reconstruction_error(eval_model, &data.held_out)?;
            held_out_history.push((epoch, e));
            Some(e)
        } else {
            None
        };
        let train_e_rec = if measure {
            Some(mean_reconstruction_error(eval_model, &probe)?)
        } else {
            None
        };
        let stats = EpochStats {
            epoch,
            generator: GeneratorLosses {
                adversarial: sum.adversarial / nb,
                contextual: sum.contextual / nb,
                encoder: sum.encoder / nb,
                total: sum.total / nb,
            },
            discriminator: d_sum / nb,
            held_out_e_rec,
            train_e_rec,
        };
        log::debug!("region {} epoch {epoch}: {stats:?}", data.region_index);
        on_epoch(&stats);
        history.push(stats);
    }

    Ok(ModelCheckpoint {
        format_version: FORMAT_VERSION,
        region_index: data.region_index,
        epoch: train_cfg.epochs,
        train_config: train_cfg.clone(),
        e_rec_history: held_out_history.iter().map(|&(_, e)| e).collect(),
        e_rec_epochs: held_out_history.iter().map(|&(ep, _)| ep).collect(),
        loss_history: history.iter().map(|s| s.generator.total).collect(),
        dataset_fingerprint: data.fingerprint.clone(),
        model: match &ema {
            Some(e) => e.averaged(&model, &data.train, train_cfg.batch_size),
            None => model,
        },
    })
}

/// Loads region `region` of `manifest` at the network's input size and trains it.
pub fn train(
    manifest: &DatasetManifest,
    spec: &RegionSpec,
    region: usize,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<ModelCheckpoint> {
    let data = load_region_dataset(manifest, spec, region, net_cfg.input_width, net_cfg.input_height)?;
    train_region(&data, net_cfg, train_cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e_rec_examples() {
        let y = ImageTensor::filled(4, 4, [0.2, 0.4, 0.6]);
        assert_eq!(reconstruction_error(&y, &y).unwrap(), 0.0);
        let zero = ImageTensor::zeros(4, 4);
        assert!((reconstruction_error(&y, &zero).unwrap() - 100.0).abs() < 1e-12);
        assert!(reconstruction_error(&zero, &y).is_err());
    }

    #[test]
    fn e_rec_matches_flattened_norm() {
        let y = ImageTensor::from_fn(3, 3, |r, c, ch| 0.1 + (r + c + ch) as f64 * 0.05);
        let yt = y.map(|v| v * 0.99);
        // ||0.01 y|| / ||y|| = 1 %
        assert!((reconstruction_error(&y, &yt).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn defaults_follow_training_table() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.weight_decay, 1e-7);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.epochs, 1200);
        assert_eq!((c.beta1, c.beta2), (0.5, 0.999));
    }

    #[test]
    fn rejects_undersized_dataset() {
        let net = NetworkConfig {
            input_width: 16,
            input_height: 16,
            latent_dim: 4,
            base_channels: 2,
            n_down_blocks: 2,
            ..NetworkConfig::default()
        };
        let data = RegionDataset::new(0, vec![ImageTensor::filled(16, 16, [0.5; 3]); 3], vec![]);
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(train_region(&data, &net, &cfg, |_| {}), Err(Error::EmptyDataset(_))));
        let empty = RegionDataset::new(0, vec![], vec![]);
        assert!(train_region(&empty, &net, &cfg, |_| {}).is_err());
    }

    #[test]
    fn short_run_is_deterministic_and_learns() {
        let net = NetworkConfig {
            input_width: 16,
            input_height: 16,
            latent_dim: 8,
            base_channels: 4,
            n_down_blocks: 2,
            ..NetworkConfig::default()
        };
        let base = ImageTensor::from_fn(16, 16, |y, x, c| 0.2 + 0.6 * (((y * 3 + x * 5 + c) % 7) as f64 / 6.0));
        let train: Vec<ImageTensor> = (0..8).map(|i| base.map(|v| v * (0.9 + 0.02 * i as f64))).collect();
        let held = vec![base.clone()];
        let data = RegionDataset::new(0, train, held);
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 4,
            eval_every: 1,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train_region(&data, &net, &cfg, |_| {}).unwrap();
        let b = train_region(&data, &net, &cfg, |_| {}).unwrap();
        assert_eq!(a.e_rec_history, b.e_rec_history);
        assert_eq!(a.e_rec_history.len(), 40);
        assert!(a.e_rec_history.last().unwrap() < a.e_rec_history.first().unwrap());
        assert_eq!(a.format_version, FORMAT_VERSION);
    }
}
