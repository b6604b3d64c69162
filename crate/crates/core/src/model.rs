//! Encoder-decoder-encoder reconstruction network with a DCGAN-style discriminator.
//!
//! The generator compresses an image to a latent vector `z` and decodes it back to
//! a reconstruction. An auxiliary encoder with the generator-encoder architecture
//! re-embeds the reconstruction, and the discriminator supplies penultimate-layer
//! features for the feature-matching adversarial term.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::{sigmoid, Grads, Layer, Mode, Sequential, Tape, Tensor};

pub type LatentVector = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_width: usize,
    pub input_height: usize,
    pub latent_dim: usize,
    pub base_channels: usize,
    pub n_down_blocks: usize,
    pub w_adv: f64,
    pub w_con: f64,
    pub w_enc: f64,
    /// Keep the auxiliary encoder at its initial parameters.
    #[serde(default)]
    pub freeze_aux_encoder: bool,
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_leaky_slope() -> f64 {
    0.2
}

fn default_init_std() -> f64 {
    0.02
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_width: 640,
            input_height: 480,
            latent_dim: 128,
            base_channels: 64,
            n_down_blocks: 4,
            w_adv: 1.0,
            w_con: 40.0,
            w_enc: 1.0,
            freeze_aux_encoder: false,
            leaky_slope: default_leaky_slope(),
            init_std: default_init_std(),
        }
    }
}

impl NetworkConfig {
    /// 64x48 inputs with a narrow network, sized for CPU training.
    pub fn desk_scale() -> Self {
        Self {
            input_width: 64,
            input_height: 48,
            latent_dim: 256,
            base_channels: 8,
            n_down_blocks: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let div = 1usize << self.n_down_blocks;
        if self.n_down_blocks == 0 || self.input_width % div != 0 || self.input_height % div != 0 {
            return Err(Error::InvalidArgument(format!(
                "input {}x{} must be divisible by 2^{} (n_down_blocks >= 1)",
                self.input_width, self.input_height, self.n_down_blocks
            )));
        }
        if self.latent_dim == 0 || self.base_channels == 0 {
            return Err(Error::InvalidArgument("latent_dim and base_channels must be >= 1".into()));
        }
        if [self.w_adv, self.w_con, self.w_enc].iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn bottleneck(&self) -> (usize, usize, usize) {
        let div = 1 << self.n_down_blocks;
        (
            self.base_channels << (self.n_down_blocks - 1),
            self.input_height / div,
            self.input_width / div,
        )
    }
}

/// Strided conv blocks shared by the encoders and the discriminator feature stack.
fn conv_stack(cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Vec<Layer> {
    let mut layers = Vec::new();
    let mut c_in = 3;
    for b in 0..cfg.n_down_blocks {
        let c_out = cfg.base_channels << b;
        layers.push(Layer::conv(rng, c_in, c_out, 4, 2, 1, false, cfg.init_std));
        if b > 0 {
            layers.push(Layer::batch_norm(rng, c_out, cfg.init_std));
        }
        layers.push(Layer::LeakyRelu(cfg.leaky_slope));
        c_in = c_out;
    }
    layers
}

fn build_encoder(cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Sequential {
    let (c, h, w) = cfg.bottleneck();
    let mut layers = conv_stack(cfg, rng);
    layers.push(Layer::linear(rng, c * h * w, cfg.latent_dim, cfg.init_std));
    Sequential::new(layers)
}

fn build_decoder(cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Sequential {
    let (c, h, w) = cfg.bottleneck();
    let mut layers = vec![
        Layer::linear(rng, cfg.latent_dim, c * h * w, cfg.init_std),
        Layer::Reshape([c, h, w]),
        Layer::batch_norm(rng, c, cfg.init_std),
        Layer::LeakyRelu(cfg.leaky_slope),
    ];
    for b in (1..cfg.n_down_blocks).rev() {
        let c_in = cfg.base_channels << b;
        let c_out = cfg.base_channels << (b - 1);
        layers.push(Layer::conv_t(rng, c_in, c_out, 4, 2, 1, false, cfg.init_std));
        layers.push(Layer::batch_norm(rng, c_out, cfg.init_std));
        layers.push(Layer::LeakyRelu(cfg.leaky_slope));
    }
    layers.push(Layer::conv_t(rng, cfg.base_channels, 3, 4, 2, 1, true, cfg.init_std));
    layers.push(Layer::Sigmoid);
    Sequential::new(layers)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorState {
    pub encoder: Sequential,
    pub decoder: Sequential,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscriminatorState {
    pub features: Sequential,
    /// Linear map from features to a single logit.
    pub head: Sequential,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuxEncoderState {
    pub encoder: Sequential,
}

/// Images to an NCHW batch.
pub fn images_to_tensor(images: &[&ImageTensor]) -> Tensor {
    let (h, w) = images[0].dims();
    let mut t = Tensor::zeros([images.len(), 3, h, w]);
    for (i, img) in images.iter().enumerate() {
        let s = t.sample_mut(i);
        for (p, rgb) in img.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                s[c * h * w + p] = rgb[c];
            }
        }
    }
    t
}

pub fn tensor_to_images(t: &Tensor) -> Vec<ImageTensor> {
    let [n, c, h, w] = t.shape;
    assert_eq!(c, 3);
    (0..n)
        .map(|i| {
            let s = t.sample(i);
            ImageTensor::from_fn(h, w, |y, x, ch| s[ch * h * w + y * w + x])
        })
        .collect()
}

fn check_dims(cfg: &NetworkConfig, x: &ImageTensor) -> Result<()> {
    if x.dims() != (cfg.input_height, cfg.input_width) {
        return Err(Error::shape(
            format!("{}x{} (height x width)", cfg.input_height, cfg.input_width),
            format!("{}x{}", x.height(), x.width()),
        ));
    }
    Ok(())
}

/// Loss values from one generator evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLosses {
    pub adversarial: f64,
    pub contextual: f64,
    pub encoder: f64,
    pub total: f64,
}

/// Parameter gradients of the generator objective.
#[derive(Debug, Clone)]
pub struct GeneratorGrads {
    pub encoder: Grads,
    pub decoder: Grads,
    pub aux: Grads,
}

/// Cached discriminator activations so the discriminator step can reuse the
/// forward pass made during the generator step.
pub struct DiscriminatorPass {
    fx: Tensor,
    fxhat: Tensor,
    tape_x: Tape,
    tape_xhat: Tape,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ganomaly {
    pub config: NetworkConfig,
    pub generator: GeneratorState,
    pub discriminator: DiscriminatorState,
    pub aux_encoder: AuxEncoderState,
}

impl Ganomaly {
    /// Zero-mean Gaussian initialization (std `init_std`), deterministic in `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = build_encoder(&config, &mut rng);
        let decoder = build_decoder(&config, &mut rng);
        let aux = build_encoder(&config, &mut rng);
        let features = Sequential::new(conv_stack(&config, &mut rng));
        let (c, h, w) = config.bottleneck();
        let head = Sequential::new(vec![Layer::linear(&mut rng, c * h * w, 1, config.init_std)]);
        Ok(Self {
            config,
            generator: GeneratorState { encoder, decoder },
            discriminator: DiscriminatorState { features, head },
            aux_encoder: AuxEncoderState { encoder: aux },
        })
    }

    pub fn feature_len(&self) -> usize {
        let (c, h, w) = self.config.bottleneck();
        c * h * w
    }

    /// Inference-mode encoding.
    pub fn encode(&mut self, x: &ImageTensor) -> Result<LatentVector> {
        check_dims(&self.config, x)?;
        let (z, _) = self.generator.encoder.forward(&images_to_tensor(&[x]), Mode::Eval);
        Ok(z.data)
    }

    pub fn decode(&mut self, z: &[f64]) -> Result<ImageTensor> {
        if z.len() != self.config.latent_dim {
            return Err(Error::shape(self.config.latent_dim, z.len()));
        }
        let t = Tensor::from_vec([1, z.len(), 1, 1], z.to_vec());
        let (xhat, _) = self.generator.decoder.forward(&t, Mode::Eval);
        Ok(tensor_to_images(&xhat).remove(0))
    }

    pub fn reconstruct(&mut self, x: &ImageTensor) -> Result<ImageTensor> {
        let z = self.encode(x)?;
        self.decode(&z)
    }

    /// Batched inference-mode reconstruction.
    pub fn reconstruct_batch(&mut self, xs: &[&ImageTensor]) -> Result<Vec<ImageTensor>> {
        for x in xs {
            check_dims(&self.config, x)?;
        }
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let (z, _) = self.generator.encoder.forward(&images_to_tensor(xs), Mode::Eval);
        let (xhat, _) = self.generator.decoder.forward(&z, Mode::Eval);
        Ok(tensor_to_images(&xhat))
    }

    /// Auxiliary-encoder embedding of an image (inference mode).
    pub fn aux_encode(&mut self, x: &ImageTensor) -> Result<LatentVector> {
        check_dims(&self.config, x)?;
        let (z, _) = self.aux_encoder.encoder.forward(&images_to_tensor(&[x]), Mode::Eval);
        Ok(z.data)
    }

    /// Penultimate-layer features and probability that `x` is a real input.
    pub fn discriminate(&mut self, x: &ImageTensor) -> Result<(Vec<f64>, f64)> {
        check_dims(&self.config, x)?;
        let (f, _) = self.discriminator.features.forward(&images_to_tensor(&[x]), Mode::Eval);
        let (logit, _) = self.discriminator.head.forward(&f, Mode::Eval);
        Ok((f.data, sigmoid(logit.data[0])))
    }

    /// Generator objective on a batch (train-mode normalization) and its gradients
    /// with respect to generator and auxiliary-encoder parameters, using the given
    /// loss weights. Also returns the discriminator pass for reuse.
    pub fn generator_objective(
        &mut self,
        x: &Tensor,
        weights: (f64, f64, f64),
    ) -> (GeneratorLosses, GeneratorGrads, DiscriminatorPass, Tensor) {
        let (w_adv, w_con, w_enc) = weights;
        let n = x.batch();
        let (z, tape_enc) = self.generator.encoder.forward(x, Mode::Train);
        let (xhat, tape_dec) = self.generator.decoder.forward(&z, Mode::Train);
        let (zhat, tape_aux) = self.aux_encoder.encoder.forward(&xhat, Mode::Train);
        let (fx, tape_x) = self.discriminator.features.forward(x, Mode::Train);
        let (fxhat, tape_xhat) = self.discriminator.features.forward(&xhat, Mode::Train);

        let (l_con, g_con) = contextual_with_grad(x, &xhat);
        let (l_adv, g_adv) = adversarial_with_grad(&fx, &fxhat);
        let (l_enc, g_enc_z, g_enc_zhat) = encoder_with_grad(&z, &zhat);

        let mut grads = GeneratorGrads {
            encoder: Grads::zero_like(&self.generator.encoder),
            decoder: Grads::zero_like(&self.generator.decoder),
            aux: Grads::zero_like(&self.aux_encoder.encoder),
        };

        let mut dxhat = g_con;
        dxhat.scale(w_con);
        if w_adv != 0.0 {
            let mut g = g_adv;
            g.scale(w_adv);
            let via_d = self.discriminator.features.backward(&tape_xhat, g, None, true);
            dxhat.add_assign(&via_d);
        }
        let mut dz = g_enc_z;
        dz.scale(w_enc);
        if w_enc != 0.0 {
            let mut g = g_enc_zhat;
            g.scale(w_enc);
            let via_aux = self.aux_encoder.encoder.backward(&tape_aux, g, Some(&mut grads.aux), true);
            dxhat.add_assign(&via_aux);
        }
        let via_dec = self.generator.decoder.backward(&tape_dec, dxhat, Some(&mut grads.decoder), true);
        dz.add_assign(&via_dec);
        self.generator.encoder.backward(&tape_enc, dz, Some(&mut grads.encoder), false);

        let losses = GeneratorLosses {
            adversarial: l_adv,
            contextual: l_con,
            encoder: l_enc,
            total: w_adv * l_adv + w_con * l_con + w_enc * l_enc,
        };
        debug_assert_eq!(fx.batch(), n);
        (
            losses,
            grads,
            DiscriminatorPass {
                fx,
                fxhat,
                tape_x,
                tape_xhat,
            },
            xhat,
        )
    }

    /// Binary cross-entropy of the discriminator (real = 1, reconstruction = 0) and
    /// gradients with respect to its parameters, from a cached feature pass.
    pub fn discriminator_objective(&mut self, pass: &DiscriminatorPass) -> (f64, Grads, Grads) {
        let d = &mut self.discriminator;
        let mut g_feat = Grads::zero_like(&d.features);
        let mut g_head = Grads::zero_like(&d.head);
        let (lx, tape_hx) = d.head.forward(&pass.fx, Mode::Train);
        let (lxh, tape_hxh) = d.head.forward(&pass.fxhat, Mode::Train);
        let total = (lx.len() + lxh.len()) as f64;
        let mut loss = 0.0;
        let mut dlx = Tensor::zeros(lx.shape);
        let mut dlxh = Tensor::zeros(lxh.shape);
        for (i, &l) in lx.data.iter().enumerate() {
            loss += softplus(l) - l;
            dlx.data[i] = (sigmoid(l) - 1.0) / total;
        }
        for (i, &l) in lxh.data.iter().enumerate() {
            loss += softplus(l);
            dlxh.data[i] = sigmoid(l) / total;
        }
        loss /= total;
        let dfx = d.head.backward(&tape_hx, dlx, Some(&mut g_head), true);
        let dfxh = d.head.backward(&tape_hxh, dlxh, Some(&mut g_head), true);
        d.features.backward(&pass.tape_x, dfx, Some(&mut g_feat), false);
        d.features.backward(&pass.tape_xhat, dfxh, Some(&mut g_feat), false);
        (loss, g_feat, g_head)
    }

    /// Discriminator loss on a batch with reconstructions computed in train mode,
    /// treated as constants.
    pub fn discriminator_loss_on(&mut self, x: &Tensor) -> (f64, Grads, Grads) {
        let (z, _) = self.generator.encoder.forward(x, Mode::Train);
        let (xhat, _) = self.generator.decoder.forward(&z, Mode::Train);
        let (fx, tape_x) = self.discriminator.features.forward(x, Mode::Train);
        let (fxhat, tape_xhat) = self.discriminator.features.forward(&xhat, Mode::Train);
        self.discriminator_objective(&DiscriminatorPass {
            fx,
            fxhat,
            tape_x,
            tape_xhat,
        })
    }
}

#[inline]
fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn contextual_with_grad(x: &Tensor, xhat: &Tensor) -> (f64, Tensor) {
    let n = x.len() as f64;
    let mut g = Tensor::zeros(x.shape);
    let mut sum = 0.0;
    for (i, (a, b)) in x.data.iter().zip(&xhat.data).enumerate() {
        let d = b - a;
        sum += d.abs();
        g.data[i] = d.signum() / n * (d != 0.0) as u8 as f64;
    }
    (sum / n, g)
}

fn batch_mean(t: &Tensor) -> Vec<f64> {
    let n = t.batch();
    let mut m = vec![0.0; t.sample_len()];
    for i in 0..n {
        for (a, b) in m.iter_mut().zip(t.sample(i)) {
            *a += b / n as f64;
        }
    }
    m
}

/// Feature matching: L2 distance between batch-mean features; gradient w.r.t. `fxhat`.
fn adversarial_with_grad(fx: &Tensor, fxhat: &Tensor) -> (f64, Tensor) {
    let mx = batch_mean(fx);
    let mxh = batch_mean(fxhat);
    let diff: Vec<f64> = mx.iter().zip(&mxh).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    let n = fxhat.batch() as f64;
    let mut g = Tensor::zeros(fxhat.shape);
    if norm > 0.0 {
        for i in 0..fxhat.batch() {
            for (gv, d) in g.sample_mut(i).iter_mut().zip(&diff) {
                *gv = -d / (norm * n);
            }
        }
    }
    (norm, g)
}

/// Batch mean of per-sample L2 latent distances; gradients w.r.t. `z` and `zhat`.
fn encoder_with_grad(z: &Tensor, zhat: &Tensor) -> (f64, Tensor, Tensor) {
    let n = z.batch();
    let mut gz = Tensor::zeros(z.shape);
    let mut gzh = Tensor::zeros(zhat.shape);
    let mut total = 0.0;
    for i in 0..n {
        let norm = z
            .sample(i)
            .iter()
            .zip(zhat.sample(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        total += norm;
        if norm > 0.0 {
            let d: Vec<f64> = z.sample(i).iter().zip(zhat.sample(i)).map(|(a, b)| a - b).collect();
            for (j, dv) in d.iter().enumerate() {
                gz.sample_mut(i)[j] = dv / (norm * n as f64);
                gzh.sample_mut(i)[j] = -dv / (norm * n as f64);
            }
        }
    }
    (total / n as f64, gz, gzh)
}

/// Mean absolute error over all elements.
pub fn loss_contextual(x: &ImageTensor, x_hat: &ImageTensor) -> Result<f64> {
    x.ensure_same_dims(x_hat)?;
    let n = x.data().len() as f64;
    Ok(x.data().iter().zip(x_hat.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// L2 distance between (batch-averaged) feature vectors.
pub fn loss_adversarial(f_x: &[f64], f_xhat: &[f64]) -> Result<f64> {
    if f_x.len() != f_xhat.len() {
        return Err(Error::shape(f_x.len(), f_xhat.len()));
    }
    Ok(f_x.iter().zip(f_xhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// L2 distance between a latent vector and its re-encoding.
pub fn loss_encoder(z: &[f64], z_hat: &[f64]) -> Result<f64> {
    if z.len() != z_hat.len() {
        return Err(Error::shape(z.len(), z_hat.len()));
    }
    Ok(z.iter().zip(z_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

pub fn loss_generator_total(l_adv: f64, l_con: f64, l_enc: f64, cfg: &NetworkConfig) -> f64 {
    cfg.w_adv * l_adv + cfg.w_con * l_con + cfg.w_enc * l_enc
}

/// Mean binary cross-entropy with target 1 on real inputs and 0 on reconstructions.
pub fn loss_discriminator(p_real_on_x: &[f64], p_real_on_xhat: &[f64]) -> f64 {
    let n = (p_real_on_x.len() + p_real_on_xhat.len()) as f64;
    let real: f64 = p_real_on_x.iter().map(|p| -p.ln()).sum();
    let fake: f64 = p_real_on_xhat.iter().map(|p| -(1.0 - p).ln()).sum();
    (real + fake) / n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            input_width: 16,
            input_height: 16,
            latent_dim: 8,
            base_channels: 4,
            n_down_blocks: 2,
            ..NetworkConfig::default()
        }
    }

    fn textured(h: usize, w: usize, seed: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, |y, x, c| (((y * 7 + x * 13 + c * 5 + seed) % 17) as f64) / 16.0)
    }

    #[test]
    fn shapes_follow_config() {
        let mut m = Ganomaly::new(tiny(), 1).unwrap();
        let x = textured(16, 16, 0);
        let z = m.encode(&x).unwrap();
        assert_eq!(z.len(), 8);
        assert_eq!(m.aux_encode(&x).unwrap().len(), 8);
        let xhat = m.decode(&z).unwrap();
        assert_eq!(xhat.dims(), (16, 16));
        assert!(xhat.is_unit_range());
        let (f, p) = m.discriminate(&x).unwrap();
        assert_eq!(f.len(), m.feature_len());
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn three_block_config_reconstructs_full_shape() {
        let cfg = NetworkConfig {
            input_width: 64,
            input_height: 48,
            latent_dim: 16,
            base_channels: 4,
            n_down_blocks: 3,
            ..NetworkConfig::default()
        };
        let mut m = Ganomaly::new(cfg, 5).unwrap();
        let x = textured(48, 64, 3);
        let xhat = m.reconstruct(&x).unwrap();
        assert_eq!(xhat.dims(), (48, 64));
        assert!(xhat.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn inference_is_deterministic() {
        let mut m = Ganomaly::new(tiny(), 2).unwrap();
        let x = textured(16, 16, 1);
        assert_eq!(m.encode(&x).unwrap(), m.encode(&x).unwrap());
        assert_eq!(m.reconstruct(&x).unwrap(), m.reconstruct(&x).unwrap());
        assert_eq!(m.discriminate(&x).unwrap(), m.discriminate(&x).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut m = Ganomaly::new(tiny(), 3).unwrap();
        assert!(m.encode(&textured(16, 32, 0)).is_err());
        assert!(m.decode(&[0.0; 7]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny();
        cfg.input_width = 18;
        assert!(Ganomaly::new(cfg, 0).is_err());
        let mut cfg = tiny();
        cfg.w_con = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn loss_examples() {
        let zero = ImageTensor::zeros(4, 4);
        let half = ImageTensor::filled(4, 4, [0.5; 3]);
        assert_eq!(loss_contextual(&zero, &zero).unwrap(), 0.0);
        assert!((loss_contextual(&zero, &half).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(loss_adversarial(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(loss_encoder(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!(loss_encoder(&[1.0], &[1.0, 2.0]).is_err());
        let cfg = NetworkConfig::default();
        assert!((loss_generator_total(0.5, 0.01, 0.2, &cfg) - 1.1).abs() < 1e-12);
        assert!((loss_discriminator(&[0.5], &[0.5]) - std::f64::consts::LN_2).abs() < 1e-12);
        let eps = 1e-9;
        assert!(loss_discriminator(&[1.0 - eps], &[eps]) < 1e-8);
    }

    #[test]
    fn total_loss_is_linear_in_weights() {
        let mut cfg = NetworkConfig::default();
        let a = loss_generator_total(0.3, 0.2, 0.1, &cfg);
        cfg.w_adv *= 2.0;
        cfg.w_con *= 2.0;
        cfg.w_enc *= 2.0;
        assert!((loss_generator_total(0.3, 0.2, 0.1, &cfg) - 2.0 * a).abs() < 1e-12);
        assert_eq!(loss_generator_total(0.0, 0.0, 0.0, &cfg), 0.0);
    }

    #[test]
    fn batch_objective_agrees_with_public_losses() {
        let mut m = Ganomaly::new(tiny(), 4).unwrap();
        let x = textured(16, 16, 2);
        let t = images_to_tensor(&[&x]);
        let (losses, _, _, xhat_t) = m.generator_objective(&t, (1.0, 40.0, 1.0));
        let xhat = tensor_to_images(&xhat_t).remove(0);
        assert!((losses.contextual - loss_contextual(&x, &xhat).unwrap()).abs() < 1e-12);
        assert!(losses.adversarial >= 0.0 && losses.encoder >= 0.0 && losses.total >= 0.0);
    }
}
