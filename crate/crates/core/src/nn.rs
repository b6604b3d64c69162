//! Minimal CPU network engine: NCHW tensors, a handful of layers with explicit
//! backward passes, and Adam.
//!
//! Forward passes return a [`Tape`] of per-layer caches. `backward` consumes the
//! tape and accumulates parameter gradients into a [`Grads`] buffer aligned with
//! [`Sequential::params`]. Everything is `f64` so finite-difference checks stay
//! meaningful at tight tolerances.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape/data mismatch");
        Self { shape, data }
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.sample_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe in-bounds row-major views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn im2col(g: &ConvGeom, input: &[f64], cols: &mut [f64]) {
    let ncols = g.cols();
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns into `out` (not cleared).
fn col2im(g: &ConvGeom, cols: &[f64], out: &mut [f64]) {
    let ncols = g.cols();
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `out_channels x (in_channels * kernel * kernel)`
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Conv2d {
    fn geom(&self, h: usize, w: usize) -> ConvGeom {
        ConvGeom {
            channels: self.in_channels,
            height: h,
            width: w,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            out_h: (h + 2 * self.pad - self.kernel) / self.stride + 1,
            out_w: (w + 2 * self.pad - self.kernel) / self.stride + 1,
        }
    }
}

/// Transposed convolution; weight layout is `in_channels x (out_channels * k * k)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl ConvTranspose2d {
    /// Geometry of the equivalent forward convolution that maps the output back to the input.
    fn geom(&self, h: usize, w: usize) -> ConvGeom {
        ConvGeom {
            channels: self.out_channels,
            height: (h - 1) * self.stride + self.kernel - 2 * self.pad,
            width: (w - 1) * self.stride + self.kernel - 2 * self.pad,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            out_h: h,
            out_w: w,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `out_features x in_features`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Layer {
    Conv(Conv2d),
    ConvT(ConvTranspose2d),
    BatchNorm(BatchNorm),
    LeakyRelu(f64),
    Sigmoid,
    Linear(Linear),
    Reshape([usize; 3]),
}

#[derive(Debug, Clone)]
enum Cache {
    Conv { cols: Vec<Vec<f64>>, in_shape: [usize; 4] },
    ConvT { input: Tensor },
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    LeakyRelu { input: Vec<f64> },
    Sigmoid { output: Vec<f64> },
    Linear { input: Tensor },
    Reshape { in_shape: [usize; 4] },
}

/// Per-layer activation caches from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<Cache>,
}

/// Gradient buffers aligned with [`Sequential::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn zero_like(net: &Sequential) -> Self {
        Grads(net.params().iter().map(|p| vec![0.0; p.len()]).collect())
    }

    pub fn zero(&mut self) {
        for g in &mut self.0 {
            g.fill(0.0);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn gaussian_vec(rng: &mut impl Rng, n: usize, mean: f64, std: f64) -> Vec<f64> {
    let dist = Normal::new(mean, std).expect("valid normal parameters");
    (0..n).map(|_| dist.sample(rng)).collect()
}

impl Layer {
    pub fn conv(rng: &mut impl Rng, in_c: usize, out_c: usize, k: usize, s: usize, p: usize, bias: bool, std: f64) -> Self {
        Layer::Conv(Conv2d {
            in_channels: in_c,
            out_channels: out_c,
            kernel: k,
            stride: s,
            pad: p,
            weight: gaussian_vec(rng, out_c * in_c * k * k, 0.0, std),
            bias: bias.then(|| vec![0.0; out_c]),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv_t(rng: &mut impl Rng, in_c: usize, out_c: usize, k: usize, s: usize, p: usize, bias: bool, std: f64) -> Self {
        Layer::ConvT(ConvTranspose2d {
            in_channels: in_c,
            out_channels: out_c,
            kernel: k,
            stride: s,
            pad: p,
            weight: gaussian_vec(rng, in_c * out_c * k * k, 0.0, std),
            bias: bias.then(|| vec![0.0; out_c]),
        })
    }

    pub fn batch_norm(rng: &mut impl Rng, channels: usize, std: f64) -> Self {
        Layer::BatchNorm(BatchNorm {
            channels,
            gamma: gaussian_vec(rng, channels, 1.0, std),
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn linear(rng: &mut impl Rng, in_f: usize, out_f: usize, std: f64) -> Self {
        Layer::Linear(Linear {
            in_features: in_f,
            out_features: out_f,
            weight: gaussian_vec(rng, in_f * out_f, 0.0, std),
            bias: vec![0.0; out_f],
        })
    }

    fn params(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::Conv(c) => std::iter::once(&c.weight).chain(c.bias.as_ref()).collect(),
            Layer::ConvT(c) => std::iter::once(&c.weight).chain(c.bias.as_ref()).collect(),
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv(c) => std::iter::once(&mut c.weight).chain(c.bias.as_mut()).collect(),
            Layer::ConvT(c) => std::iter::once(&mut c.weight).chain(c.bias.as_mut()).collect(),
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    fn out_shape(&self, s: [usize; 4]) -> [usize; 4] {
        match self {
            Layer::Conv(c) => {
                let g = c.geom(s[2], s[3]);
                [s[0], c.out_channels, g.out_h, g.out_w]
            }
            Layer::ConvT(c) => {
                let g = c.geom(s[2], s[3]);
                [s[0], c.out_channels, g.height, g.width]
            }
            Layer::Linear(l) => [s[0], l.out_features, 1, 1],
            Layer::Reshape(r) => [s[0], r[0], r[1], r[2]],
            _ => s,
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> (Tensor, Cache) {
        match self {
            Layer::Conv(conv) => {
                assert_eq!(x.shape[1], conv.in_channels, "conv input channels");
                let g = conv.geom(x.shape[2], x.shape[3]);
                let out_shape = [x.shape[0], conv.out_channels, g.out_h, g.out_w];
                let mut out = Tensor::zeros(out_shape);
                let mut all_cols = Vec::with_capacity(x.batch());
                for i in 0..x.batch() {
                    let mut cols = vec![0.0; g.rows() * g.cols()];
                    im2col(&g, x.sample(i), &mut cols);
                    let y = out.sample_mut(i);
                    if let Some(b) = &conv.bias {
                        for (o, bv) in b.iter().enumerate() {
                            y[o * g.cols()..(o + 1) * g.cols()].fill(*bv);
                        }
                    }
                    let beta = if conv.bias.is_some() { 1.0 } else { 0.0 };
                    gemm(conv.out_channels, g.rows(), g.cols(), 1.0, &conv.weight, false, &cols, false, beta, y);
                    all_cols.push(cols);
                }
                (
                    out,
                    Cache::Conv {
                        cols: all_cols,
                        in_shape: x.shape,
                    },
                )
            }
            Layer::ConvT(conv) => {
                assert_eq!(x.shape[1], conv.in_channels, "conv-transpose input channels");
                let g = conv.geom(x.shape[2], x.shape[3]);
                let mut out = Tensor::zeros([x.shape[0], conv.out_channels, g.height, g.width]);
                let mut cols = vec![0.0; g.rows() * g.cols()];
                for i in 0..x.batch() {
                    gemm(g.rows(), conv.in_channels, g.cols(), 1.0, &conv.weight, true, x.sample(i), false, 0.0, &mut cols);
                    let y = out.sample_mut(i);
                    col2im(&g, &cols, y);
                    if let Some(b) = &conv.bias {
                        let plane = g.height * g.width;
                        for (o, bv) in b.iter().enumerate() {
                            for v in &mut y[o * plane..(o + 1) * plane] {
                                *v += bv;
                            }
                        }
                    }
                }
                (out, Cache::ConvT { input: x.clone() })
            }
            Layer::BatchNorm(bn) => {
                let [n, c, h, w] = x.shape;
                assert_eq!(c, bn.channels, "batch-norm channels");
                let plane = h * w;
                let count = (n * plane) as f64;
                let mut out = Tensor::zeros(x.shape);
                let mut xhat = vec![0.0; x.len()];
                let mut inv_std = vec![0.0; c];
                for ch in 0..c {
                    let (mean, var) = match mode {
                        Mode::Train => {
                            let mut sum = 0.0;
                            for i in 0..n {
                                sum += x.sample(i)[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
                            }
                            let mean = sum / count;
                            let mut sq = 0.0;
                            for i in 0..n {
                                sq += x.sample(i)[ch * plane..(ch + 1) * plane]
                                    .iter()
                                    .map(|v| (v - mean) * (v - mean))
                                    .sum::<f64>();
                            }
                            let var = sq / count;
                            let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
                            bn.running_mean[ch] = (1.0 - bn.momentum) * bn.running_mean[ch] + bn.momentum * mean;
                            bn.running_var[ch] = (1.0 - bn.momentum) * bn.running_var[ch] + bn.momentum * unbiased;
                            (mean, var)
                        }
                        Mode::Eval => (bn.running_mean[ch], bn.running_var[ch]),
                    };
                    let istd = 1.0 / (var + bn.eps).sqrt();
                    inv_std[ch] = istd;
                    for i in 0..n {
                        let base = i * c * plane + ch * plane;
                        for j in base..base + plane {
                            let xh = (x.data[j] - mean) * istd;
                            xhat[j] = xh;
                            out.data[j] = bn.gamma[ch] * xh + bn.beta[ch];
                        }
                    }
                }
                (
                    out,
                    Cache::BatchNorm {
                        xhat,
                        inv_std,
                        train: mode == Mode::Train,
                    },
                )
            }
            Layer::LeakyRelu(slope) => {
                let s = *slope;
                let out = Tensor::from_vec(x.shape, x.data.iter().map(|&v| if v > 0.0 { v } else { s * v }).collect());
                (out, Cache::LeakyRelu { input: x.data.clone() })
            }
            Layer::Sigmoid => {
                let out = Tensor::from_vec(x.shape, x.data.iter().map(|&v| sigmoid(v)).collect());
                let output = out.data.clone();
                (out, Cache::Sigmoid { output })
            }
            Layer::Linear(lin) => {
                let n = x.batch();
                assert_eq!(x.sample_len(), lin.in_features, "linear input features");
                let mut out = Tensor::zeros([n, lin.out_features, 1, 1]);
                for i in 0..n {
                    out.sample_mut(i).copy_from_slice(&lin.bias);
                }
                gemm(n, lin.in_features, lin.out_features, 1.0, &x.data, false, &lin.weight, true, 1.0, &mut out.data);
                (out, Cache::Linear { input: x.clone() })
            }
            Layer::Reshape(r) => {
                assert_eq!(x.sample_len(), r.iter().product::<usize>(), "reshape size");
                let out = Tensor::from_vec([x.batch(), r[0], r[1], r[2]], x.data.clone());
                (out, Cache::Reshape { in_shape: x.shape })
            }
        }
    }

    /// Returns the input gradient (empty tensor when `need_input` is false).
    fn backward(&self, cache: &Cache, grad: &Tensor, mut pgrads: Option<&mut [Vec<f64>]>, need_input: bool) -> Tensor {
        match (self, cache) {
            (Layer::Conv(conv), Cache::Conv { cols, in_shape }) => {
                let g = conv.geom(in_shape[2], in_shape[3]);
                let mut dx = if need_input { Tensor::zeros(*in_shape) } else { Tensor::zeros([0, 0, 0, 0]) };
                let mut dcols = vec![0.0; g.rows() * g.cols()];
                for (i, cols) in cols.iter().enumerate() {
                    let dy = grad.sample(i);
                    if let Some(pg) = pgrads.as_deref_mut() {
                        gemm(conv.out_channels, g.cols(), g.rows(), 1.0, dy, false, cols, true, 1.0, &mut pg[0]);
                        if conv.bias.is_some() {
                            for o in 0..conv.out_channels {
                                pg[1][o] += dy[o * g.cols()..(o + 1) * g.cols()].iter().sum::<f64>();
                            }
                        }
                    }
                    if need_input {
                        gemm(g.rows(), conv.out_channels, g.cols(), 1.0, &conv.weight, true, dy, false, 0.0, &mut dcols);
                        col2im(&g, &dcols, dx.sample_mut(i));
                    }
                }
                dx
            }
            (Layer::ConvT(conv), Cache::ConvT { input }) => {
                let g = conv.geom(input.shape[2], input.shape[3]);
                let mut dx = if need_input { Tensor::zeros(input.shape) } else { Tensor::zeros([0, 0, 0, 0]) };
                let mut dcols = vec![0.0; g.rows() * g.cols()];
                let plane = g.height * g.width;
                for i in 0..input.batch() {
                    let dy = grad.sample(i);
                    im2col(&g, dy, &mut dcols);
                    if let Some(pg) = pgrads.as_deref_mut() {
                        gemm(conv.in_channels, g.cols(), g.rows(), 1.0, input.sample(i), false, &dcols, true, 1.0, &mut pg[0]);
                        if conv.bias.is_some() {
                            for o in 0..conv.out_channels {
                                pg[1][o] += dy[o * plane..(o + 1) * plane].iter().sum::<f64>();
                            }
                        }
                    }
                    if need_input {
                        gemm(conv.in_channels, g.rows(), g.cols(), 1.0, &conv.weight, false, &dcols, false, 0.0, dx.sample_mut(i));
                    }
                }
                dx
            }
            (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std, train }) => {
                let [n, c, h, w] = grad.shape;
                let plane = h * w;
                let count = (n * plane) as f64;
                let mut dx = Tensor::zeros(grad.shape);
                for ch in 0..c {
                    let idx = (0..n).flat_map(|i| {
                        let base = i * c * plane + ch * plane;
                        base..base + plane
                    });
                    let mut sum_dy = 0.0;
                    let mut sum_dy_xhat = 0.0;
                    for j in idx.clone() {
                        sum_dy += grad.data[j];
                        sum_dy_xhat += grad.data[j] * xhat[j];
                    }
                    if let Some(pg) = pgrads.as_deref_mut() {
                        pg[0][ch] += sum_dy_xhat;
                        pg[1][ch] += sum_dy;
                    }
                    if need_input {
                        let gamma = bn.gamma[ch];
                        let istd = inv_std[ch];
                        if *train {
                            for j in idx {
                                dx.data[j] =
                                    gamma * istd * (grad.data[j] - sum_dy / count - xhat[j] * sum_dy_xhat / count);
                            }
                        } else {
                            for j in idx {
                                dx.data[j] = gamma * istd * grad.data[j];
                            }
                        }
                    }
                }
                dx
            }
            (Layer::LeakyRelu(slope), Cache::LeakyRelu { input }) => Tensor::from_vec(
                grad.shape,
                grad.data
                    .iter()
                    .zip(input)
                    .map(|(&g, &x)| if x > 0.0 { g } else { slope * g })
                    .collect(),
            ),
            (Layer::Sigmoid, Cache::Sigmoid { output }) => Tensor::from_vec(
                grad.shape,
                grad.data.iter().zip(output).map(|(&g, &y)| g * y * (1.0 - y)).collect(),
            ),
            (Layer::Linear(lin), Cache::Linear { input }) => {
                let n = input.batch();
                if let Some(pg) = pgrads.as_deref_mut() {
                    gemm(lin.out_features, n, lin.in_features, 1.0, &grad.data, true, &input.data, false, 1.0, &mut pg[0]);
                    for i in 0..n {
                        for (b, g) in pg[1].iter_mut().zip(grad.sample(i)) {
                            *b += g;
                        }
                    }
                }
                if need_input {
                    let mut dx = Tensor::zeros(input.shape);
                    gemm(n, lin.out_features, lin.in_features, 1.0, &grad.data, false, &lin.weight, false, 0.0, &mut dx.data);
                    dx
                } else {
                    Tensor::zeros([0, 0, 0, 0])
                }
            }
            (Layer::Reshape(_), Cache::Reshape { in_shape }) => Tensor::from_vec(*in_shape, grad.data.clone()),
            _ => unreachable!("tape does not match layer"),
        }
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn out_shape(&self, input: [usize; 4]) -> [usize; 4] {
        self.layers.iter().fold(input, |s, l| l.out_shape(s))
    }

    /// Named parameter and buffer arrays, in a stable order, for persistence.
    pub fn named_arrays(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(Conv2d { weight, bias, .. }) | Layer::ConvT(ConvTranspose2d { weight, bias, .. }) => {
                    out.push((format!("{i}.weight"), weight));
                    if let Some(b) = bias {
                        out.push((format!("{i}.bias"), b));
                    }
                }
                Layer::BatchNorm(b) => {
                    out.push((format!("{i}.gamma"), &b.gamma));
                    out.push((format!("{i}.beta"), &b.beta));
                    out.push((format!("{i}.running_mean"), &b.running_mean));
                    out.push((format!("{i}.running_var"), &b.running_var));
                }
                Layer::Linear(l) => {
                    out.push((format!("{i}.weight"), &l.weight));
                    out.push((format!("{i}.bias"), &l.bias));
                }
                _ => {}
            }
        }
        out
    }

    pub fn named_arrays_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv(Conv2d { weight, bias, .. }) | Layer::ConvT(ConvTranspose2d { weight, bias, .. }) => {
                    out.push((format!("{i}.weight"), weight));
                    if let Some(b) = bias {
                        out.push((format!("{i}.bias"), b));
                    }
                }
                Layer::BatchNorm(b) => {
                    out.push((format!("{i}.gamma"), &mut b.gamma));
                    out.push((format!("{i}.beta"), &mut b.beta));
                    out.push((format!("{i}.running_mean"), &mut b.running_mean));
                    out.push((format!("{i}.running_var"), &mut b.running_var));
                }
                Layer::Linear(l) => {
                    out.push((format!("{i}.weight"), &mut l.weight));
                    out.push((format!("{i}.bias"), &mut l.bias));
                }
                _ => {}
            }
        }
        out
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> (Tensor, Tape) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur: Option<Tensor> = None;
        for layer in &mut self.layers {
            let (out, cache) = layer.forward(cur.as_ref().unwrap_or(x), mode);
            caches.push(cache);
            cur = Some(out);
        }
        (cur.unwrap_or_else(|| x.clone()), Tape { caches })
    }

    /// Back-propagates `grad` through the tape. Parameter gradients are added to
    /// `grads` when given; the returned input gradient is empty unless `need_input`.
    pub fn backward(&self, tape: &Tape, grad: Tensor, mut grads: Option<&mut Grads>, need_input: bool) -> Tensor {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.params().len();
        }
        let mut cur = grad;
        for (idx, (layer, cache)) in self.layers.iter().zip(&tape.caches).enumerate().rev() {
            let np = layer.params().len();
            let pg = grads
                .as_deref_mut()
                .map(|g| &mut g.0[offsets[idx]..offsets[idx] + np]);
            let input_needed = need_input || idx > 0;
            cur = layer.backward(cache, &cur, pg, input_needed);
        }
        cur
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Adam with L2-style weight decay (decay term added to the gradient).
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, net: &Sequential) -> Self {
        let m: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            cfg,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step(&mut self, net: &mut Sequential, grads: &Grads) {
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, g), m), v) in net.params_mut().into_iter().zip(&grads.0).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i] + c.weight_decay * p[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(x: &[f64], c: &Conv2d, h: usize, w: usize) -> (Vec<f64>, usize, usize) {
        let oh = (h + 2 * c.pad - c.kernel) / c.stride + 1;
        let ow = (w + 2 * c.pad - c.kernel) / c.stride + 1;
        let mut out = vec![0.0; c.out_channels * oh * ow];
        for o in 0..c.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = c.bias.as_ref().map_or(0.0, |b| b[o]);
                    for i in 0..c.in_channels {
                        for ky in 0..c.kernel {
                            for kx in 0..c.kernel {
                                let iy = (oy * c.stride + ky) as isize - c.pad as isize;
                                let ix = (ox * c.stride + kx) as isize - c.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    let wv = c.weight[((o * c.in_channels + i) * c.kernel + ky) * c.kernel + kx];
                                    s += wv * x[(i * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = s;
                }
            }
        }
        (out, oh, ow)
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Layer::conv(&mut rng, 2, 3, 4, 2, 1, true, 0.5);
        let Layer::Conv(ref conv) = layer else { unreachable!() };
        let mut conv = conv.clone();
        conv.bias = Some(vec![0.1, -0.2, 0.3]);
        let x: Vec<f64> = (0..2 * 6 * 8).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let (expected, oh, ow) = naive_conv(&x, &conv, 6, 8);
        let mut seq = Sequential::new(vec![Layer::Conv(conv)]);
        let (y, _) = seq.forward(&Tensor::from_vec([1, 2, 6, 8], x), Mode::Train);
        assert_eq!(y.shape, [1, 3, oh, ow]);
        for (a, b) in y.data.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> when both share the same kernel and no bias.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let Layer::Conv(conv) = Layer::conv(&mut rng, 2, 3, 4, 2, 1, false, 0.5) else { unreachable!() };
        // conv: (in=2 -> out=3) weight [3][2*16]; conv_t (in=3 -> out=2) weight [3][2*16] has the same layout.
        let convt = ConvTranspose2d {
            in_channels: 3,
            out_channels: 2,
            kernel: 4,
            stride: 2,
            pad: 1,
            weight: conv.weight.clone(),
            bias: None,
        };
        let x: Vec<f64> = (0..2 * 8 * 6).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let y: Vec<f64> = (0..3 * 4 * 3).map(|i| ((i * 5) % 9) as f64 / 4.0).collect();
        let mut a = Sequential::new(vec![Layer::Conv(conv)]);
        let mut b = Sequential::new(vec![Layer::ConvT(convt)]);
        let (cx, _) = a.forward(&Tensor::from_vec([1, 2, 8, 6], x.clone()), Mode::Train);
        let (ty, _) = b.forward(&Tensor::from_vec([1, 3, 4, 3], y.clone()), Mode::Train);
        assert_eq!(ty.shape, [1, 2, 8, 6]);
        let lhs: f64 = cx.data.iter().zip(&y).map(|(p, q)| p * q).sum();
        let rhs: f64 = x.iter().zip(&ty.data).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn batch_norm_normalizes_in_train_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let Layer::BatchNorm(mut bn) = Layer::batch_norm(&mut rng, 2, 0.0) else { unreachable!() };
        bn.gamma = vec![1.0, 1.0];
        let mut seq = Sequential::new(vec![Layer::BatchNorm(bn)]);
        let x = Tensor::from_vec([2, 2, 1, 2], vec![1.0, 3.0, 10.0, 20.0, 5.0, 7.0, 30.0, 40.0]);
        let (y, _) = seq.forward(&x, Mode::Train);
        let ch0: Vec<f64> = vec![y.data[0], y.data[1], y.data[4], y.data[5]];
        let mean: f64 = ch0.iter().sum::<f64>() / 4.0;
        let var: f64 = ch0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Sequential::new(vec![Layer::linear(&mut rng, 2, 1, 0.1)]);
        let before = net.params()[0].clone();
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.01,
                beta1: 0.5,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.0,
            },
            &net,
        );
        let grads = Grads(vec![vec![1.0, -1.0], vec![0.0]]);
        opt.step(&mut net, &grads);
        let after = net.params()[0].clone();
        assert!((after[0] - (before[0] - 0.01)).abs() < 1e-6);
        assert!((after[1] - (before[1] + 0.01)).abs() < 1e-6);
    }
}
