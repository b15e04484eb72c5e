//! Inference-only layers. Convolutions are lowered to one GEMM per kernel
//! offset: the input is gathered at that offset into an `in × positions`
//! matrix and multiplied by the `out × in` weight slice.

use rand::Rng as _;

use super::tensor::TensorCTF;
use crate::error::{Error, Result};
use crate::seed::rng_for;

pub(crate) type Visit<'a> = dyn FnMut(&str, &[usize], &[f32]) + 'a;
pub(crate) type VisitMut<'a> = dyn FnMut(&str, &[usize], &mut Vec<f32>) + 'a;

fn kaiming_uniform(seed: u64, name: &str, len: usize, fan_in: usize) -> Vec<f32> {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    let mut rng = rng_for(seed, &[name]);
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// `c = a·b + c` for row-major `m×k` times `k×n`.
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the slices hold exactly m·k, k·n and m·n elements with the
    // row-major strides passed below.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    /// Regular convolution with the given stride.
    Conv { stride: usize },
    /// Transposed convolution with stride 2 that exactly doubles both axes.
    Deconv2x,
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub kind: ConvKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out][in][k][k]` for convolutions, `[in][out][k][k]` for deconvolutions.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn new(kind: ConvKind, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Conv2d {
            kind,
            in_channels,
            out_channels,
            kernel,
            weight: vec![0.0; in_channels * out_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub(crate) fn init(&mut self, seed: u64, name: &str) {
        let fan_in = self.in_channels * self.kernel * self.kernel;
        self.weight = kaiming_uniform(seed, &format!("{name}.weight"), self.weight.len(), fan_in);
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        match self.kind {
            ConvKind::Conv { .. } => [self.out_channels, self.in_channels, self.kernel, self.kernel],
            ConvKind::Deconv2x => [self.in_channels, self.out_channels, self.kernel, self.kernel],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn output_shape(&self, time: usize, freq: usize) -> (usize, usize) {
        let k = self.kernel;
        let p = self.pad();
        match self.kind {
            ConvKind::Conv { stride } => ((time + 2 * p - k) / stride + 1, (freq + 2 * p - k) / stride + 1),
            ConvKind::Deconv2x => (2 * time, 2 * freq),
        }
    }

    pub fn forward(&self, x: &TensorCTF) -> Result<TensorCTF> {
        if x.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "convolution expects {} channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        match self.kind {
            ConvKind::Conv { stride } => Ok(self.conv(x, stride)),
            ConvKind::Deconv2x => Ok(self.deconv(x)),
        }
    }

    fn conv(&self, x: &TensorCTF, stride: usize) -> TensorCTF {
        let (h, w) = (x.time(), x.freq());
        let (ho, wo) = self.output_shape(h, w);
        let (cin, cout, k, p) = (self.in_channels, self.out_channels, self.kernel, self.pad() as isize);
        let positions = ho * wo;

        let mut out = TensorCTF::zeros(cout, ho, wo);
        for (co, plane) in out.data_mut().chunks_exact_mut(positions).enumerate() {
            plane.iter_mut().for_each(|v| *v = self.bias[co]);
        }
        let mut gathered = vec![0f32; cin * positions];
        let mut wslice = vec![0f32; cout * cin];
        for a in 0..k {
            for b in 0..k {
                for co in 0..cout {
                    for ci in 0..cin {
                        wslice[co * cin + ci] = self.weight[((co * cin + ci) * k + a) * k + b];
                    }
                }
                for ci in 0..cin {
                    let src = x.plane(ci);
                    let dst = &mut gathered[ci * positions..(ci + 1) * positions];
                    for y in 0..ho {
                        let iy = (y * stride) as isize + a as isize - p;
                        let row = &mut dst[y * wo..(y + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            row.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        for (xo, v) in row.iter_mut().enumerate() {
                            let ix = (xo * stride) as isize + b as isize - p;
                            *v = if ix < 0 || ix >= w as isize { 0.0 } else { src_row[ix as usize] };
                        }
                    }
                }
                gemm_acc(cout, cin, positions, &wslice, &gathered, out.data_mut());
            }
        }
        out
    }

    fn deconv(&self, x: &TensorCTF) -> TensorCTF {
        let (h, w) = (x.time(), x.freq());
        let (ho, wo) = self.output_shape(h, w);
        let (cin, cout, k, p) = (self.in_channels, self.out_channels, self.kernel, self.pad() as isize);
        let positions = h * w;

        let mut out = TensorCTF::zeros(cout, ho, wo);
        for (co, plane) in out.data_mut().chunks_exact_mut(ho * wo).enumerate() {
            plane.iter_mut().for_each(|v| *v = self.bias[co]);
        }
        let mut wslice = vec![0f32; cout * cin];
        let mut contrib = vec![0f32; cout * positions];
        for a in 0..k {
            for b in 0..k {
                for co in 0..cout {
                    for ci in 0..cin {
                        wslice[co * cin + ci] = self.weight[((ci * cout + co) * k + a) * k + b];
                    }
                }
                contrib.iter_mut().for_each(|v| *v = 0.0);
                gemm_acc(cout, cin, positions, &wslice, x.data(), &mut contrib);
                let od = out.data_mut();
                for co in 0..cout {
                    let src = &contrib[co * positions..(co + 1) * positions];
                    let dst = &mut od[co * ho * wo..(co + 1) * ho * wo];
                    for i in 0..h {
                        let oy = (2 * i) as isize + a as isize - p;
                        if oy < 0 || oy >= ho as isize {
                            continue;
                        }
                        let drow = &mut dst[oy as usize * wo..(oy as usize + 1) * wo];
                        for j in 0..w {
                            let ox = (2 * j) as isize + b as isize - p;
                            if ox >= 0 && ox < wo as isize {
                                drow[ox as usize] += src[i * w + j];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub(crate) fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        f(&format!("{prefix}.weight"), &self.weight_shape(), &self.weight);
        f(&format!("{prefix}.bias"), &[self.out_channels], &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        let shape = self.weight_shape();
        f(&format!("{prefix}.weight"), &shape, &mut self.weight);
        f(&format!("{prefix}.bias"), &[self.out_channels], &mut self.bias);
    }
}

/// Batch normalization with stored statistics (inference semantics).
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
        }
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    pub fn forward_in_place(&self, x: &mut TensorCTF) {
        let n = x.time() * x.freq();
        for (c, plane) in x.data_mut().chunks_exact_mut(n).enumerate() {
            let scale = self.gamma[c] / (self.running_var[c] + self.eps).sqrt();
            let shift = self.beta[c] - self.running_mean[c] * scale;
            plane.iter_mut().for_each(|v| *v = *v * scale + shift);
        }
    }

    pub(crate) fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        let c = [self.gamma.len()];
        f(&format!("{prefix}.gamma"), &c, &self.gamma);
        f(&format!("{prefix}.beta"), &c, &self.beta);
        f(&format!("{prefix}.running_mean"), &c, &self.running_mean);
        f(&format!("{prefix}.running_var"), &c, &self.running_var);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        let c = [self.gamma.len()];
        f(&format!("{prefix}.gamma"), &c, &mut self.gamma);
        f(&format!("{prefix}.beta"), &c, &mut self.beta);
        f(&format!("{prefix}.running_mean"), &c, &mut self.running_mean);
        f(&format!("{prefix}.running_var"), &c, &mut self.running_var);
    }
}

/// Fully connected layer, `weight` is `[out][in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Linear {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }

    pub(crate) fn init(&mut self, seed: u64, name: &str) {
        self.weight = kaiming_uniform(seed, &format!("{name}.weight"), self.weight.len(), self.in_features);
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        self.weight
            .chunks_exact(self.in_features)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>() + b)
            .collect()
    }

    pub(crate) fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        f(&format!("{prefix}.weight"), &[self.out_features, self.in_features], &self.weight);
        f(&format!("{prefix}.bias"), &[self.out_features], &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        let shape = [self.out_features, self.in_features];
        f(&format!("{prefix}.weight"), &shape, &mut self.weight);
        f(&format!("{prefix}.bias"), &[self.out_features], &mut self.bias);
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Squeeze-and-excitation channel gate.
#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub reduce: Linear,
    pub expand: Linear,
}

impl SqueezeExcite {
    pub fn new(channels: usize, reduction: usize) -> Self {
        let hidden = (channels / reduction).max(1);
        SqueezeExcite {
            reduce: Linear::new(channels, hidden),
            expand: Linear::new(hidden, channels),
        }
    }

    /// Per-channel multipliers in (0, 1).
    pub fn gates(&self, x: &TensorCTF) -> Vec<f32> {
        let n = (x.time() * x.freq()) as f64;
        let pooled: Vec<f32> = (0..x.channels())
            .map(|c| (x.plane(c).iter().map(|&v| f64::from(v)).sum::<f64>() / n) as f32)
            .collect();
        let hidden: Vec<f32> = self.reduce.forward(&pooled).into_iter().map(|v| v.max(0.0)).collect();
        self.expand.forward(&hidden).into_iter().map(sigmoid).collect()
    }

    pub fn forward_in_place(&self, x: &mut TensorCTF) {
        let gates = self.gates(x);
        let n = x.time() * x.freq();
        for (plane, g) in x.data_mut().chunks_exact_mut(n).zip(gates) {
            plane.iter_mut().for_each(|v| *v *= g);
        }
    }

    pub fn param_count(&self) -> usize {
        self.reduce.param_count() + self.expand.param_count()
    }
}

/// Convolution (or transposed convolution), batch norm, ReLU, then SE gating.
#[derive(Debug, Clone)]
pub struct SeConvBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub se: SqueezeExcite,
}

impl SeConvBlock {
    pub fn new(kind: ConvKind, in_c: usize, out_c: usize, kernel: usize, se_reduction: usize) -> Self {
        SeConvBlock {
            conv: Conv2d::new(kind, in_c, out_c, kernel),
            bn: BatchNorm::identity(out_c),
            se: SqueezeExcite::new(out_c, se_reduction),
        }
    }

    pub(crate) fn init(&mut self, seed: u64, name: &str) {
        self.conv.init(seed, &format!("{name}.conv"));
        self.se.reduce.init(seed, &format!("{name}.se.reduce"));
        self.se.expand.init(seed, &format!("{name}.se.expand"));
    }

    pub fn forward(&self, x: &TensorCTF) -> Result<TensorCTF> {
        let mut y = self.conv.forward(x)?;
        self.bn.forward_in_place(&mut y);
        y.relu_in_place();
        self.se.forward_in_place(&mut y);
        Ok(y)
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count() + self.se.param_count()
    }

    pub(crate) fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        self.conv.visit(&format!("{prefix}.conv"), f);
        self.bn.visit(&format!("{prefix}.bn"), f);
        self.se.reduce.visit(&format!("{prefix}.se.reduce"), f);
        self.se.expand.visit(&format!("{prefix}.se.expand"), f);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        self.conv.visit_mut(&format!("{prefix}.conv"), f);
        self.bn.visit_mut(&format!("{prefix}.bn"), f);
        self.se.reduce.visit_mut(&format!("{prefix}.se.reduce"), f);
        self.se.expand.visit_mut(&format!("{prefix}.se.expand"), f);
    }
}

/// Post-activation basic block: `relu(bn2(conv2(relu(bn1(conv1(x))))) + x)`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
}

impl ResidualBlock {
    pub fn new(channels: usize) -> Self {
        let conv = || Conv2d::new(ConvKind::Conv { stride: 1 }, channels, channels, 3);
        ResidualBlock {
            conv1: conv(),
            bn1: BatchNorm::identity(channels),
            conv2: conv(),
            bn2: BatchNorm::identity(channels),
        }
    }

    pub(crate) fn init(&mut self, seed: u64, name: &str) {
        self.conv1.init(seed, &format!("{name}.conv1"));
        self.conv2.init(seed, &format!("{name}.conv2"));
    }

    pub fn forward(&self, x: &TensorCTF) -> Result<TensorCTF> {
        let mut y = self.conv1.forward(x)?;
        self.bn1.forward_in_place(&mut y);
        y.relu_in_place();
        let mut y = self.conv2.forward(&y)?;
        self.bn2.forward_in_place(&mut y);
        y.add_assign(x)?;
        y.relu_in_place();
        Ok(y)
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.bn1.param_count() + self.conv2.param_count() + self.bn2.param_count()
    }

    pub(crate) fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        self.conv1.visit(&format!("{prefix}.conv1"), f);
        self.bn1.visit(&format!("{prefix}.bn1"), f);
        self.conv2.visit(&format!("{prefix}.conv2"), f);
        self.bn2.visit(&format!("{prefix}.bn2"), f);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        self.conv1.visit_mut(&format!("{prefix}.conv1"), f);
        self.bn1.visit_mut(&format!("{prefix}.bn1"), f);
        self.conv2.visit_mut(&format!("{prefix}.conv2"), f);
        self.bn2.visit_mut(&format!("{prefix}.bn2"), f);
    }
}

/// Temporal standard deviation pooling: population std over time for every
/// (channel, frequency) cell, flattened channel-major.
pub fn tsdp(x: &TensorCTF) -> Result<Vec<f32>> {
    let (c, t, f) = x.shape();
    if t < 2 {
        return Err(Error::DegenerateTime(t));
    }
    let mut out = Vec::with_capacity(c * f);
    for ch in 0..c {
        let plane = x.plane(ch);
        for fr in 0..f {
            let mean = (0..t).map(|ti| f64::from(plane[ti * f + fr])).sum::<f64>() / t as f64;
            let var = (0..t)
                .map(|ti| {
                    let d = f64::from(plane[ti * f + fr]) - mean;
                    d * d
                })
                .sum::<f64>()
                / t as f64;
            out.push(var.sqrt() as f32);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_tensor(c: usize, t: usize, f: usize, seed: u64) -> TensorCTF {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        TensorCTF::new(c, t, f, (0..c * t * f).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop convolution with zero padding `k/2`.
    fn naive_conv(x: &TensorCTF, conv: &Conv2d, stride: usize) -> TensorCTF {
        let (ho, wo) = conv.output_shape(x.time(), x.freq());
        let k = conv.kernel;
        let p = (k / 2) as isize;
        let mut out = TensorCTF::zeros(conv.out_channels, ho, wo);
        let od = out.data_mut();
        for co in 0..conv.out_channels {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut acc = f64::from(conv.bias[co]);
                    for ci in 0..conv.in_channels {
                        for a in 0..k {
                            for b in 0..k {
                                let iy = (y * stride) as isize + a as isize - p;
                                let ix = (xo * stride) as isize + b as isize - p;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.time() && (ix as usize) < x.freq() {
                                    acc += f64::from(conv.weight[((co * conv.in_channels + ci) * k + a) * k + b])
                                        * f64::from(x.at(ci, iy as usize, ix as usize));
                                }
                            }
                        }
                    }
                    od[(co * ho + y) * wo + xo] = acc as f32;
                }
            }
        }
        out
    }

    /// Scatter definition of a stride-2 transposed convolution.
    fn naive_deconv(x: &TensorCTF, conv: &Conv2d) -> TensorCTF {
        let (ho, wo) = conv.output_shape(x.time(), x.freq());
        let k = conv.kernel;
        let p = (k / 2) as isize;
        let mut acc = vec![0f64; conv.out_channels * ho * wo];
        for co in 0..conv.out_channels {
            acc[co * ho * wo..(co + 1) * ho * wo].iter_mut().for_each(|v| *v = f64::from(conv.bias[co]));
        }
        for ci in 0..conv.in_channels {
            for i in 0..x.time() {
                for j in 0..x.freq() {
                    for co in 0..conv.out_channels {
                        for a in 0..k {
                            for b in 0..k {
                                let oy = 2 * i as isize + a as isize - p;
                                let ox = 2 * j as isize + b as isize - p;
                                if oy >= 0 && ox >= 0 && (oy as usize) < ho && (ox as usize) < wo {
                                    acc[(co * ho + oy as usize) * wo + ox as usize] += f64::from(
                                        conv.weight[((ci * conv.out_channels + co) * k + a) * k + b],
                                    ) * f64::from(x.at(ci, i, j));
                                }
                            }
                        }
                    }
                }
            }
        }
        TensorCTF::new(conv.out_channels, ho, wo, acc.into_iter().map(|v| v as f32).collect()).unwrap()
    }

    fn assert_close(a: &TensorCTF, b: &TensorCTF, tol: f32) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn conv_matches_naive() {
        for (stride, k) in [(1, 3), (2, 3), (1, 7)] {
            let mut conv = Conv2d::new(ConvKind::Conv { stride }, 3, 5, k);
            conv.init(11, "c");
            conv.bias = vec![0.1, -0.2, 0.3, 0.0, 0.5];
            let x = random_tensor(3, 8, 6, 1);
            assert_close(&conv.forward(&x).unwrap(), &naive_conv(&x, &conv, stride), 1e-5);
        }
    }

    #[test]
    fn deconv_matches_naive_and_doubles() {
        let mut conv = Conv2d::new(ConvKind::Deconv2x, 4, 3, 3);
        conv.init(5, "d");
        conv.bias = vec![0.25, -0.5, 1.0];
        let x = random_tensor(4, 5, 3, 2);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), (3, 10, 6));
        assert_close(&y, &naive_deconv(&x, &conv), 1e-5);
    }

    #[test]
    fn one_by_one_spatial_conv_by_hand() {
        // On a 1x1 input only the kernel centre touches data.
        let mut conv = Conv2d::new(ConvKind::Conv { stride: 1 }, 2, 1, 3);
        conv.weight[4] = 2.0;
        conv.weight[9 + 4] = -3.0;
        conv.weight[0] = 100.0;
        conv.bias = vec![0.5];
        let x = TensorCTF::new(2, 1, 1, vec![1.5, 0.25]).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.5 + 2.0 * 1.5 - 3.0 * 0.25]);

        let mut block = SeConvBlock::new(ConvKind::Conv { stride: 1 }, 2, 1, 3, 1);
        block.conv = conv;
        block.bn.gamma = vec![2.0];
        block.bn.beta = vec![1.0];
        block.bn.eps = 0.0;
        block.se.reduce.weight = vec![1.0];
        block.se.expand.weight = vec![0.5];
        let pre = ((0.5f32 + 3.0 - 0.75) * 2.0 + 1.0).max(0.0);
        let gate = 1.0 / (1.0 + (-(0.5 * pre.max(0.0))).exp());
        let out = block.forward(&x).unwrap();
        assert!((out.data()[0] - pre * gate).abs() < 1e-6);
    }

    #[test]
    fn saturated_gate_is_plain_conv_bn_relu() {
        let mut block = SeConvBlock::new(ConvKind::Conv { stride: 1 }, 2, 4, 3, 2);
        block.init(3, "b");
        block.se.reduce.weight.iter_mut().for_each(|w| *w = 0.0);
        block.se.expand.weight.iter_mut().for_each(|w| *w = 0.0);
        block.se.expand.bias = vec![50.0; 4];
        let x = random_tensor(2, 6, 4, 8);
        let mut plain = block.conv.forward(&x).unwrap();
        block.bn.forward_in_place(&mut plain);
        plain.relu_in_place();
        assert_eq!(block.forward(&x).unwrap(), plain);
    }

    #[test]
    fn zero_input_gates_follow_bias_path() {
        let mut block = SeConvBlock::new(ConvKind::Conv { stride: 1 }, 3, 4, 3, 2);
        block.init(3, "b");
        block.se.reduce.bias = vec![0.3, -0.1];
        block.se.expand.bias = vec![0.1, 0.2, -0.3, 0.4];
        let x = TensorCTF::zeros(3, 5, 5);
        let mut pre = block.conv.forward(&x).unwrap();
        assert!(pre.data().iter().all(|&v| v == 0.0));
        block.bn.forward_in_place(&mut pre);
        pre.relu_in_place();
        let gates = block.se.gates(&pre);
        let hidden = [0.3f32, 0.0];
        for (c, g) in gates.iter().enumerate() {
            let z: f32 = (0..2).map(|h| block.se.expand.weight[c * 2 + h] * hidden[h]).sum::<f32>()
                + block.se.expand.bias[c];
            assert!((g - 1.0 / (1.0 + (-z).exp())).abs() < 1e-6);
        }
        assert!(block.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gates_are_in_open_unit_interval() {
        let mut se = SqueezeExcite::new(16, 4);
        se.reduce.init(1, "r");
        se.expand.init(1, "e");
        let x = random_tensor(16, 7, 3, 4);
        assert!(se.gates(&x).iter().all(|&g| g > 0.0 && g < 1.0));
    }

    #[test]
    fn residual_with_zero_convs_is_relu() {
        let block = ResidualBlock::new(3);
        let x = random_tensor(3, 4, 4, 9);
        let y = block.forward(&x).unwrap();
        let mut expected = x.clone();
        expected.relu_in_place();
        assert_close(&y, &expected, 1e-6);
    }

    #[test]
    fn residual_micro_case_by_hand() {
        // 1 channel, 1x1 plane: conv reduces to the kernel centre.
        let mut block = ResidualBlock::new(1);
        block.conv1.weight[4] = 2.0;
        block.conv1.bias = vec![-1.0];
        block.conv2.weight[4] = -0.5;
        block.conv2.bias = vec![0.25];
        for bn in [&mut block.bn1, &mut block.bn2] {
            bn.eps = 0.0;
        }
        block.bn2.gamma = vec![3.0];
        let x = TensorCTF::new(1, 1, 1, vec![1.5]).unwrap();
        // h = relu(2*1.5 - 1) = 2; y = 3*(-0.5*2 + 0.25) = -2.25; relu(-2.25 + 1.5) = 0
        assert_eq!(block.forward(&x).unwrap().data(), &[0.0]);
        let x = TensorCTF::new(1, 1, 1, vec![4.0]).unwrap();
        // h = 7; y = 3*(-3.5 + 0.25) = -9.75; relu(-5.75) = 0
        assert_eq!(block.forward(&x).unwrap().data(), &[0.0]);
        block.conv2.weight[4] = 0.5;
        // h = 7; y = 3*(3.5 + 0.25) = 11.25; 11.25 + 4 = 15.25
        assert_eq!(block.forward(&x).unwrap().data(), &[15.25]);
    }

    #[test]
    fn residual_preserves_shape() {
        let mut block = ResidualBlock::new(4);
        block.init(2, "r");
        for (t, f) in [(1, 1), (3, 7), (10, 2)] {
            let x = random_tensor(4, t, f, 3);
            assert_eq!(block.forward(&x).unwrap().shape(), (4, t, f));
        }
        assert!(matches!(block.forward(&random_tensor(3, 2, 2, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn tsdp_cases() {
        let x = TensorCTF::new(2, 3, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, -1.0, 0.0, -1.0, 0.0, -1.0, 0.0]).unwrap();
        assert_eq!(tsdp(&x).unwrap(), vec![0.0; 4]);
        let y = TensorCTF::new(1, 2, 1, vec![1.0, 3.0]).unwrap();
        assert_eq!(tsdp(&y).unwrap(), vec![1.0]);
        assert!(matches!(tsdp(&random_tensor(2, 1, 3, 0)), Err(Error::DegenerateTime(1))));
    }
}
