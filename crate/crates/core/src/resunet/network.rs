use serde::{Deserialize, Serialize};

use super::layers::{tsdp, ConvKind, Linear, ResidualBlock, SeConvBlock, Visit, VisitMut};
use super::tensor::TensorCTF;
use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResUnetConfig {
    pub residual_blocks: usize,
    pub base_channels: usize,
    pub embed_dim: usize,
    pub n_mels: usize,
    pub se_reduction: usize,
}

impl Default for ResUnetConfig {
    fn default() -> Self {
        ResUnetConfig {
            residual_blocks: 15,
            base_channels: 64,
            embed_dim: 256,
            n_mels: 64,
            se_reduction: 8,
        }
    }
}

impl ResUnetConfig {
    pub fn with_depth(residual_blocks: usize) -> Self {
        ResUnetConfig {
            residual_blocks,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.residual_blocks == 0 {
            return Err(Error::Config("at least one residual block is required".into()));
        }
        if self.base_channels == 0 || self.embed_dim == 0 || self.se_reduction == 0 {
            return Err(Error::Config("channels, embedding size and SE reduction must be positive".into()));
        }
        if self.n_mels == 0 || self.n_mels % 4 != 0 {
            return Err(Error::Config(format!(
                "{} mel bins: the frequency axis is halved twice and must be divisible by 4",
                self.n_mels
            )));
        }
        Ok(())
    }

    /// Length of the pooled vector fed to the affine head.
    pub fn pooled_dim(&self) -> usize {
        self.base_channels * self.n_mels
    }
}

/// Names of the seven frame-level block outputs, in forward order.
pub const BLOCK_NAMES: [&str; 7] = ["down1", "down2", "down3", "residual", "up1", "up2", "up3"];

#[derive(Debug, Clone)]
pub struct ResUnet {
    config: ResUnetConfig,
    pub down: [SeConvBlock; 3],
    pub residual: Vec<ResidualBlock>,
    pub up: [SeConvBlock; 3],
    pub affine: Linear,
}

impl ResUnet {
    /// Builds the network with seeded Kaiming-uniform weights, zero biases and
    /// identity batch-norm statistics. Each tensor's stream is keyed by its
    /// name, so variants share every non-residual weight for the same seed.
    pub fn build(config: ResUnetConfig, seed: u64) -> Result<Self> {
        let mut net = ResUnet::zeroed(config)?;
        for (i, b) in net.down.iter_mut().enumerate() {
            b.init(seed, &format!("down.{i}"));
        }
        for (i, b) in net.residual.iter_mut().enumerate() {
            b.init(seed, &format!("res.{i}"));
        }
        for (i, b) in net.up.iter_mut().enumerate() {
            b.init(seed, &format!("up.{i}"));
        }
        net.affine.init(seed, "affine");
        Ok(net)
    }

    pub(crate) fn zeroed(config: ResUnetConfig) -> Result<Self> {
        config.validate()?;
        let c1 = config.base_channels;
        let (c2, c3) = (2 * c1, 4 * c1);
        let r = config.se_reduction;
        let s1 = ConvKind::Conv { stride: 1 };
        let s2 = ConvKind::Conv { stride: 2 };
        Ok(ResUnet {
            config,
            down: [
                SeConvBlock::new(s1, 1, c1, 7, r),
                SeConvBlock::new(s2, c1, c2, 3, r),
                SeConvBlock::new(s2, c2, c3, 3, r),
            ],
            residual: (0..config.residual_blocks).map(|_| ResidualBlock::new(c3)).collect(),
            up: [
                SeConvBlock::new(ConvKind::Deconv2x, c3, c2, 3, r),
                SeConvBlock::new(ConvKind::Deconv2x, c2, c1, 3, r),
                SeConvBlock::new(s1, c1, c1, 7, r),
            ],
            affine: Linear::new(config.pooled_dim(), config.embed_dim),
        })
    }

    pub fn config(&self) -> &ResUnetConfig {
        &self.config
    }

    /// Runs the frame-level stack on a `1 × T × n_mels` tensor whose time axis
    /// is already a multiple of 4, returning all seven block outputs.
    ///
    /// Skip connections add each down-block output to the input of the
    /// up-block of matching shape.
    pub fn frame_outputs(&self, input: &TensorCTF) -> Result<Vec<TensorCTF>> {
        let (c, t, f) = input.shape();
        if c != 1 || f != self.config.n_mels || t % 4 != 0 {
            return Err(Error::Shape(format!(
                "frame stack expects 1 x 4k x {}, got {c} x {t} x {f}",
                self.config.n_mels
            )));
        }
        let d1 = self.down[0].forward(input)?;
        let d2 = self.down[1].forward(&d1)?;
        let d3 = self.down[2].forward(&d2)?;
        let mut r = d3.clone();
        for block in &self.residual {
            r = block.forward(&r)?;
        }
        let mut x = r.clone();
        x.add_assign(&d3)?;
        let u1 = self.up[0].forward(&x)?;
        let mut x = u1.clone();
        x.add_assign(&d2)?;
        let u2 = self.up[1].forward(&x)?;
        let mut x = u2.clone();
        x.add_assign(&d1)?;
        let u3 = self.up[2].forward(&x)?;
        Ok(vec![d1, d2, d3, r, u1, u2, u3])
    }

    fn final_frame_map(&self, input: &TensorCTF) -> Result<TensorCTF> {
        Ok(self.frame_outputs(input)?.pop().expect("seven outputs"))
    }

    /// Pooled frame-level statistics (the affine head's input).
    pub fn pooled(&self, features: &FeatureMatrix) -> Result<Vec<f32>> {
        if features.n_mels() != self.config.n_mels {
            return Err(Error::Shape(format!(
                "features have {} mel bins, network expects {}",
                features.n_mels(),
                self.config.n_mels
            )));
        }
        let t = features.frames();
        if t < 4 {
            return Err(Error::Shape(format!("need at least 4 frames, got {t}")));
        }
        let padded_t = t.div_ceil(4) * 4;
        let input = TensorCTF::new(1, t, features.n_mels(), features.data().to_vec())?.with_time(padded_t);
        let out = self.final_frame_map(&input)?.with_time(t);
        tsdp(&out)
    }

    /// Speaker embedding for a variable-length feature matrix. The time axis
    /// is zero-padded to a multiple of 4 internally and cropped back before
    /// pooling.
    pub fn forward(&self, features: &FeatureMatrix) -> Result<Vec<f32>> {
        let pooled = self.pooled(features)?;
        Ok(self.affine.forward(&pooled))
    }

    /// Visits every stored tensor (weights and batch-norm buffers) in a fixed
    /// order.
    pub(crate) fn visit(&self, f: &mut Visit<'_>) {
        for (i, b) in self.down.iter().enumerate() {
            b.visit(&format!("down.{i}"), f);
        }
        for (i, b) in self.residual.iter().enumerate() {
            b.visit(&format!("res.{i}"), f);
        }
        for (i, b) in self.up.iter().enumerate() {
            b.visit(&format!("up.{i}"), f);
        }
        self.affine.visit("affine", f);
    }

    pub(crate) fn visit_mut(&mut self, f: &mut VisitMut<'_>) {
        for (i, b) in self.down.iter_mut().enumerate() {
            b.visit_mut(&format!("down.{i}"), f);
        }
        for (i, b) in self.residual.iter_mut().enumerate() {
            b.visit_mut(&format!("res.{i}"), f);
        }
        for (i, b) in self.up.iter_mut().enumerate() {
            b.visit_mut(&format!("up.{i}"), f);
        }
        self.affine.visit_mut("affine", f);
    }

    /// Parameters counted from the built tensors, excluding batch-norm
    /// running statistics.
    pub fn trainable_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |name, _, values| {
            if !name.ends_with("running_mean") && !name.ends_with("running_var") {
                n += values.len();
            }
        });
        n
    }

    /// Bitwise equality of every stored tensor.
    pub fn same_weights(&self, other: &ResUnet) -> bool {
        let mut a = Vec::new();
        self.visit(&mut |name, _, v| a.push((name.to_string(), v.iter().map(|x| x.to_bits()).collect::<Vec<_>>())));
        let mut b = Vec::new();
        other.visit(&mut |name, _, v| b.push((name.to_string(), v.iter().map(|x| x.to_bits()).collect::<Vec<_>>())));
        self.config == other.config && a == b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resunet::param_count;

    fn small() -> ResUnetConfig {
        ResUnetConfig {
            residual_blocks: 2,
            base_channels: 4,
            embed_dim: 8,
            n_mels: 8,
            se_reduction: 2,
        }
    }

    fn features(t: usize, n: usize, seed: u64) -> FeatureMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::new(t, n, (0..t * n).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap()
    }

    #[test]
    fn small_shapes_follow_contract() {
        let net = ResUnet::build(small(), 1).unwrap();
        let x = TensorCTF::new(1, 12, 8, vec![0.5; 96]).unwrap();
        let shapes: Vec<_> = net.frame_outputs(&x).unwrap().iter().map(|t| t.shape()).collect();
        assert_eq!(shapes, vec![(4, 12, 8), (8, 6, 4), (16, 3, 2), (16, 3, 2), (8, 6, 4), (4, 12, 8), (4, 12, 8)]);
    }

    #[test]
    fn built_params_match_count() {
        for depth in [1, 3] {
            let cfg = ResUnetConfig { residual_blocks: depth, ..small() };
            assert_eq!(ResUnet::build(cfg, 0).unwrap().trainable_params(), param_count(&cfg).unwrap());
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let a = ResUnet::build(small(), 9).unwrap();
        let b = ResUnet::build(small(), 9).unwrap();
        let c = ResUnet::build(small(), 10).unwrap();
        assert!(a.same_weights(&b));
        assert!(!a.same_weights(&c));
    }

    #[test]
    fn variable_length_and_padding_transparency() {
        let net = ResUnet::build(small(), 2).unwrap();
        for t in [4, 5, 13, 22] {
            let f = features(t, 8, t as u64);
            let e = net.forward(&f).unwrap();
            assert_eq!(e.len(), 8);
            assert!(e.iter().all(|v| v.is_finite()));

            let padded = t.div_ceil(4) * 4;
            let manual = TensorCTF::new(1, t, 8, f.data().to_vec()).unwrap().with_time(padded);
            let out = net.frame_outputs(&manual).unwrap().pop().unwrap().with_time(t);
            assert_eq!(net.affine.forward(&tsdp(&out).unwrap()), e);
        }
    }

    #[test]
    fn shape_errors() {
        let net = ResUnet::build(small(), 2).unwrap();
        assert!(matches!(net.forward(&features(10, 6, 0)), Err(Error::Shape(_))));
        assert!(matches!(net.forward(&features(3, 8, 0)), Err(Error::Shape(_))));
        assert!(ResUnet::build(ResUnetConfig { n_mels: 10, ..small() }, 0).is_err());
    }
}
