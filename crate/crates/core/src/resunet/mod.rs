//! The ResUnet speaker embedding extractor: a symmetric U-Net of SE conv
//! blocks around a residual connection path, temporal standard deviation
//! pooling, and an affine embedding head. Inference only.

mod checkpoint;
mod layers;
mod network;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use layers::{tsdp, BatchNorm, Conv2d, ConvKind, Linear, ResidualBlock, SeConvBlock, SqueezeExcite};
pub use network::{ResUnet, ResUnetConfig, BLOCK_NAMES};
pub use tensor::TensorCTF;

use crate::error::Result;

/// Supported residual depths.
pub const VARIANTS: [usize; 5] = [9, 12, 15, 18, 21];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    SeConv,
    Residual,
    SeDeconv,
    Pooling,
    Affine,
}

/// One layer of the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: (usize, usize),
    /// 1 or 2 for convolutions; transposed stride-2 layers are `SeDeconv`.
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

fn conv_params(c_in: usize, c_out: usize, k: usize) -> usize {
    c_in * c_out * k * k + c_out
}

fn se_params(c: usize, reduction: usize) -> usize {
    let hidden = (c / reduction).max(1);
    c * hidden + hidden + hidden * c + c
}

impl LayerSpec {
    /// Trainable parameters: conv weights and biases, batch-norm scale and
    /// shift, SE bottleneck, affine head. Batch-norm running statistics are
    /// buffers and not counted.
    pub fn param_count(&self, se_reduction: usize) -> usize {
        let (ci, co, k) = (self.in_channels, self.out_channels, self.kernel.0);
        match self.kind {
            LayerKind::SeConv | LayerKind::SeDeconv => {
                conv_params(ci, co, k) + 2 * co + se_params(co, se_reduction)
            }
            LayerKind::Residual => 2 * (conv_params(ci, co, k) + 2 * co),
            LayerKind::Pooling => 0,
            LayerKind::Affine => ci * co + co,
        }
    }
}

/// Layer table for a configuration, in forward order.
pub fn layer_specs(config: &ResUnetConfig) -> Result<Vec<LayerSpec>> {
    config.validate()?;
    let c1 = config.base_channels;
    let (c2, c3) = (2 * c1, 4 * c1);
    let spec = |kind, k, stride, i, o| LayerSpec {
        kind,
        kernel: (k, k),
        stride,
        in_channels: i,
        out_channels: o,
    };
    let mut specs = vec![
        spec(LayerKind::SeConv, 7, 1, 1, c1),
        spec(LayerKind::SeConv, 3, 2, c1, c2),
        spec(LayerKind::SeConv, 3, 2, c2, c3),
    ];
    specs.extend((0..config.residual_blocks).map(|_| spec(LayerKind::Residual, 3, 1, c3, c3)));
    specs.extend([
        spec(LayerKind::SeDeconv, 3, 2, c3, c2),
        spec(LayerKind::SeDeconv, 3, 2, c2, c1),
        spec(LayerKind::SeConv, 7, 1, c1, c1),
        spec(LayerKind::Pooling, 0, 0, c1, c1 * config.n_mels),
        spec(LayerKind::Affine, 0, 0, c1 * config.n_mels, config.embed_dim),
    ]);
    Ok(specs)
}

pub fn param_count(config: &ResUnetConfig) -> Result<usize> {
    Ok(layer_specs(config)?
        .iter()
        .map(|s| s.param_count(config.se_reduction))
        .sum())
}
