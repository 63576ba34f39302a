//! U-Net builder: turns an [`ArchConfig`] into a concrete layer list with
//! encoder/decoder skip connections and the canonical client/server cut
//! points.
//!
//! The shape is the classic U: `D` encoder blocks (conv, batchnorm, ReLU,
//! 2x2 max-pool), a bottleneck block without pooling, `D` decoder blocks
//! (2x2 nearest upsample, conv over the upsampled path concatenated with the
//! mirrored encoder activation, batchnorm, ReLU), and a head (conv to class
//! logits, argmax output). The front-end cut keeps the first encoder block
//! on the client; the back-end cut keeps the last decoder conv block plus
//! the head — the last two convolutions and the argmax — on the client.

use crate::error::{Result, SplitFedError};
use crate::nn::{LayerSpec, Network, SkipRoute};

/// Architecture knobs for [`build`].
#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    /// Side length of the (square) input images.
    pub input_size: usize,
    /// Channels of the input images (1 for grayscale).
    pub in_channels: usize,
    /// Number of segmentation classes, including background.
    pub num_classes: usize,
    /// Filter counts of the encoder blocks, shallowest first. The decoder
    /// mirrors this list; its length sets the number of pooling stages.
    pub encoder_filters: Vec<usize>,
    /// Filter count of the bottleneck conv between encoder and decoder.
    pub bottleneck_filters: usize,
    /// Conv kernel side length; must be odd (same padding).
    pub kernel: usize,
}

impl Default for ArchConfig {
    /// Desk-scale default: two 8/16-filter encoder blocks on 32x32 inputs,
    /// 16-filter bottleneck, 3x3 kernels, five classes.
    fn default() -> Self {
        ArchConfig {
            input_size: 32,
            in_channels: 1,
            num_classes: 5,
            encoder_filters: vec![8, 16],
            bottleneck_filters: 16,
            kernel: 3,
        }
    }
}

/// A built U-Net together with its client/server cut points: layers
/// `0..fe_end` form the client front-end, `fe_end..be_start` the server
/// trunk, and `be_start..len` the client back-end.
#[derive(Clone, Debug)]
pub struct Unet {
    pub network: Network,
    pub fe_end: usize,
    pub be_start: usize,
}

/// Builds the U-Net described by `cfg`.
///
/// Layer indices are deterministic: encoder block `d` occupies
/// `4d..4d+4`, the bottleneck `4D..4D+3`, decoder level `j` (deepest
/// first) `4D+3+4j..4D+7+4j`, and the head the final two slots, for
/// `8D + 5` layers total. Skip route `j` connects the ReLU of encoder
/// block `D-1-j` to the decoder conv of level `j`.
pub fn build(cfg: &ArchConfig) -> Result<Unet> {
    let depth = cfg.encoder_filters.len();
    if depth == 0 {
        return Err(SplitFedError::Config(
            "encoder_filters must name at least one block".into(),
        ));
    }
    if cfg.in_channels == 0 || cfg.bottleneck_filters == 0 {
        return Err(SplitFedError::Config(
            "channel counts must be positive".into(),
        ));
    }
    if cfg.num_classes < 2 {
        return Err(SplitFedError::Config(format!(
            "need at least 2 classes, got {}",
            cfg.num_classes
        )));
    }
    if cfg.kernel % 2 == 0 {
        return Err(SplitFedError::Config(format!(
            "conv kernel must be odd, got {}",
            cfg.kernel
        )));
    }
    let stride = 1usize << depth;
    if cfg.input_size == 0 || cfg.input_size % stride != 0 {
        return Err(SplitFedError::Config(format!(
            "input size {} is not divisible by 2^{} (one halving per encoder block)",
            cfg.input_size, depth
        )));
    }

    let mut layers = Vec::with_capacity(8 * depth + 5);
    let mut skips = Vec::with_capacity(depth);

    let mut channels = cfg.in_channels;
    for &filters in &cfg.encoder_filters {
        layers.push(LayerSpec::Conv2d {
            in_channels: channels,
            out_channels: filters,
            kernel: cfg.kernel,
        });
        layers.push(LayerSpec::BatchNorm { channels: filters });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool2x2);
        channels = filters;
    }

    layers.push(LayerSpec::Conv2d {
        in_channels: channels,
        out_channels: cfg.bottleneck_filters,
        kernel: cfg.kernel,
    });
    layers.push(LayerSpec::BatchNorm {
        channels: cfg.bottleneck_filters,
    });
    layers.push(LayerSpec::Relu);
    channels = cfg.bottleneck_filters;

    for level in 0..depth {
        let mirrored = cfg.encoder_filters[depth - 1 - level];
        layers.push(LayerSpec::Upsample2x2);
        // The mirrored encoder ReLU concatenates onto the upsampled path.
        skips.push(SkipRoute {
            src: 4 * (depth - 1 - level) + 2,
            dst: layers.len(),
        });
        layers.push(LayerSpec::Conv2d {
            in_channels: channels + mirrored,
            out_channels: mirrored,
            kernel: cfg.kernel,
        });
        layers.push(LayerSpec::BatchNorm { channels: mirrored });
        layers.push(LayerSpec::Relu);
        channels = mirrored;
    }

    layers.push(LayerSpec::Conv2d {
        in_channels: channels,
        out_channels: cfg.num_classes,
        kernel: cfg.kernel,
    });
    layers.push(LayerSpec::ArgmaxOutput);

    let be_start = layers.len() - 5;
    let network = Network::new(layers, skips, cfg.in_channels)?;
    Ok(Unet {
        network,
        fe_end: 4,
        be_start,
    })
}
