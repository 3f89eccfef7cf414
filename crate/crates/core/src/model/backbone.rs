use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    max_pool2, max_pool2_backward, quadrant_pool, quadrant_pool_backward, relu_inplace, Conv3x3, Parameters,
};
use crate::error::{Error, Result};
use crate::ingest::PixelTensor;

/// Channel widths of the conv blocks. Each block is conv3x3 → ReLU → maxpool2;
/// the last map is averaged per quadrant, so `feature_dim = 4 × last width`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub channels: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { channels: vec![8, 16, 16] }
    }
}

impl BackboneConfig {
    pub fn feature_dim(&self) -> usize {
        self.channels.last().copied().unwrap_or(PixelTensor::CHANNELS) * 4
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBackbone {
    config: BackboneConfig,
    convs: Vec<Conv3x3>,
}

/// Intermediate activations kept for the backward pass.
pub struct BackboneTrace {
    /// `(input, height, width)` seen by each conv
    inputs: Vec<(Vec<f32>, usize, usize)>,
    /// post-ReLU output of each conv (pre-pool)
    activations: Vec<Vec<f32>>,
    argmax: Vec<Vec<u32>>,
    final_hw: (usize, usize),
}

impl ConvBackbone {
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        if config.channels.is_empty() || config.channels.contains(&0) {
            return Err(Error::Config("backbone needs at least one non-empty block".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_ch = PixelTensor::CHANNELS;
        let mut convs = Vec::with_capacity(config.channels.len());
        for &c in &config.channels {
            convs.push(Conv3x3::new(in_ch, c, &mut rng));
            in_ch = c;
        }
        Ok(ConvBackbone { config, convs })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    /// Inputs must be square-or-not with both sides divisible by `2^(blocks+1)`.
    pub fn check_input(&self, pixels: &PixelTensor) -> Result<()> {
        let m = 1usize << (self.convs.len() + 1);
        if !pixels.height().is_multiple_of(m) || !pixels.width().is_multiple_of(m) || pixels.height() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "input {}x{} must have sides divisible by {m}",
                pixels.height(),
                pixels.width()
            )));
        }
        if !pixels.is_finite() {
            return Err(Error::NonFinite("input pixels".into()));
        }
        Ok(())
    }

    pub fn features(&self, pixels: &PixelTensor) -> Result<Vec<f32>> {
        self.check_input(pixels)?;
        let (mut h, mut w) = (pixels.height(), pixels.width());
        let mut x = pixels.data().to_vec();
        for conv in &self.convs {
            let mut z = conv.forward(&x, h, w);
            relu_inplace(&mut z);
            x = max_pool2(&z, conv.out_ch, h, w).0;
            h /= 2;
            w /= 2;
        }
        Ok(quadrant_pool(&x, self.convs.last().unwrap().out_ch, h, w))
    }

    pub fn features_traced(&self, pixels: &PixelTensor) -> Result<(Vec<f32>, BackboneTrace)> {
        self.check_input(pixels)?;
        let (mut h, mut w) = (pixels.height(), pixels.width());
        let mut x = pixels.data().to_vec();
        let mut trace = BackboneTrace {
            inputs: Vec::with_capacity(self.convs.len()),
            activations: Vec::with_capacity(self.convs.len()),
            argmax: Vec::with_capacity(self.convs.len()),
            final_hw: (0, 0),
        };
        for conv in &self.convs {
            let mut z = conv.forward(&x, h, w);
            relu_inplace(&mut z);
            let (p, idx) = max_pool2(&z, conv.out_ch, h, w);
            trace.inputs.push((std::mem::replace(&mut x, p), h, w));
            trace.activations.push(z);
            trace.argmax.push(idx);
            h /= 2;
            w /= 2;
        }
        trace.final_hw = (h, w);
        let feats = quadrant_pool(&x, self.convs.last().unwrap().out_ch, h, w);
        Ok((feats, trace))
    }

    /// Accumulate parameter gradients for `d loss / d features`.
    pub fn backward(&self, trace: &BackboneTrace, grad_features: &[f32], grads: &mut ConvBackbone) {
        let last = self.convs.last().unwrap().out_ch;
        let (h, w) = trace.final_hw;
        let mut g = quadrant_pool_backward(grad_features, last, h, w);
        for (i, conv) in self.convs.iter().enumerate().rev() {
            let act = &trace.activations[i];
            let mut gz = max_pool2_backward(&g, &trace.argmax[i], act.len());
            for (gv, a) in gz.iter_mut().zip(act) {
                if *a <= 0.0 {
                    *gv = 0.0;
                }
            }
            let (input, ih, iw) = &trace.inputs[i];
            match conv.backward(input, *ih, *iw, &gz, &mut grads.convs[i], i > 0) {
                Some(gi) => g = gi,
                None => break,
            }
        }
    }
}

impl Parameters for ConvBackbone {
    fn tensors(&self) -> Vec<&[f32]> {
        self.convs.iter().flat_map(|c| c.tensors()).collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        self.convs.iter_mut().flat_map(|c| c.tensors_mut()).collect()
    }
}
