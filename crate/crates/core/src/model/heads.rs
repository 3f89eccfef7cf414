use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Linear, Parameters};
use crate::pathology::NUM_PATHOLOGIES;

pub const EMBEDDING_DIM: usize = 128;
pub const PRELU_INIT: f32 = 0.25;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Linear map to one logit per pathology, read through a sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub linear: Linear,
}

impl ClassifierHead {
    pub fn new(feature_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ClassifierHead { linear: Linear::new(feature_dim, NUM_PATHOLOGIES, &mut rng) }
    }

    pub fn zeros(feature_dim: usize) -> Self {
        ClassifierHead { linear: Linear::zeros(feature_dim, NUM_PATHOLOGIES) }
    }

    pub fn input_dim(&self) -> usize {
        self.linear.in_dim
    }

    pub fn logits(&self, features: &[f32]) -> Vec<f32> {
        self.linear.forward(features)
    }

    pub fn probabilities(&self, features: &[f32]) -> Vec<f64> {
        self.logits(features).into_iter().map(|z| sigmoid(z as f64)).collect()
    }
}

impl Parameters for ClassifierHead {
    fn tensors(&self) -> Vec<&[f32]> {
        self.linear.tensors()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        self.linear.tensors_mut()
    }
}

/// 128-unit linear layer followed by a PReLU with one learnable slope.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingHead {
    pub linear: Linear,
    /// Single-element so it can be exposed as a parameter tensor.
    pub prelu_slope: [f32; 1],
}

pub fn prelu(x: f32, slope: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

impl EmbeddingHead {
    pub fn new(feature_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingHead { linear: Linear::new(feature_dim, EMBEDDING_DIM, &mut rng), prelu_slope: [PRELU_INIT] }
    }

    pub fn zeros(feature_dim: usize) -> Self {
        EmbeddingHead { linear: Linear::zeros(feature_dim, EMBEDDING_DIM), prelu_slope: [PRELU_INIT] }
    }

    pub fn input_dim(&self) -> usize {
        self.linear.in_dim
    }

    pub fn slope(&self) -> f32 {
        self.prelu_slope[0]
    }

    /// Returns `(embedding, pre_activation)`.
    pub fn forward_traced(&self, features: &[f32]) -> (Vec<f32>, Vec<f32>) {
        let pre = self.linear.forward(features);
        let slope = self.slope();
        let out = pre.iter().map(|&z| prelu(z, slope)).collect();
        (out, pre)
    }

    pub fn forward(&self, features: &[f32]) -> Vec<f32> {
        let out = self.forward_traced(features).0;
        assert_eq!(out.len(), EMBEDDING_DIM);
        out
    }

    /// Accumulates gradients; returns `d loss / d features`.
    pub fn backward(&self, features: &[f32], pre: &[f32], grad_out: &[f32], grads: &mut EmbeddingHead) -> Vec<f32> {
        let slope = self.slope();
        let mut grad_pre = Vec::with_capacity(pre.len());
        for (&z, &g) in pre.iter().zip(grad_out) {
            if z > 0.0 {
                grad_pre.push(g);
            } else {
                grads.prelu_slope[0] += g * z;
                grad_pre.push(g * slope);
            }
        }
        self.linear.backward(features, &grad_pre, &mut grads.linear)
    }
}

impl Parameters for EmbeddingHead {
    fn tensors(&self) -> Vec<&[f32]> {
        let mut t = self.linear.tensors();
        t.push(&self.prelu_slope);
        t
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut t = self.linear.tensors_mut();
        t.push(&mut self.prelu_slope);
        t
    }
}
