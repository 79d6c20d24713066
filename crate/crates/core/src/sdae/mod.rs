//! Stacked denoising auto-encoder.
//!
//! Each hidden layer is first trained as a denoising auto-encoder on the
//! clean output of the layers below it (masking noise, sigmoid encoder and
//! decoder, squared reconstruction error). The decoders are then dropped, a
//! two-way softmax layer is put on top, and the whole stack is fine-tuned on
//! cross-entropy. Training is plain mini-batch SGD driven by a seeded
//! ChaCha stream, so a fixed seed and row order reproduce every bit.

mod gradcheck;
mod model;
mod train;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{gradient_check, GradCheckReport, GradFailure};
pub use model::{load_model, save_model, Network, SdaeModel, TrainingLog, MODEL_VERSION};
pub use train::{
    classification_loss_and_grads, dae_pretrain_layer, finetune, pretrain_stack,
    reconstruction_loss_and_grads, Gradients, PretrainedLayer,
};

/// Hidden layer widths of the default network.
pub const DEFAULT_HIDDEN: [usize; 4] = [400, 200, 100, 50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Probability that an input coordinate is zeroed during pre-training.
    pub corruption: f64,
    pub hidden_sizes: Vec<usize>,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    /// Multiplier applied to the fine-tuning rate after every epoch.
    pub finetune_lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            corruption: 0.7,
            hidden_sizes: DEFAULT_HIDDEN.to_vec(),
            pretrain_epochs: 30,
            finetune_epochs: 50,
            batch_size: 64,
            pretrain_lr: 0.01,
            finetune_lr: 0.1,
            finetune_lr_decay: 0.95,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..=1.0).contains(&self.corruption) {
            return bad(format!("corruption {} outside [0, 1]", self.corruption));
        }
        if !(self.pretrain_lr > 0.0 && self.finetune_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.finetune_lr_decay > 0.0 && self.finetune_lr_decay <= 1.0) {
            return bad(format!("lr decay {} outside (0, 1]", self.finetune_lr_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return bad(format!("invalid hidden sizes {:?}", self.hidden_sizes));
        }
        Ok(())
    }
}

/// Dense layer `σ(W x + b)`; `weights` is `d_out × d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerParams {
    /// Uniform in ±√(6/(d_in+d_out)), zero bias.
    pub fn glorot(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (d_in + d_out) as f64).sqrt();
        let weights = Array2::from_shape_fn((d_out, d_in), |_| rng.random_range(-limit..limit));
        LayerParams {
            weights,
            bias: Array1::zeros(d_out),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        LayerParams {
            weights: Array2::zeros((d_out, d_in)),
            bias: Array1::zeros(d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weights.nrows()
    }

    /// Pre-activations for a batch of rows.
    pub(crate) fn affine(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        z
    }

    pub(crate) fn forward_sigmoid(&self, x: &Array2<f64>) -> Array2<f64> {
        self.affine(x).mapv_into(sigmoid)
    }

    /// Pre-activations for one row, accumulated in index order.
    pub(crate) fn affine_row(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (w, b) in self.weights.rows().into_iter().zip(self.bias.iter()) {
            let mut s = *b;
            for (wi, xi) in w.iter().zip(x) {
                s += wi * xi;
            }
            out.push(s);
        }
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Numerically stable two-way softmax.
#[inline]
pub fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Masking noise: each coordinate is zeroed independently with probability
/// `rate`.
pub fn corrupt(x: &[f64], rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = x.to_vec();
    corrupt_in_place(&mut out, rate, rng);
    out
}

pub(crate) fn corrupt_in_place(x: &mut [f64], rate: f64, rng: &mut ChaCha8Rng) {
    for v in x {
        if rng.random::<f64>() < rate {
            *v = 0.0;
        }
    }
}

/// Independent generator for one purpose (`stream`) under a run seed.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}
