//! Transformer encoder classifier.
//!
//! Frames are embedded by an affine map plus sinusoidal positional encoding,
//! passed through `layers` post-norm encoder blocks (multi-head
//! self-attention, then a ReLU feed-forward, each wrapped in a residual +
//! layer norm), flattened to one `window · d_model` vector, and classified by
//! a single affine head with softmax.

mod backward;
mod forward;
mod gradcheck;
mod io;
mod weights;

pub use backward::{backward, backward_frames};
pub use forward::{
    attention, attention_weights, classify, cross_entropy, embed_frame, encoder_forward,
    encoder_forward_with, feed_forward, layer_norm, multi_head_attention, positional_encoding,
    predict, sample_loss, AttentionTensors, ForwardOptions, FrameFeatures, LAYER_NORM_EPS,
    PROB_CLAMP,
};
pub use gradcheck::{gradient_check, gradient_check_sampled, relative_error, GradientReport};
pub use io::{load_weights, save_weights, FORMAT_VERSION, MAGIC};
pub use weights::{EncoderLayer, LayerNormParams, Linear, ModelWeights};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub window: usize,
    pub input_dim: usize,
    pub classes: usize,
}

impl ModelConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("window", self.window),
            ("input_dim", self.input_dim),
            ("classes", self.classes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config(format!(
                "positional encoding needs an even d_model, got {}",
                self.d_model
            )));
        }
        Ok(())
    }
}

/// Softmax output over the classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Softmax of `logits`, computed with the max subtracted.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        ProbVector(exps.into_iter().map(|e| e / sum).collect())
    }

    /// Wraps an existing distribution. Entries must lie in `[0, 1]` and sum
    /// to 1 within `1e-9`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty probability vector".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("probability outside [0, 1]".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {sum}")));
        }
        Ok(ProbVector(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index and value of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = (0, self.0[0]);
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > best.1 {
                best = (i, p);
            }
        }
        best
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            layers: 2,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            window: 4,
            input_dim: 6,
            classes: 3,
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert_eq!(cfg().d_k(), 4);
        let bad = ModelConfig { heads: 3, ..cfg() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let odd = ModelConfig { d_model: 9, heads: 3, ..cfg() };
        assert!(odd.validate().is_err());
        let zero = ModelConfig { classes: 0, ..cfg() };
        assert!(zero.validate().is_err());
        let no_layers = ModelConfig { layers: 0, ..cfg() };
        assert!(no_layers.validate().is_ok());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        let p = ProbVector::new(vec![0.25, 0.375, 0.375]).unwrap();
        assert_eq!(p.argmax(), (1, 0.375));
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
    }
}
