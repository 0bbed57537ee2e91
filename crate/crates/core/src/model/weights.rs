use rand::Rng;

use super::ModelConfig;
use crate::error::Result;
use crate::rng::rng_for;
use crate::tensor::Mat;

/// `y = x · weight + bias`, with `weight` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Mat::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        let mut y = x.matmul(&self.weight);
        y.add_row_vector(&self.bias);
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNormParams {
    pub fn identity(dim: usize) -> Self {
        LayerNormParams {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }
}

/// One encoder block. The query/key/value matrices are `d_model × d_model`;
/// head `i` owns columns `i·d_k .. (i+1)·d_k` of each.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub query: Mat,
    pub key: Mat,
    pub value: Mat,
    pub output: Linear,
    pub norm1: LayerNormParams,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub embedding: Linear,
    pub layers: Vec<EncoderLayer>,
    pub head: Linear,
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Mat {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Mat::from_vec(fan_in, fan_out, data)
}

fn xavier_linear(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Linear {
    Linear {
        weight: xavier(rng, fan_in, fan_out),
        bias: vec![0.0; fan_out],
    }
}

impl ModelWeights {
    /// Xavier-uniform matrices, zero biases, unit layer-norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "init", 0);
        let d = config.d_model;
        let embedding = xavier_linear(&mut rng, config.input_dim, d);
        let layers = (0..config.layers)
            .map(|_| EncoderLayer {
                query: xavier(&mut rng, d, d),
                key: xavier(&mut rng, d, d),
                value: xavier(&mut rng, d, d),
                output: xavier_linear(&mut rng, d, d),
                norm1: LayerNormParams::identity(d),
                ff1: xavier_linear(&mut rng, d, config.d_ff),
                ff2: xavier_linear(&mut rng, config.d_ff, d),
                norm2: LayerNormParams::identity(d),
            })
            .collect();
        let head = xavier_linear(&mut rng, config.window * d, config.classes);
        Ok(ModelWeights {
            config,
            embedding,
            layers,
            head,
        })
    }

    /// Same shapes, every entry zero (the gradient accumulator shape).
    pub fn zeros(config: ModelConfig) -> Self {
        let d = config.d_model;
        let zero_norm = || LayerNormParams {
            gain: vec![0.0; d],
            bias: vec![0.0; d],
        };
        ModelWeights {
            config,
            embedding: Linear::zeros(config.input_dim, d),
            layers: (0..config.layers)
                .map(|_| EncoderLayer {
                    query: Mat::zeros(d, d),
                    key: Mat::zeros(d, d),
                    value: Mat::zeros(d, d),
                    output: Linear::zeros(d, d),
                    norm1: zero_norm(),
                    ff1: Linear::zeros(d, config.d_ff),
                    ff2: Linear::zeros(config.d_ff, d),
                    norm2: zero_norm(),
                })
                .collect(),
            head: Linear::zeros(config.window * d, config.classes),
        }
    }

    /// Every parameter tensor in serialization order: embedding, each layer
    /// in index order, head.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.embedding.weight.data(), &self.embedding.bias];
        for l in &self.layers {
            out.extend_from_slice(&[
                l.query.data(),
                l.key.data(),
                l.value.data(),
                l.output.weight.data(),
                &l.output.bias,
                &l.norm1.gain,
                &l.norm1.bias,
                l.ff1.weight.data(),
                &l.ff1.bias,
                l.ff2.weight.data(),
                &l.ff2.bias,
                &l.norm2.gain,
                &l.norm2.bias,
            ]);
        }
        out.push(self.head.weight.data());
        out.push(&self.head.bias);
        out
    }

    /// Mutable view of [`Self::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embedding.weight.data_mut(), &mut self.embedding.bias];
        for l in &mut self.layers {
            out.push(l.query.data_mut());
            out.push(l.key.data_mut());
            out.push(l.value.data_mut());
            out.push(l.output.weight.data_mut());
            out.push(&mut l.output.bias);
            out.push(&mut l.norm1.gain);
            out.push(&mut l.norm1.bias);
            out.push(l.ff1.weight.data_mut());
            out.push(&mut l.ff1.bias);
            out.push(l.ff2.weight.data_mut());
            out.push(&mut l.ff2.bias);
            out.push(&mut l.norm2.gain);
            out.push(&mut l.norm2.bias);
        }
        out.push(self.head.weight.data_mut());
        out.push(&mut self.head.bias);
        out
    }

    /// Names matching [`Self::tensors`], e.g. `layers.1.ff2.weight`.
    pub fn tensor_names(&self) -> Vec<String> {
        const LAYER: [&str; 13] = [
            "query",
            "key",
            "value",
            "output.weight",
            "output.bias",
            "norm1.gain",
            "norm1.bias",
            "ff1.weight",
            "ff1.bias",
            "ff2.weight",
            "ff2.bias",
            "norm2.gain",
            "norm2.bias",
        ];
        let mut out = vec!["embedding.weight".to_string(), "embedding.bias".to_string()];
        for i in 0..self.layers.len() {
            out.extend(LAYER.iter().map(|n| format!("layers.{i}.{n}")));
        }
        out.push("head.weight".into());
        out.push("head.bias".into());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += k · other`
    pub fn add_scaled(&mut self, other: &ModelWeights, k: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += k * b;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            for x in t {
                *x *= k;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Rounds every parameter to the nearest `f32`, the precision of the
    /// weights file.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for x in t {
                *x = f64::from(*x as f32);
            }
        }
    }
}
