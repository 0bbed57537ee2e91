#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signseg::model::{ModelConfig, ModelWeights, ProbVector};
use signseg::segmentation::WindowProbs;
use signseg::{IsolatedSample, NormFrame};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tiny() -> ModelConfig {
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

pub fn random_frames(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<NormFrame> {
    (0..len)
        .map(|_| NormFrame((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect()
}

pub fn random_sample(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> IsolatedSample {
    IsolatedSample {
        frames: random_frames(rng, cfg.window, cfg.input_dim),
        label: rng.random_range(0..cfg.classes),
    }
}

/// Initial weights plus uniform noise on every tensor, so biases and
/// layer-norm parameters are not at their special initial values.
pub fn perturbed_weights(cfg: ModelConfig, seed: u64) -> ModelWeights {
    let mut w = ModelWeights::init(cfg, seed).unwrap();
    let mut rng = rng(seed ^ 0xABCD);
    for t in w.tensors_mut() {
        for x in t {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    w
}

/// Random window probabilities with runs: a sticky "current" class whose
/// logit gets a random boost, so sequences contain long confident runs,
/// flicker and low-confidence stretches.
pub fn random_window_probs(rng: &mut ChaCha8Rng, len: usize, classes: usize) -> WindowProbs {
    let mut current = rng.random_range(0..classes);
    let entries = (0..len)
        .map(|i| {
            if rng.random_bool(0.15) {
                current = rng.random_range(0..classes);
            }
            let boost = rng.random_range(0.0..8.0);
            let logits: Vec<f64> = (0..classes)
                .map(|c| rng.random_range(-1.0..1.0) + if c == current { boost } else { 0.0 })
                .collect();
            (i, ProbVector::from_logits(&logits))
        })
        .collect();
    WindowProbs { entries }
}

/// Straight-line reference decoder: a window is emitted when its top
/// probability reaches the threshold and the nearest earlier
/// above-threshold window (if any) has a different top class.
pub fn reference_decode(wp: &WindowProbs, threshold: f64) -> Vec<(usize, usize, f64)> {
    let top = |i: usize| {
        let p = wp.entries[i].1.as_slice();
        let mut best = 0;
        for k in 1..p.len() {
            if p[k] > p[best] {
                best = k;
            }
        }
        (best, p[best])
    };
    let mut out = Vec::new();
    for i in 0..wp.entries.len() {
        let (c, p) = top(i);
        if p < threshold {
            continue;
        }
        let mut previous = None;
        for j in (0..i).rev() {
            let (cj, pj) = top(j);
            if pj >= threshold {
                previous = Some(cj);
                break;
            }
        }
        if previous != Some(c) {
            out.push((c, i, p));
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
