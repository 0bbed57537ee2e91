//! Seeded synthetic gesture classes.
//!
//! Each class is a bundle of per-feature sinusoidal trajectories over the
//! normalized clip time `u ∈ [0, 1]`:
//! `a_d · sin(2π ω_d u + φ_d) + b_d`. Instances are rendered at a jittered
//! native length, resampled to the requested length, then perturbed with
//! Gaussian noise.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::keypoints::{resample_sequence, IsolatedSample, NormFrame, RawHandFrame, KEYPOINTS_PER_HAND};
use crate::rng::rng_for;

pub const AMPLITUDE_RANGE: (f64, f64) = (0.2, 1.0);
pub const FREQUENCY_RANGE: (f64, f64) = (0.5, 3.0);
pub const OFFSET_RANGE: (f64, f64) = (-0.5, 0.5);
pub const SPEED_JITTER: (f64, f64) = (0.8, 1.25);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub offset: f64,
}

impl Trajectory {
    /// Value at normalized time `u ∈ [0, 1]`.
    pub fn at(&self, u: f64) -> f64 {
        self.amplitude * (self.frequency * u * 2.0 * PI + self.phase).sin() + self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototype {
    pub class_id: usize,
    pub features: Vec<Trajectory>,
}

impl ClassPrototype {
    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// The noiseless, unjittered trajectory rendered at `length` frames.
    pub fn clean(&self, length: usize) -> Vec<NormFrame> {
        render(self, length)
    }
}

fn render(proto: &ClassPrototype, length: usize) -> Vec<NormFrame> {
    let denom = (length.max(2) - 1) as f64;
    (0..length)
        .map(|t| {
            let u = t as f64 / denom;
            NormFrame(proto.features.iter().map(|f| f.at(u)).collect())
        })
        .collect()
}

pub fn make_class_prototype(seed: u64, class_id: usize, dim: usize) -> ClassPrototype {
    let mut rng = rng_for(seed, "prototype", class_id as u64);
    let features = (0..dim)
        .map(|_| Trajectory {
            amplitude: rng.random_range(AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1),
            frequency: rng.random_range(FREQUENCY_RANGE.0..=FREQUENCY_RANGE.1),
            phase: rng.random_range(0.0..2.0 * PI),
            offset: rng.random_range(OFFSET_RANGE.0..=OFFSET_RANGE.1),
        })
        .collect();
    ClassPrototype { class_id, features }
}

/// Renders one noisy, speed-jittered instance of `proto` at `length` frames.
pub fn sample_instance(
    proto: &ClassPrototype,
    sample_seed: u64,
    noise_sigma: f64,
    length: usize,
) -> Result<IsolatedSample> {
    if length < 2 {
        return Err(Error::InvalidArgument("sample length must be at least 2".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad noise sigma {noise_sigma}")));
    }
    let mut rng = rng_for(sample_seed, "instance", proto.class_id as u64);
    let jitter = rng.random_range(SPEED_JITTER.0..=SPEED_JITTER.1);
    let native = ((length as f64 * jitter).round() as usize).max(2);
    let mut frames = resample_sequence(&render(proto, native), length)?;
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("valid sigma");
        for f in &mut frames {
            for x in &mut f.0 {
                *x += normal.sample(&mut rng);
            }
        }
    }
    Ok(IsolatedSample {
        frames,
        label: proto.class_id,
    })
}

/// `classes × n_per_class` samples, grouped by class in ascending order.
pub fn make_dataset(
    seed: u64,
    classes: usize,
    n_per_class: usize,
    dim: usize,
    window: usize,
    noise_sigma: f64,
) -> Result<Vec<IsolatedSample>> {
    if classes < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if n_per_class < 1 || dim < 1 {
        return Err(Error::InvalidArgument("need at least 1 sample per class and 1 feature".into()));
    }
    let protos: Vec<ClassPrototype> = (0..classes).map(|c| make_class_prototype(seed, c, dim)).collect();
    (0..classes * n_per_class)
        .into_par_iter()
        .map(|i| {
            let proto = &protos[i / n_per_class];
            let sample_seed = crate::rng::derive_seed(seed, "sample", i as u64);
            sample_instance(proto, sample_seed, noise_sigma, window)
        })
        .collect()
}

/// Radius of the anchor point used when writing synthetic features as a
/// pseudo-hand. Larger than any synthetic feature triple, so normalization
/// maps feature triples to `triple / SYNTHETIC_ANCHOR_RADIUS`.
pub const SYNTHETIC_ANCHOR_RADIUS: f64 = 4.0;

/// Lays out a synthetic feature vector as one pseudo-hand: wrist at the
/// origin, feature triples in keypoints `1..=dim/3`, the anchor in keypoint
/// 20, everything else at the wrist.
pub fn to_pseudo_hand(frame: &NormFrame) -> Result<RawHandFrame> {
    let dim = frame.dim();
    if dim % 3 != 0 || dim / 3 > KEYPOINTS_PER_HAND - 2 {
        return Err(Error::InvalidArgument(format!(
            "feature dimension {dim} must be a multiple of 3 and at most {}",
            3 * (KEYPOINTS_PER_HAND - 2)
        )));
    }
    let mut hand = [[0.0; 3]; KEYPOINTS_PER_HAND];
    for (k, triple) in frame.0.chunks_exact(3).enumerate() {
        let norm = triple.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm >= SYNTHETIC_ANCHOR_RADIUS {
            return Err(Error::InvalidArgument(format!(
                "feature triple {k} has radius {norm} beyond the anchor"
            )));
        }
        hand[k + 1] = [triple[0], triple[1], triple[2]];
    }
    hand[KEYPOINTS_PER_HAND - 1] = [SYNTHETIC_ANCHOR_RADIUS, 0.0, 0.0];
    Ok(RawHandFrame { hands: vec![hand] })
}
