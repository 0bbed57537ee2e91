use rand::seq::index;

use super::{backward, sample_loss, ModelWeights};
use crate::error::{Error, Result};
use crate::keypoints::IsolatedSample;
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub max_relative_error: f64,
    /// Parameter tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `|a − f| / max(|a|, |f|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares analytic gradients with central differences on every parameter
/// and returns the largest relative error.
pub fn gradient_check(weights: &ModelWeights, sample: &IsolatedSample, epsilon: f64) -> Result<f64> {
    Ok(gradient_check_sampled(weights, sample, epsilon, usize::MAX, 0)?.max_relative_error)
}

/// Like [`gradient_check`] but on at most `max_coords` coordinates chosen by
/// `seed`. Every coordinate is checked when the model is small enough.
pub fn gradient_check_sampled(
    weights: &ModelWeights,
    sample: &IsolatedSample,
    epsilon: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradientReport> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let (grads, _) = backward(sample, weights)?;
    let names = weights.tensor_names();
    let lens: Vec<usize> = weights.tensors().iter().map(|t| t.len()).collect();
    let total: usize = lens.iter().sum();

    let mut coords: Vec<usize> = if max_coords >= total {
        (0..total).collect()
    } else {
        let mut rng = rng_for(seed, "gradcheck", 0);
        let mut v = index::sample(&mut rng, total, max_coords).into_vec();
        v.sort_unstable();
        v
    };
    coords.dedup();

    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut probe = weights.clone();
    let mut report = GradientReport {
        max_relative_error: 0.0,
        worst: None,
        checked: coords.len(),
    };
    for &flat in &coords {
        let (mut t, mut i) = (0, flat);
        while i >= lens[t] {
            i -= lens[t];
            t += 1;
        }
        let original = weights.tensors()[t][i];
        probe.tensors_mut()[t][i] = original + epsilon;
        let up = sample_loss(sample, &probe)?;
        probe.tensors_mut()[t][i] = original - epsilon;
        let down = sample_loss(sample, &probe)?;
        probe.tensors_mut()[t][i] = original;

        let numeric = (up - down) / (2.0 * epsilon);
        let err = relative_error(analytic[flat], numeric);
        if report.worst.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some((names[t].clone(), i));
        }
    }
    Ok(report)
}
