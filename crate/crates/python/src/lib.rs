//! Python bindings. Frames cross the boundary as lists of float lists and
//! samples as `(frames, label)` tuples.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use signseg::keypoints::KEYPOINTS_PER_HAND;
use signseg::model::{self, ModelConfig, ModelWeights};
use signseg::segmentation::{self, WindowProbs};
use signseg::training::{self, TrainConfig};
use signseg::{ContinuousStream, IsolatedSample, NormFrame, RawHandFrame};

create_exception!(signseg_py, SignsegError, PyException);

fn err(e: signseg::Error) -> PyErr {
    SignsegError::new_err(e.to_string())
}

pub fn to_frames(rows: Vec<Vec<f64>>) -> Vec<NormFrame> {
    rows.into_iter().map(NormFrame).collect()
}

pub fn from_frames(frames: Vec<NormFrame>) -> Vec<Vec<f64>> {
    frames.into_iter().map(|f| f.0).collect()
}

pub fn to_samples(samples: Vec<(Vec<Vec<f64>>, usize)>) -> Vec<IsolatedSample> {
    samples
        .into_iter()
        .map(|(frames, label)| IsolatedSample {
            frames: to_frames(frames),
            label,
        })
        .collect()
}

pub fn to_raw_frame(hands: Vec<Vec<[f64; 3]>>) -> Result<RawHandFrame, signseg::Error> {
    let hands = hands
        .into_iter()
        .map(|h| {
            let n = h.len();
            h.try_into().map_err(|_| {
                signseg::Error::Shape(format!("a hand has {KEYPOINTS_PER_HAND} keypoints, got {n}"))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RawHandFrame { hands })
}

/// Sinusoidal encoding vector for one position.
#[pyfunction]
fn positional_encoding(pos: usize, d_model: usize) -> PyResult<Vec<f64>> {
    model::positional_encoding(pos, d_model).map_err(err)
}

/// Normalizes one frame given as a list of hands of 21 `[x, y, z]` points.
#[pyfunction]
fn normalize_frame(hands: Vec<Vec<[f64; 3]>>) -> PyResult<Vec<f64>> {
    let raw = to_raw_frame(hands).map_err(err)?;
    Ok(signseg::keypoints::normalize_frame(&raw).map_err(err)?.0)
}

#[pyfunction]
fn resample_sequence(frames: Vec<Vec<f64>>, target: usize) -> PyResult<Vec<Vec<f64>>> {
    let out = signseg::keypoints::resample_sequence(&to_frames(frames), target).map_err(err)?;
    Ok(from_frames(out))
}

/// Decodes rows of window probabilities into `(class, window, prob)` triples.
#[pyfunction]
#[pyo3(signature = (probs, threshold=0.51))]
fn post_process(probs: Vec<Vec<f64>>, threshold: f64) -> PyResult<Vec<(usize, usize, f64)>> {
    let wp = WindowProbs::from_rows(probs, 1).map_err(err)?;
    Ok(segmentation::post_process(&wp, threshold)
        .0
        .iter()
        .map(|d| (d.class, d.window, d.prob))
        .collect())
}

#[pyfunction]
fn count_false(decoded: Vec<usize>, gt: Vec<usize>) -> usize {
    segmentation::count_false(&decoded, &gt)
}

#[pyfunction]
fn edit_distance(a: Vec<usize>, b: Vec<usize>) -> usize {
    segmentation::edit_distance(&a, &b)
}

/// Learning rate of the default schedule at a zero-based epoch.
#[pyfunction]
fn lr_at_epoch(epoch: usize) -> f64 {
    training::lr_at_epoch(&training::default_config(), epoch)
}

#[pyfunction]
fn default_train_config(py: Python<'_>) -> PyResult<Bound<'_, PyDict>> {
    let c = training::default_config();
    let d = PyDict::new(py);
    d.set_item("batch_size", c.batch_size)?;
    d.set_item("lr0", c.lr0)?;
    d.set_item("lr_decay_every", c.lr_decay_every)?;
    d.set_item("lr_decay_factor", c.lr_decay_factor)?;
    d.set_item("max_epochs", c.max_epochs)?;
    d.set_item("weight_decay", c.weight_decay)?;
    d.set_item("beta1", c.beta1)?;
    d.set_item("beta2", c.beta2)?;
    d.set_item("adam_eps", c.adam_eps)?;
    d.set_item("early_stop_patience", c.early_stop_patience)?;
    d.set_item("seed", c.seed)?;
    Ok(d)
}

/// Synthetic isolated samples as `(frames, label)` tuples, grouped by class.
#[pyfunction]
#[pyo3(signature = (seed, classes=10, per_class=20, dim=12, window=50, noise=0.05))]
fn make_dataset(
    seed: u64,
    classes: usize,
    per_class: usize,
    dim: usize,
    window: usize,
    noise: f64,
) -> PyResult<Vec<(Vec<Vec<f64>>, usize)>> {
    let data = signseg::synthgen::make_dataset(seed, classes, per_class, dim, window, noise).map_err(err)?;
    Ok(data.into_iter().map(|s| (from_frames(s.frames), s.label)).collect())
}

#[pyclass(name = "Model", module = "signseg_py")]
pub struct PyModel {
    weights: ModelWeights,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (input_dim, classes, layers=12, heads=8, d_model=128, d_ff=512, window=50, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        input_dim: usize,
        classes: usize,
        layers: usize,
        heads: usize,
        d_model: usize,
        d_ff: usize,
        window: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let config = ModelConfig {
            layers,
            heads,
            d_model,
            d_ff,
            window,
            input_dim,
            classes,
        };
        Ok(Self {
            weights: ModelWeights::init(config, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(|source| err(signseg::Error::Io { path: path.clone(), source }))?;
        Self::from_bytes(&bytes)
    }

    #[staticmethod]
    fn from_bytes(bytes: &[u8]) -> PyResult<Self> {
        let (weights, _) = model::load_weights(bytes).map_err(err)?;
        Ok(Self { weights })
    }

    fn to_bytes(&self) -> Vec<u8> {
        model::save_weights(&self.weights)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, self.to_bytes()).map_err(|source| err(signseg::Error::Io { path: path.clone(), source }))
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = self.weights.config;
        let d = PyDict::new(py);
        d.set_item("layers", c.layers)?;
        d.set_item("heads", c.heads)?;
        d.set_item("d_model", c.d_model)?;
        d.set_item("d_ff", c.d_ff)?;
        d.set_item("window", c.window)?;
        d.set_item("input_dim", c.input_dim)?;
        d.set_item("classes", c.classes)?;
        Ok(d)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.weights.num_parameters()
    }

    /// Class probabilities for one window of frames.
    fn classify(&self, frames: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(model::predict(&to_frames(frames), &self.weights).map_err(err)?.into_vec())
    }

    fn accuracy(&self, samples: Vec<(Vec<Vec<f64>>, usize)>) -> PyResult<f64> {
        training::evaluate_isolated(&self.weights, &to_samples(samples)).map_err(err)
    }

    /// `(start_frame, probs)` for every window of a stream.
    #[pyo3(signature = (frames, stride=1))]
    fn window_probs(&self, frames: Vec<Vec<f64>>, stride: usize) -> PyResult<Vec<(usize, Vec<f64>)>> {
        let stream = ContinuousStream {
            frames: to_frames(frames),
            gt_labels: vec![],
            boundaries: None,
        };
        let wins = segmentation::slide(&stream, self.weights.config.window, stride).map_err(err)?;
        let wp = segmentation::window_probs(&self.weights, &wins).map_err(err)?;
        Ok(wp.entries.into_iter().map(|(s, p)| (s, p.into_vec())).collect())
    }

    /// Decoded `(class, window, prob)` labels for a stream.
    #[pyo3(signature = (frames, threshold=0.51, stride=1))]
    fn segment(&self, frames: Vec<Vec<f64>>, threshold: f64, stride: usize) -> PyResult<Vec<(usize, usize, f64)>> {
        let rows = self.window_probs(frames, stride)?.into_iter().map(|(_, p)| p).collect();
        post_process(rows, threshold)
    }

    /// Largest relative error between analytic and central-difference gradients.
    #[pyo3(signature = (frames, label, epsilon=1e-4))]
    fn gradient_check(&self, frames: Vec<Vec<f64>>, label: usize, epsilon: f64) -> PyResult<f64> {
        let sample = IsolatedSample {
            frames: to_frames(frames),
            label,
        };
        model::gradient_check(&self.weights, &sample, epsilon).map_err(err)
    }

    /// Trains from fresh initial weights and keeps the best-validation
    /// weights. Returns the per-epoch history as dicts.
    #[pyo3(signature = (train, val, max_epochs=None, batch_size=None, seed=0))]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        train: Vec<(Vec<Vec<f64>>, usize)>,
        val: Vec<(Vec<Vec<f64>>, usize)>,
        max_epochs: Option<usize>,
        batch_size: Option<usize>,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let defaults = training::default_config();
        let tcfg = TrainConfig {
            max_epochs: max_epochs.unwrap_or(defaults.max_epochs),
            batch_size: batch_size.unwrap_or(defaults.batch_size),
            seed,
            ..defaults
        };
        let (tr, va, cfg) = (to_samples(train), to_samples(val), self.weights.config);
        let (weights, hist) = py.detach(|| training::train(&tr, &va, &cfg, &tcfg)).map_err(err)?;
        self.weights = weights;
        hist.records
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("epoch", r.epoch)?;
                d.set_item("loss", r.loss)?;
                d.set_item("val_accuracy", r.val_accuracy)?;
                d.set_item("lr", r.lr)?;
                d.set_item("best", hist.best_epoch == Some(r.epoch))?;
                Ok(d)
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        let c = self.weights.config;
        format!(
            "Model(layers={}, heads={}, d_model={}, d_ff={}, window={}, input_dim={}, classes={})",
            c.layers, c.heads, c.d_model, c.d_ff, c.window, c.input_dim, c.classes
        )
    }
}

#[pymodule]
pub fn signseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SignsegError", m.py().get_type::<SignsegError>())?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(positional_encoding, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_frame, m)?)?;
    m.add_function(wrap_pyfunction!(resample_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(post_process, m)?)?;
    m.add_function(wrap_pyfunction!(count_false, m)?)?;
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at_epoch, m)?)?;
    m.add_function(wrap_pyfunction!(default_train_config, m)?)?;
    m.add_function(wrap_pyfunction!(make_dataset, m)?)?;
    Ok(())
}
