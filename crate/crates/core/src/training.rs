//! Dataset splitting, Adam with step decay, the training loop, isolated
//! evaluation and the layers × heads ablation grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keypoints::IsolatedSample;
use crate::model::{backward, predict, ModelConfig, ModelWeights};
use crate::rng::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
}

/// Batch 50, learning rate 0.005 divided by 10 every 10 epochs, at most 200
/// epochs with early stopping (patience 20), weight decay 1e-4, β1 = 0.92.
pub fn default_config() -> TrainConfig {
    TrainConfig {
        batch_size: 50,
        lr0: 0.005,
        lr_decay_every: 10,
        lr_decay_factor: 10.0,
        max_epochs: 200,
        weight_decay: 1e-4,
        beta1: 0.92,
        beta2: 0.999,
        adam_eps: 1e-8,
        early_stop_patience: 20,
        seed: 0,
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        default_config()
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr0 > 0.0) || !(self.lr_decay_factor > 0.0) {
            return Err(Error::Config("lr0 and lr_decay_factor must be positive".into()));
        }
        if self.lr_decay_every < 1 {
            return Err(Error::Config("lr_decay_every must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("adam_eps must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }
}

/// `lr0 / factor^floor(epoch / every)`
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let drops = (epoch / cfg.lr_decay_every.max(1)) as i32;
    cfg.lr0 / cfg.lr_decay_factor.powi(drops)
}

/// Stratified seeded split. Each class contributes `round(n · ratio)`
/// samples to the first partition, clamped so that classes with at least two
/// samples land in both partitions. Singleton classes go to the first
/// partition with a warning. Input order is preserved within partitions.
pub fn split_dataset(
    samples: &[IsolatedSample],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<IsolatedSample>, Vec<IsolatedSample>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut in_first = vec![false; samples.len()];
    for (&label, idx) in &by_class {
        let n = idx.len();
        if n < 2 {
            log::warn!("class {label} has {n} sample(s); it is kept in the training partition only");
            idx.iter().for_each(|&i| in_first[i] = true);
            continue;
        }
        let keep = ((n as f64 * ratio).round() as usize).clamp(1, n - 1);
        let mut shuffled = idx.clone();
        shuffled.shuffle(&mut rng_for(seed, "split", label as u64));
        shuffled[..keep].iter().for_each(|&i| in_first[i] = true);
    }
    let (first, second): (Vec<_>, Vec<_>) = samples
        .iter()
        .zip(&in_first)
        .partition(|(_, &keep)| keep);
    Ok((
        first.into_iter().map(|(s, _)| s.clone()).collect(),
        second.into_iter().map(|(s, _)| s.clone()).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelWeights) -> Self {
        Self::for_shapes(params.tensors().iter().map(|t| t.len()))
    }

    pub fn for_shapes(lens: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<f64>> = lens.into_iter().map(|n| vec![0.0; n]).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One Adam step over parallel lists of tensors, with decoupled weight decay
/// applied before the moment update. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step_tensors(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    names: &[String],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape("parameter, gradient and optimizer state counts differ".into()));
    }
    for (ti, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[ti].len() {
            return Err(Error::Shape(format!("tensor {ti} shape mismatch")));
        }
        if let Some(index) = g.iter().position(|x| !x.is_finite()) {
            let param = names.get(ti).cloned().unwrap_or_else(|| format!("tensor {ti}"));
            return Err(Error::NonFiniteGradient { param, index });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (ti, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[ti], &mut state.v[ti]);
        for i in 0..p.len() {
            p[i] -= lr * cfg.weight_decay * p[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

pub fn adam_step(
    params: &mut ModelWeights,
    grads: &ModelWeights,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let names = params.tensor_names();
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    adam_step_tensors(&mut p, &g, &names, state, lr, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.records[e].val_accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_accuracy,lr\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.loss, r.val_accuracy, r.lr);
        }
        out
    }
}

fn check_dataset(samples: &[IsolatedSample], cfg: &ModelConfig, what: &str) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if s.len() != cfg.window {
            return Err(Error::Shape(format!("{what} sample {i} has {} frames, window is {}", s.len(), cfg.window)));
        }
        if s.label >= cfg.classes {
            return Err(Error::InvalidArgument(format!(
                "{what} sample {i} has label {} but the model has {} classes",
                s.label, cfg.classes
            )));
        }
    }
    Ok(())
}

/// Mean loss and mean gradient over `batch`. Per-sample gradients may be
/// computed in parallel; they are always summed in batch order.
fn batch_gradient(batch: &[&IsolatedSample], weights: &ModelWeights) -> Result<(ModelWeights, f64)> {
    let mut total = ModelWeights::zeros(weights.config);
    let mut loss = 0.0;
    let chunk = rayon::current_num_threads().max(1);
    for group in batch.chunks(chunk) {
        let results: Vec<Result<(ModelWeights, f64)>> = group.par_iter().map(|s| backward(s, weights)).collect();
        for r in results {
            let (g, l) = r?;
            total.add_scaled(&g, 1.0);
            loss += l;
        }
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    Ok((total, loss / n))
}

/// Mini-batch Adam training with per-epoch validation and early stopping.
/// Returns the weights of the first epoch that reached the best validation
/// accuracy.
pub fn train(
    train_set: &[IsolatedSample],
    val_set: &[IsolatedSample],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(ModelWeights, TrainHistory)> {
    mcfg.validate()?;
    tcfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if val_set.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    check_dataset(train_set, mcfg, "training")?;
    check_dataset(val_set, mcfg, "validation")?;

    let mut weights = ModelWeights::init(*mcfg, derive_seed(tcfg.seed, "init", 0))?;
    let mut history = TrainHistory::default();
    if tcfg.max_epochs == 0 {
        return Ok((weights, history));
    }
    let mut state = AdamState::new(&weights);
    let mut best = weights.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut since_best = 0usize;

    for epoch in 0..tcfg.max_epochs {
        let lr = lr_at_epoch(tcfg, epoch);
        let mut order: Vec<&IsolatedSample> = train_set.iter().collect();
        order.shuffle(&mut rng_for(tcfg.seed, "epoch-shuffle", epoch as u64));

        let mut loss_sum = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let (grads, loss) = batch_gradient(batch, &weights)?;
            adam_step(&mut weights, &grads, &mut state, lr, tcfg)?;
            loss_sum += loss * batch.len() as f64;
        }
        let val_accuracy = evaluate_isolated(&weights, val_set)?;
        let loss = loss_sum / train_set.len() as f64;
        log::info!("epoch {epoch:3}  loss {loss:.5}  val_acc {val_accuracy:.4}  lr {lr:.2e}");
        history.records.push(EpochRecord {
            epoch,
            loss,
            val_accuracy,
            lr,
        });

        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best = weights.clone();
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tcfg.early_stop_patience {
                break;
            }
        }
    }
    Ok((best, history))
}

pub fn predict_labels(weights: &ModelWeights, samples: &[IsolatedSample]) -> Result<Vec<usize>> {
    samples
        .par_iter()
        .map(|s| predict(&s.frames, weights).map(|p| p.argmax().0))
        .collect()
}

/// Fraction of samples whose argmax class equals the label.
pub fn evaluate_isolated(weights: &ModelWeights, test_set: &[IsolatedSample]) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let predicted = predict_labels(weights, test_set)?;
    let correct = predicted
        .iter()
        .zip(test_set)
        .filter(|(p, s)| **p == s.label)
        .count();
    Ok(correct as f64 / test_set.len() as f64)
}

/// Train / validation / test partitions for one ablation column.
#[derive(Debug, Clone)]
pub struct AblationDataset {
    pub name: String,
    pub train: Vec<IsolatedSample>,
    pub val: Vec<IsolatedSample>,
    pub test: Vec<IsolatedSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub layers: usize,
    pub heads: usize,
    /// Test accuracy in `[0, 1]` per dataset, or the configuration error.
    pub accuracies: Vec<std::result::Result<f64, String>>,
}

impl AblationRow {
    /// `"1 layer with 4 heads"`, `"12 layers with 8 heads"`.
    pub fn label(&self) -> String {
        let l = if self.layers == 1 { "layer" } else { "layers" };
        let h = if self.heads == 1 { "head" } else { "heads" };
        format!("{} {l} with {} {h}", self.layers, self.heads)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub datasets: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// `Model,<dataset>...` with accuracies as percentages to two decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("Model");
        for d in &self.datasets {
            out.push(',');
            out.push_str(&csv_field(d));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.label());
            for a in &row.accuracies {
                out.push(',');
                match a {
                    Ok(acc) => {
                        let _ = write!(out, "{:.2}", acc * 100.0);
                    }
                    Err(e) => out.push_str(&csv_field(&format!("error: {e}"))),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Trains and evaluates one model per `(layers, heads)` cell, layers-major.
pub fn ablate(
    layer_choices: &[usize],
    head_choices: &[usize],
    datasets: &[AblationDataset],
    base: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(layer_choices.len() * head_choices.len());
    for &layers in layer_choices {
        for &heads in head_choices {
            let mcfg = ModelConfig { layers, heads, ..*base };
            let mut accuracies = Vec::with_capacity(datasets.len());
            for ds in datasets {
                let cell = match mcfg.validate() {
                    Err(Error::Config(msg)) => Err(msg),
                    Err(e) => return Err(e),
                    Ok(()) => {
                        let (w, _) = train(&ds.train, &ds.val, &mcfg, tcfg)?;
                        Ok(evaluate_isolated(&w, &ds.test)?)
                    }
                };
                if let Ok(acc) = &cell {
                    log::info!("{layers} layers x {heads} heads on {}: {acc:.4}", ds.name);
                }
                accuracies.push(cell);
            }
            rows.push(AblationRow {
                layers,
                heads,
                accuracies,
            });
        }
    }
    Ok(AblationTable {
        datasets: datasets.iter().map(|d| d.name.clone()).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoints::NormFrame;

    fn samples(per_class: &[usize]) -> Vec<IsolatedSample> {
        let mut out = Vec::new();
        for (label, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                out.push(IsolatedSample {
                    frames: vec![NormFrame(vec![i as f64, label as f64])],
                    label,
                });
            }
        }
        out
    }

    #[test]
    fn defaults_and_schedule() {
        let c = default_config();
        assert_eq!(c.batch_size, 50);
        assert_eq!(c.lr0, 0.005);
        assert_eq!(c.beta1, 0.92);
        assert_eq!(c.weight_decay, 1e-4);
        assert_eq!(c.max_epochs, 200);
        assert_eq!(lr_at_epoch(&c, 0), 0.005);
        assert_eq!(lr_at_epoch(&c, 9), 0.005);
        assert!((lr_at_epoch(&c, 10) - 0.0005).abs() < 1e-18);
        assert!((lr_at_epoch(&c, 25) - 0.00005).abs() < 1e-18);
        for e in 0..100 {
            assert!(lr_at_epoch(&c, e + 1) <= lr_at_epoch(&c, e));
        }
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let data = samples(&[20; 10]);
        let (a, b) = split_dataset(&data, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (160, 40));
        for c in 0..10 {
            assert_eq!(b.iter().filter(|s| s.label == c).count(), 4);
        }
        assert_eq!((a.clone(), b.clone()), split_dataset(&data, 0.8, 3).unwrap());
        let mut union: Vec<_> = a.iter().chain(&b).map(|s| (s.label, s.frames[0].0[0] as usize)).collect();
        union.sort_unstable();
        let mut all: Vec<_> = data.iter().map(|s| (s.label, s.frames[0].0[0] as usize)).collect();
        all.sort_unstable();
        assert_eq!(union, all);
        assert!(split_dataset(&data, 1.0, 3).is_err());
    }

    #[test]
    fn singleton_class_goes_to_train() {
        let data = samples(&[1, 2, 5]);
        let (a, b) = split_dataset(&data, 0.8, 0).unwrap();
        assert!(a.iter().any(|s| s.label == 0));
        assert!(!b.iter().any(|s| s.label == 0));
        assert!(a.iter().any(|s| s.label == 1) && b.iter().any(|s| s.label == 1));
    }

    fn scalar_step(w: &mut f64, g: f64, state: &mut AdamState, lr: f64, cfg: &TrainConfig) -> Result<()> {
        let mut p = [*w];
        {
            let mut params: Vec<&mut [f64]> = vec![&mut p[..]];
            adam_step_tensors(&mut params, &[&[g]], &["w".into()], state, lr, cfg)?;
        }
        *w = p[0];
        Ok(())
    }

    #[test]
    fn first_adam_step_is_sign_of_gradient() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..default_config()
        };
        for g in [3.7, -0.02, 1e-3] {
            let mut w = 0.5;
            let mut st = AdamState::for_shapes([1]);
            scalar_step(&mut w, g, &mut st, 0.01, &cfg).unwrap();
            assert!(((w - 0.5) + 0.01 * g.signum()).abs() < 0.01 * 1e-5, "g={g} w={w}");
        }
    }

    #[test]
    fn zero_gradient_is_identity_and_counts_steps() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..default_config()
        };
        let mut w = -1.25;
        let mut st = AdamState::for_shapes([1]);
        scalar_step(&mut w, 0.0, &mut st, 0.1, &cfg).unwrap();
        scalar_step(&mut w, 0.0, &mut st, 0.1, &cfg).unwrap();
        assert_eq!(w, -1.25);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..default_config()
        };
        let mut w: f64 = 1.0;
        let mut st = AdamState::for_shapes([1]);
        let mut f = w * w;
        for _ in 0..2 {
            let g = 2.0 * w;
            scalar_step(&mut w, g, &mut st, 0.1, &cfg).unwrap();
            assert!(w * w < f);
            f = w * w;
        }
        // independent simulation: m1 = 0.08·2, v1 = 0.001·4 → step = 0.1 exactly (up to eps)
        assert!((w - 0.8).abs() < 1e-3, "{w}");
    }

    #[test]
    fn non_finite_gradients_abort_without_touching_params() {
        let cfg = default_config();
        let mut p = [1.0, 2.0];
        let mut st = AdamState::for_shapes([2]);
        let err = {
            let mut params: Vec<&mut [f64]> = vec![&mut p[..]];
            adam_step_tensors(&mut params, &[&[0.1, f64::NAN]], &["layers.0.key".into()], &mut st, 0.1, &cfg)
        };
        match err {
            Err(Error::NonFiniteGradient { param, index }) => {
                assert_eq!(param, "layers.0.key");
                assert_eq!(index, 1);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(p, [1.0, 2.0]);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn ablation_row_labels() {
        let row = |layers, heads| AblationRow {
            layers,
            heads,
            accuracies: vec![],
        };
        assert_eq!(row(1, 4).label(), "1 layer with 4 heads");
        assert_eq!(row(12, 8).label(), "12 layers with 8 heads");
    }
}
