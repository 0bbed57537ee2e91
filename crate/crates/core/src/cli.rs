//! The `signseg` command line: `gen-data`, `train`, `eval`, `ablate` and
//! `segment`, driven by an optional JSON config with flag overrides.
//!
//! Each subcommand builds all of its artifacts in memory and writes them
//! only once everything succeeded, each file through a temporary name.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{load_config, RunConfig};
use crate::error::{Error, Result};
use crate::keypoints::{
    load_isolated_dataset, load_recording, load_stream_manifest, make_streams, write_keypoint_file,
    ContinuousStream, IsolatedSample, ManifestEntry, StreamManifestEntry,
};
use crate::model::{load_weights, save_weights, ModelConfig, ModelWeights};
use crate::rng::derive_seed;
use crate::segmentation::{segment_report, SegmentReport};
use crate::synthgen::{make_dataset, to_pseudo_hand};
use crate::training::{ablate, evaluate_isolated, split_dataset, train, AblationDataset, TrainConfig, TrainHistory};

#[derive(Debug, Parser)]
#[command(name = "signseg", version, about = "Keypoint sign classifier and continuous-stream boundary detection")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the parallel parts.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic isolated-sign dataset and continuous streams as keypoint files.
    GenData(GenDataArgs),
    /// Train a classifier and write model.bin, history.csv and train_summary.json.
    Train(TrainArgs),
    /// Test-set accuracy of a trained model.
    Eval(EvalArgs),
    /// Train and evaluate every layers × heads cell and write ablation.csv.
    Ablate(AblateArgs),
    /// Decode continuous streams and write per-stream and summary reports.
    Segment(SegmentArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    streams: Option<usize>,
    #[arg(long)]
    signs_per_stream: Option<usize>,
}

#[derive(Debug, Args)]
struct ModelFlags {
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[command(flatten)]
    size: SizeFlags,
}

/// Shared by `train` and `ablate`; the latter takes layers and heads as lists.
#[derive(Debug, Args)]
struct SizeFlags {
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Isolated-sign manifest; synthetic data when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// One manifest per dataset column; synthetic data when absent.
    #[arg(long)]
    data: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    heads: Option<Vec<usize>>,
    #[command(flatten)]
    size: SizeFlags,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long)]
    model: PathBuf,
    /// Continuous keypoint recording (repeatable).
    #[arg(long, conflicts_with = "streams")]
    stream: Vec<PathBuf>,
    /// Comma-separated ground-truth labels, one flag per `--stream`.
    #[arg(long, requires = "stream")]
    labels: Vec<String>,
    /// Stream manifest.
    #[arg(long)]
    streams: Option<PathBuf>,
    /// Isolated-sign manifest whose test partition feeds synthetic streams.
    #[arg(long, conflicts_with_all = ["stream", "streams"])]
    data: Option<PathBuf>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 when a pipeline step fails, 2 on a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.common.threads as usize).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(path) => load_config(&std::fs::read(path).map_err(|e| Error::io(path, e))?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.common.out {
        cfg.output_dir = out.clone();
    }
    let artifacts = match cli.command {
        Command::GenData(a) => {
            override_opt(&mut cfg.data.classes, a.classes);
            override_opt(&mut cfg.data.per_class, a.per_class);
            override_opt(&mut cfg.data.dim, a.dim);
            override_opt(&mut cfg.data.noise, a.noise);
            override_opt(&mut cfg.data.streams, a.streams);
            override_opt(&mut cfg.data.signs_per_stream, a.signs_per_stream);
            if let Some(w) = a.window {
                cfg.model.window = w;
                cfg.segmentation.window = w;
            }
            cfg.validate()?;
            gen_data(&cfg)?
        }
        Command::Train(a) => {
            apply_model_flags(&mut cfg, &a.model);
            override_some(&mut cfg.data.manifest, a.data);
            cfg.validate()?;
            train_cmd(&cfg)?
        }
        Command::Eval(a) => {
            override_some(&mut cfg.data.manifest, a.data);
            cfg.validate()?;
            eval_cmd(&cfg, &a.model)?
        }
        Command::Ablate(a) => {
            apply_size_flags(&mut cfg, &a.size);
            override_opt(&mut cfg.ablation.layers, a.layers);
            override_opt(&mut cfg.ablation.heads, a.heads);
            cfg.validate()?;
            ablate_cmd(&cfg, &a.data)?
        }
        Command::Segment(a) => {
            override_opt(&mut cfg.segmentation.stride, a.stride);
            override_opt(&mut cfg.segmentation.threshold, a.threshold);
            override_some(&mut cfg.data.manifest, a.data.clone());
            override_some(&mut cfg.data.streams_manifest, a.streams.clone());
            segment_cmd(&mut cfg, &a)?
        }
    };
    write_artifacts(&cfg.output_dir, &artifacts)
}

fn override_opt<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn override_some<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn apply_model_flags(cfg: &mut RunConfig, f: &ModelFlags) {
    override_opt(&mut cfg.model.layers, f.layers);
    override_opt(&mut cfg.model.heads, f.heads);
    apply_size_flags(cfg, &f.size);
}

fn apply_size_flags(cfg: &mut RunConfig, f: &SizeFlags) {
    override_opt(&mut cfg.model.d_model, f.d_model);
    override_opt(&mut cfg.model.d_ff, f.d_ff);
    override_opt(&mut cfg.training.max_epochs, f.max_epochs);
}

type Artifacts = Vec<(PathBuf, Vec<u8>)>;

fn write_artifacts(dir: &Path, artifacts: &Artifacts) -> Result<()> {
    for (rel, bytes) in artifacts {
        let path = dir.join(rel);
        let parent = path.parent().unwrap_or(dir);
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let mut tmp = path.clone().into_os_string();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// Train, validation and test partitions of one dataset.
#[derive(Debug, Clone)]
pub struct Partitions {
    pub train: Vec<IsolatedSample>,
    pub val: Vec<IsolatedSample>,
    pub test: Vec<IsolatedSample>,
}

/// The isolated dataset named by the config: the manifest when set,
/// otherwise the synthetic generator seeded from the run seed.
pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<IsolatedSample>> {
    match &cfg.data.manifest {
        Some(m) => load_isolated_dataset(m, cfg.model.window),
        None => make_dataset(
            derive_seed(cfg.seed, "data", 0),
            cfg.data.classes,
            cfg.data.per_class,
            cfg.data.dim,
            cfg.model.window,
            cfg.data.noise,
        ),
    }
}

/// Stratified test split, then a stratified validation split of the rest.
pub fn partition(samples: &[IsolatedSample], cfg: &RunConfig) -> Result<Partitions> {
    let (rest, test) = split_dataset(samples, cfg.data.train_fraction, derive_seed(cfg.seed, "test-split", 0))?;
    let (train, val) = split_dataset(&rest, 1.0 - cfg.data.val_fraction, derive_seed(cfg.seed, "val-split", 0))?;
    Ok(Partitions { train, val, test })
}

/// Continuous streams concatenated from test-partition samples.
pub fn synthetic_streams(test: &[IsolatedSample], cfg: &RunConfig) -> Result<Vec<ContinuousStream>> {
    make_streams(
        test,
        cfg.data.streams,
        cfg.data.signs_per_stream,
        derive_seed(cfg.seed, "streams", 0),
    )
}

pub fn train_config(cfg: &RunConfig) -> TrainConfig {
    cfg.training.to_train_config(derive_seed(cfg.seed, "train", 0))
}

pub fn model_config(cfg: &RunConfig, samples: &[IsolatedSample]) -> ModelConfig {
    let dim = samples.first().map_or(0, IsolatedSample::dim);
    let classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    cfg.model.resolve(dim, classes)
}

fn gen_data(cfg: &RunConfig) -> Result<Artifacts> {
    let samples = load_dataset(&RunConfig {
        data: crate::config::DataSection {
            manifest: None,
            ..cfg.data.clone()
        },
        ..cfg.clone()
    })?;
    let parts = partition(&samples, cfg)?;
    let streams = synthetic_streams(&parts.test, cfg)?;

    let mut out = Artifacts::new();
    let mut manifest = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let file = PathBuf::from(format!("samples/sample_{i:05}.jsonl"));
        let raw = s.frames.iter().map(to_pseudo_hand).collect::<Result<Vec<_>>>()?;
        out.push((file.clone(), write_keypoint_file(&raw).into_bytes()));
        manifest.push(ManifestEntry { file, label: s.label });
    }
    let mut stream_manifest = Vec::with_capacity(streams.len());
    for (k, s) in streams.iter().enumerate() {
        let file = PathBuf::from(format!("streams/stream_{k:03}.jsonl"));
        let raw = s.frames.iter().map(to_pseudo_hand).collect::<Result<Vec<_>>>()?;
        out.push((file.clone(), write_keypoint_file(&raw).into_bytes()));
        stream_manifest.push(StreamManifestEntry {
            file,
            labels: s.gt_labels.clone(),
            boundaries: s.boundaries.clone(),
        });
    }
    out.push(("manifest.json".into(), json(&manifest)?));
    out.push(("streams.json".into(), json(&stream_manifest)?));
    println!(
        "wrote {} samples in {} classes and {} streams to {}",
        samples.len(),
        cfg.data.classes,
        streams.len(),
        cfg.output_dir.display()
    );
    Ok(out)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    model: ModelConfig,
    training: &'a TrainConfig,
    epochs: usize,
    best_epoch: Option<usize>,
    best_val_accuracy: Option<f64>,
    test_accuracy: f64,
    train_samples: usize,
    val_samples: usize,
    test_samples: usize,
}

fn train_cmd(cfg: &RunConfig) -> Result<Artifacts> {
    let samples = load_dataset(cfg)?;
    let parts = partition(&samples, cfg)?;
    let mcfg = model_config(cfg, &samples);
    let tcfg = train_config(cfg);
    let (weights, history) = train(&parts.train, &parts.val, &mcfg, &tcfg)?;
    print_history(&history);
    let test_accuracy = evaluate_isolated(&weights, &parts.test)?;
    println!("test accuracy {test_accuracy:.4} on {} samples", parts.test.len());
    let summary = TrainSummary {
        model: mcfg,
        training: &tcfg,
        epochs: history.records.len(),
        best_epoch: history.best_epoch,
        best_val_accuracy: history.best_val_accuracy(),
        test_accuracy,
        train_samples: parts.train.len(),
        val_samples: parts.val.len(),
        test_samples: parts.test.len(),
    };
    Ok(vec![
        ("model.bin".into(), save_weights(&weights)),
        ("history.csv".into(), history.to_csv().into_bytes()),
        ("train_summary.json".into(), json(&summary)?),
    ])
}

fn print_history(h: &TrainHistory) {
    for r in &h.records {
        println!("epoch {:3}  loss {:.5}  val_acc {:.4}  lr {:.2e}", r.epoch, r.loss, r.val_accuracy, r.lr);
    }
}

fn read_model(path: &Path) -> Result<ModelWeights> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(load_weights(&bytes)?.0)
}

fn check_compatible(weights: &ModelWeights, samples: &[IsolatedSample]) -> Result<()> {
    let c = &weights.config;
    if let Some(s) = samples.iter().find(|s| s.dim() != c.input_dim || s.label >= c.classes) {
        return Err(Error::Shape(format!(
            "data (dimension {}, label {}) does not fit the model (input_dim {}, {} classes)",
            s.dim(),
            s.label,
            c.input_dim,
            c.classes
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    accuracy: f64,
    test_samples: usize,
}

fn eval_cmd(cfg: &RunConfig, model: &Path) -> Result<Artifacts> {
    let weights = read_model(model)?;
    let cfg = RunConfig {
        model: crate::config::ModelSection {
            window: weights.config.window,
            ..cfg.model.clone()
        },
        ..cfg.clone()
    };
    let samples = load_dataset(&cfg)?;
    check_compatible(&weights, &samples)?;
    let parts = partition(&samples, &cfg)?;
    let accuracy = evaluate_isolated(&weights, &parts.test)?;
    println!("test accuracy {accuracy:.4} on {} samples", parts.test.len());
    Ok(vec![(
        "eval.json".into(),
        json(&EvalSummary {
            accuracy,
            test_samples: parts.test.len(),
        })?,
    )])
}

fn dataset_name(manifest: &Path) -> String {
    let stem = manifest.file_stem().map(|s| s.to_string_lossy().into_owned());
    match stem.as_deref() {
        Some("manifest") | None => manifest
            .parent()
            .and_then(Path::file_name)
            .map_or_else(|| "dataset".to_string(), |n| n.to_string_lossy().into_owned()),
        Some(s) => s.to_string(),
    }
}

fn ablate_cmd(cfg: &RunConfig, manifests: &[PathBuf]) -> Result<Artifacts> {
    let mut sources: Vec<(String, RunConfig)> = manifests
        .iter()
        .map(|m| {
            let mut c = cfg.clone();
            c.data.manifest = Some(m.clone());
            (dataset_name(m), c)
        })
        .collect();
    if sources.is_empty() {
        let name = cfg.data.manifest.as_deref().map_or_else(|| "synthetic".to_string(), dataset_name);
        sources.push((name, cfg.clone()));
    }
    let mut datasets = Vec::with_capacity(sources.len());
    let mut dims = None;
    for (name, c) in &sources {
        let samples = load_dataset(c)?;
        let mc = model_config(c, &samples);
        if *dims.get_or_insert((mc.input_dim, mc.classes)) != (mc.input_dim, mc.classes) {
            return Err(Error::Shape(format!(
                "dataset {name} has dimension {} and {} classes, unlike the first dataset",
                mc.input_dim, mc.classes
            )));
        }
        let parts = partition(&samples, c)?;
        datasets.push(AblationDataset {
            name: name.clone(),
            train: parts.train,
            val: parts.val,
            test: parts.test,
        });
    }
    let (input_dim, classes) = dims.unwrap_or((1, 2));
    let base = cfg.model.resolve(input_dim, classes);
    let table = ablate(&cfg.ablation.layers, &cfg.ablation.heads, &datasets, &base, &train_config(cfg))?;
    let csv = table.to_csv();
    print!("{csv}");
    Ok(vec![("ablation.csv".into(), csv.into_bytes())])
}

fn parse_labels(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("label `{s}` is not a class index")))
        })
        .collect()
}

fn load_streams(cfg: &RunConfig, a: &SegmentArgs) -> Result<Vec<ContinuousStream>> {
    if !a.stream.is_empty() {
        if !a.labels.is_empty() && a.labels.len() != a.stream.len() {
            return Err(Error::InvalidArgument(format!(
                "{} --labels given for {} --stream",
                a.labels.len(),
                a.stream.len()
            )));
        }
        return a
            .stream
            .iter()
            .enumerate()
            .map(|(i, path)| {
                Ok(ContinuousStream {
                    frames: load_recording(path)?,
                    gt_labels: a.labels.get(i).map(|l| parse_labels(l)).transpose()?.unwrap_or_default(),
                    boundaries: None,
                })
            })
            .collect();
    }
    if let Some(m) = &cfg.data.streams_manifest {
        return load_stream_manifest(m);
    }
    let samples = load_dataset(cfg)?;
    synthetic_streams(&partition(&samples, cfg)?.test, cfg)
}

#[derive(Serialize)]
struct StreamSummary<'a> {
    index: usize,
    gt: &'a [usize],
    decoded: &'a [usize],
    false_with_pp: usize,
    false_without_pp: usize,
    edit_distance: usize,
    avg_softmax: f64,
    avg_softmax_without_pp: f64,
}

#[derive(Serialize)]
struct SegmentSummary<'a> {
    #[serde(flatten)]
    aggregate: crate::segmentation::Aggregate,
    total_signs: usize,
    window: usize,
    stride: usize,
    threshold: f64,
    streams: Vec<StreamSummary<'a>>,
}

fn segment_cmd(cfg: &mut RunConfig, a: &SegmentArgs) -> Result<Artifacts> {
    let weights = read_model(&a.model)?;
    cfg.model.window = weights.config.window;
    cfg.segmentation.window = weights.config.window;
    cfg.validate()?;
    let streams = load_streams(cfg, a)?;
    let window = cfg.segmentation.window;
    for (i, s) in streams.iter().enumerate() {
        if s.len() < window {
            return Err(Error::StreamTooShort { frames: s.len(), window });
        }
        if let Some(f) = s.frames.iter().find(|f| f.dim() != weights.config.input_dim) {
            return Err(Error::Shape(format!(
                "stream {} has {} features per frame, the model expects {}",
                i + 1,
                f.dim(),
                weights.config.input_dim
            )));
        }
    }
    let report = segment_report(
        &weights,
        &streams,
        window,
        cfg.segmentation.stride,
        cfg.segmentation.threshold,
    )?;
    print_report(&report);
    segment_artifacts(&report, cfg)
}

fn print_report(report: &SegmentReport) {
    for r in &report.rows {
        println!(
            "stream {:3}: {} signs, {} decoded, {} false ({} without post-processing), avg softmax {:.4}",
            r.index + 1,
            r.gt.len(),
            r.decoded.len(),
            r.false_with_pp(),
            r.false_without_pp,
            r.avg_softmax
        );
    }
    let agg = report.aggregate();
    println!(
        "total: {} false recognitions in {} signs ({} without post-processing)",
        agg.false_with_pp, report.total_signs, agg.false_without_pp
    );
}

fn segment_artifacts(report: &SegmentReport, cfg: &RunConfig) -> Result<Artifacts> {
    let mut out = Artifacts::new();
    for r in &report.rows {
        out.push((
            PathBuf::from(format!("segment/stream_{:03}.csv", r.index + 1)),
            r.windows_csv().into_bytes(),
        ));
    }
    out.push(("segment/summary.csv".into(), report.summary_csv().into_bytes()));
    let summary = SegmentSummary {
        aggregate: report.aggregate(),
        total_signs: report.total_signs,
        window: cfg.segmentation.window,
        stride: cfg.segmentation.stride,
        threshold: cfg.segmentation.threshold,
        streams: report
            .rows
            .iter()
            .map(|r| StreamSummary {
                index: r.index + 1,
                gt: &r.gt,
                decoded: &r.decoded,
                false_with_pp: r.false_with_pp(),
                false_without_pp: r.false_without_pp,
                edit_distance: r.edit_distance,
                avg_softmax: r.avg_softmax,
                avg_softmax_without_pp: r.avg_softmax_without_pp,
            })
            .collect(),
    };
    out.push(("segment/aggregate.json".into(), json(&summary)?));
    Ok(out)
}
