//! Keypoint ingestion and preprocessing.
//!
//! Raw frames carry 21 3D points per hand. Normalization expresses every
//! point relative to the wrist (keypoint 0), drops the wrist, and divides by
//! the largest remaining radius, leaving 20 points (60 features) per hand.

use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

pub const KEYPOINTS_PER_HAND: usize = 21;
pub const FEATURE_POINTS_PER_HAND: usize = KEYPOINTS_PER_HAND - 1;
pub const FEATURES_PER_HAND: usize = FEATURE_POINTS_PER_HAND * 3;

/// Hands whose largest wrist-relative radius is below this are rejected.
pub const MIN_HAND_SCALE: f64 = 1e-9;

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHandFrame {
    pub hands: Vec<[Point3; KEYPOINTS_PER_HAND]>,
}

/// A normalized frame: `hands × 20 × 3` features, flattened hand by hand.
#[derive(Debug, Clone, PartialEq)]
pub struct NormFrame(pub Vec<f64>);

impl NormFrame {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for NormFrame {
    fn from(v: Vec<f64>) -> Self {
        NormFrame(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolatedSample {
    pub frames: Vec<NormFrame>,
    pub label: usize,
}

impl IsolatedSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, NormFrame::dim)
    }
}

/// A long frame sequence with its ordered ground-truth sign labels.
///
/// `gt_labels` is empty for unlabeled recordings read from disk; streams
/// assembled by [`concat_isolated`] always carry labels and boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousStream {
    pub frames: Vec<NormFrame>,
    pub gt_labels: Vec<usize>,
    /// Inclusive `(start, end)` frame ranges, one per label.
    pub boundaries: Option<Vec<(usize, usize)>>,
}

impl ContinuousStream {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameLine {
    hands: Vec<Vec<Point3>>,
}

/// Parses the JSON-Lines keypoint format, one frame per non-empty line:
/// `{"hands": [[[x, y, z] x 21], ...]}`.
pub fn parse_keypoint_file(bytes: &[u8]) -> Result<Vec<RawHandFrame>> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        Error::Parse {
            line,
            message: "invalid UTF-8".into(),
        }
    })?;
    let mut frames = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: FrameLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if parsed.hands.is_empty() || parsed.hands.len() > 2 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 1 or 2 hands, found {}", parsed.hands.len()),
            });
        }
        let mut hands = Vec::with_capacity(parsed.hands.len());
        for (h, points) in parsed.hands.into_iter().enumerate() {
            let n = points.len();
            let hand: [Point3; KEYPOINTS_PER_HAND] = points.try_into().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("hand {h} has {n} keypoints, expected {KEYPOINTS_PER_HAND}"),
            })?;
            if hand.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("hand {h} has a non-finite coordinate"),
                });
            }
            hands.push(hand);
        }
        if let Some(first) = frames.first() {
            let first: &RawHandFrame = first;
            if first.hands.len() != hands.len() {
                return Err(Error::Structure(format!(
                    "line {lineno} has {} hands but the recording started with {}",
                    hands.len(),
                    first.hands.len()
                )));
            }
        }
        frames.push(RawHandFrame { hands });
    }
    Ok(frames)
}

/// Serializes frames in the format read by [`parse_keypoint_file`].
pub fn write_keypoint_file(frames: &[RawHandFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        // serde_json writes f64 with round-trip precision
        out.push_str(&serde_json::to_string(f).expect("frames serialize"));
        out.push('\n');
    }
    out
}

pub fn normalize_frame(raw: &RawHandFrame) -> Result<NormFrame> {
    let mut features = Vec::with_capacity(raw.hands.len() * FEATURES_PER_HAND);
    for (h, hand) in raw.hands.iter().enumerate() {
        let wrist = hand[0];
        let rel: Vec<Point3> = hand[1..]
            .iter()
            .map(|p| [p[0] - wrist[0], p[1] - wrist[1], p[2] - wrist[2]])
            .collect();
        let scale = rel
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0, f64::max);
        if scale < MIN_HAND_SCALE {
            return Err(Error::DegenerateFrame { hand: h });
        }
        for p in rel {
            features.extend(p.iter().map(|c| c / scale));
        }
    }
    Ok(NormFrame(features))
}

pub fn normalize_recording(raw: &[RawHandFrame]) -> Result<Vec<NormFrame>> {
    raw.iter().map(normalize_frame).collect()
}

/// Uniform linear-interpolation resampling to `target` frames.
pub fn resample_sequence(frames: &[NormFrame], target: usize) -> Result<Vec<NormFrame>> {
    if target < 1 {
        return Err(Error::InvalidArgument("resample target must be at least 1".into()));
    }
    if frames.is_empty() {
        return Err(Error::InvalidArgument("cannot resample an empty sequence".into()));
    }
    let dim = frames[0].dim();
    if frames.iter().any(|f| f.dim() != dim) {
        return Err(Error::Shape("frames differ in feature dimension".into()));
    }
    let len = frames.len();
    if len == target {
        return Ok(frames.to_vec());
    }
    if len == 1 || target == 1 {
        return Ok(vec![frames[0].clone(); target]);
    }
    let out = (0..target)
        .map(|i| {
            // exact at both ends: i·(T−1) is an integer
            let pos = (i * (len - 1)) as f64 / (target - 1) as f64;
            let lo = (pos.floor() as usize).min(len - 1);
            let hi = (lo + 1).min(len - 1);
            let frac = pos - lo as f64;
            if frac == 0.0 || lo == hi {
                return frames[lo].clone();
            }
            let (a, b) = (&frames[lo].0, &frames[hi].0);
            NormFrame(
                a.iter()
                    .zip(b)
                    .map(|(&x, &y)| x + (y - x) * frac)
                    .collect(),
            )
        })
        .collect();
    Ok(out)
}

/// Concatenates `samples` in the order given by `order`, which must be a
/// permutation of `0..samples.len()`.
pub fn concat_isolated(samples: &[IsolatedSample], order: &[usize]) -> Result<ContinuousStream> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to concatenate".into()));
    }
    if order.len() != samples.len() {
        return Err(Error::InvalidArgument(format!(
            "order has {} entries for {} samples",
            order.len(),
            samples.len()
        )));
    }
    let mut seen = vec![false; samples.len()];
    for &i in order {
        if i >= samples.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!("order is not a permutation (index {i})")));
        }
    }
    let dim = samples[0].dim();
    if samples.iter().any(|s| s.frames.iter().any(|f| f.dim() != dim)) {
        return Err(Error::Shape("samples differ in feature dimension".into()));
    }

    let total: usize = samples.iter().map(IsolatedSample::len).sum();
    let mut frames = Vec::with_capacity(total);
    let mut gt_labels = Vec::with_capacity(order.len());
    let mut boundaries = Vec::with_capacity(order.len());
    for &i in order {
        let s = &samples[i];
        if s.is_empty() {
            return Err(Error::InvalidArgument(format!("sample {i} has no frames")));
        }
        let start = frames.len();
        frames.extend(s.frames.iter().cloned());
        boundaries.push((start, frames.len() - 1));
        gt_labels.push(s.label);
    }
    Ok(ContinuousStream {
        frames,
        gt_labels,
        boundaries: Some(boundaries),
    })
}

/// Builds `n_streams` continuous streams. Each stream takes one random
/// sample from each of `signs_per_stream` distinct classes (drawn from the
/// classes present in `pool`) and concatenates them in random order.
pub fn make_streams(
    pool: &[IsolatedSample],
    n_streams: usize,
    signs_per_stream: usize,
    seed: u64,
) -> Result<Vec<ContinuousStream>> {
    let mut classes: Vec<usize> = pool.iter().map(|s| s.label).collect();
    classes.sort_unstable();
    classes.dedup();
    if signs_per_stream == 0 || signs_per_stream > classes.len() {
        return Err(Error::InvalidArgument(format!(
            "{signs_per_stream} signs per stream requested but the pool has {} classes",
            classes.len()
        )));
    }
    let by_class: Vec<Vec<&IsolatedSample>> = classes
        .iter()
        .map(|&c| pool.iter().filter(|s| s.label == c).collect())
        .collect();
    (0..n_streams)
        .map(|k| {
            let mut rng = rng_for(seed, "streams", k as u64);
            let mut picked_classes: Vec<usize> = (0..classes.len()).collect();
            picked_classes.shuffle(&mut rng);
            picked_classes.truncate(signs_per_stream);
            let picked: Vec<IsolatedSample> = picked_classes
                .iter()
                .map(|&ci| (*by_class[ci].choose(&mut rng).expect("non-empty class")).clone())
                .collect();
            let order: Vec<usize> = (0..picked.len()).collect();
            concat_isolated(&picked, &order)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: PathBuf,
    pub label: usize,
}

/// A continuous recording listed in a stream manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamManifestEntry {
    pub file: PathBuf,
    #[serde(default)]
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<Vec<(usize, usize)>>,
}

pub fn parse_manifest(bytes: &[u8]) -> Result<Vec<ManifestEntry>> {
    Ok(serde_json::from_slice(bytes)?)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn resolve(base: &Path, file: &Path) -> PathBuf {
    if file.is_absolute() {
        file.to_path_buf()
    } else {
        base.join(file)
    }
}

/// Reads and normalizes one keypoint recording.
pub fn load_recording(path: &Path) -> Result<Vec<NormFrame>> {
    let raw = parse_keypoint_file(&read(path)?).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })?;
    normalize_recording(&raw)
}

/// Loads an isolated-sign dataset manifest. Paths are relative to the
/// manifest's directory; every recording is resampled to `window` frames.
pub fn load_isolated_dataset(manifest: &Path, window: usize) -> Result<Vec<IsolatedSample>> {
    let entries = parse_manifest(&read(manifest)?)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(entries.len());
    let mut dim = None;
    for entry in entries {
        let path = resolve(base, &entry.file);
        let frames = load_recording(&path)?;
        if frames.is_empty() {
            return Err(Error::InvalidArgument(format!("{} has no frames", path.display())));
        }
        let d = frames[0].dim();
        if *dim.get_or_insert(d) != d {
            return Err(Error::Structure(format!(
                "{} has feature dimension {d}, dataset uses {}",
                path.display(),
                dim.unwrap_or(0)
            )));
        }
        out.push(IsolatedSample {
            frames: resample_sequence(&frames, window)?,
            label: entry.label,
        });
    }
    Ok(out)
}

/// Loads continuous recordings from a stream manifest. Frames are
/// normalized but not resampled.
pub fn load_stream_manifest(manifest: &Path) -> Result<Vec<ContinuousStream>> {
    let entries: Vec<StreamManifestEntry> = serde_json::from_slice(&read(manifest)?)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    entries
        .into_iter()
        .map(|e| {
            Ok(ContinuousStream {
                frames: load_recording(&resolve(base, &e.file))?,
                gt_labels: e.labels,
                boundaries: e.boundaries,
            })
        })
        .collect()
}
