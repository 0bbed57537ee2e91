//! Sign boundary detection in continuous streams.
//!
//! The isolated-sign classifier is applied to every `window`-frame slice of
//! a stream. Each window emits its argmax class when the top probability
//! reaches the threshold and `Blank` otherwise. Blanks are discarded and runs
//! of identical consecutive classes are collapsed to their first window.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::keypoints::{ContinuousStream, NormFrame};
use crate::model::{predict, ModelWeights, ProbVector};
use crate::training::csv_field;

pub const DEFAULT_WINDOW: usize = 50;
pub const DEFAULT_STRIDE: usize = 1;
pub const DEFAULT_THRESHOLD: f64 = 0.51;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window<'a> {
    pub start: usize,
    pub frames: &'a [NormFrame],
}

/// Windows starting at `0, stride, 2·stride, …` that fit inside the stream.
pub fn slide(stream: &ContinuousStream, window: usize, stride: usize) -> Result<Vec<Window<'_>>> {
    if stride < 1 || window < 1 {
        return Err(Error::InvalidArgument("window and stride must be at least 1".into()));
    }
    let n = stream.len();
    if n < window {
        return Err(Error::StreamTooShort { frames: n, window });
    }
    Ok((0..=(n - window) / stride)
        .map(|k| {
            let start = k * stride;
            Window {
                start,
                frames: &stream.frames[start..start + window],
            }
        })
        .collect())
}

/// Per-window class probabilities in window order.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowProbs {
    pub entries: Vec<(usize, ProbVector)>,
}

impl WindowProbs {
    /// Wraps raw probability rows as windows at `0, stride, 2·stride, …`.
    pub fn from_rows(rows: Vec<Vec<f64>>, stride: usize) -> Result<Self> {
        let entries = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| Ok((i * stride, ProbVector::new(r)?)))
            .collect::<Result<_>>()?;
        Ok(WindowProbs { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn window_probs(weights: &ModelWeights, windows: &[Window<'_>]) -> Result<WindowProbs> {
    let probs: Vec<ProbVector> = windows
        .par_iter()
        .map(|w| predict(w.frames, weights))
        .collect::<Result<_>>()?;
    Ok(WindowProbs {
        entries: windows.iter().map(|w| w.start).zip(probs).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowLabel {
    Class(usize),
    Blank,
}

/// Thresholded argmax for every window, before run collapse.
pub fn emit_labels(wp: &WindowProbs, threshold: f64) -> Vec<WindowLabel> {
    wp.entries
        .iter()
        .map(|(_, p)| {
            let (c, v) = p.argmax();
            if v >= threshold {
                WindowLabel::Class(c)
            } else {
                WindowLabel::Blank
            }
        })
        .collect()
}

/// Classes whose probability reaches `threshold` in one window. With a
/// threshold above 0.5 this has at most one element.
pub fn passing_classes(p: &ProbVector, threshold: f64) -> Vec<usize> {
    p.as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= threshold)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecodedLabel {
    pub class: usize,
    /// Index into the window list (not the frame offset).
    pub window: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DecodedLabels(pub Vec<DecodedLabel>);

impl DecodedLabels {
    pub fn classes(&self) -> Vec<usize> {
        self.0.iter().map(|d| d.class).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Threshold, blank, collapse. Blank windows are dropped before runs are
/// collapsed, so `A Blank A` is a single `A`; each label keeps the window
/// that started its run.
pub fn post_process(wp: &WindowProbs, threshold: f64) -> DecodedLabels {
    let mut out: Vec<DecodedLabel> = Vec::new();
    for (i, (label, (_, p))) in emit_labels(wp, threshold).into_iter().zip(&wp.entries).enumerate() {
        if let WindowLabel::Class(c) = label {
            if out.last().map(|d| d.class) != Some(c) {
                out.push(DecodedLabel {
                    class: c,
                    window: i,
                    prob: p[c],
                });
            }
        }
    }
    DecodedLabels(out)
}

/// Every window's argmax with no threshold and no collapse.
pub fn raw_argmax(wp: &WindowProbs) -> DecodedLabels {
    DecodedLabels(
        wp.entries
            .iter()
            .enumerate()
            .map(|(i, (_, p))| {
                let (class, prob) = p.argmax();
                DecodedLabel {
                    class,
                    window: i,
                    prob,
                }
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AvgSoftmax {
    pub value: f64,
    /// False when no window reached the threshold; `value` is 0 then.
    pub any_survivor: bool,
}

/// Mean top-class probability over windows that pass the threshold.
pub fn avg_recognized_softmax(wp: &WindowProbs, threshold: f64) -> AvgSoftmax {
    let survivors: Vec<f64> = wp
        .entries
        .iter()
        .map(|(_, p)| p.argmax().1)
        .filter(|&v| v >= threshold)
        .collect();
    if survivors.is_empty() {
        return AvgSoftmax {
            value: 0.0,
            any_survivor: false,
        };
    }
    AvgSoftmax {
        value: survivors.iter().sum::<f64>() / survivors.len() as f64,
        any_survivor: true,
    }
}

/// Mean top-class probability over all windows.
pub fn avg_max_softmax(wp: &WindowProbs) -> f64 {
    if wp.is_empty() {
        return 0.0;
    }
    wp.entries.iter().map(|(_, p)| p.argmax().1).sum::<f64>() / wp.len() as f64
}

/// Positional mismatches plus the length difference.
pub fn count_false(decoded: &[usize], gt: &[usize]) -> usize {
    let common = decoded.len().min(gt.len());
    let mismatched = decoded[..common]
        .iter()
        .zip(&gt[..common])
        .filter(|(a, b)| a != b)
        .count();
    mismatched + decoded.len().abs_diff(gt.len())
}

/// Levenshtein distance between label sequences.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mismatch {
    pub position: usize,
    pub gt_class: Option<usize>,
    /// Ground-truth class probability in the window that produced the
    /// recognized label.
    pub gt_softmax: Option<f64>,
    pub recognized_class: Option<usize>,
    pub recognized_softmax: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowRecord {
    pub window_start: usize,
    pub argmax_class: usize,
    pub max_prob: f64,
    /// `Some(class)` on the windows that survived threshold and collapse.
    pub emitted_label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamRow {
    pub index: usize,
    pub avg_softmax: f64,
    pub avg_softmax_without_pp: f64,
    pub gt: Vec<usize>,
    pub decoded: Vec<usize>,
    pub mismatches: Vec<Mismatch>,
    pub false_without_pp: usize,
    pub edit_distance: usize,
    pub windows: Vec<WindowRecord>,
    pub error: Option<String>,
}

impl StreamRow {
    pub fn false_with_pp(&self) -> usize {
        self.mismatches.len()
    }

    pub fn windows_csv(&self) -> String {
        let mut out = String::from("window_start,argmax_class,max_prob,emitted_label\n");
        for w in &self.windows {
            let emitted = w.emitted_label.map_or_else(|| "blank".to_string(), |c| c.to_string());
            let _ = writeln!(out, "{},{},{},{}", w.window_start, w.argmax_class, w.max_prob, emitted);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub avg_softmax_with_pp: f64,
    pub avg_softmax_without_pp: f64,
    pub false_with_pp: usize,
    pub false_without_pp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentReport {
    pub rows: Vec<StreamRow>,
    pub false_recognitions: usize,
    pub total_signs: usize,
}

impl SegmentReport {
    pub fn aggregate(&self) -> Aggregate {
        let ok: Vec<&StreamRow> = self.rows.iter().filter(|r| r.error.is_none()).collect();
        let mean = |f: &dyn Fn(&StreamRow) -> f64| {
            if ok.is_empty() {
                0.0
            } else {
                ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
            }
        };
        Aggregate {
            avg_softmax_with_pp: mean(&|r| r.avg_softmax),
            avg_softmax_without_pp: mean(&|r| r.avg_softmax_without_pp),
            false_with_pp: self.false_recognitions,
            false_without_pp: ok.iter().map(|r| r.false_without_pp).sum(),
        }
    }

    /// One line per mismatch; streams without mismatches get one line of
    /// dashes. Stream numbers are 1-based.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "Concatenated sign video,Avg of Softmax output of Recognized class,Ground truth Word class,\
             Softmax output of Ground truth Word class,Recognized class,Softmax output of Recognized class\n",
        );
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        for r in &self.rows {
            if let Some(e) = &r.error {
                let _ = writeln!(out, "{},{},-,-,-,-", r.index + 1, csv_field(&format!("error: {e}")));
                continue;
            }
            if r.mismatches.is_empty() {
                let _ = writeln!(out, "{},{:.4},-,-,-,-", r.index + 1, r.avg_softmax);
            }
            for (k, m) in r.mismatches.iter().enumerate() {
                let (idx, avg) = if k == 0 {
                    ((r.index + 1).to_string(), format!("{:.4}", r.avg_softmax))
                } else {
                    (String::new(), String::new())
                };
                let _ = writeln!(
                    out,
                    "{idx},{avg},{},{},{},{}",
                    opt(m.gt_class.map(|c| c.to_string())),
                    opt(m.gt_softmax.map(|p| format!("{p:.4}"))),
                    opt(m.recognized_class.map(|c| c.to_string())),
                    opt(m.recognized_softmax.map(|p| format!("{p:.4}"))),
                );
            }
        }
        out
    }
}

fn mismatches(decoded: &DecodedLabels, gt: &[usize], wp: &WindowProbs) -> Vec<Mismatch> {
    let len = decoded.len().max(gt.len());
    (0..len)
        .filter_map(|pos| {
            let d = decoded.0.get(pos);
            let g = gt.get(pos).copied();
            if let (Some(d), Some(g)) = (d, g) {
                if d.class == g {
                    return None;
                }
            }
            Some(Mismatch {
                position: pos,
                gt_class: g,
                gt_softmax: match (d, g) {
                    (Some(d), Some(g)) => wp.entries[d.window].1.as_slice().get(g).copied(),
                    _ => None,
                },
                recognized_class: d.map(|d| d.class),
                recognized_softmax: d.map(|d| d.prob),
            })
        })
        .collect()
}

pub fn segment_stream(
    weights: &ModelWeights,
    stream: &ContinuousStream,
    index: usize,
    window: usize,
    stride: usize,
    threshold: f64,
) -> Result<StreamRow> {
    let wins = slide(stream, window, stride)?;
    let wp = window_probs(weights, &wins)?;
    let decoded = post_process(&wp, threshold);
    let baseline = raw_argmax(&wp);
    let mut windows: Vec<WindowRecord> = wp
        .entries
        .iter()
        .map(|(start, p)| {
            let (argmax_class, max_prob) = p.argmax();
            WindowRecord {
                window_start: *start,
                argmax_class,
                max_prob,
                emitted_label: None,
            }
        })
        .collect();
    for d in &decoded.0 {
        windows[d.window].emitted_label = Some(d.class);
    }
    let gt = &stream.gt_labels;
    Ok(StreamRow {
        index,
        avg_softmax: avg_recognized_softmax(&wp, threshold).value,
        avg_softmax_without_pp: avg_max_softmax(&wp),
        gt: gt.clone(),
        decoded: decoded.classes(),
        mismatches: mismatches(&decoded, gt, &wp),
        false_without_pp: count_false(&baseline.classes(), gt),
        edit_distance: edit_distance(&decoded.classes(), gt),
        windows,
        error: None,
    })
}

/// Decodes every stream. A stream that cannot be decoded (for example one
/// shorter than the window) is recorded with its error and excluded from
/// the totals.
pub fn segment_report(
    weights: &ModelWeights,
    streams: &[ContinuousStream],
    window: usize,
    stride: usize,
    threshold: f64,
) -> Result<SegmentReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must be in (0, 1), got {threshold}")));
    }
    if window != weights.config.window {
        return Err(Error::Config(format!(
            "segmentation window {window} differs from the model window {}",
            weights.config.window
        )));
    }
    let mut rows = Vec::with_capacity(streams.len());
    for (i, s) in streams.iter().enumerate() {
        let row = match segment_stream(weights, s, i, window, stride, threshold) {
            Ok(row) => row,
            Err(e @ (Error::StreamTooShort { .. } | Error::Shape(_))) => StreamRow {
                index: i,
                avg_softmax: 0.0,
                avg_softmax_without_pp: 0.0,
                gt: s.gt_labels.clone(),
                decoded: vec![],
                mismatches: vec![],
                false_without_pp: 0,
                edit_distance: 0,
                windows: vec![],
                error: Some(e.to_string()),
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    let ok = rows.iter().filter(|r| r.error.is_none());
    let false_recognitions = ok.clone().map(StreamRow::false_with_pp).sum();
    let total_signs = ok.map(|r| r.gt.len()).sum();
    Ok(SegmentReport {
        rows,
        false_recognitions,
        total_signs,
    })
}
