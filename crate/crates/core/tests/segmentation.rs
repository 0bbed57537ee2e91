mod common;

use common::{perturbed_weights, random_frames, random_window_probs, reference_decode, rng};
use proptest::prelude::*;
use rand::Rng;
use signseg::model::{predict, ModelConfig};
use signseg::segmentation::{
    count_false, edit_distance, passing_classes, post_process, segment_report, slide, window_probs, WindowProbs,
};
use signseg::ContinuousStream;

fn decoded_triples(wp: &WindowProbs, threshold: f64) -> Vec<(usize, usize, f64)> {
    post_process(wp, threshold).0.iter().map(|d| (d.class, d.window, d.prob)).collect()
}

#[test]
fn decoder_matches_reference_on_random_sequences() {
    let mut r = rng(2024);
    for case in 0..1000 {
        let len = r.random_range(1..=200);
        let classes = [3, 10, 100][case % 3];
        let wp = random_window_probs(&mut r, len, classes);
        for threshold in [0.51, r.random_range(0.05..0.95)] {
            assert_eq!(decoded_triples(&wp, threshold), reference_decode(&wp, threshold), "case {case}");
        }
    }
}

fn arb_window_probs() -> impl Strategy<Value = WindowProbs> {
    (any::<u64>(), 1usize..120, prop::sample::select(vec![2usize, 3, 10, 100]))
        .prop_map(|(seed, len, classes)| random_window_probs(&mut rng(seed), len, classes))
}

proptest! {
    #[test]
    fn decoded_labels_respect_the_invariants(wp in arb_window_probs(), threshold in 0.01f64..0.99) {
        let d = post_process(&wp, threshold);
        prop_assert!(d.len() <= wp.len());
        for pair in d.0.windows(2) {
            prop_assert_ne!(pair[0].class, pair[1].class);
            prop_assert!(pair[0].window < pair[1].window);
        }
        for x in &d.0 {
            prop_assert!(x.prob >= threshold);
            prop_assert_eq!(x.prob, wp.entries[x.window].1[x.class]);
        }
    }

    #[test]
    fn raising_the_threshold_never_adds_labels(wp in arb_window_probs(), a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(post_process(&wp, hi).len() <= post_process(&wp, lo).len());
    }

    #[test]
    fn at_most_one_class_passes_above_one_half(wp in arb_window_probs(), threshold in 0.500001f64..0.99) {
        for (_, p) in &wp.entries {
            prop_assert!(passing_classes(p, threshold).len() <= 1);
        }
    }

    #[test]
    fn window_count_follows_the_stride(n in 1usize..300, window in 1usize..60, stride in 1usize..20) {
        let stream = ContinuousStream {
            frames: random_frames(&mut rng(n as u64), n, 2),
            gt_labels: vec![],
            boundaries: None,
        };
        match slide(&stream, window, stride) {
            Ok(w) => {
                prop_assert!(n >= window);
                prop_assert_eq!(w.len(), (n - window) / stride + 1);
                for (k, win) in w.iter().enumerate() {
                    prop_assert_eq!(win.start, k * stride);
                    prop_assert_eq!(win.frames.len(), window);
                }
            }
            Err(_) => prop_assert!(n < window),
        }
    }

    #[test]
    fn false_counts_bound_edit_distance(
        a in proptest::collection::vec(0usize..4, 0..12),
        b in proptest::collection::vec(0usize..4, 0..12),
    ) {
        let positional = count_false(&a, &b);
        let edit = edit_distance(&a, &b);
        prop_assert!(edit <= positional);
        prop_assert_eq!(positional, count_false(&b, &a));
        prop_assert_eq!(positional == 0, a == b);
    }
}

#[test]
fn blank_separated_repeats_collapse() {
    let rows = vec![vec![0.9, 0.05, 0.05], vec![0.4, 0.3, 0.3], vec![0.9, 0.05, 0.05]];
    let wp = WindowProbs::from_rows(rows, 1).unwrap();
    assert_eq!(post_process(&wp, 0.51).classes(), vec![0]);
    assert_eq!(post_process(&wp, 0.35).classes(), vec![0]);
}

fn tiny_stream_model() -> (signseg::ModelWeights, Vec<ContinuousStream>) {
    let cfg = ModelConfig {
        layers: 1,
        heads: 2,
        d_model: 8,
        d_ff: 8,
        window: 5,
        input_dim: 3,
        classes: 4,
    };
    let w = perturbed_weights(cfg, 6);
    let mut r = rng(6);
    let streams = (0..3)
        .map(|k| ContinuousStream {
            frames: random_frames(&mut r, 5 + 7 * k, 3),
            gt_labels: vec![k, 1],
            boundaries: None,
        })
        .collect();
    (w, streams)
}

#[test]
fn window_probabilities_match_independent_prediction() {
    let (w, streams) = tiny_stream_model();
    let wins = slide(&streams[2], 5, 2).unwrap();
    let wp = window_probs(&w, &wins).unwrap();
    assert_eq!(wp.len(), wins.len());
    for ((start, p), win) in wp.entries.iter().zip(&wins) {
        assert_eq!(*start, win.start);
        assert_eq!(p, &predict(win.frames, &w).unwrap());
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!(window_probs(&w, &[]).unwrap().is_empty());
}

#[test]
fn report_totals_equal_row_sums_and_short_streams_are_recorded() {
    let (w, mut streams) = tiny_stream_model();
    streams.push(ContinuousStream {
        frames: random_frames(&mut rng(1), 3, 3),
        gt_labels: vec![0],
        boundaries: None,
    });
    let rep = segment_report(&w, &streams, 5, 1, 0.3).unwrap();
    assert_eq!(rep.rows.len(), 4);
    assert!(rep.rows[3].error.as_deref().unwrap().contains("too short"));
    let ok = &rep.rows[..3];
    assert_eq!(rep.false_recognitions, ok.iter().map(|r| r.false_with_pp()).sum::<usize>());
    assert_eq!(rep.total_signs, 6);
    for r in ok {
        assert_eq!(r.false_with_pp(), count_false(&r.decoded, &r.gt));
        assert_eq!(r.windows.iter().filter(|w| w.emitted_label.is_some()).count(), r.decoded.len());
    }
    let csv = rep.summary_csv();
    assert!(csv.starts_with("Concatenated sign video,Avg of Softmax output of Recognized class,"));
    assert!(segment_report(&w, &streams, 6, 1, 0.51).is_err());
    assert!(segment_report(&w, &streams, 5, 1, 1.0).is_err());
}
