use super::{EncoderLayer, LayerNormParams, ModelWeights, ProbVector};
use crate::error::{Error, Result};
use crate::keypoints::{IsolatedSample, NormFrame};
use crate::tensor::Mat;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Lower clamp on the target probability inside the cross-entropy.
pub const PROB_CLAMP: f64 = 1e-12;

/// `window × d_model` matrix of per-frame encoder outputs.
pub type FrameFeatures = Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub positional: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions { positional: true }
    }
}

pub fn positional_encoding(pos: usize, d_model: usize) -> Result<Vec<f64>> {
    if d_model % 2 != 0 {
        return Err(Error::Config(format!("positional encoding needs an even d_model, got {d_model}")));
    }
    let mut out = vec![0.0; d_model];
    for k in 0..d_model / 2 {
        let angle = pos as f64 / 10000f64.powf(2.0 * k as f64 / d_model as f64);
        out[2 * k] = angle.sin();
        out[2 * k + 1] = angle.cos();
    }
    Ok(out)
}

/// Affine embedding of one frame plus the positional encoding for `pos`.
pub fn embed_frame(frame: &NormFrame, weights: &ModelWeights, pos: usize) -> Result<Vec<f64>> {
    let d_in = weights.config.input_dim;
    if frame.dim() != d_in {
        return Err(Error::Shape(format!("frame has {} features, model expects {d_in}", frame.dim())));
    }
    let x = Mat::from_vec(1, d_in, frame.0.clone());
    let mut e = weights.embedding.apply(&x).into_vec();
    for (v, p) in e.iter_mut().zip(positional_encoding(pos, weights.config.d_model)?) {
        *v += p;
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensors {
    pub queries: Mat,
    pub keys: Mat,
    pub values: Mat,
}

impl AttentionTensors {
    pub fn d_k(&self) -> usize {
        self.keys.cols()
    }
}

fn softmax_rows(m: &mut Mat) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

/// Row-stochastic matrix `softmax(Q Kᵀ / √d_k)`.
pub fn attention_weights(queries: &Mat, keys: &Mat) -> Mat {
    let mut scores = queries.matmul_t(keys);
    scores.scale(1.0 / (keys.cols() as f64).sqrt());
    softmax_rows(&mut scores);
    scores
}

/// Scaled dot-product attention.
pub fn attention(t: &AttentionTensors) -> Result<Mat> {
    if t.queries.cols() != t.keys.cols() {
        return Err(Error::Shape("queries and keys differ in width".into()));
    }
    if t.keys.rows() != t.values.rows() {
        return Err(Error::Shape("keys and values differ in row count".into()));
    }
    if t.keys.rows() == 0 {
        return Err(Error::Shape("attention over zero keys".into()));
    }
    Ok(attention_weights(&t.queries, &t.keys).matmul(&t.values))
}

fn check_width(x: &Mat, d_model: usize) -> Result<()> {
    if x.cols() != d_model {
        return Err(Error::Shape(format!("features have width {}, layer expects {d_model}", x.cols())));
    }
    Ok(())
}

struct AttentionTrace {
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    concat: Mat,
    out: Mat,
}

fn mha_traced(x: &Mat, layer: &EncoderLayer, heads: usize) -> AttentionTrace {
    let q = x.matmul(&layer.query);
    let k = x.matmul(&layer.key);
    let v = x.matmul(&layer.value);
    let d_k = q.cols() / heads;
    let mut concat = Mat::zeros(x.rows(), q.cols());
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (
            q.column_block(h * d_k, d_k),
            k.column_block(h * d_k, d_k),
            v.column_block(h * d_k, d_k),
        );
        let p = attention_weights(&qh, &kh);
        concat.set_column_block(h * d_k, &p.matmul(&vh));
        probs.push(p);
    }
    let out = layer.output.apply(&concat);
    AttentionTrace {
        q,
        k,
        v,
        probs,
        concat,
        out,
    }
}

/// Multi-head self-attention of `x` (before the residual connection).
pub fn multi_head_attention(x: &Mat, layer: &EncoderLayer, heads: usize) -> Result<Mat> {
    let d = layer.query.rows();
    check_width(x, d)?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("{d} features cannot be split into {heads} heads")));
    }
    Ok(mha_traced(x, layer, heads).out)
}

/// Row-wise `relu(x W1 + b1) W2 + b2`.
pub fn feed_forward(x: &Mat, layer: &EncoderLayer) -> Result<Mat> {
    check_width(x, layer.ff1.weight.rows())?;
    let hidden = layer.ff1.apply(x).map(|h| h.max(0.0));
    Ok(layer.ff2.apply(&hidden))
}

pub(crate) struct NormTrace {
    pub xhat: Mat,
    pub inv_std: Vec<f64>,
}

fn layer_norm_traced(x: &Mat, p: &LayerNormParams) -> (Mat, NormTrace) {
    let n = x.cols() as f64;
    let mut xhat = Mat::zeros(x.rows(), x.cols());
    let mut out = Mat::zeros(x.rows(), x.cols());
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(is);
        for c in 0..x.cols() {
            let h = (row[c] - mean) * is;
            xhat.set(r, c, h);
            out.set(r, c, p.gain[c] * h + p.bias[c]);
        }
    }
    (out, NormTrace { xhat, inv_std })
}

pub fn layer_norm(x: &Mat, p: &LayerNormParams) -> Mat {
    layer_norm_traced(x, p).0
}

pub(crate) struct LayerTrace {
    pub input: Mat,
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    pub probs: Vec<Mat>,
    pub concat: Mat,
    pub norm1: NormTrace,
    pub mid: Mat,
    pub hidden_pre: Mat,
    pub hidden: Mat,
    pub norm2: NormTrace,
}

pub(crate) struct Trace {
    pub input: Mat,
    pub layers: Vec<LayerTrace>,
    pub features: Mat,
}

pub(crate) fn frames_matrix(frames: &[NormFrame], weights: &ModelWeights) -> Result<Mat> {
    let cfg = &weights.config;
    if frames.len() != cfg.window {
        return Err(Error::Shape(format!("got {} frames, model window is {}", frames.len(), cfg.window)));
    }
    if let Some(f) = frames.iter().find(|f| f.dim() != cfg.input_dim) {
        return Err(Error::Shape(format!("frame has {} features, model expects {}", f.dim(), cfg.input_dim)));
    }
    Ok(Mat::from_rows(&frames.iter().map(|f| f.as_slice()).collect::<Vec<_>>()))
}

pub(crate) fn encoder_traced(input: Mat, weights: &ModelWeights, opts: ForwardOptions) -> Result<Trace> {
    let cfg = &weights.config;
    let mut x = weights.embedding.apply(&input);
    if opts.positional {
        for pos in 0..x.rows() {
            let pe = positional_encoding(pos, cfg.d_model)?;
            for (v, p) in x.row_mut(pos).iter_mut().zip(pe) {
                *v += p;
            }
        }
    }
    let mut layers = Vec::with_capacity(weights.layers.len());
    for layer in &weights.layers {
        let att = mha_traced(&x, layer, cfg.heads);
        let mut res1 = x.clone();
        res1.add_assign(&att.out);
        let (mid, norm1) = layer_norm_traced(&res1, &layer.norm1);
        let hidden_pre = layer.ff1.apply(&mid);
        let hidden = hidden_pre.map(|h| h.max(0.0));
        let mut res2 = layer.ff2.apply(&hidden);
        res2.add_assign(&mid);
        let (out, norm2) = layer_norm_traced(&res2, &layer.norm2);
        layers.push(LayerTrace {
            input: x,
            q: att.q,
            k: att.k,
            v: att.v,
            probs: att.probs,
            concat: att.concat,
            norm1,
            mid,
            hidden_pre,
            hidden,
            norm2,
        });
        x = out;
    }
    Ok(Trace {
        input,
        layers,
        features: x,
    })
}

/// Runs the encoder on exactly `window` frames.
pub fn encoder_forward(frames: &[NormFrame], weights: &ModelWeights) -> Result<FrameFeatures> {
    encoder_forward_with(frames, weights, ForwardOptions::default())
}

pub fn encoder_forward_with(
    frames: &[NormFrame],
    weights: &ModelWeights,
    opts: ForwardOptions,
) -> Result<FrameFeatures> {
    let input = frames_matrix(frames, weights)?;
    Ok(encoder_traced(input, weights, opts)?.features)
}

pub(crate) fn head_logits(features: &Mat, weights: &ModelWeights) -> Vec<f64> {
    let head = &weights.head;
    let flat = features.data();
    let mut logits = head.bias.clone();
    let c = head.weight.cols();
    for (i, &x) in flat.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let wrow = &head.weight.data()[i * c..(i + 1) * c];
        for (l, &w) in logits.iter_mut().zip(wrow) {
            *l += x * w;
        }
    }
    logits
}

/// Flattens the `window × d_model` features row by row and applies the head.
pub fn classify(features: &FrameFeatures, weights: &ModelWeights) -> Result<ProbVector> {
    let cfg = &weights.config;
    if features.shape() != (cfg.window, cfg.d_model) {
        return Err(Error::Shape(format!(
            "classifier expects {}x{} features, got {:?}",
            cfg.window,
            cfg.d_model,
            features.shape()
        )));
    }
    Ok(ProbVector::from_logits(&head_logits(features, weights)))
}

pub fn cross_entropy(p: &ProbVector, label: usize) -> Result<f64> {
    if label >= p.len() {
        return Err(Error::InvalidArgument(format!("label {label} out of range for {} classes", p.len())));
    }
    Ok(-p[label].max(PROB_CLAMP).ln())
}

pub fn predict(frames: &[NormFrame], weights: &ModelWeights) -> Result<ProbVector> {
    classify(&encoder_forward(frames, weights)?, weights)
}

pub fn sample_loss(sample: &IsolatedSample, weights: &ModelWeights) -> Result<f64> {
    cross_entropy(&predict(&sample.frames, weights)?, sample.label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Linear, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
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

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn frames(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<NormFrame> {
        (0..n)
            .map(|_| NormFrame((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect()
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding(0, 6).unwrap();
        assert_eq!(pe, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        // sin(1), cos(1) evaluated independently
        let pe = positional_encoding(1, 2).unwrap();
        assert!((pe[0] - 0.841_470_984_807_896_5).abs() < 1e-15);
        assert!((pe[1] - 0.540_302_305_868_139_8).abs() < 1e-15);
        assert!(matches!(positional_encoding(3, 7), Err(Error::Config(_))));
        for pos in [0, 5, 49, 1000] {
            assert!(positional_encoding(pos, 64).unwrap().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn embed_frame_cases() {
        let mut w = ModelWeights::zeros(cfg());
        let zero = NormFrame(vec![0.0; 6]);
        assert_eq!(embed_frame(&zero, &w, 0).unwrap(), positional_encoding(0, 8).unwrap());

        let id_cfg = ModelConfig { input_dim: 8, ..cfg() };
        let mut wi = ModelWeights::zeros(id_cfg);
        wi.embedding = Linear {
            weight: Mat::identity(8),
            bias: vec![0.0; 8],
        };
        let f = NormFrame((0..8).map(|i| i as f64 * 0.1).collect());
        let e = embed_frame(&f, &wi, 0).unwrap();
        let pe = positional_encoding(0, 8).unwrap();
        for i in 0..8 {
            assert_eq!(e[i], f.0[i] + pe[i]);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        w.embedding.weight = rand_mat(&mut rng, 6, 8);
        w.embedding.bias = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = frames(&mut rng, 1, 6).remove(0);
        let e = embed_frame(&f, &w, 3).unwrap();
        let pe = positional_encoding(3, 8).unwrap();
        for j in 0..8 {
            let mut s = w.embedding.bias[j];
            for i in 0..6 {
                s += f.0[i] * w.embedding.weight.get(i, j);
            }
            assert!((e[j] - (s + pe[j])).abs() < 1e-12);
        }
        assert!(matches!(embed_frame(&NormFrame(vec![0.0; 5]), &w, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn attention_reduction_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = rand_mat(&mut rng, 5, 3);
        let single = AttentionTensors {
            queries: q.clone(),
            keys: rand_mat(&mut rng, 1, 3),
            values: Mat::from_vec(1, 3, vec![0.5, -2.0, 7.0]),
        };
        let out = attention(&single).unwrap();
        for r in 0..5 {
            assert_eq!(out.row(r), &[0.5, -2.0, 7.0]);
        }

        let key = [0.3, -0.1, 0.9];
        let same = AttentionTensors {
            queries: q,
            keys: Mat::from_rows(&[key, key, key, key]),
            values: rand_mat(&mut rng, 4, 3),
        };
        let out = attention(&same).unwrap();
        let means: Vec<f64> = same.values.column_sums().iter().map(|s| s / 4.0).collect();
        for r in 0..5 {
            for c in 0..3 {
                assert!((out.get(r, c) - means[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_two_by_two_hand_value() {
        let c = 1.5;
        let t = AttentionTensors {
            queries: Mat::from_rows(&[[c, 0.0], [0.0, c]]),
            keys: Mat::from_rows(&[[c, 0.0], [0.0, c]]),
            values: Mat::identity(2),
        };
        // scores per row: [c²/√2, 0] and [0, c²/√2]
        let s = c * c / 2f64.sqrt();
        let hi = s.exp() / (s.exp() + 1.0);
        let out = attention(&t).unwrap();
        assert!((out.get(0, 0) - hi).abs() < 1e-14);
        assert!((out.get(0, 1) - (1.0 - hi)).abs() < 1e-14);
        assert!((out.get(1, 1) - hi).abs() < 1e-14);
        assert!((out.get(1, 0) - (1.0 - hi)).abs() < 1e-14);
    }

    fn random_layer(rng: &mut ChaCha8Rng, d: usize, d_ff: usize) -> EncoderLayer {
        let mut w = ModelWeights::init(ModelConfig { d_model: d, d_ff, ..cfg() }, rng.random()).unwrap();
        let mut l = w.layers.remove(0);
        l.output.bias = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        l.ff1.bias = (0..d_ff).map(|_| rng.random_range(-0.5..0.5)).collect();
        l.ff2.bias = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        l
    }

    #[test]
    fn single_head_identity_projection_is_plain_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut l = random_layer(&mut rng, 8, 16);
        l.query = Mat::identity(8);
        l.key = Mat::identity(8);
        l.value = Mat::identity(8);
        l.output = Linear {
            weight: Mat::identity(8),
            bias: vec![0.0; 8],
        };
        let x = rand_mat(&mut rng, 4, 8);
        let direct = attention(&AttentionTensors {
            queries: x.clone(),
            keys: x.clone(),
            values: x.clone(),
        })
        .unwrap();
        assert!(multi_head_attention(&x, &l, 1).unwrap().max_abs_diff(&direct) < 1e-15);
    }

    #[test]
    fn zero_value_projection_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut l = random_layer(&mut rng, 8, 16);
        l.value = Mat::zeros(8, 8);
        l.output.bias = vec![0.0; 8];
        let x = rand_mat(&mut rng, 4, 8);
        assert!(multi_head_attention(&x, &l, 2).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_heads_match_per_head_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = random_layer(&mut rng, 8, 16);
        let x = rand_mat(&mut rng, 5, 8);
        let got = multi_head_attention(&x, &l, 2).unwrap();

        // straight-line per-head oracle
        let n = 5;
        let dk = 4;
        let mut concat = vec![vec![0.0; 8]; n];
        for h in 0..2 {
            let proj = |m: &Mat, i: usize, j: usize| -> f64 {
                (0..8).map(|t| x.get(i, t) * m.get(t, h * dk + j)).sum()
            };
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|k| (0..dk).map(|j| proj(&l.query, i, j) * proj(&l.key, k, j)).sum::<f64>() / 2.0)
                    .collect();
                let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for j in 0..dk {
                    concat[i][h * dk + j] = (0..n)
                        .map(|k| (scores[k] - m).exp() / z * proj(&l.value, k, j))
                        .sum();
                }
            }
        }
        for i in 0..n {
            for j in 0..8 {
                let expect: f64 = l.output.bias[j]
                    + (0..8).map(|t| concat[i][t] * l.output.weight.get(t, j)).sum::<f64>();
                assert!((got.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn feed_forward_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut l = random_layer(&mut rng, 8, 16);
        let x = rand_mat(&mut rng, 4, 8);

        let ff = feed_forward(&x, &l).unwrap();
        for r in 0..4 {
            for j in 0..8 {
                let mut s = l.ff2.bias[j];
                for h in 0..16 {
                    let pre: f64 = l.ff1.bias[h] + (0..8).map(|t| x.get(r, t) * l.ff1.weight.get(t, h)).sum::<f64>();
                    s += pre.max(0.0) * l.ff2.weight.get(h, j);
                }
                assert!((ff.get(r, j) - s).abs() < 1e-12);
            }
        }

        l.ff1.bias = vec![-100.0; 16];
        let out = feed_forward(&x, &l).unwrap();
        for r in 0..4 {
            assert_eq!(out.row(r), &l.ff2.bias[..]);
        }

        let z = ModelWeights::zeros(cfg());
        assert!(feed_forward(&x, &z.layers[0]).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_stack_is_embedding_plus_position() {
        let c = ModelConfig { layers: 0, ..cfg() };
        let w = ModelWeights::init(c, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = frames(&mut rng, 4, 6);
        let out = encoder_forward(&f, &w).unwrap();
        for (pos, frame) in f.iter().enumerate() {
            assert_eq!(out.row(pos), &embed_frame(frame, &w, pos).unwrap()[..]);
        }
        assert_eq!(out, encoder_forward(&f, &w).unwrap());
        assert!(matches!(encoder_forward(&f[..3], &w), Err(Error::Shape(_))));
    }

    #[test]
    fn classify_cases() {
        let w = ModelWeights::zeros(cfg());
        let p = classify(&Mat::zeros(4, 8), &w).unwrap();
        assert!(p.as_slice().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));

        let p = ProbVector::from_logits(&[10.0, 0.0, 0.0]);
        // 1 / (1 + 2e^-10) and e^-10 / (1 + 2e^-10)
        assert!((p[0] - 0.999_909_208_384_340_9).abs() < 1e-12);
        assert!((p[1] - 4.539_580_782_951_091_4e-5).abs() < 1e-15);
        assert!(classify(&Mat::zeros(3, 8), &w).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let one = ProbVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&one, 1).unwrap(), 0.0);
        assert!((cross_entropy(&one, 0).unwrap() - 27.631_021_115_928_547).abs() < 1e-9);
        let uniform = ProbVector::from_logits(&[0.0; 100]);
        assert!((cross_entropy(&uniform, 42).unwrap() - 4.605_170_185_988_091).abs() < 1e-12);
        assert!(matches!(cross_entropy(&one, 3), Err(Error::InvalidArgument(_))));
    }
}
