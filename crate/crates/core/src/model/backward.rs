//! Reverse-mode gradients of the cross-entropy loss through the head, every
//! encoder block, and the input embedding.

use super::forward::{encoder_traced, frames_matrix, head_logits, NormTrace, PROB_CLAMP};
use super::{ForwardOptions, LayerNormParams, ModelWeights, ProbVector};
use crate::error::{Error, Result};
use crate::keypoints::{IsolatedSample, NormFrame};
use crate::tensor::Mat;

fn layer_norm_backward(dy: &Mat, trace: &NormTrace, params: &LayerNormParams, grad: &mut LayerNormParams) -> Mat {
    let (rows, cols) = dy.shape();
    let n = cols as f64;
    let mut dx = Mat::zeros(rows, cols);
    for r in 0..rows {
        let dyr = dy.row(r);
        let xh = trace.xhat.row(r);
        let g: Vec<f64> = dyr.iter().zip(&params.gain).map(|(d, w)| d * w).collect();
        let mean_g = g.iter().sum::<f64>() / n;
        let mean_gx = g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
        let is = trace.inv_std[r];
        for c in 0..cols {
            dx.set(r, c, is * (g[c] - mean_g - xh[c] * mean_gx));
            grad.gain[c] += dyr[c] * xh[c];
            grad.bias[c] += dyr[c];
        }
    }
    dx
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Loss and gradients for one labeled window of frames.
pub fn backward_frames(
    frames: &[NormFrame],
    label: usize,
    weights: &ModelWeights,
    opts: ForwardOptions,
) -> Result<(ModelWeights, f64)> {
    let cfg = weights.config;
    if label >= cfg.classes {
        return Err(Error::InvalidArgument(format!("label {label} out of range for {} classes", cfg.classes)));
    }
    let input = frames_matrix(frames, weights)?;
    let trace = encoder_traced(input, weights, opts)?;
    let probs = ProbVector::from_logits(&head_logits(&trace.features, weights));
    let p_label = probs[label];
    let loss = -p_label.max(PROB_CLAMP).ln();

    let mut grads = ModelWeights::zeros(cfg);

    // softmax + cross-entropy; the clamp is flat below PROB_CLAMP
    let mut dlogits = probs.into_vec();
    if p_label >= PROB_CLAMP {
        dlogits[label] -= 1.0;
    } else {
        dlogits.iter_mut().for_each(|g| *g = 0.0);
    }

    let n_cls = cfg.classes;
    let flat = trace.features.data();
    let head_w = weights.head.weight.data();
    let mut dflat = vec![0.0; flat.len()];
    {
        let gw = grads.head.weight.data_mut();
        for (i, &x) in flat.iter().enumerate() {
            let row = &mut gw[i * n_cls..(i + 1) * n_cls];
            let wrow = &head_w[i * n_cls..(i + 1) * n_cls];
            let mut acc = 0.0;
            for c in 0..n_cls {
                row[c] = x * dlogits[c];
                acc += wrow[c] * dlogits[c];
            }
            dflat[i] = acc;
        }
    }
    grads.head.bias.copy_from_slice(&dlogits);
    let mut dx = Mat::from_vec(cfg.window, cfg.d_model, dflat);

    let d_k = cfg.d_k();
    let scale = 1.0 / (d_k as f64).sqrt();
    for (li, (layer, lt)) in weights.layers.iter().zip(&trace.layers).enumerate().rev() {
        let g = &mut grads.layers[li];

        // out = LN2(mid + FF(mid))
        let d_res2 = layer_norm_backward(&dx, &lt.norm2, &layer.norm2, &mut g.norm2);
        g.ff2.weight = lt.hidden.t_matmul(&d_res2);
        g.ff2.bias = d_res2.column_sums();
        let mut d_pre = d_res2.matmul_t(&layer.ff2.weight);
        for (d, &h) in d_pre.data_mut().iter_mut().zip(lt.hidden_pre.data()) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }
        g.ff1.weight = lt.mid.t_matmul(&d_pre);
        g.ff1.bias = d_pre.column_sums();
        let mut d_mid = d_res2;
        d_mid.add_assign(&d_pre.matmul_t(&layer.ff1.weight));

        // mid = LN1(x + MHA(x))
        let d_res1 = layer_norm_backward(&d_mid, &lt.norm1, &layer.norm1, &mut g.norm1);
        g.output.weight = lt.concat.t_matmul(&d_res1);
        g.output.bias = d_res1.column_sums();
        let d_concat = d_res1.matmul_t(&layer.output.weight);

        let mut dq = Mat::zeros(cfg.window, cfg.d_model);
        let mut dk = Mat::zeros(cfg.window, cfg.d_model);
        let mut dv = Mat::zeros(cfg.window, cfg.d_model);
        for (h, p) in lt.probs.iter().enumerate() {
            let off = h * d_k;
            let d_out = d_concat.column_block(off, d_k);
            let qh = lt.q.column_block(off, d_k);
            let kh = lt.k.column_block(off, d_k);
            let vh = lt.v.column_block(off, d_k);
            let dp = d_out.matmul_t(&vh);
            dv.set_column_block(off, &p.t_matmul(&d_out));
            let mut ds = Mat::zeros(p.rows(), p.cols());
            for r in 0..p.rows() {
                let (pr, dpr) = (p.row(r), dp.row(r));
                let inner: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
                for (c, out) in ds.row_mut(r).iter_mut().enumerate() {
                    *out = pr[c] * (dpr[c] - inner) * scale;
                }
            }
            dq.set_column_block(off, &ds.matmul(&kh));
            dk.set_column_block(off, &ds.t_matmul(&qh));
        }
        g.query = lt.input.t_matmul(&dq);
        g.key = lt.input.t_matmul(&dk);
        g.value = lt.input.t_matmul(&dv);

        let mut d_in = d_res1;
        d_in.add_assign(&dq.matmul_t(&layer.query));
        d_in.add_assign(&dk.matmul_t(&layer.key));
        d_in.add_assign(&dv.matmul_t(&layer.value));
        dx = d_in;
    }

    grads.embedding.weight = trace.input.t_matmul(&dx);
    add_into(&mut grads.embedding.bias, &dx.column_sums());
    Ok((grads, loss))
}

/// Loss and exact gradients of `cross_entropy(classify(encoder_forward(x)))`
/// with respect to every parameter.
pub fn backward(sample: &IsolatedSample, weights: &ModelWeights) -> Result<(ModelWeights, f64)> {
    backward_frames(&sample.frames, sample.label, weights, ForwardOptions::default())
}
