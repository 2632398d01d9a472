//! Layer primitives: 2d cross-correlation, linear, relu, 2x2 average
//! pooling, and softmax cross-entropy, each with a hand-written backward.
//!
//! Convolutions take [C, H, W] tensors and weight slices shaped
//! [outC, inC, k, k]; output spatial dims are ceil(H/stride) for 3x3/pad 1
//! and 1x1/pad 0 alike, so residual main and projection paths always agree.

use super::{Real, Tensor};
use crate::gridworld::ActionId;

/// Output length along one spatial axis.
#[inline]
pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Valid output range [lo, hi) so that `o*stride + koff - pad` stays inside
/// `[0, input)`.
#[inline]
fn valid_range(input: usize, out: usize, stride: usize, pad: usize, koff: usize) -> (usize, usize) {
    let shift = koff as isize - pad as isize;
    let lo = if shift >= 0 {
        0
    } else {
        ((-shift) as usize).div_ceil(stride)
    };
    let last = input as isize - 1 - shift;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last as usize / stride + 1).min(out);
    (lo.min(hi), hi)
}

/// Cross-correlation of `x` with `w` ([out_c, in_c, k, k]) plus bias.
pub fn conv2d_forward<S: Real>(
    x: &Tensor<S>,
    w: &[S],
    b: &[S],
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Tensor<S> {
    let (in_c, h, width) = x.chw();
    assert_eq!(w.len(), out_c * in_c * k * k, "conv weight shape mismatch");
    assert_eq!(b.len(), out_c, "conv bias shape mismatch");
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(width, k, stride, pad);
    let mut out = Tensor::zeros(vec![out_c, oh, ow]);
    for oc in 0..out_c {
        out.plane_mut(oc).fill(b[oc]);
    }
    for oc in 0..out_c {
        for ic in 0..in_c {
            let x_plane = x.plane(ic);
            let w_base = (oc * in_c + ic) * k * k;
            let out_plane = out.plane_mut(oc);
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(h, oh, stride, pad, ky);
                for kx in 0..k {
                    let wv = w[w_base + ky * k + kx];
                    if wv == S::zero() {
                        // common for freshly zeroed heads; skipping is exact
                        continue;
                    }
                    let (ox_lo, ox_hi) = valid_range(width, ow, stride, pad, kx);
                    for oy in oy_lo..oy_hi {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let x_row = &x_plane[iy as usize * width..(iy as usize + 1) * width];
                        let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            let ix0 = (ox_lo + kx) as isize - pad as isize;
                            let src = &x_row[ix0 as usize..ix0 as usize + (ox_hi - ox_lo)];
                            for (o, s) in out_row[ox_lo..ox_hi].iter_mut().zip(src) {
                                *o += wv * *s;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                out_row[ox] += wv * x_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`]: fills `gx` and accumulates into `gw`/`gb`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<S: Real>(
    x: &Tensor<S>,
    w: &[S],
    gout: &Tensor<S>,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    gx: &mut Tensor<S>,
    gw: &mut [S],
    gb: &mut [S],
) {
    let (in_c, h, width) = x.chw();
    let (gc, oh, ow) = gout.chw();
    assert_eq!(gc, out_c, "upstream gradient channel mismatch");
    assert_eq!(gx.chw(), x.chw(), "input gradient shape mismatch");
    for oc in 0..out_c {
        let g_plane = gout.plane(oc);
        gb[oc] += g_plane.iter().fold(S::zero(), |acc, v| acc + *v);
    }
    for oc in 0..out_c {
        let g_plane = gout.plane(oc);
        for ic in 0..in_c {
            let x_plane = x.plane(ic);
            let gx_plane = gx.plane_mut(ic);
            let w_base = (oc * in_c + ic) * k * k;
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(h, oh, stride, pad, ky);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = valid_range(width, ow, stride, pad, kx);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let wv = w[w_base + ky * k + kx];
                    let mut wg = S::zero();
                    for oy in oy_lo..oy_hi {
                        let iy = ((oy * stride + ky) as isize - pad as isize) as usize;
                        let g_row = &g_plane[oy * ow..(oy + 1) * ow];
                        let x_row = &x_plane[iy * width..(iy + 1) * width];
                        let gx_row = &mut gx_plane[iy * width..(iy + 1) * width];
                        if stride == 1 {
                            let ix0 = ((ox_lo + kx) as isize - pad as isize) as usize;
                            let n = ox_hi - ox_lo;
                            let xs = &x_row[ix0..ix0 + n];
                            let gxs = &mut gx_row[ix0..ix0 + n];
                            for ((g, xv), gxv) in g_row[ox_lo..ox_hi].iter().zip(xs).zip(gxs) {
                                wg += *g * *xv;
                                *gxv += wv * *g;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ((ox * stride + kx) as isize - pad as isize) as usize;
                                let g = g_row[ox];
                                wg += g * x_row[ix];
                                gx_row[ix] += wv * g;
                            }
                        }
                    }
                    gw[w_base + ky * k + kx] += wg;
                }
            }
        }
    }
}

/// out = W x + b with W shaped [out_dim, in_dim].
pub fn linear_forward<S: Real>(x: &[S], w: &[S], b: &[S], out_dim: usize, in_dim: usize) -> Vec<S> {
    assert_eq!(x.len(), in_dim, "linear input shape mismatch");
    assert_eq!(w.len(), out_dim * in_dim, "linear weight shape mismatch");
    assert_eq!(b.len(), out_dim, "linear bias shape mismatch");
    let mut out = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = b[o];
        for (wv, xv) in row.iter().zip(x) {
            acc += *wv * *xv;
        }
        out.push(acc);
    }
    out
}

/// Gradients of [`linear_forward`]; `gx` may be `None` when the input is a
/// constant (e.g. network inputs).
pub fn linear_backward<S: Real>(
    x: &[S],
    w: &[S],
    gout: &[S],
    out_dim: usize,
    in_dim: usize,
    gw: &mut [S],
    gb: &mut [S],
    mut gx: Option<&mut [S]>,
) {
    debug_assert_eq!(gout.len(), out_dim);
    for o in 0..out_dim {
        let g = gout[o];
        gb[o] += g;
        let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
        for (gwv, xv) in grow.iter_mut().zip(x) {
            *gwv += g * *xv;
        }
        if let Some(gx) = gx.as_deref_mut() {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            for (gxv, wv) in gx.iter_mut().zip(row) {
                *gxv += g * *wv;
            }
        }
    }
}

/// Elementwise max(x, 0).
pub fn relu_forward<S: Real>(x: &mut [S]) {
    for v in x.iter_mut() {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
}

/// Backward through relu using the forward *output* as the mask
/// (out > 0 iff pre-activation > 0).
pub fn relu_backward<S: Real>(out: &[S], grad: &mut [S]) {
    for (g, o) in grad.iter_mut().zip(out) {
        if *o <= S::zero() {
            *g = S::zero();
        }
    }
}

/// 2x2 average pooling with stride 2; spatial dims must be even.
pub fn avgpool2_forward<S: Real>(x: &Tensor<S>) -> Tensor<S> {
    let (c, h, w) = x.chw();
    assert!(h % 2 == 0 && w % 2 == 0, "avgpool2 needs even dims, got {h}x{w}");
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::from_f64(0.25);
    let mut out = Tensor::zeros(vec![c, oh, ow]);
    for ch in 0..c {
        let src = x.plane(ch);
        let dst = out.plane_mut(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let base = 2 * oy * w + 2 * ox;
                dst[oy * ow + ox] =
                    (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]) * quarter;
            }
        }
    }
    out
}

/// Backward of [`avgpool2_forward`]: spreads each gradient over its window.
pub fn avgpool2_backward<S: Real>(gout: &Tensor<S>, in_shape: (usize, usize, usize)) -> Tensor<S> {
    let (c, h, w) = in_shape;
    let (gc, oh, ow) = gout.chw();
    assert_eq!(gc, c);
    let quarter = S::from_f64(0.25);
    let mut gx = Tensor::zeros(vec![c, h, w]);
    for ch in 0..c {
        let src = gout.plane(ch);
        let dst = gx.plane_mut(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let g = src[oy * ow + ox] * quarter;
                let base = 2 * oy * w + 2 * ox;
                dst[base] += g;
                dst[base + 1] += g;
                dst[base + w] += g;
                dst[base + w + 1] += g;
            }
        }
    }
    gx
}

/// Softmax probabilities over action logits.
pub fn softmax<S: Real>(logits: &[S; 8]) -> [S; 8] {
    let max = logits.iter().fold(logits[0], |a, b| a.max(*b));
    let mut probs = [S::zero(); 8];
    let mut sum = S::zero();
    for (p, l) in probs.iter_mut().zip(logits) {
        *p = (*l - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    probs
}

/// Cross-entropy of the label under softmax(logits), and its gradient
/// (softmax minus one-hot) with respect to the logits.
pub fn softmax_xent<S: Real>(logits: &[S; 8], label: ActionId) -> (S, [S; 8]) {
    let max = logits.iter().fold(logits[0], |a, b| a.max(*b));
    let mut sum = S::zero();
    for l in logits {
        sum += (*l - max).exp();
    }
    let log_sum = sum.ln() + max;
    let loss = log_sum - logits[label.index()];
    let mut grad = [S::zero(); 8];
    for (g, l) in grad.iter_mut().zip(logits) {
        *g = (*l - log_sum).exp();
    }
    grad[label.index()] -= S::one();
    (loss, grad)
}

/// Argmax with ties broken toward the lowest action index.
pub fn argmax_action<S: Real>(logits: &[S; 8]) -> ActionId {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate().skip(1) {
        if *v > logits[best] {
            best = i;
        }
    }
    ActionId::from_index(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_scalar_and_identity() {
        // 1x1x1 input [[2]], kernel center 3 -> [[6]]
        let x = Tensor::new(vec![1, 1, 1], vec![2.0f64]);
        let mut w = vec![0.0f64; 9];
        w[4] = 3.0;
        let out = conv2d_forward(&x, &w, &[0.0], 1, 3, 1, 1);
        assert_eq!(out.data(), &[6.0]);

        // identity kernel preserves the input
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect());
        let mut w = vec![0.0f64; 9];
        w[4] = 1.0;
        let out = conv2d_forward(&x, &w, &[0.0], 1, 3, 1, 1);
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn conv_output_dims() {
        assert_eq!(conv_out_dim(31, 3, 1, 1), 31);
        assert_eq!(conv_out_dim(31, 3, 2, 1), 16); // 31 -> 16 with padding
        assert_eq!(conv_out_dim(16, 3, 2, 1), 8);
        assert_eq!(conv_out_dim(31, 1, 2, 0), 16); // 1x1 projection path agrees
    }

    #[test]
    fn linear_hand_case() {
        // W = [[1,2],[3,4]], x = [1,1], b = 0 -> [3,7]
        let out = linear_forward(&[1.0f64, 1.0], &[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0], 2, 2);
        assert_eq!(out, vec![3.0, 7.0]);

        // identity W, zero b -> x
        let out = linear_forward(&[5.0f64, -2.0], &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2, 2);
        assert_eq!(out, vec![5.0, -2.0]);
    }

    #[test]
    fn linear_weight_grad_is_outer_product() {
        let x = [2.0f64, -1.0, 0.5];
        let w = [0.0f64; 6];
        let gout = [3.0f64, -4.0];
        let mut gw = [0.0f64; 6];
        let mut gb = [0.0f64; 2];
        linear_backward(&x, &w, &gout, 2, 3, &mut gw, &mut gb, None);
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(gw[o * 3 + i], gout[o] * x[i]);
            }
        }
        assert_eq!(gb, gout);
    }

    #[test]
    fn softmax_xent_cases() {
        let label = ActionId::new(1).unwrap();
        let (loss, grad) = softmax_xent(&[0.0f64; 8], label);
        assert!((loss - (8.0f64).ln()).abs() < 1e-12);
        // gradient sums to zero
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);

        // saturated correct logit: loss ~ 0
        let mut logits = [0.0f64; 8];
        logits[0] = 30.0;
        let (loss, _) = softmax_xent(&logits, label);
        assert!(loss < 1e-9);

        // softmax sums to one
        let probs = softmax(&[0.3f64, -1.0, 2.0, 0.0, 0.5, -0.2, 1.1, 0.9]);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let logits = [1.0f32, 5.0, 5.0, 0.0, 5.0, 0.0, 0.0, 0.0];
        assert_eq!(argmax_action(&logits).k(), 2);
    }

    #[test]
    fn avgpool_round_trip_shapes() {
        let x = Tensor::new(vec![1, 4, 4], (0..16).map(f64::from).collect());
        let out = avgpool2_forward(&x);
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data()[0], (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
        let gx = avgpool2_backward(&out, (1, 4, 4));
        assert_eq!(gx.shape(), &[1, 4, 4]);
    }

    #[test]
    #[should_panic(expected = "conv weight shape mismatch")]
    fn conv_shape_mismatch_panics() {
        let x = Tensor::new(vec![1, 2, 2], vec![0.0f32; 4]);
        conv2d_forward(&x, &[0.0; 8], &[0.0], 1, 3, 1, 1);
    }
}
