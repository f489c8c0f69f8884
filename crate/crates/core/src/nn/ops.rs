//! Layer operations: 3x3 same-padding convolution, 2x2 max pooling, dense,
//! ReLU and softmax cross-entropy, each with its backward pass.
//!
//! Tensors are HWC: `input[y, x, c]` flattens to `(y*w + x)*channels + c`.
//! Convolution weights are `[ky, kx, c_in, c_out]`, which flattened is
//! exactly the `[9*c_in, c_out]` matrix the im2col product needs.

use super::{shape_err, NnError, Tensor};
use crate::gemm::{gemm, transpose};
use crate::real::Real;

/// im2col for a 3x3 kernel with one-pixel zero border. `col` must hold
/// `h*w * 9*cin`; each row is the receptive field of one output position in
/// (ky, kx, c) order.
pub(crate) fn im2col3x3<R: Real>(input: &[R], h: usize, w: usize, cin: usize, col: &mut [R]) {
    debug_assert_eq!(input.len(), h * w * cin);
    debug_assert_eq!(col.len(), h * w * 9 * cin);
    col.fill(R::ZERO);
    let row_len = 9 * cin;
    for y in 0..h {
        for ky in 0..3usize {
            let sy = y + ky;
            if sy < 1 || sy > h {
                continue;
            }
            let sy = sy - 1;
            for x in 0..w {
                let row = &mut col[(y * w + x) * row_len..(y * w + x + 1) * row_len];
                for kx in 0..3usize {
                    let sx = x + kx;
                    if sx < 1 || sx > w {
                        continue;
                    }
                    let sx = sx - 1;
                    let src = &input[(sy * w + sx) * cin..(sy * w + sx + 1) * cin];
                    row[(ky * 3 + kx) * cin..(ky * 3 + kx + 1) * cin].copy_from_slice(src);
                }
            }
        }
    }
}

/// Adjoint of [`im2col3x3`]: scatter-add column gradients back to the input.
pub(crate) fn col2im3x3<R: Real>(gcol: &[R], h: usize, w: usize, cin: usize, ginput: &mut [R]) {
    debug_assert_eq!(ginput.len(), h * w * cin);
    debug_assert_eq!(gcol.len(), h * w * 9 * cin);
    ginput.fill(R::ZERO);
    let row_len = 9 * cin;
    for y in 0..h {
        for ky in 0..3usize {
            let sy = y + ky;
            if sy < 1 || sy > h {
                continue;
            }
            let sy = sy - 1;
            for x in 0..w {
                let row = &gcol[(y * w + x) * row_len..(y * w + x + 1) * row_len];
                for kx in 0..3usize {
                    let sx = x + kx;
                    if sx < 1 || sx > w {
                        continue;
                    }
                    let sx = sx - 1;
                    let dst = &mut ginput[(sy * w + sx) * cin..(sy * w + sx + 1) * cin];
                    let src = &row[(ky * 3 + kx) * cin..(ky * 3 + kx + 1) * cin];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// 2x2/stride-2 max pool. `winners` records the in-window index (ky*2+kx)
/// of the max, first occurrence winning ties.
pub(crate) fn maxpool2<R: Real>(
    input: &[R],
    h: usize,
    w: usize,
    c: usize,
    out: &mut [R],
    winners: &mut [u8],
) {
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    debug_assert_eq!(out.len(), oh * ow * c);
    debug_assert_eq!(winners.len(), oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            let base = (oy * ow + ox) * c;
            for ch in 0..c {
                let mut best = R::ZERO;
                let mut win = 0u8;
                for (slot, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                    let v = input[((2 * oy + dy) * w + 2 * ox + dx) * c + ch];
                    if slot == 0 || v > best {
                        best = v;
                        win = slot as u8;
                    }
                }
                out[base + ch] = best;
                winners[base + ch] = win;
            }
        }
    }
}

/// Adjoint of [`maxpool2`]: each output gradient lands on its argmax cell.
pub(crate) fn unpool2<R: Real>(
    gout: &[R],
    winners: &[u8],
    oh: usize,
    ow: usize,
    c: usize,
    ginput: &mut [R],
) {
    debug_assert_eq!(gout.len(), oh * ow * c);
    debug_assert_eq!(ginput.len(), oh * ow * 4 * c);
    ginput.fill(R::ZERO);
    let w = ow * 2;
    for oy in 0..oh {
        for ox in 0..ow {
            let base = (oy * ow + ox) * c;
            for ch in 0..c {
                let win = winners[base + ch] as usize;
                let (dy, dx) = (win / 2, win % 2);
                ginput[((2 * oy + dy) * w + 2 * ox + dx) * c + ch] += gout[base + ch];
            }
        }
    }
}

fn conv_dims(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<(usize, usize, usize, usize), NnError> {
    let (h, w, cin) = match *input.shape() {
        [h, w, c] => (h, w, c),
        _ => {
            return Err(shape_err(
                "conv2d",
                format!("input must be [h,w,c], got {:?}", input.shape()),
            ))
        }
    };
    let cout = match *weights.shape() {
        [3, 3, wc, co] if wc == cin => co,
        _ => {
            return Err(shape_err(
                "conv2d",
                format!(
                    "weights must be [3,3,{cin},cout], got {:?}",
                    weights.shape()
                ),
            ))
        }
    };
    if bias.shape() != [cout] {
        return Err(shape_err(
            "conv2d",
            format!("bias must be [{cout}], got {:?}", bias.shape()),
        ));
    }
    Ok((h, w, cin, cout))
}

/// 3x3 convolution, stride 1, same padding:
/// `out[y,x,o] = bias[o] + sum_{ky,kx,c} in[y+ky-1, x+kx-1, c] * W[ky,kx,c,o]`
/// with out-of-range input reading as zero.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (h, w, cin, cout) = conv_dims(input, weights, bias)?;
    let mut col = vec![0.0; h * w * 9 * cin];
    im2col3x3(input.data(), h, w, cin, &mut col);
    let mut out = Vec::with_capacity(h * w * cout);
    for _ in 0..h * w {
        out.extend_from_slice(bias.data());
    }
    gemm(&col, weights.data(), &mut out, h * w, 9 * cin, cout);
    Tensor::new(vec![h, w, cout], out)
}

/// Gradients of [`conv2d_forward`] given the forward input and weights.
/// Returns (grad_input, grad_weights, grad_bias).
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NnError> {
    let (h, w, cin) = match *input.shape() {
        [h, w, c] => (h, w, c),
        _ => {
            return Err(shape_err(
                "conv2d backward",
                format!("input must be [h,w,c], got {:?}", input.shape()),
            ))
        }
    };
    let cout = match *weights.shape() {
        [3, 3, wc, co] if wc == cin => co,
        _ => {
            return Err(shape_err(
                "conv2d backward",
                format!("weights must be [3,3,{cin},cout], got {:?}", weights.shape()),
            ))
        }
    };
    if grad_out.shape() != [h, w, cout] {
        return Err(shape_err(
            "conv2d backward",
            format!("grad must be [{h},{w},{cout}], got {:?}", grad_out.shape()),
        ));
    }
    let go = grad_out.data();

    let mut gb = vec![0.0; cout];
    for pos in 0..h * w {
        for (o, b) in gb.iter_mut().enumerate() {
            *b += go[pos * cout + o];
        }
    }

    // grad_W = col^T . grad_out
    let mut col = vec![0.0; h * w * 9 * cin];
    im2col3x3(input.data(), h, w, cin, &mut col);
    let mut colt = vec![0.0; col.len()];
    transpose(&col, h * w, 9 * cin, &mut colt);
    let mut gw = vec![0.0; 9 * cin * cout];
    gemm(&colt, go, &mut gw, 9 * cin, h * w, cout);

    // grad_input = col2im(grad_out . W^T)
    let mut wt = vec![0.0; weights.len()];
    transpose(weights.data(), 9 * cin, cout, &mut wt);
    let mut gcol = vec![0.0; h * w * 9 * cin];
    gemm(go, &wt, &mut gcol, h * w, cout, 9 * cin);
    let mut gin = vec![0.0; h * w * cin];
    col2im3x3(&gcol, h, w, cin, &mut gin);

    Ok((
        Tensor::new(vec![h, w, cin], gin)?,
        Tensor::new(vec![3, 3, cin, cout], gw)?,
        Tensor::new(vec![cout], gb)?,
    ))
}

/// 2x2 max pooling, stride 2. Returns the pooled tensor and the argmax
/// cache consumed by [`maxpool_backward`].
pub fn maxpool_forward(input: &Tensor) -> Result<(Tensor, MaxPoolCache), NnError> {
    let (h, w, c) = match *input.shape() {
        [h, w, c] => (h, w, c),
        _ => {
            return Err(shape_err(
                "maxpool",
                format!("input must be [h,w,c], got {:?}", input.shape()),
            ))
        }
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::OddDimension { h, w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow * c];
    let mut winners = vec![0u8; oh * ow * c];
    maxpool2(input.data(), h, w, c, &mut out, &mut winners);
    Ok((
        Tensor::new(vec![oh, ow, c], out)?,
        MaxPoolCache { oh, ow, c, winners },
    ))
}

/// Argmax positions recorded by one [`maxpool_forward`] call.
#[derive(Clone, Debug)]
pub struct MaxPoolCache {
    oh: usize,
    ow: usize,
    c: usize,
    winners: Vec<u8>,
}

/// Route each pooled gradient to the cell that won its window.
pub fn maxpool_backward(grad_out: &Tensor, cache: &MaxPoolCache) -> Result<Tensor, NnError> {
    if grad_out.shape() != [cache.oh, cache.ow, cache.c] {
        return Err(shape_err(
            "maxpool backward",
            format!(
                "grad shape {:?} does not match cache {}x{}x{}",
                grad_out.shape(),
                cache.oh,
                cache.ow,
                cache.c
            ),
        ));
    }
    let mut gin = vec![0.0; cache.oh * 2 * cache.ow * 2 * cache.c];
    unpool2(
        grad_out.data(),
        &cache.winners,
        cache.oh,
        cache.ow,
        cache.c,
        &mut gin,
    );
    Tensor::new(vec![cache.oh * 2, cache.ow * 2, cache.c], gin)
}

/// Affine map `out = W^T in + b` with `W: [n_in, n_out]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (n_in, n_out) = dense_dims(input, weights, bias)?;
    let mut out = bias.data().to_vec();
    gemm(input.data(), weights.data(), &mut out, 1, n_in, n_out);
    Tensor::new(vec![n_out], out)
}

/// Gradients of [`dense_forward`]: (grad_input, grad_weights, grad_bias).
pub fn dense_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NnError> {
    let (n_in, n_out) = dense_dims(input, weights, grad_out)?;
    let go = grad_out.data();
    // grad_input[i] = sum_j W[i,j] * go[j]  (contiguous row dot)
    let gi: Vec<f64> = (0..n_in)
        .map(|i| {
            weights.data()[i * n_out..(i + 1) * n_out]
                .iter()
                .zip(go)
                .map(|(w, g)| w * g)
                .sum()
        })
        .collect();
    // grad_W = input (x) go
    let mut gw = vec![0.0; n_in * n_out];
    for (i, &x) in input.data().iter().enumerate() {
        for (j, &g) in go.iter().enumerate() {
            gw[i * n_out + j] = x * g;
        }
    }
    Ok((
        Tensor::new(vec![n_in], gi)?,
        Tensor::new(vec![n_in, n_out], gw)?,
        Tensor::new(vec![n_out], go.to_vec())?,
    ))
}

fn dense_dims(input: &Tensor, weights: &Tensor, out_like: &Tensor) -> Result<(usize, usize), NnError> {
    let n_in = match *input.shape() {
        [n] => n,
        _ => {
            return Err(shape_err(
                "dense",
                format!("input must be a vector, got {:?}", input.shape()),
            ))
        }
    };
    let n_out = match *weights.shape() {
        [wi, wo] if wi == n_in => wo,
        _ => {
            return Err(shape_err(
                "dense",
                format!("weights must be [{n_in}, n_out], got {:?}", weights.shape()),
            ))
        }
    };
    if out_like.shape() != [n_out] {
        return Err(shape_err(
            "dense",
            format!("expected [{n_out}] vector, got {:?}", out_like.shape()),
        ));
    }
    Ok((n_in, n_out))
}

/// Elementwise max(0, x).
pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Gradient mask: passes grad where the forward input was positive.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Tensor {
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Max-shifted softmax over a logit vector.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Softmax + cross-entropy against an integer label.
#[derive(Clone, Debug)]
pub struct SoftmaxXent {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub grad_logits: Vec<f64>,
}

/// Numerically stable softmax (max-shift) with loss `-ln p[label]` and
/// gradient `p - onehot(label)`.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<SoftmaxXent, NnError> {
    let classes = logits.len();
    if classes < 2 {
        return Err(shape_err(
            "softmax",
            format!("need at least 2 classes, got {classes}"),
        ));
    }
    if label >= classes {
        return Err(NnError::BadLabel { label, classes });
    }
    let probs = softmax(logits);
    let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
    let mut grad_logits = probs.clone();
    grad_logits[label] -= 1.0;
    Ok(SoftmaxXent {
        loss,
        probs,
        grad_logits,
    })
}
