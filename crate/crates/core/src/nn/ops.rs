//! Primitive layer kernels with hand-written backward passes.
//!
//! Layout conventions, chosen so the innermost loop always runs over a
//! contiguous slice (friendly to autovectorization):
//! - images/feature maps: `[H, W, C]` (channel innermost)
//! - convolution kernels: `[3, 3, C_in, C_out]`
//! - dense weights: `[in, out]` — `y[o] = b[o] + Σ_i x[i]·w[i][o]`
//! - token matrices: `[tokens, dim]`

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::BackpropMode;

#[inline]
pub(crate) fn dims3<S: Scalar>(t: &Tensor<S>) -> (usize, usize, usize) {
    let s = t.shape();
    debug_assert_eq!(s.len(), 3);
    (s[0], s[1], s[2])
}

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 1, zero padding 1 (spatial size preserved)
// ---------------------------------------------------------------------------

pub fn conv3x3_forward<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &[S]) -> Tensor<S> {
    let (h, w, cin) = dims3(input);
    debug_assert_eq!(weight.shape(), [3, 3, cin, bias.len()]);
    let cout = bias.len();
    let mut out = Tensor::zeros([h, w, cout]);
    let src = input.data();
    let wdat = weight.data();
    let odat = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let obase = (y * w + x) * cout;
            odat[obase..obase + cout].copy_from_slice(bias);
            for ky in 0..3 {
                let sy = y + ky;
                if sy < 1 || sy > h {
                    continue;
                }
                let sy = sy - 1;
                for kx in 0..3 {
                    let sx = x + kx;
                    if sx < 1 || sx > w {
                        continue;
                    }
                    let sx = sx - 1;
                    let ibase = (sy * w + sx) * cin;
                    let wbase = (ky * 3 + kx) * cin * cout;
                    for ci in 0..cin {
                        let a = src[ibase + ci];
                        let wrow = &wdat[wbase + ci * cout..wbase + (ci + 1) * cout];
                        let orow = &mut odat[obase..obase + cout];
                        for (o, &wv) in orow.iter_mut().zip(wrow) {
                            *o += a * wv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of the 3x3 convolution. Returns (d_input, d_weight, d_bias);
/// `d_input` is skipped when `want_dinput` is false (first layer of a
/// parameter-gradient-only pass).
pub fn conv3x3_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    dout: &Tensor<S>,
    want_dinput: bool,
) -> (Option<Tensor<S>>, Tensor<S>, Vec<S>) {
    let (h, w, cin) = dims3(input);
    let cout = weight.shape()[3];
    debug_assert_eq!(dout.shape(), [h, w, cout]);
    let src = input.data();
    let wdat = weight.data();
    let ddat = dout.data();
    let mut dinput = if want_dinput {
        Some(Tensor::zeros([h, w, cin]))
    } else {
        None
    };
    let mut dweight = Tensor::zeros([3, 3, cin, cout]);
    let mut dbias = vec![S::ZERO; cout];
    let dwdat = dweight.data_mut();
    for y in 0..h {
        for x in 0..w {
            let obase = (y * w + x) * cout;
            let drow = &ddat[obase..obase + cout];
            for (b, &d) in dbias.iter_mut().zip(drow) {
                *b += d;
            }
            for ky in 0..3 {
                let sy = y + ky;
                if sy < 1 || sy > h {
                    continue;
                }
                let sy = sy - 1;
                for kx in 0..3 {
                    let sx = x + kx;
                    if sx < 1 || sx > w {
                        continue;
                    }
                    let sx = sx - 1;
                    let ibase = (sy * w + sx) * cin;
                    let wbase = (ky * 3 + kx) * cin * cout;
                    for ci in 0..cin {
                        let a = src[ibase + ci];
                        let dwrow = &mut dwdat[wbase + ci * cout..wbase + (ci + 1) * cout];
                        for (dw, &d) in dwrow.iter_mut().zip(drow) {
                            *dw += a * d;
                        }
                        if let Some(di) = dinput.as_mut() {
                            let wrow = &wdat[wbase + ci * cout..wbase + (ci + 1) * cout];
                            let mut acc = S::ZERO;
                            for (&wv, &d) in wrow.iter().zip(drow) {
                                acc += wv * d;
                            }
                            di.data_mut()[ibase + ci] += acc;
                        }
                    }
                }
            }
        }
    }
    (dinput, dweight, dbias)
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

pub fn relu_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| v.maximum(S::ZERO))
}

/// Backward through ReLU given the FORWARD OUTPUT (`post`, which is > 0
/// exactly where the pre-activation was > 0).
///
/// `GuidedRelu` additionally zeroes positions whose upstream gradient is
/// negative — the guided-backpropagation rule.
pub fn relu_backward<S: Scalar>(dout: &Tensor<S>, post: &Tensor<S>, mode: BackpropMode) -> Tensor<S> {
    debug_assert_eq!(dout.shape(), post.shape());
    let mut dx = dout.clone();
    match mode {
        BackpropMode::Standard => {
            for (d, &p) in dx.data_mut().iter_mut().zip(post.data()) {
                if !(p > S::ZERO) {
                    *d = S::ZERO;
                }
            }
        }
        BackpropMode::GuidedRelu => {
            for (d, &p) in dx.data_mut().iter_mut().zip(post.data()) {
                if !(p > S::ZERO) || *d < S::ZERO {
                    *d = S::ZERO;
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2
// ---------------------------------------------------------------------------

/// Forward max pool. Returns the pooled map and, per output cell/channel, the
/// flat input index of the maximum (first maximum in row-major scan order, a
/// fixed tie rule that makes the backward routing deterministic).
pub fn maxpool2_forward<S: Scalar>(input: &Tensor<S>) -> (Tensor<S>, Vec<u32>) {
    let (h, w, c) = dims3(input);
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Tensor::zeros([oh, ow, c]);
    let mut argmax = vec![0u32; oh * ow * c];
    let odat = out.data_mut();
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = S::from_f64(f64::NEG_INFINITY);
                let mut best_idx = 0u32;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = ((oy * 2 + dy) * w + ox * 2 + dx) * c + ch;
                        let v = src[idx];
                        if v > best {
                            best = v;
                            best_idx = idx as u32;
                        }
                    }
                }
                let o = (oy * ow + ox) * c + ch;
                odat[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2_backward<S: Scalar>(
    dout: &Tensor<S>,
    argmax: &[u32],
    input_shape: [usize; 3],
) -> Tensor<S> {
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let dxd = dx.data_mut();
    for (i, &d) in dout.data().iter().enumerate() {
        dxd[argmax[i] as usize] += d;
    }
    dx
}

// ---------------------------------------------------------------------------
// Dense (fully connected) layer on a single vector
// ---------------------------------------------------------------------------

pub fn dense_forward<S: Scalar>(x: &[S], weight: &Tensor<S>, bias: &[S]) -> Vec<S> {
    let (n_in, n_out) = (weight.shape()[0], weight.shape()[1]);
    debug_assert_eq!(x.len(), n_in);
    debug_assert_eq!(bias.len(), n_out);
    let wdat = weight.data();
    let mut y = bias.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        let wrow = &wdat[i * n_out..(i + 1) * n_out];
        for (o, &wv) in y.iter_mut().zip(wrow) {
            *o += xi * wv;
        }
    }
    y
}

pub fn dense_backward<S: Scalar>(
    x: &[S],
    weight: &Tensor<S>,
    dout: &[S],
) -> (Vec<S>, Tensor<S>, Vec<S>) {
    let (n_in, n_out) = (weight.shape()[0], weight.shape()[1]);
    let wdat = weight.data();
    let mut dx = vec![S::ZERO; n_in];
    let mut dw = Tensor::zeros([n_in, n_out]);
    let dwdat = dw.data_mut();
    for i in 0..n_in {
        let wrow = &wdat[i * n_out..(i + 1) * n_out];
        let mut acc = S::ZERO;
        for (&wv, &d) in wrow.iter().zip(dout) {
            acc += wv * d;
        }
        dx[i] = acc;
        let xi = x[i];
        let dwrow = &mut dwdat[i * n_out..(i + 1) * n_out];
        for (dw, &d) in dwrow.iter_mut().zip(dout) {
            *dw += xi * d;
        }
    }
    (dx, dw, dout.to_vec())
}

// ---------------------------------------------------------------------------
// Batched matrix products over token matrices
// ---------------------------------------------------------------------------

/// `out[m,n] = a[m,k] · b[k,n]`
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    debug_assert_eq!(b.shape()[0], k);
    let mut out = Tensor::zeros([m, n]);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for i in 0..m {
        let orow = &mut od[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `out[m,n] = aᵀ[m,k'] · b` for `a[k',m]`, i.e. `out[i][j] = Σ_p a[p][i]·b[p][j]`.
pub fn matmul_at<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (k, m) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    debug_assert_eq!(b.shape()[0], k);
    let mut out = Tensor::zeros([m, n]);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for p in 0..k {
        let arow = &ad[p * m..(p + 1) * m];
        let brow = &bd[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut od[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[m,n] = a · bᵀ` for `b[n,k]`, i.e. `out[i][j] = Σ_p a[i][p]·b[j][p]`.
pub fn matmul_bt<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[0];
    debug_assert_eq!(b.shape()[1], k);
    let mut out = Tensor::zeros([m, n]);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let mut acc = S::ZERO;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            od[i * n + j] = acc;
        }
    }
    out
}

/// Add `bias` to every row of `x[t, n]` in place.
pub fn add_row_bias<S: Scalar>(x: &mut Tensor<S>, bias: &[S]) {
    let n = bias.len();
    for row in x.data_mut().chunks_exact_mut(n) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Column sums of `x[t, n]` — the bias gradient of a batched dense layer.
pub fn column_sums<S: Scalar>(x: &Tensor<S>) -> Vec<S> {
    let n = x.shape()[1];
    let mut out = vec![S::ZERO; n];
    for row in x.data().chunks_exact(n) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Layer normalization over the last dimension of [tokens, dim]
// ---------------------------------------------------------------------------

pub const LN_EPS: f64 = 1e-5;

pub struct LnCache<S> {
    /// Normalized values (x - mean)/std, before gamma/beta.
    pub xhat: Tensor<S>,
    /// Per-token 1/std.
    pub inv_std: Vec<S>,
}

pub fn layernorm_forward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &[S],
    beta: &[S],
) -> (Tensor<S>, LnCache<S>) {
    let (t, d) = (x.shape()[0], x.shape()[1]);
    let mut y = Tensor::zeros([t, d]);
    let mut xhat = Tensor::zeros([t, d]);
    let mut inv_std = Vec::with_capacity(t);
    let inv_d = S::from_f64(1.0 / d as f64);
    let eps = S::from_f64(LN_EPS);
    for ti in 0..t {
        let row = &x.data()[ti * d..(ti + 1) * d];
        let mut mean = S::ZERO;
        for &v in row {
            mean += v;
        }
        mean *= inv_d;
        let mut var = S::ZERO;
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var *= inv_d;
        let istd = S::ONE / (var + eps).sqrt();
        inv_std.push(istd);
        let xh = &mut xhat.data_mut()[ti * d..(ti + 1) * d];
        let yr = &mut y.data_mut()[ti * d..(ti + 1) * d];
        for i in 0..d {
            let h = (row[i] - mean) * istd;
            xh[i] = h;
            yr[i] = gamma[i] * h + beta[i];
        }
    }
    (y, LnCache { xhat, inv_std })
}

/// Backward through layer norm. Returns (dx, dgamma, dbeta).
pub fn layernorm_backward<S: Scalar>(
    dout: &Tensor<S>,
    cache: &LnCache<S>,
    gamma: &[S],
) -> (Tensor<S>, Vec<S>, Vec<S>) {
    let (t, d) = (dout.shape()[0], dout.shape()[1]);
    let mut dx = Tensor::zeros([t, d]);
    let mut dgamma = vec![S::ZERO; d];
    let mut dbeta = vec![S::ZERO; d];
    let inv_d = S::from_f64(1.0 / d as f64);
    for ti in 0..t {
        let dy = &dout.data()[ti * d..(ti + 1) * d];
        let xh = &cache.xhat.data()[ti * d..(ti + 1) * d];
        let istd = cache.inv_std[ti];
        let mut sum_dxhat = S::ZERO;
        let mut sum_dxhat_xhat = S::ZERO;
        for i in 0..d {
            let dxh = dy[i] * gamma[i];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[i];
            dgamma[i] += dy[i] * xh[i];
            dbeta[i] += dy[i];
        }
        let mean_dxhat = sum_dxhat * inv_d;
        let mean_dxhat_xhat = sum_dxhat_xhat * inv_d;
        let dxr = &mut dx.data_mut()[ti * d..(ti + 1) * d];
        for i in 0..d {
            let dxh = dy[i] * gamma[i];
            dxr[i] = istd * (dxh - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    (dx, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// Row-wise softmax
// ---------------------------------------------------------------------------

/// Numerically stable softmax over the last dimension of `[rows, n]`.
pub fn softmax_rows<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let n = *x.shape().last().unwrap();
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        let mut mx = row[0];
        for &v in row.iter() {
            mx = mx.maximum(v);
        }
        let mut sum = S::ZERO;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        let inv = S::ONE / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    out
}

/// Backward through a row softmax given the FORWARD OUTPUT `probs`:
/// `dscore = p ⊙ (dout - Σ_j dout_j·p_j)` per row.
pub fn softmax_rows_backward<S: Scalar>(dout: &Tensor<S>, probs: &Tensor<S>) -> Tensor<S> {
    let n = *probs.shape().last().unwrap();
    let mut dx = Tensor::zeros(probs.shape().to_vec());
    for ((dxr, dor), pr) in dx
        .data_mut()
        .chunks_exact_mut(n)
        .zip(dout.data().chunks_exact(n))
        .zip(probs.data().chunks_exact(n))
    {
        let mut dot = S::ZERO;
        for (&d, &p) in dor.iter().zip(pr) {
            dot += d * p;
        }
        for i in 0..n {
            dxr[i] = pr[i] * (dor[i] - dot);
        }
    }
    dx
}

/// log-softmax of a single logit vector (used by the cross-entropy loss).
pub fn log_softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let mut mx = logits[0];
    for &v in logits {
        mx = mx.maximum(v);
    }
    let mut sum = S::ZERO;
    for &v in logits {
        sum += (v - mx).exp();
    }
    let lse = mx + sum.ln();
    logits.iter().map(|&v| v - lse).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<S: Scalar>(xs: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
