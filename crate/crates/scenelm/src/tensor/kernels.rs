//! Dense f32 kernels shared by the training tape and the inference path.
//!
//! `gemm` routes through `matrixmultiply` for throughput during training.
//! `gemm_det` is a plain loop whose per-element accumulation order does not
//! depend on the number of rows; the incremental decoder uses it so that
//! feeding one token or several produces bit-identical activations.

/// c[m,n] += a[m,k] * b[k,n] (row-major, beta=0 semantics when `accumulate` is false)
pub fn gemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Like `gemm` but with `a` transposed: c[m,n] += a[k,m]^T * b[k,n].
pub fn gemm_at(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], accumulate: bool) {
    debug_assert_eq!(a.len(), k * m);
    let beta = if accumulate { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Like `gemm` but with `b` transposed: c[m,n] += a[m,k] * b[n,k]^T.
pub fn gemm_bt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], accumulate: bool) {
    debug_assert_eq!(b.len(), n * k);
    let beta = if accumulate { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Deterministic matmul: out[m,n] = a[m,k] * b[k,n], accumulated strictly in
/// k-order per output element regardless of m.
pub fn gemm_det(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &a[i * k..(i + 1) * k];
        let dst = &mut out[i * n..(i + 1) * n];
        dst.fill(0.0);
        for (p, &av) in row.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                dst[j] += av * brow[j];
            }
        }
    }
}

pub const LAYER_NORM_EPS: f32 = 1e-5;

/// Normalizes each row of `x` (rows x cols) in place into `out`, returning
/// per-row (mean, inv_std) for the backward pass.
pub fn layer_norm_rows(x: &[f32], rows: usize, cols: usize, out: &mut [f32]) -> Vec<(f32, f32)> {
    let mut stats = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f32>() / cols as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / cols as f32;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let dst = &mut out[r * cols..(r + 1) * cols];
        for c in 0..cols {
            dst[c] = (row[c] - mean) * inv_std;
        }
        stats.push((mean, inv_std));
    }
    stats
}

/// Row-wise softmax over the last axis.
pub fn softmax_rows(x: &[f32], rows: usize, cols: usize, out: &mut [f32]) {
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let dst = &mut out[r * cols..(r + 1) * cols];
        softmax_slice(row, dst);
    }
}

pub fn softmax_slice(row: &[f32], dst: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for (d, &v) in dst.iter_mut().zip(row.iter()) {
        let e = (v - max).exp();
        *d = e;
        sum += e;
    }
    for d in dst.iter_mut() {
        *d /= sum;
    }
}

pub fn log_sum_exp(row: &[f32]) -> f32 {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f32>().ln()
}

/// Multi-head scaled dot-product attention forward.
///
/// q: [lq, d], k/v: [lk, d] with d = heads * head_dim. When `causal`, query
/// row i (at absolute position `offset + i`) attends to key positions
/// `0..=offset+i`. Returns the output [lq, d] and the saved softmax
/// probabilities [heads, lq, lk] for backward.
pub fn attention_forward(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    lq: usize,
    lk: usize,
    d: usize,
    heads: usize,
    causal: bool,
    offset: usize,
    out: &mut [f32],
) -> Vec<f32> {
    let hd = d / heads;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut probs = vec![0.0f32; heads * lq * lk];
    let mut scores = vec![0.0f32; lk];
    for h in 0..heads {
        let co = h * hd;
        for i in 0..lq {
            let qrow = &q[i * d + co..i * d + co + hd];
            let limit = if causal { (offset + i + 1).min(lk) } else { lk };
            for j in 0..limit {
                let krow = &k[j * d + co..j * d + co + hd];
                let mut s = 0.0;
                for t in 0..hd {
                    s += qrow[t] * krow[t];
                }
                scores[j] = s * scale;
            }
            let prow = &mut probs[(h * lq + i) * lk..(h * lq + i) * lk + lk];
            softmax_slice(&scores[..limit], &mut prow[..limit]);
            // masked tail stays zero
            let orow = &mut out[i * d + co..i * d + co + hd];
            orow.fill(0.0);
            for j in 0..limit {
                let p = prow[j];
                let vrow = &v[j * d + co..j * d + co + hd];
                for t in 0..hd {
                    orow[t] += p * vrow[t];
                }
            }
        }
    }
    probs
}

/// Backward of `attention_forward`. Accumulates into dq/dk/dv.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    probs: &[f32],
    dout: &[f32],
    lq: usize,
    lk: usize,
    d: usize,
    heads: usize,
    causal: bool,
    offset: usize,
    dq: &mut [f32],
    dk: &mut [f32],
    dv: &mut [f32],
) {
    let hd = d / heads;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut dprow = vec![0.0f32; lk];
    for h in 0..heads {
        let co = h * hd;
        for i in 0..lq {
            let limit = if causal { (offset + i + 1).min(lk) } else { lk };
            let prow = &probs[(h * lq + i) * lk..(h * lq + i) * lk + lk];
            let dorow = &dout[i * d + co..i * d + co + hd];
            // dV += P^T dO ; dP = dO V^T
            let mut dot_pp = 0.0f32;
            for j in 0..limit {
                let vrow = &v[j * d + co..j * d + co + hd];
                let mut dp = 0.0;
                for t in 0..hd {
                    dp += dorow[t] * vrow[t];
                }
                dprow[j] = dp;
                dot_pp += dp * prow[j];
                let dvrow = &mut dv[j * d + co..j * d + co + hd];
                let p = prow[j];
                for t in 0..hd {
                    dvrow[t] += p * dorow[t];
                }
            }
            // dS = P o (dP - sum(dP o P)); dQ += dS K * scale; dK += dS^T Q * scale
            let qrow = &q[i * d + co..i * d + co + hd];
            let dqrow = &mut dq[i * d + co..i * d + co + hd];
            for j in 0..limit {
                let ds = prow[j] * (dprow[j] - dot_pp) * scale;
                if ds == 0.0 {
                    continue;
                }
                let krow = &k[j * d + co..j * d + co + hd];
                let dkrow = &mut dk[j * d + co..j * d + co + hd];
                for t in 0..hd {
                    dqrow[t] += ds * krow[t];
                    dkrow[t] += ds * qrow[t];
                }
            }
        }
    }
}
