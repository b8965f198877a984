//! Slice-level numeric kernels shared by the autograd tape and the
//! incremental decoder, so teacher-forced and step-wise passes run the
//! same arithmetic.

use crate::scalar::{MatMut, MatRef, Scalar};

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer normalization. Writes the per-row mean and reciprocal
/// standard deviation for the backward pass.
pub fn layer_norm<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    cols: usize,
    out: &mut [T],
    mean: &mut [T],
    rstd: &mut [T],
) {
    let n = T::from_usize(cols).unwrap();
    let eps = T::from_f64_lossy(LN_EPS);
    for (r, (xr, yr)) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)).enumerate() {
        let mu = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        for c in 0..cols {
            yr[c] = (xr[c] - mu) * rs * gain[c] + bias[c];
        }
        mean[r] = mu;
        rstd[r] = rs;
    }
}

/// Accumulates `dx`, `dgain`, `dbias` for [`layer_norm`].
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Scalar>(
    x: &[T],
    gain: &[T],
    mean: &[T],
    rstd: &[T],
    dy: &[T],
    cols: usize,
    dx: Option<&mut [T]>,
    dgain: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) {
    let n = T::from_usize(cols).unwrap();
    let rows = x.len() / cols;
    if let Some(dg) = dgain {
        for r in 0..rows {
            for c in 0..cols {
                let xhat = (x[r * cols + c] - mean[r]) * rstd[r];
                dg[c] += dy[r * cols + c] * xhat;
            }
        }
    }
    if let Some(db) = dbias {
        for r in 0..rows {
            for c in 0..cols {
                db[c] += dy[r * cols + c];
            }
        }
    }
    if let Some(dx) = dx {
        for r in 0..rows {
            let xr = &x[r * cols..(r + 1) * cols];
            let dyr = &dy[r * cols..(r + 1) * cols];
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for c in 0..cols {
                let g = dyr[c] * gain[c];
                let xhat = (xr[c] - mean[r]) * rstd[r];
                sum_g += g;
                sum_gx += g * xhat;
            }
            let mg = sum_g / n;
            let mgx = sum_gx / n;
            for c in 0..cols {
                let g = dyr[c] * gain[c];
                let xhat = (xr[c] - mean[r]) * rstd[r];
                dx[r * cols + c] += rstd[r] * (g - mg - xhat * mgx);
            }
        }
    }
}

fn gelu_consts<T: Scalar>() -> (T, T) {
    (T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt()), T::from_f64_lossy(0.044715))
}

/// tanh-approximated GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let (k, a) = gelu_consts::<T>();
    // 0.5 * (1 + tanh(u)) == sigmoid(2u); exp is much cheaper than tanh
    let two = T::from_f64_lossy(2.0);
    x / (T::one() + (-two * k * (x + a * x * x * x)).exp())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let (k, a) = gelu_consts::<T>();
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let two = T::from_f64_lossy(2.0);
    let sig = T::one() / (T::one() + (-two * k * (x + a * x * x * x)).exp());
    let t = two * sig - T::one();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + three * a * x * x)
}

/// Shape of a multi-head attention call over a padded batch: `q` holds
/// `batch * q_len` rows and `k`/`v` hold `batch * k_len` rows, all of width
/// `heads * head_dim`.
#[derive(Clone, Debug)]
pub struct AttnLayout {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
    /// Number of valid (unpadded) keys per batch element.
    pub key_lens: Vec<usize>,
    /// Query `i` may only see keys `j <= i`.
    pub causal: bool,
}

impl AttnLayout {
    pub fn probs_len(&self) -> usize {
        self.batch * self.heads * self.q_len * self.k_len
    }

    fn visible(&self, b: usize, i: usize) -> usize {
        let valid = self.key_lens[b];
        if self.causal {
            valid.min(i + 1)
        } else {
            valid
        }
    }
}

/// Scaled dot-product attention. `probs` receives the post-softmax weights
/// (`[batch, heads, q_len, k_len]`, masked entries zero).
pub fn attention<T: Scalar>(q: &[T], k: &[T], v: &[T], d: usize, lay: &AttnLayout, out: &mut [T], probs: &mut [T]) {
    let dh = d / lay.heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    probs.iter_mut().for_each(|p| *p = T::zero());
    for b in 0..lay.batch {
        let kv = lay.key_lens[b];
        if kv == 0 {
            continue;
        }
        for h in 0..lay.heads {
            let pbase = (b * lay.heads + h) * lay.q_len * lay.k_len;
            let qv = MatRef { data: q, offset: b * lay.q_len * d + h * dh, rows: lay.q_len, cols: dh, row_stride: d, col_stride: 1 };
            let kt = MatRef { data: k, offset: b * lay.k_len * d + h * dh, rows: kv, cols: dh, row_stride: d, col_stride: 1 }.t();
            T::gemm(
                scale,
                qv,
                kt,
                T::zero(),
                MatMut { data: probs, offset: pbase, rows: lay.q_len, cols: kv, row_stride: lay.k_len, col_stride: 1 },
            );
            for i in 0..lay.q_len {
                let vis = lay.visible(b, i);
                let row = &mut probs[pbase + i * lay.k_len..pbase + (i + 1) * lay.k_len];
                let m = row[..vis].iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for p in row[..vis].iter_mut() {
                    *p = (*p - m).exp();
                    z += *p;
                }
                for p in row[..vis].iter_mut() {
                    *p /= z;
                }
                for p in row[vis..].iter_mut() {
                    *p = T::zero();
                }
            }
            let pv = MatRef { data: &*probs, offset: pbase, rows: lay.q_len, cols: kv, row_stride: lay.k_len, col_stride: 1 };
            let vv = MatRef { data: v, offset: b * lay.k_len * d + h * dh, rows: kv, cols: dh, row_stride: d, col_stride: 1 };
            T::gemm(
                T::one(),
                pv,
                vv,
                T::zero(),
                MatMut { data: out, offset: b * lay.q_len * d + h * dh, rows: lay.q_len, cols: dh, row_stride: d, col_stride: 1 },
            );
        }
    }
}

/// Gradient of [`attention`]; accumulates into whichever of `dq`, `dk`, `dv`
/// are requested.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    d: usize,
    lay: &AttnLayout,
    mut dq: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
    mut dv: Option<&mut [T]>,
) {
    let dh = d / lay.heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut ds = vec![T::zero(); lay.q_len * lay.k_len];
    for b in 0..lay.batch {
        let kv = lay.key_lens[b];
        if kv == 0 {
            continue;
        }
        for h in 0..lay.heads {
            let pbase = (b * lay.heads + h) * lay.q_len * lay.k_len;
            let q_off = b * lay.q_len * d + h * dh;
            let k_off = b * lay.k_len * d + h * dh;
            let dov = MatRef { data: dout, offset: q_off, rows: lay.q_len, cols: dh, row_stride: d, col_stride: 1 };
            let pv = MatRef { data: probs, offset: pbase, rows: lay.q_len, cols: kv, row_stride: lay.k_len, col_stride: 1 };
            if let Some(dv) = dv.as_deref_mut() {
                T::gemm(
                    T::one(),
                    pv.t(),
                    dov,
                    T::one(),
                    MatMut { data: dv, offset: k_off, rows: kv, cols: dh, row_stride: d, col_stride: 1 },
                );
            }
            if dq.is_none() && dk.is_none() {
                continue;
            }
            // dP = dO V^T
            let vt = MatRef { data: v, offset: k_off, rows: kv, cols: dh, row_stride: d, col_stride: 1 }.t();
            T::gemm(
                T::one(),
                dov,
                vt,
                T::zero(),
                MatMut { data: &mut ds, offset: 0, rows: lay.q_len, cols: kv, row_stride: lay.k_len, col_stride: 1 },
            );
            // dS = P * (dP - rowsum(P * dP))
            for i in 0..lay.q_len {
                let prow = &probs[pbase + i * lay.k_len..pbase + i * lay.k_len + kv];
                let drow = &mut ds[i * lay.k_len..i * lay.k_len + kv];
                let dot: T = prow.iter().zip(drow.iter()).map(|(&p, &g)| p * g).sum();
                for (g, &p) in drow.iter_mut().zip(prow) {
                    *g = p * (*g - dot);
                }
            }
            let dsv = MatRef { data: &ds, offset: 0, rows: lay.q_len, cols: kv, row_stride: lay.k_len, col_stride: 1 };
            if let Some(dq) = dq.as_deref_mut() {
                let kvw = MatRef { data: k, offset: k_off, rows: kv, cols: dh, row_stride: d, col_stride: 1 };
                T::gemm(
                    scale,
                    dsv,
                    kvw,
                    T::one(),
                    MatMut { data: dq, offset: q_off, rows: lay.q_len, cols: dh, row_stride: d, col_stride: 1 },
                );
            }
            if let Some(dk) = dk.as_deref_mut() {
                let qv = MatRef { data: q, offset: q_off, rows: lay.q_len, cols: dh, row_stride: d, col_stride: 1 };
                T::gemm(
                    scale,
                    dsv.t(),
                    qv,
                    T::one(),
                    MatMut { data: dk, offset: k_off, rows: kv, cols: dh, row_stride: d, col_stride: 1 },
                );
            }
        }
    }
}

/// Numerically stable log-sum-exp of a row.
pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}
