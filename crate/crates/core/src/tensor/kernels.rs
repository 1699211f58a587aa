//! Forward and backward kernels on flat row-major buffers.

use super::Float;
use crate::error::{Error, Result};

pub(crate) fn matmul_dims(
    a: &[usize],
    b: &[usize],
) -> Result<(usize, usize, usize, Vec<usize>)> {
    let mismatch = || Error::ShapeMismatch {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() != 2 {
        return Err(mismatch());
    }
    let k = a[a.len() - 1];
    if k != b[0] {
        return Err(mismatch());
    }
    let n = b[1];
    let rows = a[..a.len() - 1].iter().product();
    let mut out = a.to_vec();
    *out.last_mut().unwrap() = n;
    Ok((rows, k, n, out))
}

pub(crate) fn bmm_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    if a.len() != 3 || b.len() != 3 || a[0] != b[0] || a[2] != b[1] {
        return Err(Error::ShapeMismatch {
            op: "batch_matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok((a[0], a[1], a[2], b[2]))
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward<T: Float>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = axis_extents(shape, axis);
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..len {
                max = max.max(x[base + j * inner]);
            }
            let mut total = T::zero();
            for j in 0..len {
                let e = (x[base + j * inner] - max).exp();
                y[base + j * inner] = e;
                total += e;
            }
            let inv = T::one() / total;
            for j in 0..len {
                y[base + j * inner] *= inv;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward<T: Float>(
    y: &[T],
    dy: &[T],
    shape: &[usize],
    axis: usize,
) -> Vec<T> {
    let (outer, len, inner) = axis_extents(shape, axis);
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                let p = base + j * inner;
                dot += y[p] * dy[p];
            }
            for j in 0..len {
                let p = base + j * inner;
                dx[p] = y[p] * (dy[p] - dot);
            }
        }
    }
    dx
}

pub(crate) struct LayerNormOut<T> {
    pub y: Vec<T>,
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm_forward<T: Float>(
    x: &[T],
    d: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> LayerNormOut<T> {
    let rows = x.len() / d;
    let inv_d = T::one() / T::of(d as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut mean = Vec::with_capacity(rows);
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let xs = &x[r * d..(r + 1) * d];
        let mu = xs.iter().copied().sum::<T>() * inv_d;
        let var = xs.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        for j in 0..d {
            y[r * d + j] = (xs[j] - mu) * rs * gamma[j] + beta[j];
        }
        mean.push(mu);
        rstd.push(rs);
    }
    LayerNormOut { y, mean, rstd }
}

/// Returns (dx, dgamma, dbeta).
pub(crate) fn layer_norm_backward<T: Float>(
    x: &[T],
    dy: &[T],
    d: usize,
    gamma: &[T],
    mean: &[T],
    rstd: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let inv_d = T::one() / T::of(d as f64);
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    let mut xhat = vec![T::zero(); d];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let (mu, rs) = (mean[r], rstd[r]);
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for j in 0..d {
            let g = dy[r * d + j];
            xhat[j] = (x[r * d + j] - mu) * rs;
            dxhat[j] = g * gamma[j];
            dgamma[j] += g * xhat[j];
            dbeta[j] += g;
            sum_dxhat += dxhat[j];
            sum_dxhat_xhat += dxhat[j] * xhat[j];
        }
        let m1 = sum_dxhat * inv_d;
        let m2 = sum_dxhat_xhat * inv_d;
        for j in 0..d {
            dx[r * d + j] = rs * (dxhat[j] - m1 - xhat[j] * m2);
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn gelu<T: Float>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::FRAC_1_SQRT_2()).erf())
}

pub(crate) fn gelu_grad<T: Float>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::FRAC_1_SQRT_2()).erf());
    let pdf = (-half * x * x).exp() * T::of(std::f64::consts::FRAC_1_SQRT_2 * 0.5 * std::f64::consts::FRAC_2_SQRT_PI);
    cdf + x * pdf
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub(crate) fn permute<T: Float>(x: &[T], shape: &[usize], perm: &[usize]) -> (Vec<T>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let nd = out_shape.len();
    if nd == 0 {
        return (x.to_vec(), out_shape);
    }
    // Iterate the output in row-major order with an odometer over its index.
    let last = nd - 1;
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    let inner = out_shape[last];
    let inner_stride = src_strides[last];
    loop {
        for j in 0..inner {
            out.push(x[src + j * inner_stride]);
        }
        // advance all but the last axis
        let mut ax = last;
        loop {
            if ax == 0 {
                return (out, out_shape);
            }
            ax -= 1;
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Mean cross-entropy of `logits` (`rows x classes`) against `labels`.
/// Returns (loss, softmax probabilities).
pub(crate) fn cross_entropy_forward<T: Float>(
    logits: &[T],
    classes: usize,
    labels: &[usize],
) -> (T, Vec<T>) {
    let rows = labels.len();
    let probs = softmax_forward(logits, &[rows, classes], 1);
    let mut total = 0.0f64;
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        total += (lse - row[label]).as_f64();
    }
    (T::of(total / rows as f64), probs)
}
