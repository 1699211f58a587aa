//! Covariance estimation and symmetric positive-definite inversion.

use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Jitter levels tried, relative to the mean diagonal, when a factorization
/// fails at the requested jitter.
pub const JITTER_ESCALATION: [f64; 3] = [1e-6, 1e-4, 1e-2];

fn as_matrix<T: Float>(t: &Tensor<T>, op: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: format!("{op} needs a 2-D tensor"),
        }),
    }
}

/// Column means of an `n x d` matrix.
pub fn column_means<T: Float>(rows: &Tensor<T>) -> Result<Vec<T>> {
    let (n, d) = as_matrix(rows, "column_means")?;
    let mut mean = vec![T::zero(); d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(rows.row(i)) {
            *m += v;
        }
    }
    let inv = T::one() / T::of(n as f64);
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(mean)
}

/// Unbiased sample covariance (`n - 1` denominator) of an `n x d` matrix.
///
/// The result is symmetrized by copying the upper triangle, so it is
/// bit-exactly symmetric.
pub fn covariance<T: Float>(rows: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, _) = as_matrix(rows, "covariance")?;
    if n < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: n,
            hint: String::new(),
        });
    }
    let mean = column_means(rows)?;
    scatter(rows, &mean, T::of((n - 1) as f64))
}

/// `sum_i (x_i - mean)(x_i - mean)^T / denom`, symmetric by construction.
pub(crate) fn scatter<T: Float>(rows: &Tensor<T>, mean: &[T], denom: T) -> Result<Tensor<T>> {
    let (n, d) = as_matrix(rows, "scatter")?;
    let mut centered = Vec::with_capacity(n * d);
    for i in 0..n {
        centered.extend(rows.row(i).iter().zip(mean).map(|(&x, &m)| x - m));
    }
    let mut s = vec![T::zero(); d * d];
    super::gemm(d, n, d, &centered, true, &centered, false, &mut s, false);
    let inv = T::one() / denom;
    for i in 0..d {
        for j in i..d {
            let v = s[i * d + j] * inv;
            s[i * d + j] = v;
            s[j * d + i] = v;
        }
    }
    Tensor::new([d, d], s)
}

/// Lower-triangular Cholesky factor of `m + jitter * I`, or `None` when the
/// matrix is not numerically positive definite.
pub fn cholesky<T: Float>(m: &Tensor<T>, jitter: T) -> Result<Option<Tensor<T>>> {
    let (d, c) = as_matrix(m, "cholesky")?;
    if d != c {
        return Err(Error::ShapeMismatch {
            op: "cholesky",
            lhs: m.shape().to_vec(),
            rhs: vec![d, d],
        });
    }
    let a = m.data();
    let mut l = vec![T::zero(); d * d];
    for j in 0..d {
        let mut diag = a[j * d + j] + jitter;
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if !(diag > T::zero()) || !diag.is_finite() {
            return Ok(None);
        }
        let ljj = diag.sqrt();
        l[j * d + j] = ljj;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    Ok(Some(Tensor::new([d, d], l)?))
}

/// Inverse from a Cholesky factor: `(L L^T)^-1 = L^-T L^-1`.
fn inverse_from_cholesky<T: Float>(l: &Tensor<T>) -> Result<Tensor<T>> {
    let d = l.shape()[0];
    let l = l.data();
    // Solve L X = I column by column (X = L^-1, lower triangular).
    let mut linv = vec![T::zero(); d * d];
    for col in 0..d {
        for i in col..d {
            let mut s = if i == col { T::one() } else { T::zero() };
            for k in col..i {
                s -= l[i * d + k] * linv[k * d + col];
            }
            linv[i * d + col] = s / l[i * d + i];
        }
    }
    let mut inv = vec![T::zero(); d * d];
    super::gemm(d, d, d, &linv, true, &linv, false, &mut inv, false);
    for i in 0..d {
        for j in i + 1..d {
            let v = inv[i * d + j];
            inv[j * d + i] = v;
        }
    }
    Tensor::new([d, d], inv)
}

/// Result of [`inverse_spd`]: the inverse and the jitter that was applied.
#[derive(Debug, Clone)]
pub struct SpdInverse<T> {
    pub inverse: Tensor<T>,
    pub jitter: T,
}

/// `(m + jitter * I)^-1` for a symmetric matrix via Cholesky factorization.
///
/// If the factorization fails, jitter is escalated through
/// [`JITTER_ESCALATION`] scaled by the mean diagonal of `m` (or 1 when that is
/// not positive). The applied jitter is returned alongside the inverse.
pub fn inverse_spd<T: Float>(m: &Tensor<T>, jitter: T) -> Result<SpdInverse<T>> {
    let (d, _) = as_matrix(m, "inverse_spd")?;
    if !m.all_finite() {
        return Err(Error::NonFinite("inverse_spd input".into()));
    }
    if jitter < T::zero() {
        return Err(Error::Contract("jitter must be non-negative".into()));
    }
    let trace: T = (0..d).map(|i| m.data()[i * d + i]).sum();
    let scale = trace / T::of(d as f64);
    let scale = if scale > T::zero() { scale } else { T::one() };

    let mut tried = jitter;
    let candidates = std::iter::once(jitter).chain(
        JITTER_ESCALATION
            .iter()
            .map(|&f| T::of(f) * scale)
            .filter(|&j| j > jitter),
    );
    for j in candidates {
        tried = j;
        if let Some(l) = cholesky(m, j)? {
            return Ok(SpdInverse {
                inverse: inverse_from_cholesky(&l)?,
                jitter: j,
            });
        }
    }
    Err(Error::Singular {
        jitter: tried.as_f64(),
    })
}
