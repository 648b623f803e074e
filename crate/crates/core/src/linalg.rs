//! Dense least-squares backbone used by DLT, triangulation and fitting.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("rank deficient system: effective rank {rank} < {required}")]
    RankDeficient { rank: usize, required: usize },
    #[error("dimension mismatch: matrix has {rows} rows but rhs has {rhs}")]
    DimensionMismatch { rows: usize, rhs: usize },
    #[error("non-finite entry in least-squares input")]
    NonFinite,
}

/// Process-wide numeric thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericConfig {
    /// Singular values below `rank_tolerance * sigma_max` count as zero.
    pub rank_tolerance: f64,
}

impl Default for NumericConfig {
    fn default() -> Self {
        Self { rank_tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct LeastSquares<T: Real> {
    pub solution: DVector<T>,
    pub rank: usize,
    pub residual_norm: T,
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ`, singular values in
/// descending order.
#[derive(Debug, Clone)]
pub struct Svd<T: Real> {
    /// `m × k` with orthonormal columns, `k = min(m, n)`.
    pub u: DMatrix<T>,
    pub singular_values: DVector<T>,
    /// `n × k` with orthonormal columns.
    pub v: DMatrix<T>,
}

/// One-sided Jacobi (Hestenes) SVD.
///
/// Columns of a working copy of `A` are rotated pairwise until mutually
/// orthogonal; their norms are then the singular values. Every rotation is
/// applied to the whole column, which gives high relative accuracy even for
/// sparse or structured inputs.
pub fn svd<T: Real>(a: &DMatrix<T>) -> Svd<T> {
    if a.nrows() < a.ncols() {
        let t = svd(&a.transpose());
        return Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        };
    }
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = DMatrix::<T>::identity(n, n);
    let eps = T::default_epsilon();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                for i in 0..m {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let t = if zeta == T::zero() { T::one() } else { t };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    w[(i, p)] = c * x - s * y;
                    w[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<T> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));
    let mut u = DMatrix::zeros(m, n);
    let mut vs = DMatrix::zeros(n, n);
    let mut s = DVector::zeros(n);
    for (k, &j) in order.iter().enumerate() {
        s[k] = norms[j];
        if norms[j] > T::zero() {
            u.set_column(k, &(w.column(j) / norms[j]));
        }
        vs.set_column(k, &v.column(j));
    }
    Svd {
        u,
        singular_values: s,
        v: vs,
    }
}

/// Effective rank of `a` at the given relative tolerance.
pub fn effective_rank<T: Real>(a: &DMatrix<T>, rank_tolerance: f64) -> usize {
    let d = svd(a);
    rank_from_singular_values(d.singular_values.as_slice(), rank_tolerance)
}

pub(crate) fn rank_from_singular_values<T: Real>(sv: &[T], rank_tolerance: f64) -> usize {
    let smax = sv.iter().copied().fold(T::zero(), |m, s| if s > m { s } else { m });
    if smax <= T::zero() {
        return 0;
    }
    let tol = smax * T::lit(rank_tolerance);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Minimises `‖A x − b‖₂` with the default [`NumericConfig`].
pub fn solve_linear_least_squares<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> Result<LeastSquares<T>, LinalgError> {
    solve_linear_least_squares_with(a, b, &NumericConfig::default())
}

/// Minimises `‖A x − b‖₂` through an SVD of `A`, failing when the effective
/// rank is below the column count.
pub fn solve_linear_least_squares_with<T: Real>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    cfg: &NumericConfig,
) -> Result<LeastSquares<T>, LinalgError> {
    if a.nrows() != b.len() {
        return Err(LinalgError::DimensionMismatch {
            rows: a.nrows(),
            rhs: b.len(),
        });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return Err(LinalgError::RankDeficient { rank: 0, required: n });
    }
    let d = svd(a);
    let rank = rank_from_singular_values(d.singular_values.as_slice(), cfg.rank_tolerance);
    if rank < n {
        return Err(LinalgError::RankDeficient { rank, required: n });
    }
    let utb = d.u.tr_mul(b);
    let scaled = DVector::from_fn(n, |i, _| utb[i] / d.singular_values[i]);
    let solution = &d.v * scaled;
    let residual_norm = (a * &solution - b).norm();
    Ok(LeastSquares {
        solution,
        rank,
        residual_norm,
    })
}

/// Unit vector spanning the (numerical) null space of `a`, i.e. the right
/// singular vector of the smallest singular value, together with all singular
/// values in descending order (zero-padded to the column count).
pub(crate) fn null_vector<T: Real>(a: &DMatrix<T>) -> (DVector<T>, Vec<T>) {
    let n = a.ncols();
    let padded = if a.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let d = svd(&padded);
    (
        d.v.column(n - 1).into_owned(),
        d.singular_values.iter().copied().collect(),
    )
}
