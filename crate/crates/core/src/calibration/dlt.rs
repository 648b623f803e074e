use nalgebra::{DMatrix, DVector, Matrix2x4, Vector3};

use super::{AffineProjection, CalibrationError};
use crate::geometry::{Point2, Point3};
use crate::linalg::{solve_linear_least_squares, LinalgError};
use crate::scalar::Real;

/// Relative singular-value threshold below which the 3D points are treated as
/// coplanar.
pub(crate) const COPLANARITY_TOLERANCE: f64 = 1e-8;

/// Linear affine DLT: the `M` minimising `Σ ‖uᵢ − M [xᵢᵀ 1]ᵀ‖²`.
///
/// The two image rows decouple into two 4-unknown least-squares problems that
/// share one design matrix. Points are centred and isotropically scaled before
/// solving; the result is mapped back to the caller's frame.
pub fn dlt_affine<T: Real>(points: &[(Point3<T>, Point2<T>)]) -> Result<AffineProjection<T>, CalibrationError> {
    let n = points.len();
    if n < 4 {
        return Err(CalibrationError::TooFewPoints { required: 4, got: n });
    }
    let inv_n = T::one() / T::from_count(n);
    let centroid = points.iter().fold(Vector3::zeros(), |acc, (x, _)| acc + x.to_vector()) * inv_n;
    let centered = DMatrix::from_fn(n, 3, |i, j| points[i].0.to_vector()[j] - centroid[j]);
    let rms = (centered.norm_squared() * inv_n).sqrt();
    if !(rms > T::zero()) || !rms.is_finite() {
        return Err(CalibrationError::DegenerateConfiguration);
    }
    let sv = crate::linalg::svd(&centered).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if smin < T::lit(COPLANARITY_TOLERANCE) * smax {
        return Err(CalibrationError::DegenerateConfiguration);
    }

    let scale = T::one() / rms;
    let design = DMatrix::from_fn(n, 4, |i, j| if j < 3 { centered[(i, j)] * scale } else { T::one() });
    let mut m = Matrix2x4::zeros();
    for row in 0..2 {
        let rhs = DVector::from_fn(n, |i, _| if row == 0 { points[i].1.u } else { points[i].1.v });
        let ls = solve_linear_least_squares(&design, &rhs).map_err(|e| match e {
            LinalgError::RankDeficient { .. } => CalibrationError::DegenerateConfiguration,
            other => CalibrationError::InvalidInput(other.to_string()),
        })?;
        // u = a·s(x − c) + b  ⇒  A = s·a,  offset = b − s·a·c
        let a = Vector3::new(ls.solution[0], ls.solution[1], ls.solution[2]) * scale;
        m[(row, 0)] = a[0];
        m[(row, 1)] = a[1];
        m[(row, 2)] = a[2];
        m[(row, 3)] = ls.solution[3] - a.dot(&centroid);
    }
    AffineProjection::new(m)
}
