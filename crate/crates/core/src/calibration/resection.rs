use nalgebra::{Matrix2, Matrix2x4, Matrix3, Vector2, Vector3};

use super::{AffineProjection, CalibrationError};
use crate::scalar::Real;

/// Upper-triangular affine calibration `K = [[αx, s], [0, αy]]`, in pixels per µm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineIntrinsics<T> {
    pub alpha_x: T,
    pub alpha_y: T,
    pub skew: T,
}

impl<T: Real> AffineIntrinsics<T> {
    pub fn matrix(&self) -> Matrix2<T> {
        Matrix2::new(self.alpha_x, self.skew, T::zero(), self.alpha_y)
    }
}

/// Camera orientation and the two observable translation components (µm).
///
/// Only the first two rotation rows enter the projection; the third is
/// `r1 × r2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinePose<T: Real> {
    pub rotation: Matrix3<T>,
    pub t1: T,
    pub t2: T,
}

impl<T: Real> AffinePose<T> {
    /// The 2×4 block `[r1ᵀ t1; r2ᵀ t2]`.
    pub fn reduced(&self) -> Matrix2x4<T> {
        let r = &self.rotation;
        Matrix2x4::new(
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            self.t1, //
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            self.t2,
        )
    }

    /// `‖RᵀR − I‖_F`.
    pub fn orthonormality_error(&self) -> T {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }
}

/// Recomposes `M = K · [r1ᵀ t1; r2ᵀ t2]`.
pub fn compose<T: Real>(
    k: &AffineIntrinsics<T>,
    pose: &AffinePose<T>,
) -> Result<AffineProjection<T>, CalibrationError> {
    AffineProjection::new(k.matrix() * pose.reduced())
}

/// Splits `M` into `K` (upper triangular, positive diagonal) and a pose.
///
/// Writing the linear block as `A = K R₂`, the second row gives
/// `a₂ = αy r₂` and the first `a₁ = αx r₁ + s r₂`; a bottom-up Gram–Schmidt
/// pass therefore yields the factors directly, with positive diagonal.
pub fn resect<T: Real>(m: &AffineProjection<T>) -> Result<(AffineIntrinsics<T>, AffinePose<T>), CalibrationError> {
    let a = m.linear();
    let b = m.offset();
    let a1 = Vector3::new(a[(0, 0)], a[(0, 1)], a[(0, 2)]);
    let a2 = Vector3::new(a[(1, 0)], a[(1, 1)], a[(1, 2)]);
    let tol = T::lit(1e-10) * a.norm();

    let alpha_y = a2.norm();
    if !(alpha_y > tol) {
        return Err(CalibrationError::RankDeficient {
            rank: if a1.norm() > tol { 1 } else { 0 },
        });
    }
    let r2 = a2 / alpha_y;
    let skew = a1.dot(&r2);
    let rem = a1 - r2 * skew;
    let alpha_x = rem.norm();
    if !(alpha_x > tol) {
        return Err(CalibrationError::RankDeficient { rank: 1 });
    }
    let r1 = rem / alpha_x;
    // Re-orthogonalise once; a single pass leaves O(ε·κ) drift.
    let r1 = (r1 - r2 * r1.dot(&r2)).normalize();
    let r3 = r1.cross(&r2);
    let rotation = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);

    let k = AffineIntrinsics { alpha_x, alpha_y, skew };
    let t = k
        .matrix()
        .try_inverse()
        .map(|inv| inv * b)
        .unwrap_or_else(Vector2::zeros);
    Ok((
        k,
        AffinePose {
            rotation,
            t1: t[0],
            t2: t[1],
        },
    ))
}
