//! Affine stereo calibration from 3D–2D tool-landmark correspondences.
//!
//! The pipeline is: per-camera [`dlt_affine_ransac`] for a robust linear
//! estimate, [`resect`] to split each matrix into intrinsics and pose, then
//! [`bundle_adjust`] to refine both cameras jointly with the measured 3D
//! points and pixels treated as noisy observations.

mod bundle;
mod dlt;
mod ransac;
pub(crate) mod resection;

pub use bundle::{
    bundle_adjust, bundle_energies, BundleConfig, BundleReport, CameraModel, Energies, StereoCalibration, Termination,
};
pub use dlt::dlt_affine;
pub use ransac::{dlt_affine_ransac, RansacConfig};
pub use resection::{compose, resect, AffineIntrinsics, AffinePose};

use nalgebra::{DMatrix, Matrix2x3, Matrix2x4, Vector2};
use thiserror::Error;

use crate::geometry::{Point2, Point3};
use crate::linalg::rank_from_singular_values;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("need at least {required} correspondences, got {got}")]
    TooFewPoints { required: usize, got: usize },
    #[error("3D points are coplanar or otherwise degenerate")]
    DegenerateConfiguration,
    #[error("RANSAC found no consensus set (best inlier count {best})")]
    NoConsensus { best: usize },
    #[error("projection matrix is rank deficient (rank {rank})")]
    RankDeficient { rank: usize },
    #[error("invalid bundle adjustment initialisation: {0}")]
    InvalidInit(String),
    #[error("bundle adjustment did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    DidNotConverge { iterations: usize, gradient_norm: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// One `(x, u_left, u_right)` observation of keypoint `k` in frame `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence<T> {
    pub x: Point3<T>,
    pub u_left: Point2<T>,
    pub u_right: Point2<T>,
    /// 1-based frame index.
    pub frame: usize,
    /// 1-based keypoint index.
    pub keypoint: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet<T> {
    items: Vec<Correspondence<T>>,
    n_t: usize,
    n_k: usize,
}

impl<T: Real> CorrespondenceSet<T> {
    pub fn new(items: Vec<Correspondence<T>>, n_t: usize, n_k: usize) -> Result<Self, CalibrationError> {
        for c in &items {
            if c.frame == 0 || c.keypoint == 0 {
                return Err(CalibrationError::InvalidInput("indices are 1-based".into()));
            }
            if c.frame > n_t || c.keypoint > n_k {
                return Err(CalibrationError::InvalidInput(format!(
                    "index (t={}, k={}) outside {}x{}",
                    c.frame, c.keypoint, n_t, n_k
                )));
            }
            if !(c.x.is_finite() && c.u_left.is_finite() && c.u_right.is_finite()) {
                return Err(CalibrationError::InvalidInput("non-finite coordinate".into()));
            }
        }
        Ok(Self { items, n_t, n_k })
    }

    /// Infers `n_t` and `n_k` from the largest indices present.
    pub fn from_items(items: Vec<Correspondence<T>>) -> Result<Self, CalibrationError> {
        let n_t = items.iter().map(|c| c.frame).max().unwrap_or(0);
        let n_k = items.iter().map(|c| c.keypoint).max().unwrap_or(0);
        Self::new(items, n_t, n_k)
    }

    pub fn items(&self) -> &[Correspondence<T>] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_k(&self) -> usize {
        self.n_k
    }

    pub fn is_complete(&self) -> bool {
        self.items.len() == self.n_t * self.n_k
    }

    /// Keeps the correspondences whose mask entry is `true`.
    pub fn filtered(&self, mask: &[bool]) -> Self {
        let items = self
            .items
            .iter()
            .zip(mask)
            .filter(|(_, &keep)| keep)
            .map(|(c, _)| *c)
            .collect();
        Self {
            items,
            n_t: self.n_t,
            n_k: self.n_k,
        }
    }

    pub fn left_pairs(&self) -> Vec<(Point3<T>, Point2<T>)> {
        self.items.iter().map(|c| (c.x, c.u_left)).collect()
    }

    pub fn right_pairs(&self) -> Vec<(Point3<T>, Point2<T>)> {
        self.items.iter().map(|c| (c.x, c.u_right)).collect()
    }
}

/// A 2×4 affine camera `u = M [xᵀ 1]ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineProjection<T: Real> {
    m: Matrix2x4<T>,
}

impl<T: Real> AffineProjection<T> {
    /// Wraps `m`, rejecting matrices whose left 2×3 block is not rank 2.
    pub fn new(m: Matrix2x4<T>) -> Result<Self, CalibrationError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(CalibrationError::InvalidInput("non-finite projection matrix".into()));
        }
        let block = DMatrix::from_fn(2, 3, |i, j| m[(i, j)]);
        let sv = crate::linalg::svd(&block).singular_values;
        let rank = rank_from_singular_values(sv.as_slice(), 1e-10);
        if rank < 2 {
            return Err(CalibrationError::RankDeficient { rank });
        }
        Ok(Self { m })
    }

    pub fn from_row_slice(values: &[T]) -> Result<Self, CalibrationError> {
        if values.len() != 8 {
            return Err(CalibrationError::InvalidInput("expected 8 matrix entries".into()));
        }
        Self::new(Matrix2x4::from_row_slice(values))
    }

    pub fn matrix(&self) -> &Matrix2x4<T> {
        &self.m
    }

    /// The linear part `A` of `u = A x + b`.
    pub fn linear(&self) -> Matrix2x3<T> {
        self.m.fixed_view::<2, 3>(0, 0).into_owned()
    }

    /// The offset `b` of `u = A x + b`.
    pub fn offset(&self) -> Vector2<T> {
        self.m.column(3).into_owned()
    }

    pub fn project(&self, x: &Point3<T>) -> Point2<T> {
        Point2::from_vector(&(self.linear() * x.to_vector() + self.offset()))
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [T; 8] {
        let mut out = [T::zero(); 8];
        for r in 0..2 {
            for c in 0..4 {
                out[r * 4 + c] = self.m[(r, c)];
            }
        }
        out
    }

    /// `‖M − other‖_F / ‖other‖_F`.
    pub fn relative_error(&self, reference: &Self) -> T {
        (self.m - reference.m).norm() / reference.m.norm()
    }
}

/// Projects `x` through `m`.
pub fn reproject<T: Real>(m: &AffineProjection<T>, x: &Point3<T>) -> Point2<T> {
    m.project(x)
}
