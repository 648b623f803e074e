//! Affine stereo-microscope calibration and reconstruction.
//!
//! Modules, in pipeline order:
//!
//! - [`keypoints`]: sub-pixel landmark extraction from heatmaps.
//! - [`calibration`]: robust affine DLT, resection and joint bundle adjustment.
//! - [`stereo`]: affine epipolar geometry, match filtering and triangulation.
//! - [`surface`]: robust bicubic B-spline surface fitting.
//! - [`registration`]: rigid alignment of reconstructed landmarks to the robot.
//! - [`sim`]: synthetic robot/microscope scenes with known ground truth.
//! - [`io`]: the CSV, PLY, JSON and heatmap file formats.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the `*F64` /
//! `*F32` aliases below name the concrete instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod geometry;
pub mod io;
pub mod keypoints;
pub mod linalg;
pub mod registration;
pub mod scalar;
pub mod sim;
pub mod stereo;
pub mod surface;

pub use geometry::{Point2, Point3, RngSeed};
pub use linalg::{solve_linear_least_squares, LinalgError, NumericConfig};
pub use scalar::Real;
pub use stereo::PixelMatch;

pub type Point2F64 = Point2<f64>;
pub type Point3F64 = Point3<f64>;
pub type Point2F32 = Point2<f32>;
pub type Point3F32 = Point3<f32>;

pub type AffineProjectionF64 = calibration::AffineProjection<f64>;
pub type AffineProjectionF32 = calibration::AffineProjection<f32>;
pub type CorrespondenceSetF64 = calibration::CorrespondenceSet<f64>;
pub type StereoCalibrationF64 = calibration::StereoCalibration<f64>;

pub type StereoRigF64 = stereo::StereoRig<f64>;
pub type StereoRigF32 = stereo::StereoRig<f32>;

pub type BBSurfaceF64 = surface::BBSurface<f64>;
pub type BBSurfaceF32 = surface::BBSurface<f32>;

pub type RigidTransformF64 = registration::RigidTransform<f64>;
pub type RigidTransformF32 = registration::RigidTransform<f32>;

pub type HeatmapF32 = keypoints::Heatmap<f32>;
pub type HeatmapF64 = keypoints::Heatmap<f64>;
