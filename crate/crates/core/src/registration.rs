//! Rigid registration of reconstructed landmarks to robot kinematics.
//!
//! Transforms map camera-frame points to the robot frame:
//! `x_robot = R · x_camera + t`.

use nalgebra::{DMatrix, Matrix3, Rotation3, Unit, Vector3};
use thiserror::Error;

use crate::geometry::Point3;
use crate::linalg::{effective_rank, svd};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistrationError {
    #[error("need at least 3 point pairs, got {got}")]
    TooFewPoints { got: usize },
    #[error("point counts differ: {reconstructed} reconstructed vs {measured} measured")]
    CountMismatch { reconstructed: usize, measured: usize },
    #[error("points are collinear; rotation about their line is unobservable")]
    CollinearPoints,
    #[error("no frames to register")]
    NoFrames,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Rotation in SO(3) plus translation, in micrometres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T: Real> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self, RegistrationError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(RegistrationError::InvalidInput("non-finite transform".into()));
        }
        let tol = T::lit(1e-9).max(T::default_epsilon() * T::lit(100.0));
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if ortho > tol || (rotation.determinant() - T::one()).abs() > tol {
            return Err(RegistrationError::InvalidInput("rotation is not in SO(3)".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_axis_angle(axis: Vector3<T>, angle: T, translation: Vector3<T>) -> Self {
        let rotation = if axis.norm() > T::zero() {
            Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
        } else {
            Matrix3::identity()
        };
        Self { rotation, translation }
    }

    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    pub fn apply(&self, p: &Point3<T>) -> Point3<T> {
        Point3::from_vector(&(self.rotation * p.to_vector() + self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Angle of the relative rotation `selfᵀ · other`, radians.
    pub fn rotation_angle_to(&self, other: &Self) -> T {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - T::one()) * T::lit(0.5)).clamp(-T::one(), T::one());
        // acos loses precision near zero; use the antisymmetric part there
        let skew = Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        );
        (skew.norm() * T::lit(0.5)).atan2(c)
    }

    /// Row-major rotation entries.
    pub fn rotation_row_major(&self) -> [T; 9] {
        std::array::from_fn(|k| self.rotation[(k / 3, k % 3)])
    }
}

/// Per-pair residual norms `‖R x̂ᵢ + t − xᵢ‖` and their summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStats<T> {
    pub norms: Vec<T>,
    pub rmse: T,
    pub mean: T,
    pub max: T,
}

impl<T: Real> ResidualStats<T> {
    pub fn compute(transform: &RigidTransform<T>, reconstructed: &[Point3<T>], measured: &[Point3<T>]) -> Self {
        let norms: Vec<T> = reconstructed
            .iter()
            .zip(measured)
            .map(|(a, b)| transform.apply(a).distance(b))
            .collect();
        let n = T::from_count(norms.len().max(1));
        let sum = norms.iter().fold(T::zero(), |s, &r| s + r);
        let sq = norms.iter().fold(T::zero(), |s, &r| s + r * r);
        let max = norms.iter().fold(T::zero(), |m, &r| m.max(r));
        Self {
            rmse: (sq / n).sqrt(),
            mean: sum / n,
            max,
            norms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration<T: Real> {
    pub transform: RigidTransform<T>,
    pub stats: ResidualStats<T>,
}

/// Settings of the sum-of-norms refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustConfig {
    pub max_iterations: usize,
    /// Residual norms are floored at this value when forming weights, µm.
    pub delta: f64,
    /// Stop once the update moves every input point by less than this, µm.
    pub tolerance: f64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            delta: 1e-3,
            tolerance: 1e-9,
        }
    }
}

fn validate<T: Real>(reconstructed: &[Point3<T>], measured: &[Point3<T>]) -> Result<(), RegistrationError> {
    if reconstructed.len() != measured.len() {
        return Err(RegistrationError::CountMismatch {
            reconstructed: reconstructed.len(),
            measured: measured.len(),
        });
    }
    if reconstructed.len() < 3 {
        return Err(RegistrationError::TooFewPoints {
            got: reconstructed.len(),
        });
    }
    if reconstructed.iter().chain(measured).any(|p| !p.is_finite()) {
        return Err(RegistrationError::InvalidInput("non-finite point".into()));
    }
    for set in [reconstructed, measured] {
        let n = T::from_count(set.len());
        let c = set.iter().fold(Vector3::zeros(), |a, p| a + p.to_vector()) / n;
        let centered = DMatrix::from_fn(set.len(), 3, |i, j| set[i].to_vector()[j] - c[j]);
        if effective_rank(&centered, 1e-10) < 2 {
            return Err(RegistrationError::CollinearPoints);
        }
    }
    Ok(())
}

/// Weighted closed-form Procrustes fit with determinant correction.
fn weighted_procrustes<T: Real>(a: &[Point3<T>], b: &[Point3<T>], w: &[T]) -> RigidTransform<T> {
    let total = w.iter().fold(T::zero(), |s, &x| s + x);
    let ca = a
        .iter()
        .zip(w)
        .fold(Vector3::zeros(), |s, (p, &wi)| s + p.to_vector() * wi)
        / total;
    let cb = b
        .iter()
        .zip(w)
        .fold(Vector3::zeros(), |s, (p, &wi)| s + p.to_vector() * wi)
        / total;
    let mut h = Matrix3::zeros();
    for ((pa, pb), &wi) in a.iter().zip(b).zip(w) {
        h += (pa.to_vector() - ca) * (pb.to_vector() - cb).transpose() * wi;
    }
    let d = svd(&DMatrix::from_fn(3, 3, |i, j| h[(i, j)]));
    let u = Matrix3::from_fn(|i, j| d.u[(i, j)]);
    let v = Matrix3::from_fn(|i, j| d.v[(i, j)]);
    let mut correction = Matrix3::identity();
    if (v * u.transpose()).determinant() < T::zero() {
        correction[(2, 2)] = -T::one();
    }
    let rotation = v * correction * u.transpose();
    RigidTransform {
        rotation,
        translation: cb - rotation * ca,
    }
}

/// Least-squares rigid transform taking `reconstructed` onto `measured`.
pub fn register<T: Real>(
    reconstructed: &[Point3<T>],
    measured: &[Point3<T>],
) -> Result<Registration<T>, RegistrationError> {
    validate(reconstructed, measured)?;
    let transform = weighted_procrustes(reconstructed, measured, &vec![T::one(); reconstructed.len()]);
    Ok(Registration {
        stats: ResidualStats::compute(&transform, reconstructed, measured),
        transform,
    })
}

/// Minimises the sum of unsquared residual norms by iteratively reweighted
/// Procrustes, starting from the least-squares solution.
pub fn register_robust<T: Real>(
    reconstructed: &[Point3<T>],
    measured: &[Point3<T>],
    cfg: &RobustConfig,
) -> Result<Registration<T>, RegistrationError> {
    let mut current = register(reconstructed, measured)?.transform;
    let delta = T::lit(cfg.delta);
    for _ in 0..cfg.max_iterations {
        let weights: Vec<T> = reconstructed
            .iter()
            .zip(measured)
            .map(|(a, b)| T::one() / current.apply(a).distance(b).max(delta))
            .collect();
        let next = weighted_procrustes(reconstructed, measured, &weights);
        let shift = reconstructed
            .iter()
            .map(|p| next.apply(p).distance(&current.apply(p)))
            .fold(T::zero(), |m, s| m.max(s));
        current = next;
        if shift < T::lit(cfg.tolerance) {
            break;
        }
    }
    Ok(Registration {
        stats: ResidualStats::compute(&current, reconstructed, measured),
        transform: current,
    })
}

/// One frame's worth of paired landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    pub reconstructed: Vec<Point3<T>>,
    pub measured: Vec<Point3<T>>,
}

/// Registration using the most recent `frames_used` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint<T: Real> {
    pub frames_used: usize,
    pub transform: RigidTransform<T>,
    pub residual_rmse: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatedRegistration<T: Real> {
    /// Result for the full (clamped) window.
    pub registration: Registration<T>,
    pub frames_used: usize,
    /// One entry per window size `1..=frames_used`.
    pub curve: Vec<CurvePoint<T>>,
}

/// Registers the pairs of the last `window` frames, assuming a static
/// camera over the window. A window larger than the number of frames uses
/// every frame. Windows too small to register (fewer than three pairs, or
/// collinear) are omitted from the curve.
pub fn register_accumulated<T: Real>(
    frames: &[Frame<T>],
    window: usize,
    robust: Option<&RobustConfig>,
) -> Result<AccumulatedRegistration<T>, RegistrationError> {
    if frames.is_empty() {
        return Err(RegistrationError::NoFrames);
    }
    if window == 0 {
        return Err(RegistrationError::InvalidInput("window must be at least 1".into()));
    }
    let used = window.min(frames.len());
    let solve = |w: usize| {
        let tail = &frames[frames.len() - w..];
        let a: Vec<Point3<T>> = tail.iter().flat_map(|f| f.reconstructed.iter().copied()).collect();
        let b: Vec<Point3<T>> = tail.iter().flat_map(|f| f.measured.iter().copied()).collect();
        match robust {
            Some(cfg) => register_robust(&a, &b, cfg),
            None => register(&a, &b),
        }
    };
    let mut curve = Vec::with_capacity(used);
    for w in 1..used {
        match solve(w) {
            Ok(r) => curve.push(CurvePoint {
                frames_used: w,
                transform: r.transform,
                residual_rmse: r.stats.rmse,
            }),
            Err(RegistrationError::TooFewPoints { .. }) | Err(RegistrationError::CollinearPoints) => {}
            Err(e) => return Err(e),
        }
    }
    let registration = solve(used)?;
    curve.push(CurvePoint {
        frames_used: used,
        transform: registration.transform,
        residual_rmse: registration.stats.rmse,
    });
    Ok(AccumulatedRegistration {
        registration,
        frames_used: used,
        curve,
    })
}

/// Discrepancy between an estimated and a true transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentError<T> {
    pub rotation_rad: T,
    pub translation: T,
    /// Mean of `‖T_est(p) − T_true(p)‖` over the probe points.
    pub mean_displacement: T,
}

pub fn alignment_error<T: Real>(
    estimate: &RigidTransform<T>,
    truth: &RigidTransform<T>,
    probes: &[Point3<T>],
) -> AlignmentError<T> {
    let n = T::from_count(probes.len().max(1));
    let mean_displacement = probes
        .iter()
        .fold(T::zero(), |s, p| s + estimate.apply(p).distance(&truth.apply(p)))
        / n;
    AlignmentError {
        rotation_rad: estimate.rotation_angle_to(truth),
        translation: (estimate.translation - truth.translation).norm(),
        mean_displacement,
    }
}
