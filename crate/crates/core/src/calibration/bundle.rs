//! Joint affine bundle adjustment.
//!
//! Minimises
//!
//! ```text
//! E = E_Π + E_Θ / σ_u + E_Φ / σ_x
//! E_Π = ½ Σ_c Σ_i ‖ũᶜᵢ − Mᶜ [x̃ᵢᵀ 1]ᵀ‖²
//! E_Θ = ½ Σ_c Σ_i ‖ũᶜᵢ − uᶜᵢ‖²
//! E_Φ = ½ Σ_i ‖x̃ᵢ − xᵢ‖²
//! ```
//!
//! over both cameras, the refined 3D points `x̃` and the refined pixels `ũ`.
//! Each camera is `K [r1ᵀ t1; r2ᵀ t2]` with `K = diag(αx, αy)` (zero skew),
//! seven parameters in total; rotations are updated multiplicatively with
//! axis-angle increments. The solver is Levenberg–Marquardt on the normal
//! equations, with the per-point 7×7 blocks eliminated by a Schur complement
//! so that only a 14×14 camera system is factored per iteration.

use nalgebra::{Matrix2x3, Matrix2x4, Matrix3, SMatrix, SVector, UnitQuaternion, Vector2, Vector3};

use super::resection::{compose, resect, AffineIntrinsics, AffinePose};
use super::{AffineProjection, CalibrationError, CorrespondenceSet};
use crate::geometry::{Point2, Point3};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

const CAM: usize = 7;
const CAMS: usize = 2 * CAM;
const PT: usize = 7;
const RES: usize = 11;

type PointJac<T> = SMatrix<T, RES, PT>;
type CamJac<T> = SMatrix<T, RES, CAMS>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BundleConfig {
    /// Pixel-noise standard deviation (pixels).
    pub sigma_u: f64,
    /// Kinematics-noise standard deviation (µm).
    pub sigma_x: f64,
    pub max_iterations: usize,
    /// Absolute bound on the largest gradient component.
    pub gradient_tolerance: f64,
    /// Relative objective decrease below which an accepted step ends the run.
    pub objective_tolerance: f64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self {
            sigma_u: 1.0,
            sigma_x: 10.0,
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            objective_tolerance: 1e-12,
        }
    }
}

impl BundleConfig {
    fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.sigma_u > 0.0 && self.sigma_x > 0.0) {
            return Err(CalibrationError::InvalidInput(
                "sigma_u and sigma_x must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    ObjectiveTolerance,
    /// Damping grew until no step could lower the objective further.
    StepTolerance,
    /// Iteration budget exhausted.
    MaxIterations,
}

/// The three energy terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energies<T> {
    pub reprojection: T,
    pub pixel_prior: T,
    pub point_prior: T,
    pub total: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleReport<T> {
    pub iterations: usize,
    pub termination: Termination,
    pub initial: Energies<T>,
    pub last: Energies<T>,
    pub gradient_norm: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel<T: Real> {
    pub projection: AffineProjection<T>,
    pub intrinsics: AffineIntrinsics<T>,
    pub pose: AffinePose<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StereoCalibration<T: Real> {
    pub left: CameraModel<T>,
    pub right: CameraModel<T>,
    pub refined_points: Vec<Point3<T>>,
    pub refined_left: Vec<Point2<T>>,
    pub refined_right: Vec<Point2<T>>,
    pub final_objective: T,
    pub report: BundleReport<T>,
}

impl<T: Real> StereoCalibration<T> {
    pub fn converged(&self) -> bool {
        self.report.termination != Termination::MaxIterations
    }

    /// `Err(DidNotConverge)` when the iteration budget ran out.
    pub fn check_converged(&self) -> Result<(), CalibrationError> {
        if self.converged() {
            Ok(())
        } else {
            Err(CalibrationError::DidNotConverge {
                iterations: self.report.iterations,
                gradient_norm: self.report.gradient_norm.as_f64(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Camera<T: Real> {
    k: [T; 2],
    q: UnitQuaternion<T>,
    t: [T; 2],
}

impl<T: Real> Camera<T> {
    fn from_pose(k: &AffineIntrinsics<T>, pose: &AffinePose<T>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(pose.rotation);
        Self {
            k: [k.alpha_x, k.alpha_y],
            q: UnitQuaternion::from_rotation_matrix(&rot),
            t: [pose.t1, pose.t2],
        }
    }

    fn rotation(&self) -> Matrix3<T> {
        *self.q.to_rotation_matrix().matrix()
    }

    fn intrinsics(&self) -> AffineIntrinsics<T> {
        AffineIntrinsics {
            alpha_x: self.k[0],
            alpha_y: self.k[1],
            skew: T::zero(),
        }
    }

    fn pose(&self) -> AffinePose<T> {
        AffinePose {
            rotation: self.rotation(),
            t1: self.t[0],
            t2: self.t[1],
        }
    }

    fn matrix(&self) -> Matrix2x4<T> {
        let r = self.rotation();
        let mut m = Matrix2x4::zeros();
        for row in 0..2 {
            for c in 0..3 {
                m[(row, c)] = self.k[row] * r[(row, c)];
            }
            m[(row, 3)] = self.k[row] * self.t[row];
        }
        m
    }

    /// Projection plus its Jacobians with respect to the seven camera
    /// parameters `(αx, αy, δ₁, δ₂, δ₃, t1, t2)` and to the point.
    fn project_with_jacobians(&self, r: &Matrix3<T>, x: &Vector3<T>) -> (Vector2<T>, SMatrix<T, 2, CAM>, Matrix2x3<T>) {
        let y = r * x;
        let (k1, k2) = (self.k[0], self.k[1]);
        let u = Vector2::new(k1 * (y[0] + self.t[0]), k2 * (y[1] + self.t[1]));
        let z = T::zero();
        #[rustfmt::skip]
        let d_cam = SMatrix::<T, 2, CAM>::from_row_slice(&[
            y[0] + self.t[0], z, z, k1 * y[2], -k1 * y[1], k1, z,
            z, y[1] + self.t[1], -k2 * y[2], z, k2 * y[0], z, k2,
        ]);
        let mut d_x = Matrix2x3::zeros();
        for c in 0..3 {
            d_x[(0, c)] = k1 * r[(0, c)];
            d_x[(1, c)] = k2 * r[(1, c)];
        }
        (u, d_cam, d_x)
    }

    fn updated(&self, delta: &[T]) -> Option<Self> {
        let k = [self.k[0] + delta[0], self.k[1] + delta[1]];
        if !(k[0] > T::zero() && k[1] > T::zero()) {
            return None;
        }
        let dq = UnitQuaternion::from_scaled_axis(Vector3::new(delta[2], delta[3], delta[4]));
        Some(Self {
            k,
            q: dq * self.q,
            t: [self.t[0] + delta[5], self.t[1] + delta[6]],
        })
    }
}

#[derive(Debug, Clone)]
struct State<T: Real> {
    cams: [Camera<T>; 2],
    points: Vec<Vector3<T>>,
    pix: [Vec<Vector2<T>>; 2],
}

struct Observations<T: Real> {
    x: Vec<Vector3<T>>,
    u: [Vec<Vector2<T>>; 2],
    w_u: T,
    w_x: T,
}

fn energies<T: Real>(
    mats: [&Matrix2x4<T>; 2],
    points: &[Vector3<T>],
    pix: [&[Vector2<T>]; 2],
    obs: &Observations<T>,
    cfg: &BundleConfig,
) -> Energies<T> {
    let half = T::lit(0.5);
    let (mut e_pi, mut e_theta, mut e_phi) = (T::zero(), T::zero(), T::zero());
    for (i, x) in points.iter().enumerate() {
        for c in 0..2 {
            let m = mats[c];
            let proj = m.fixed_view::<2, 3>(0, 0) * x + m.column(3);
            e_pi += (pix[c][i] - proj).norm_squared();
            e_theta += (pix[c][i] - obs.u[c][i]).norm_squared();
        }
        e_phi += (x - obs.x[i]).norm_squared();
    }
    let (e_pi, e_theta, e_phi) = (e_pi * half, e_theta * half, e_phi * half);
    Energies {
        reprojection: e_pi,
        pixel_prior: e_theta,
        point_prior: e_phi,
        total: e_pi + e_theta / T::lit(cfg.sigma_u) + e_phi / T::lit(cfg.sigma_x),
    }
}

/// Evaluates the bundle-adjustment energies for explicit cameras and refined
/// variables. Useful for comparing a linear initialisation with the result.
pub fn bundle_energies<T: Real>(
    set: &CorrespondenceSet<T>,
    left: &AffineProjection<T>,
    right: &AffineProjection<T>,
    refined_points: &[Point3<T>],
    refined_left: &[Point2<T>],
    refined_right: &[Point2<T>],
    cfg: &BundleConfig,
) -> Energies<T> {
    let obs = observations(set, cfg);
    let points: Vec<_> = refined_points.iter().map(|p| p.to_vector()).collect();
    let pl: Vec<_> = refined_left.iter().map(|p| p.to_vector()).collect();
    let pr: Vec<_> = refined_right.iter().map(|p| p.to_vector()).collect();
    energies([left.matrix(), right.matrix()], &points, [&pl, &pr], &obs, cfg)
}

fn observations<T: Real>(set: &CorrespondenceSet<T>, cfg: &BundleConfig) -> Observations<T> {
    let items = set.items();
    Observations {
        x: items.iter().map(|c| c.x.to_vector()).collect(),
        u: [
            items.iter().map(|c| c.u_left.to_vector()).collect(),
            items.iter().map(|c| c.u_right.to_vector()).collect(),
        ],
        w_u: T::lit(1.0 / cfg.sigma_u).sqrt(),
        w_x: T::lit(1.0 / cfg.sigma_x).sqrt(),
    }
}

impl<T: Real> State<T> {
    fn energies(&self, obs: &Observations<T>, cfg: &BundleConfig) -> Energies<T> {
        let m = [self.cams[0].matrix(), self.cams[1].matrix()];
        energies([&m[0], &m[1]], &self.points, [&self.pix[0], &self.pix[1]], obs, cfg)
    }

    /// Residual block and Jacobians of one point (rows: reprojection left,
    /// reprojection right, pixel prior left, pixel prior right, point prior).
    fn linearize_point(
        &self,
        rots: &[Matrix3<T>; 2],
        i: usize,
        obs: &Observations<T>,
    ) -> (SVector<T, RES>, PointJac<T>, CamJac<T>) {
        let mut r = SVector::<T, RES>::zeros();
        let mut jp = PointJac::zeros();
        let mut jc = CamJac::zeros();
        let x = &self.points[i];
        for c in 0..2 {
            let (proj, d_cam, d_x) = self.cams[c].project_with_jacobians(&rots[c], x);
            let row = 2 * c;
            let res = self.pix[c][i] - proj;
            r[row] = res[0];
            r[row + 1] = res[1];
            jp.fixed_view_mut::<2, 3>(row, 0).copy_from(&(-d_x));
            jp[(row, 3 + 2 * c)] = T::one();
            jp[(row + 1, 4 + 2 * c)] = T::one();
            jc.fixed_view_mut::<2, CAM>(row, c * CAM).copy_from(&(-d_cam));

            let prior_row = 4 + 2 * c;
            let dp = (self.pix[c][i] - obs.u[c][i]) * obs.w_u;
            r[prior_row] = dp[0];
            r[prior_row + 1] = dp[1];
            jp[(prior_row, 3 + 2 * c)] = obs.w_u;
            jp[(prior_row + 1, 4 + 2 * c)] = obs.w_u;
        }
        let dx = (x - obs.x[i]) * obs.w_x;
        for j in 0..3 {
            r[8 + j] = dx[j];
            jp[(8 + j, j)] = obs.w_x;
        }
        (r, jp, jc)
    }

    fn updated(&self, d_cam: &SVector<T, CAMS>, d_pts: &[SVector<T, PT>]) -> Option<Self> {
        let left = self.cams[0].updated(&d_cam.as_slice()[0..CAM])?;
        let right = self.cams[1].updated(&d_cam.as_slice()[CAM..CAMS])?;
        let mut next = self.clone();
        next.cams = [left, right];
        for (i, d) in d_pts.iter().enumerate() {
            next.points[i] += Vector3::new(d[0], d[1], d[2]);
            next.pix[0][i] += Vector2::new(d[3], d[4]);
            next.pix[1][i] += Vector2::new(d[5], d[6]);
        }
        Some(next)
    }
}

struct NormalEquations<T: Real> {
    h_cc: SMatrix<T, CAMS, CAMS>,
    g_c: SVector<T, CAMS>,
    h_pp: Vec<SMatrix<T, PT, PT>>,
    h_cp: Vec<SMatrix<T, CAMS, PT>>,
    g_p: Vec<SVector<T, PT>>,
}

impl<T: Real> NormalEquations<T> {
    fn build(state: &State<T>, obs: &Observations<T>) -> Self {
        let rots = [state.cams[0].rotation(), state.cams[1].rotation()];
        let n = state.points.len();
        let mut ne = Self {
            h_cc: SMatrix::zeros(),
            g_c: SVector::zeros(),
            h_pp: Vec::with_capacity(n),
            h_cp: Vec::with_capacity(n),
            g_p: Vec::with_capacity(n),
        };
        for i in 0..n {
            let (r, jp, jc) = state.linearize_point(&rots, i, obs);
            ne.h_cc += jc.tr_mul(&jc);
            ne.g_c += jc.tr_mul(&r);
            ne.h_pp.push(jp.tr_mul(&jp));
            ne.h_cp.push(jc.tr_mul(&jp));
            ne.g_p.push(jp.tr_mul(&r));
        }
        ne
    }

    fn gradient_norm(&self) -> T {
        let mut g = self.g_c.amax();
        for gp in &self.g_p {
            g = g.max(gp.amax());
        }
        g
    }

    /// Solves `(H + λ·diag(H)) δ = −g` by eliminating the point blocks.
    fn solve(&self, lambda: T) -> Option<(SVector<T, CAMS>, Vec<SVector<T, PT>>)> {
        let damp = T::one() + lambda;
        let floor = T::lit(1e-12);
        let mut s = self.h_cc;
        for d in 0..CAMS {
            s[(d, d)] = s[(d, d)] * damp + floor * lambda;
        }
        let mut rhs = -self.g_c;
        let mut inv_pp = Vec::with_capacity(self.h_pp.len());
        for i in 0..self.h_pp.len() {
            let mut hpp = self.h_pp[i];
            for d in 0..PT {
                hpp[(d, d)] = hpp[(d, d)] * damp + floor * lambda;
            }
            let chol = hpp.cholesky()?;
            let w = self.h_cp[i] * chol.inverse();
            s -= w * self.h_cp[i].transpose();
            rhs += w * self.g_p[i];
            inv_pp.push(chol);
        }
        let d_cam = match s.cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => s.lu().solve(&rhs)?,
        };
        let d_pts = inv_pp
            .iter()
            .enumerate()
            .map(|(i, chol)| chol.solve(&(-self.g_p[i] - self.h_cp[i].transpose() * d_cam)))
            .collect();
        Some((d_cam, d_pts))
    }
}

fn camera_model<T: Real>(cam: &Camera<T>) -> Result<CameraModel<T>, CalibrationError> {
    let intrinsics = cam.intrinsics();
    let pose = cam.pose();
    Ok(CameraModel {
        projection: compose(&intrinsics, &pose)?,
        intrinsics,
        pose,
    })
}

/// Refines both cameras jointly with the 3D points and pixels.
///
/// `init_left`/`init_right` are usually [`dlt_affine_ransac`](super::dlt_affine_ransac)
/// results; their skew is discarded. With `max_iterations == 0` the initial
/// matrices are returned unchanged and the result is flagged as not converged.
pub fn bundle_adjust<T: Real>(
    set: &CorrespondenceSet<T>,
    init_left: &AffineProjection<T>,
    init_right: &AffineProjection<T>,
    cfg: &BundleConfig,
) -> Result<StereoCalibration<T>, CalibrationError> {
    cfg.validate()?;
    if set.len() < 4 {
        return Err(CalibrationError::TooFewPoints {
            required: 4,
            got: set.len(),
        });
    }
    let (kl, pl) = resect(init_left).map_err(|e| CalibrationError::InvalidInit(format!("left camera: {e}")))?;
    let (kr, pr) = resect(init_right).map_err(|e| CalibrationError::InvalidInit(format!("right camera: {e}")))?;
    let obs = observations(set, cfg);

    if cfg.max_iterations == 0 {
        let initial = energies(
            [init_left.matrix(), init_right.matrix()],
            &obs.x,
            [&obs.u[0], &obs.u[1]],
            &obs,
            cfg,
        );
        let gradient_norm = {
            let state = State {
                cams: [Camera::from_pose(&kl, &pl), Camera::from_pose(&kr, &pr)],
                points: obs.x.clone(),
                pix: obs.u.clone(),
            };
            NormalEquations::build(&state, &obs).gradient_norm()
        };
        return Ok(StereoCalibration {
            left: CameraModel {
                projection: *init_left,
                intrinsics: kl,
                pose: pl,
            },
            right: CameraModel {
                projection: *init_right,
                intrinsics: kr,
                pose: pr,
            },
            refined_points: set.items().iter().map(|c| c.x).collect(),
            refined_left: set.items().iter().map(|c| c.u_left).collect(),
            refined_right: set.items().iter().map(|c| c.u_right).collect(),
            final_objective: initial.total,
            report: BundleReport {
                iterations: 0,
                termination: Termination::MaxIterations,
                initial,
                last: initial,
                gradient_norm,
            },
        });
    }

    let mut state = State {
        cams: [Camera::from_pose(&kl, &pl), Camera::from_pose(&kr, &pr)],
        points: obs.x.clone(),
        pix: obs.u.clone(),
    };
    let initial = state.energies(&obs, cfg);
    let mut current = initial;
    let mut lambda = T::lit(1e-4);
    let lambda_max = T::lit(1e14);
    let gtol = T::lit(cfg.gradient_tolerance);
    let otol = T::lit(cfg.objective_tolerance);
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut ne = NormalEquations::build(&state, &obs);
    let mut gradient_norm = ne.gradient_norm();

    while iterations < cfg.max_iterations {
        if gradient_norm <= gtol || current.total == T::zero() {
            termination = Termination::GradientTolerance;
            break;
        }
        iterations += 1;
        let candidate = ne.solve(lambda).and_then(|(dc, dp)| state.updated(&dc, &dp)).map(|s| {
            let e = s.energies(&obs, cfg);
            (s, e)
        });
        match candidate {
            Some((next, e)) if e.total < current.total => {
                let decrease = current.total - e.total;
                state = next;
                let rel = decrease / current.total;
                current = e;
                lambda = (lambda / T::lit(3.0)).max(T::lit(1e-12));
                ne = NormalEquations::build(&state, &obs);
                gradient_norm = ne.gradient_norm();
                if rel <= otol {
                    termination = Termination::ObjectiveTolerance;
                    break;
                }
            }
            _ => {
                lambda *= T::lit(4.0);
                if lambda > lambda_max {
                    termination = Termination::StepTolerance;
                    break;
                }
            }
        }
    }
    if termination == Termination::MaxIterations && gradient_norm <= gtol {
        termination = Termination::GradientTolerance;
    }

    let to_p2 = |v: &Vec<Vector2<T>>| v.iter().map(Point2::from_vector).collect::<Vec<_>>();
    Ok(StereoCalibration {
        left: camera_model(&state.cams[0])?,
        right: camera_model(&state.cams[1])?,
        refined_points: state.points.iter().map(Point3::from_vector).collect(),
        refined_left: to_p2(&state.pix[0]),
        refined_right: to_p2(&state.pix[1]),
        final_objective: current.total,
        report: BundleReport {
            iterations,
            termination,
            initial,
            last: current,
            gradient_norm,
        },
    })
}
