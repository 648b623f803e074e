//! Robust bicubic B-spline surface reconstruction.
//!
//! A [`BBSurface`] maps a left-image pixel `u ∈ Ω` to a 3D point, one cubic
//! tensor-product spline per coordinate. [`fit_surface`] fits it to a
//! triangulated cloud with an ℓ1 data term and a thin-plate bending penalty,
//! rejects points whose ℓ1 residual exceeds `epsilon`, and refits once.

mod basis;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{Point2, Point3};
use crate::linalg::{effective_rank, solve_linear_least_squares};
use crate::scalar::Real;

use basis::Axis;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurfaceError {
    #[error("need at least {required} points, got {got}")]
    TooFewPoints { required: usize, got: usize },
    #[error("pixel coordinates are collinear; the domain is degenerate")]
    DegenerateDomain,
    #[error("every point was rejected; epsilon is too small")]
    EmptyAfterRejection,
    #[error("parameter ({u}, {v}) lies outside the surface domain")]
    OutOfDomain { u: f64, v: f64 },
    #[error("invalid surface: {0}")]
    InvalidSurface(String),
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("normal equations are not positive definite")]
    Singular,
}

/// Axis-aligned parameter rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain<T> {
    pub u_min: T,
    pub u_max: T,
    pub v_min: T,
    pub v_max: T,
}

impl<T: Real> Domain<T> {
    pub fn contains(&self, p: &Point2<T>) -> bool {
        p.u >= self.u_min && p.u <= self.u_max && p.v >= self.v_min && p.v <= self.v_max
    }

    /// Bounding rectangle of `pixels`, widened by `margin` of its extent on
    /// every side.
    pub fn bounding(pixels: &[Point2<T>], margin: f64) -> Option<Self> {
        let first = pixels.first()?;
        let mut d = Self {
            u_min: first.u,
            u_max: first.u,
            v_min: first.v,
            v_max: first.v,
        };
        for p in pixels {
            d.u_min = d.u_min.min(p.u);
            d.u_max = d.u_max.max(p.u);
            d.v_min = d.v_min.min(p.v);
            d.v_max = d.v_max.max(p.v);
        }
        let du = (d.u_max - d.u_min) * T::lit(margin);
        let dv = (d.v_max - d.v_min) * T::lit(margin);
        d.u_min -= du;
        d.u_max += du;
        d.v_min -= dv;
        d.v_max += dv;
        Some(d)
    }
}

/// Bicubic B-spline surface with three coordinate channels.
///
/// Control point `(i, j)` (column `i` along `u`, row `j` along `v`) is stored
/// at index `j * grid_u + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BBSurface<T: Real> {
    domain: Domain<T>,
    grid_u: usize,
    grid_v: usize,
    coefficients: Vec<Point3<T>>,
}

impl<T: Real> BBSurface<T> {
    pub fn new(
        domain: Domain<T>,
        grid_u: usize,
        grid_v: usize,
        coefficients: Vec<Point3<T>>,
    ) -> Result<Self, SurfaceError> {
        if grid_u < 4 || grid_v < 4 {
            return Err(SurfaceError::InvalidSurface(format!(
                "grid {grid_u}x{grid_v} is smaller than 4x4"
            )));
        }
        if coefficients.len() != grid_u * grid_v {
            return Err(SurfaceError::InvalidSurface(format!(
                "expected {} coefficients, got {}",
                grid_u * grid_v,
                coefficients.len()
            )));
        }
        let finite = [domain.u_min, domain.u_max, domain.v_min, domain.v_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(domain.u_max > domain.u_min) || !(domain.v_max > domain.v_min) {
            return Err(SurfaceError::InvalidSurface("empty or non-finite domain".into()));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(SurfaceError::InvalidSurface("non-finite coefficient".into()));
        }
        Ok(Self {
            domain,
            grid_u,
            grid_v,
            coefficients,
        })
    }

    /// Surface equal to `value` everywhere.
    pub fn constant(domain: Domain<T>, grid_u: usize, grid_v: usize, value: Point3<T>) -> Result<Self, SurfaceError> {
        Self::new(domain, grid_u, grid_v, vec![value; grid_u * grid_v])
    }

    pub fn domain(&self) -> &Domain<T> {
        &self.domain
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_u, self.grid_v)
    }

    pub fn coefficients(&self) -> &[Point3<T>] {
        &self.coefficients
    }

    pub fn knots_u(&self) -> Vec<T> {
        self.axis_u().knots()
    }

    pub fn knots_v(&self) -> Vec<T> {
        self.axis_v().knots()
    }

    fn axis_u(&self) -> Axis<T> {
        Axis {
            lo: self.domain.u_min,
            hi: self.domain.u_max,
            count: self.grid_u,
        }
    }

    fn axis_v(&self) -> Axis<T> {
        Axis {
            lo: self.domain.v_min,
            hi: self.domain.v_max,
            count: self.grid_v,
        }
    }

    /// Mixed partial derivative `∂^(du+dv) Ψ / ∂u^du ∂v^dv` at `p`.
    pub fn derivative(&self, p: &Point2<T>, du: usize, dv: usize) -> Result<Point3<T>, SurfaceError> {
        if !self.domain.contains(p) {
            return Err(SurfaceError::OutOfDomain {
                u: p.u.as_f64(),
                v: p.v.as_f64(),
            });
        }
        let (su, bu) = self.axis_u().eval(p.u, du);
        let (sv, bv) = self.axis_v().eval(p.v, dv);
        let mut acc = nalgebra::Vector3::zeros();
        for (b, &wv) in bv.iter().enumerate() {
            for (a, &wu) in bu.iter().enumerate() {
                let c = self.coefficients[(sv + b) * self.grid_u + su + a];
                acc += c.to_vector() * (wu * wv);
            }
        }
        Ok(Point3::from_vector(&acc))
    }

    /// Surface point `Ψ(p)`.
    pub fn evaluate(&self, p: &Point2<T>) -> Result<Point3<T>, SurfaceError> {
        self.derivative(p, 0, 0)
    }

    /// Thin-plate bending energy `∫_Ω ‖Ψ_uu‖² + 2‖Ψ_uv‖² + ‖Ψ_vv‖²`, exact.
    ///
    /// The energy is blind to affine coefficient patterns `a + b·i + d·j`
    /// (they describe planes), so each channel is evaluated after removing
    /// its least-squares affine part; planes then come out as zero instead
    /// of as cancellation noise proportional to their offset.
    pub fn bending_energy(&self) -> T {
        let b = bending_matrix(&self.axis_u(), &self.axis_v());
        let n = self.coefficients.len();
        let index = DMatrix::from_fn(n, 3, |k, col| match col {
            0 => T::one(),
            1 => T::from_count(k % self.grid_u),
            _ => T::from_count(k / self.grid_u),
        });
        let mut total = T::zero();
        for ch in 0..3 {
            let c = DVector::from_iterator(n, self.coefficients.iter().map(|p| p.to_vector()[ch]));
            let c = match solve_linear_least_squares(&index, &c) {
                Ok(affine) => &c - &index * affine.solution,
                Err(_) => c,
            };
            total += c.dot(&(&b * &c));
        }
        total
    }

    /// `res × res` samples on a regular lattice covering the domain, row by
    /// row along `v`.
    pub fn sample_grid(&self, res: usize) -> Vec<(Point2<T>, Point3<T>)> {
        let res = res.max(2);
        let d = &self.domain;
        let step = |lo: T, hi: T, k: usize| {
            if k + 1 == res {
                hi
            } else {
                lo + (hi - lo) * T::from_count(k) / T::from_count(res - 1)
            }
        };
        let mut out = Vec::with_capacity(res * res);
        for j in 0..res {
            for i in 0..res {
                let p = Point2::new(step(d.u_min, d.u_max, i), step(d.v_min, d.v_max, j));
                let x = self.evaluate(&p).expect("lattice lies inside the domain");
                out.push((p, x));
            }
        }
        out
    }
}

/// Quadratic form of the bending energy over one coefficient channel.
fn bending_matrix<T: Real>(au: &Axis<T>, av: &Axis<T>) -> DMatrix<T> {
    let (u0, u1, u2) = (au.gram(0, 0), au.gram(1, 1), au.gram(2, 2));
    let (v0, v1, v2) = (av.gram(0, 0), av.gram(1, 1), av.gram(2, 2));
    // index j * grid_u + i puts the v factor on the outside of the product
    v0.kronecker(&u2) + v1.kronecker(&u1) * T::lit(2.0) + v2.kronecker(&u0)
}

/// Parameters of the robust fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplineFitConfig {
    /// Weight of the bending energy, µm²/px² scale.
    pub mu: f64,
    /// ℓ1 residual above which a point is rejected, µm.
    pub epsilon: f64,
    pub grid_u: usize,
    pub grid_v: usize,
    /// Reweighted solves after the initial least-squares solve.
    pub irls_iterations: usize,
    /// Smoothing of `|r| ≈ sqrt(r² + δ²)`, µm.
    pub irls_delta: f64,
}

impl Default for SplineFitConfig {
    fn default() -> Self {
        Self {
            mu: 1.0,
            epsilon: 30.0,
            grid_u: 16,
            grid_v: 16,
            irls_iterations: 10,
            irls_delta: 1e-3,
        }
    }
}

impl SplineFitConfig {
    pub fn validate(&self) -> Result<(), SurfaceError> {
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(SurfaceError::InvalidConfig(format!("mu must be >= 0, got {}", self.mu)));
        }
        if !(self.epsilon > 0.0) {
            return Err(SurfaceError::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.irls_delta > 0.0) {
            return Err(SurfaceError::InvalidConfig(format!(
                "irls_delta must be > 0, got {}",
                self.irls_delta
            )));
        }
        if self.grid_u < 4 || self.grid_v < 4 {
            return Err(SurfaceError::InvalidConfig(format!(
                "grid {}x{} is smaller than 4x4",
                self.grid_u, self.grid_v
            )));
        }
        Ok(())
    }
}

/// Result of [`fit_surface`].
#[derive(Debug, Clone)]
pub struct SurfaceFit<T: Real> {
    /// Surface re-estimated on the surviving points.
    pub surface: BBSurface<T>,
    /// `true` for points whose first-pass ℓ1 residual exceeded `epsilon`.
    pub rejected: Vec<bool>,
    /// ℓ1 residuals of the first-pass surface, per input point.
    pub initial_residuals: Vec<T>,
    /// ℓ1 residuals of the final surface, per input point.
    pub residuals: Vec<T>,
}

impl<T: Real> SurfaceFit<T> {
    pub fn rejected_count(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }
}

/// Fits `Ψ(uᵢ) ≈ xᵢ` robustly, rejects points with ℓ1 residual above
/// `cfg.epsilon` and refits once on the survivors.
pub fn fit_surface<T: Real>(
    points: &[(Point2<T>, Point3<T>)],
    cfg: &SplineFitConfig,
) -> Result<SurfaceFit<T>, SurfaceError> {
    cfg.validate()?;
    if points.len() < 4 {
        return Err(SurfaceError::TooFewPoints {
            required: 4,
            got: points.len(),
        });
    }
    if points.iter().any(|(u, x)| !u.is_finite() || !x.is_finite()) {
        return Err(SurfaceError::InvalidInput("non-finite point".into()));
    }
    let pixels: Vec<Point2<T>> = points.iter().map(|(u, _)| *u).collect();
    check_domain(&pixels)?;
    let domain = Domain::bounding(&pixels, 0.01).ok_or(SurfaceError::DegenerateDomain)?;

    let first = solve_robust(points, domain, cfg)?;
    let initial_residuals = l1_residuals(&first, points);
    let epsilon = T::lit(cfg.epsilon);
    let rejected: Vec<bool> = initial_residuals.iter().map(|&r| r > epsilon).collect();
    let survivors: Vec<(Point2<T>, Point3<T>)> = points
        .iter()
        .zip(&rejected)
        .filter(|(_, &r)| !r)
        .map(|(p, _)| *p)
        .collect();
    if survivors.is_empty() {
        return Err(SurfaceError::EmptyAfterRejection);
    }
    let surface = if survivors.len() == points.len() {
        first
    } else {
        let kept_pixels: Vec<Point2<T>> = survivors.iter().map(|(u, _)| *u).collect();
        if survivors.len() < 4 || check_domain(&kept_pixels).is_err() {
            return Err(SurfaceError::EmptyAfterRejection);
        }
        solve_robust(&survivors, domain, cfg)?
    };
    let residuals = l1_residuals(&surface, points);
    Ok(SurfaceFit {
        surface,
        rejected,
        initial_residuals,
        residuals,
    })
}

fn check_domain<T: Real>(pixels: &[Point2<T>]) -> Result<(), SurfaceError> {
    let n = T::from_count(pixels.len());
    let cu = pixels.iter().fold(T::zero(), |a, p| a + p.u) / n;
    let cv = pixels.iter().fold(T::zero(), |a, p| a + p.v) / n;
    let centered = DMatrix::from_fn(pixels.len(), 2, |i, j| {
        if j == 0 {
            pixels[i].u - cu
        } else {
            pixels[i].v - cv
        }
    });
    if effective_rank(&centered, 1e-10) < 2 {
        return Err(SurfaceError::DegenerateDomain);
    }
    Ok(())
}

fn l1_residuals<T: Real>(s: &BBSurface<T>, points: &[(Point2<T>, Point3<T>)]) -> Vec<T> {
    points
        .iter()
        .map(|(u, x)| {
            let y = s.evaluate(u).expect("fit points lie inside the domain");
            (y.x - x.x).abs() + (y.y - x.y).abs() + (y.z - x.z).abs()
        })
        .collect()
}

/// Smoothed-ℓ1 fit by iteratively reweighted least squares; each channel is
/// solved independently with its own weights.
fn solve_robust<T: Real>(
    points: &[(Point2<T>, Point3<T>)],
    domain: Domain<T>,
    cfg: &SplineFitConfig,
) -> Result<BBSurface<T>, SurfaceError> {
    let au = Axis {
        lo: domain.u_min,
        hi: domain.u_max,
        count: cfg.grid_u,
    };
    let av = Axis {
        lo: domain.v_min,
        hi: domain.v_max,
        count: cfg.grid_v,
    };
    let n_coef = cfg.grid_u * cfg.grid_v;
    let regulariser = bending_matrix(&au, &av) * T::lit(2.0 * cfg.mu);

    // sparse rows of the design matrix: 16 (index, value) pairs per point
    let rows: Vec<[(usize, T); 16]> = points
        .iter()
        .map(|(u, _)| {
            let (su, bu) = au.eval(u.u, 0);
            let (sv, bv) = av.eval(u.v, 0);
            let mut row = [(0usize, T::zero()); 16];
            for b in 0..4 {
                for a in 0..4 {
                    row[b * 4 + a] = ((sv + b) * cfg.grid_u + su + a, bu[a] * bv[b]);
                }
            }
            row
        })
        .collect();

    let delta2 = T::lit(cfg.irls_delta * cfg.irls_delta);
    let mut channels: Vec<DVector<T>> = Vec::with_capacity(3);
    for ch in 0..3 {
        let target: Vec<T> = points.iter().map(|(_, x)| x.to_vector()[ch]).collect();
        let mut weights = vec![T::one(); points.len()];
        let mut coef = DVector::zeros(n_coef);
        for iteration in 0..=cfg.irls_iterations {
            if iteration > 0 {
                for ((w, row), &t) in weights.iter_mut().zip(&rows).zip(&target) {
                    let fit = row.iter().fold(T::zero(), |acc, &(k, b)| acc + coef[k] * b);
                    let r = fit - t;
                    *w = T::one() / (r * r + delta2).sqrt();
                }
            }
            let mut lhs = regulariser.clone();
            let mut rhs = DVector::zeros(n_coef);
            for ((row, &w), &t) in rows.iter().zip(&weights).zip(&target) {
                for &(k, bk) in row {
                    let wb = w * bk;
                    rhs[k] += wb * t;
                    for &(l, bl) in row {
                        lhs[(k, l)] += wb * bl;
                    }
                }
            }
            coef = lhs.cholesky().ok_or(SurfaceError::Singular)?.solve(&rhs);
        }
        channels.push(coef);
    }
    let coefficients = (0..n_coef)
        .map(|k| Point3::new(channels[0][k], channels[1][k], channels[2][k]))
        .collect();
    BBSurface::new(domain, cfg.grid_u, cfg.grid_v, coefficients)
}
