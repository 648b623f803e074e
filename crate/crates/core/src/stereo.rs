//! Affine epipolar geometry, match filtering and triangulation.
//!
//! For two affine cameras the epipolar constraint
//! `[u_rᵀ 1] F [u_lᵀ 1]ᵀ = 0` is linear in both images, so `F` has the
//! pattern `[[0,0,a],[0,0,b],[c,d,e]]` and epipolar lines in each image are
//! parallel.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::calibration::AffineProjection;
use crate::geometry::{Point2, Point3};
use crate::linalg::{null_vector, solve_linear_least_squares, LinalgError};
use crate::scalar::Real;

/// Default symmetric epipolar distance threshold, pixels.
pub const DEFAULT_EPIPOLAR_THRESHOLD_PX: f64 = 2.0;

/// Relative singular-value gap below which a second epipolar constraint is
/// considered present (i.e. the pair does not determine depth).
const DEGENERACY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StereoError {
    #[error("camera pair is degenerate: depth is not observable")]
    DegeneratePair,
    #[error("triangulation system is rank deficient (rank {rank})")]
    RankDeficient { rank: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// A left/right pixel pair believed to image the same point.
pub type PixelMatch<T> = (Point2<T>, Point2<T>);

/// Affine fundamental matrix, stored as its five free entries with unit norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFundamental<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
    pub e: T,
}

impl<T: Real> AffineFundamental<T> {
    pub fn matrix(&self) -> Matrix3<T> {
        let z = T::zero();
        Matrix3::new(z, z, self.a, z, z, self.b, self.c, self.d, self.e)
    }

    /// Algebraic residual `[u_rᵀ 1] F [u_lᵀ 1]ᵀ`.
    pub fn residual(&self, u_left: &Point2<T>, u_right: &Point2<T>) -> T {
        self.a * u_right.u + self.b * u_right.v + self.c * u_left.u + self.d * u_left.v + self.e
    }

    /// Epipolar line `(l₀, l₁, l₂)` in the right image of a left pixel.
    pub fn right_line(&self, u_left: &Point2<T>) -> Vector3<T> {
        Vector3::new(self.a, self.b, self.c * u_left.u + self.d * u_left.v + self.e)
    }

    /// Epipolar line in the left image of a right pixel.
    pub fn left_line(&self, u_right: &Point2<T>) -> Vector3<T> {
        Vector3::new(self.c, self.d, self.a * u_right.u + self.b * u_right.v + self.e)
    }

    /// Mean of the point-to-epipolar-line distances in both images.
    pub fn symmetric_distance(&self, u_left: &Point2<T>, u_right: &Point2<T>) -> T {
        let r = self.residual(u_left, u_right).abs();
        let nr = (self.a * self.a + self.b * self.b).sqrt();
        let nl = (self.c * self.c + self.d * self.d).sqrt();
        (r / nr + r / nl) * T::lit(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig<T: Real> {
    pub left: AffineProjection<T>,
    pub right: AffineProjection<T>,
    pub fundamental: AffineFundamental<T>,
}

impl<T: Real> StereoRig<T> {
    pub fn new(left: AffineProjection<T>, right: AffineProjection<T>) -> Result<Self, StereoError> {
        let fundamental = fundamental_from_cameras(&left, &right)?;
        Ok(Self {
            left,
            right,
            fundamental,
        })
    }

    pub fn project(&self, x: &Point3<T>) -> (Point2<T>, Point2<T>) {
        (self.left.project(x), self.right.project(x))
    }
}

/// Probe points used to fit `F`: the vertices of a cube plus its centre.
fn probe_points<T: Real>(scale: T) -> Vec<Vector3<T>> {
    let mut pts = vec![Vector3::zeros()];
    for i in 0..8u8 {
        let s = |bit: u8| if i & bit != 0 { scale } else { -scale };
        pts.push(Vector3::new(s(1), s(2), s(4)));
    }
    pts
}

/// Fits the affine fundamental matrix of a camera pair.
///
/// Noiseless correspondences are generated by projecting probe points through
/// both cameras; the five free entries are the null vector of the resulting
/// linear constraints (computed in normalised pixel coordinates). When that
/// null space is two-dimensional the cameras see the same 2D image up to an
/// affine warp and [`StereoError::DegeneratePair`] is returned.
pub fn fundamental_from_cameras<T: Real>(
    left: &AffineProjection<T>,
    right: &AffineProjection<T>,
) -> Result<AffineFundamental<T>, StereoError> {
    let gain = left.linear().norm().max(right.linear().norm());
    let scale = T::lit(100.0) / gain;
    let probes = probe_points(scale);
    let proj = |m: &AffineProjection<T>| -> Vec<Point2<T>> {
        probes.iter().map(|x| m.project(&Point3::from_vector(x))).collect()
    };
    let (ul, ur) = (proj(left), proj(right));

    // isotropic normalisation per image: û = (u − centre) / spread
    let norm = |pts: &[Point2<T>]| -> (T, T, T) {
        let n = T::from_count(pts.len());
        let cu = pts.iter().fold(T::zero(), |s, p| s + p.u) / n;
        let cv = pts.iter().fold(T::zero(), |s, p| s + p.v) / n;
        let spread = (pts
            .iter()
            .fold(T::zero(), |s, p| s + (p.u - cu) * (p.u - cu) + (p.v - cv) * (p.v - cv))
            / n)
            .sqrt();
        (cu, cv, spread)
    };
    let (lu, lv, ls) = norm(&ul);
    let (ru, rv, rs) = norm(&ur);
    if !(ls > T::zero() && rs > T::zero()) {
        return Err(StereoError::DegeneratePair);
    }
    let rows = DMatrix::from_fn(probes.len(), 5, |i, j| match j {
        0 => (ur[i].u - ru) / rs,
        1 => (ur[i].v - rv) / rs,
        2 => (ul[i].u - lu) / ls,
        3 => (ul[i].v - lv) / ls,
        _ => T::one(),
    });
    let (v, sv) = null_vector(&rows);
    if sv[3] <= T::lit(DEGENERACY_TOLERANCE) * sv[0] {
        return Err(StereoError::DegeneratePair);
    }
    // undo the normalisation
    let a = v[0] / rs;
    let b = v[1] / rs;
    let c = v[2] / ls;
    let d = v[3] / ls;
    let e = v[4] - a * ru - b * rv - c * lu - d * lv;
    let mut f = [a, b, c, d, e];
    let norm = f.iter().fold(T::zero(), |s, x| s + *x * *x).sqrt();
    // sign convention: the largest-magnitude entry is positive
    let pivot = f
        .iter()
        .copied()
        .fold(T::zero(), |best, x| if x.abs() > best.abs() { x } else { best });
    let sign = if pivot < T::zero() { -T::one() } else { T::one() };
    for x in f.iter_mut() {
        *x = *x * sign / norm;
    }
    Ok(AffineFundamental {
        a: f[0],
        b: f[1],
        c: f[2],
        d: f[3],
        e: f[4],
    })
}

/// Marks matches whose symmetric epipolar distance is within `threshold_px`.
pub fn filter_epipolar<T: Real>(
    matches: &[PixelMatch<T>],
    f: &AffineFundamental<T>,
    threshold_px: T,
) -> Result<Vec<bool>, StereoError> {
    if !(threshold_px > T::zero()) {
        return Err(StereoError::InvalidInput("threshold must be positive".into()));
    }
    Ok(matches
        .iter()
        .map(|(l, r)| f.symmetric_distance(l, r) <= threshold_px)
        .collect())
}

/// Least-squares solution of `[Mˡ; Mʳ] [xᵀ 1]ᵀ = [u_l; u_r]` for two
/// explicit cameras.
pub fn triangulate_affine<T: Real>(
    left: &AffineProjection<T>,
    right: &AffineProjection<T>,
    u_left: &Point2<T>,
    u_right: &Point2<T>,
) -> Result<Point3<T>, StereoError> {
    let (al, ar) = (left.linear(), right.linear());
    let (bl, br) = (left.offset(), right.offset());
    let a = DMatrix::from_fn(4, 3, |r, c| if r < 2 { al[(r, c)] } else { ar[(r - 2, c)] });
    let rhs = DVector::from_vec(vec![
        u_left.u - bl[0],
        u_left.v - bl[1],
        u_right.u - br[0],
        u_right.v - br[1],
    ]);
    let ls = solve_linear_least_squares(&a, &rhs).map_err(|e| match e {
        LinalgError::RankDeficient { rank, .. } => StereoError::RankDeficient { rank },
        other => StereoError::InvalidInput(other.to_string()),
    })?;
    Ok(Point3::new(ls.solution[0], ls.solution[1], ls.solution[2]))
}

/// Triangulates one match with the rig's cameras.
pub fn triangulate<T: Real>(
    rig: &StereoRig<T>,
    u_left: &Point2<T>,
    u_right: &Point2<T>,
) -> Result<Point3<T>, StereoError> {
    triangulate_affine(&rig.left, &rig.right, u_left, u_right)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangulatedCloud<T> {
    pub points: Vec<Point3<T>>,
    /// Index into the input match list of each entry of `points`.
    pub source_indices: Vec<usize>,
    pub failed: usize,
}

/// Triangulates every match, omitting (and counting) failures. Output order
/// follows input order.
pub fn triangulate_set<T: Real>(rig: &StereoRig<T>, matches: &[PixelMatch<T>]) -> TriangulatedCloud<T> {
    let mut cloud = TriangulatedCloud {
        points: Vec::with_capacity(matches.len()),
        source_indices: Vec::with_capacity(matches.len()),
        failed: 0,
    };
    for (i, (l, r)) in matches.iter().enumerate() {
        match triangulate(rig, l, r) {
            Ok(p) => {
                cloud.points.push(p);
                cloud.source_indices.push(i);
            }
            Err(_) => cloud.failed += 1,
        }
    }
    cloud
}
