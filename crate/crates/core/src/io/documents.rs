use nalgebra::{Matrix2x4, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{malformed, FormatError};
use crate::calibration::{
    resect, AffineIntrinsics, AffinePose, AffineProjection, BundleReport, CameraModel, StereoCalibration, Termination,
};
use crate::geometry::Point3;
use crate::registration::{Registration, RigidTransform};
use crate::stereo::StereoRig;
use crate::surface::{BBSurface, Domain};

/// Written into every document so that files are self-describing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Units {
    pub length: String,
    pub image: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            length: "um".into(),
            image: "px".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsDocument {
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub skew: f64,
}

/// One camera: the 2×4 matrix plus its factorisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraDocument {
    /// Row-major 2×4 projection matrix.
    pub matrix: [f64; 8],
    pub intrinsics: IntrinsicsDocument,
    /// Row-major 3×3 rotation.
    pub rotation: [f64; 9],
    /// `(t1, t2)`, µm.
    pub translation: [f64; 2],
}

impl CameraDocument {
    pub fn from_parts(m: &AffineProjection<f64>, k: &AffineIntrinsics<f64>, pose: &AffinePose<f64>) -> Self {
        let r = &pose.rotation;
        Self {
            matrix: m.to_row_major(),
            intrinsics: IntrinsicsDocument {
                alpha_x: k.alpha_x,
                alpha_y: k.alpha_y,
                skew: k.skew,
            },
            rotation: std::array::from_fn(|i| r[(i / 3, i % 3)]),
            translation: [pose.t1, pose.t2],
        }
    }

    pub fn from_model(model: &CameraModel<f64>) -> Self {
        Self::from_parts(&model.projection, &model.intrinsics, &model.pose)
    }

    /// Factorises a bare matrix.
    pub fn from_projection(m: &AffineProjection<f64>) -> Result<Self, FormatError> {
        let (k, pose) = resect(m).map_err(|e| malformed("camera", e.to_string()))?;
        Ok(Self::from_parts(m, &k, &pose))
    }

    pub fn projection(&self) -> Result<AffineProjection<f64>, FormatError> {
        AffineProjection::new(Matrix2x4::from_row_slice(&self.matrix)).map_err(|e| malformed("camera", e.to_string()))
    }
}

/// Summary of a bundle-adjustment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub iterations: usize,
    pub termination: String,
    pub initial_objective: f64,
    pub objective: f64,
    pub gradient_norm: f64,
    /// Root-mean-square reprojection error over both cameras, px.
    pub reprojection_rmse_px: f64,
}

impl BundleSummary {
    pub fn new(report: &BundleReport<f64>, reprojection_rmse_px: f64) -> Self {
        let termination = match report.termination {
            Termination::GradientTolerance => "gradient_tolerance",
            Termination::ObjectiveTolerance => "objective_tolerance",
            Termination::StepTolerance => "step_tolerance",
            Termination::MaxIterations => "max_iterations",
        };
        Self {
            iterations: report.iterations,
            termination: termination.into(),
            initial_objective: report.initial.total,
            objective: report.last.total,
            gradient_norm: report.gradient_norm,
            reprojection_rmse_px,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InlierCounts {
    pub total: usize,
    pub left: usize,
    pub right: usize,
    /// Correspondences that are inliers in both cameras.
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDocument {
    pub units: Units,
    /// `"dlt"` or `"ba"`.
    pub stage: String,
    pub left: CameraDocument,
    pub right: CameraDocument,
    /// Affine fundamental entries `(a, b, c, d, e)`.
    pub fundamental: [f64; 5],
    pub inliers: InlierCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<BundleSummary>,
    /// Linear estimates the bundle adjustment started from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dlt: Option<CameraPair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPair {
    pub left: CameraDocument,
    pub right: CameraDocument,
}

impl CalibrationDocument {
    /// Document for linear (DLT) estimates.
    pub fn from_projections(
        left: &AffineProjection<f64>,
        right: &AffineProjection<f64>,
        inliers: InlierCounts,
    ) -> Result<Self, FormatError> {
        let rig = StereoRig::new(*left, *right).map_err(|e| malformed("calibration", e.to_string()))?;
        Ok(Self {
            units: Units::default(),
            stage: "dlt".into(),
            left: CameraDocument::from_projection(left)?,
            right: CameraDocument::from_projection(right)?,
            fundamental: fundamental_entries(&rig),
            inliers,
            bundle: None,
            dlt: None,
        })
    }

    /// Document for bundle-adjusted cameras; `dlt` are the starting matrices.
    pub fn from_calibration(
        cal: &StereoCalibration<f64>,
        dlt: (&AffineProjection<f64>, &AffineProjection<f64>),
        inliers: InlierCounts,
        reprojection_rmse_px: f64,
    ) -> Result<Self, FormatError> {
        let rig = StereoRig::new(cal.left.projection, cal.right.projection)
            .map_err(|e| malformed("calibration", e.to_string()))?;
        Ok(Self {
            units: Units::default(),
            stage: "ba".into(),
            left: CameraDocument::from_model(&cal.left),
            right: CameraDocument::from_model(&cal.right),
            fundamental: fundamental_entries(&rig),
            inliers,
            bundle: Some(BundleSummary::new(&cal.report, reprojection_rmse_px)),
            dlt: Some(CameraPair {
                left: CameraDocument::from_projection(dlt.0)?,
                right: CameraDocument::from_projection(dlt.1)?,
            }),
        })
    }

    /// Rebuilds the rig from the stored matrices. The fundamental matrix is
    /// recomputed rather than read back.
    pub fn to_rig(&self) -> Result<StereoRig<f64>, FormatError> {
        StereoRig::new(self.left.projection()?, self.right.projection()?)
            .map_err(|e| malformed("calibration", e.to_string()))
    }

    /// The DLT-stage rig: the stored linear estimates when present,
    /// otherwise the main cameras.
    pub fn dlt_rig(&self) -> Result<StereoRig<f64>, FormatError> {
        match &self.dlt {
            Some(pair) => StereoRig::new(pair.left.projection()?, pair.right.projection()?)
                .map_err(|e| malformed("calibration", e.to_string())),
            None => self.to_rig(),
        }
    }
}

fn fundamental_entries(rig: &StereoRig<f64>) -> [f64; 5] {
    let f = &rig.fundamental;
    [f.a, f.b, f.c, f.d, f.e]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainDocument {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

/// A fitted bicubic surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDocument {
    pub units: Units,
    pub degree: usize,
    pub domain: DomainDocument,
    /// `[grid_u, grid_v]`.
    pub grid: [usize; 2],
    pub knots_u: Vec<f64>,
    pub knots_v: Vec<f64>,
    /// Control point `(i, j)` is stored at `j * grid_u + i`.
    pub coefficients: Vec<[f64; 3]>,
    pub index_order: String,
}

impl SurfaceDocument {
    pub fn from_surface(s: &BBSurface<f64>) -> Self {
        let d = s.domain();
        let (gu, gv) = s.grid();
        Self {
            units: Units::default(),
            degree: 3,
            domain: DomainDocument {
                u_min: d.u_min,
                u_max: d.u_max,
                v_min: d.v_min,
                v_max: d.v_max,
            },
            grid: [gu, gv],
            knots_u: s.knots_u(),
            knots_v: s.knots_v(),
            coefficients: s.coefficients().iter().map(|c| [c.x, c.y, c.z]).collect(),
            index_order: "j * grid_u + i".into(),
        }
    }

    /// Knots are implied by the domain and grid and are not read back.
    pub fn to_surface(&self) -> Result<BBSurface<f64>, FormatError> {
        if self.degree != 3 {
            return Err(malformed("surface", format!("unsupported degree {}", self.degree)));
        }
        let d = self.domain;
        let domain = Domain {
            u_min: d.u_min,
            u_max: d.u_max,
            v_min: d.v_min,
            v_max: d.v_max,
        };
        let coefs = self
            .coefficients
            .iter()
            .map(|c| Point3::new(c[0], c[1], c[2]))
            .collect();
        BBSurface::new(domain, self.grid[0], self.grid[1], coefs).map_err(|e| malformed("surface", e.to_string()))
    }
}

pub const TRANSFORM_CONVENTION: &str = "x_robot = R * x_camera + t";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualDocument {
    pub count: usize,
    pub rmse: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformDocument {
    pub units: Units,
    pub convention: String,
    /// Row-major 3×3 rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub residuals: ResidualDocument,
    pub robust: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_used: Option<usize>,
}

impl TransformDocument {
    pub fn from_registration(reg: &Registration<f64>, robust: bool, frames_used: Option<usize>) -> Self {
        let t = reg.transform.translation();
        Self {
            units: Units::default(),
            convention: TRANSFORM_CONVENTION.into(),
            rotation: reg.transform.rotation_row_major(),
            translation: [t.x, t.y, t.z],
            residuals: ResidualDocument {
                count: reg.stats.norms.len(),
                rmse: reg.stats.rmse,
                mean: reg.stats.mean,
                max: reg.stats.max,
            },
            robust,
            frames_used,
        }
    }

    pub fn to_transform(&self) -> Result<RigidTransform<f64>, FormatError> {
        RigidTransform::new(
            Matrix3::from_row_slice(&self.rotation),
            Vector3::from_column_slice(&self.translation),
        )
        .map_err(|e| malformed("transform", e.to_string()))
    }
}
