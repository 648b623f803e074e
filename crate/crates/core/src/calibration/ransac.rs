use rand::seq::index::sample;

use super::{dlt_affine, AffineProjection, CalibrationError};
use crate::geometry::{Point2, Point3, RngSeed};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Size of the minimal sample for an affine camera (four non-coplanar points).
pub const MIN_SAMPLE_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Reprojection distance (pixels) below which a point is an inlier.
    pub inlier_threshold: f64,
    #[serde(skip)]
    pub seed: RngSeed,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_threshold: 8.0,
            seed: RngSeed(0),
        }
    }
}

impl RansacConfig {
    pub fn min_sample_size(&self) -> usize {
        MIN_SAMPLE_SIZE
    }

    fn validate(&self) -> Result<(), CalibrationError> {
        if self.iterations == 0 {
            return Err(CalibrationError::InvalidInput(
                "RANSAC needs at least one iteration".into(),
            ));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(CalibrationError::InvalidInput(
                "inlier threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn consensus<T: Real>(model: &AffineProjection<T>, points: &[(Point3<T>, Point2<T>)], threshold: T) -> Vec<bool> {
    points
        .iter()
        .map(|(x, u)| model.project(x).distance(u) < threshold)
        .collect()
}

/// RANSAC around [`dlt_affine`]: draws 4-point samples, scores each model by
/// the number of points reprojecting within `inlier_threshold`, and refits on
/// the largest consensus set. Equal-size consensus sets keep the earliest
/// iteration, so the result depends only on the inputs and the seed.
pub fn dlt_affine_ransac<T: Real>(
    points: &[(Point3<T>, Point2<T>)],
    cfg: &RansacConfig,
) -> Result<(AffineProjection<T>, Vec<bool>), CalibrationError> {
    cfg.validate()?;
    let n = points.len();
    if n < MIN_SAMPLE_SIZE {
        return Err(CalibrationError::NoConsensus { best: 0 });
    }
    let threshold = T::lit(cfg.inlier_threshold);
    let mut rng = cfg.seed.rng();
    let mut best: Option<(usize, Vec<bool>)> = None;
    let mut any_model = false;
    let mut subset = Vec::with_capacity(MIN_SAMPLE_SIZE);

    for _ in 0..cfg.iterations {
        subset.clear();
        subset.extend(sample(&mut rng, n, MIN_SAMPLE_SIZE).iter().map(|i| points[i]));
        let Ok(model) = dlt_affine(&subset) else {
            continue;
        };
        any_model = true;
        let mask = consensus(&model, points, threshold);
        let count = mask.iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, mask));
            if count == n {
                break;
            }
        }
    }

    if !any_model {
        return Err(CalibrationError::DegenerateConfiguration);
    }
    let (count, mask) = best.expect("at least one model was scored");
    if count < MIN_SAMPLE_SIZE {
        return Err(CalibrationError::NoConsensus { best: count });
    }
    let inliers: Vec<_> = points
        .iter()
        .zip(&mask)
        .filter(|(_, &keep)| keep)
        .map(|(p, _)| *p)
        .collect();
    let model = dlt_affine(&inliers)?;
    Ok((model, mask))
}
