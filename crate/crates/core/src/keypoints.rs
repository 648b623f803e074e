//! Sub-pixel keypoint localisation from a single heatmap channel.
//!
//! The detection is the activation-weighted centroid of the pixels whose
//! centres lie within `3σ` of the arg-max pixel.

use thiserror::Error;

use crate::geometry::Point2;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KeypointError {
    #[error("heatmap has no positive activation")]
    AllZeroHeatmap,
    #[error("invalid heatmap: {0}")]
    InvalidHeatmap(String),
}

/// One keypoint channel: row-major activations, `values[v * width + u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap<T> {
    width: usize,
    height: usize,
    values: Vec<T>,
    sigma: T,
}

impl<T: Real> Heatmap<T> {
    pub fn new(width: usize, height: usize, values: Vec<T>, sigma: T) -> Result<Self, KeypointError> {
        if width == 0 || height == 0 {
            return Err(KeypointError::InvalidHeatmap("empty grid".into()));
        }
        if values.len() != width * height {
            return Err(KeypointError::InvalidHeatmap(format!(
                "expected {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if !(sigma.is_finite() && sigma > T::zero()) {
            return Err(KeypointError::InvalidHeatmap("sigma must be positive".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(KeypointError::InvalidHeatmap(
                "activations must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            values,
            sigma,
        })
    }

    /// Builds a heatmap by sampling `f(u, v)` at every pixel centre.
    pub fn from_fn(
        width: usize,
        height: usize,
        sigma: T,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Result<Self, KeypointError> {
        let mut values = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                values.push(f(u, v));
            }
        }
        Self::new(width, height, values, sigma)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn at(&self, u: usize, v: usize) -> T {
        self.values[v * self.width + u]
    }

    /// Row-major index of the maximum; ties go to the smallest index.
    fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.values.iter().enumerate().skip(1) {
            if p > self.values[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointDetection<T> {
    pub location: Point2<T>,
    pub peak_value: T,
    /// 1-based channel index.
    pub channel_index: usize,
}

/// Locates the keypoint of one heatmap channel.
pub fn extract_keypoint<T: Real>(
    heatmap: &Heatmap<T>,
    channel_index: usize,
) -> Result<KeypointDetection<T>, KeypointError> {
    let idx = heatmap.argmax();
    let peak_value = heatmap.values[idx];
    if peak_value <= T::zero() {
        return Err(KeypointError::AllZeroHeatmap);
    }
    let (pu, pv) = (idx % heatmap.width, idx / heatmap.width);
    let radius = T::lit(3.0) * heatmap.sigma;
    let r2 = radius * radius;
    let reach = radius.floor().to_usize().unwrap_or(usize::MAX);

    let u_lo = pu.saturating_sub(reach);
    let u_hi = pu.saturating_add(reach).min(heatmap.width - 1);
    let v_lo = pv.saturating_sub(reach);
    let v_hi = pv.saturating_add(reach).min(heatmap.height - 1);

    // Accumulate offsets from the peak, not absolute coordinates, so that the
    // result is exactly translation-equivariant.
    let (mut mass, mut su, mut sv) = (T::zero(), T::zero(), T::zero());
    for v in v_lo..=v_hi {
        let dv = T::from_count(v) - T::from_count(pv);
        for u in u_lo..=u_hi {
            let du = T::from_count(u) - T::from_count(pu);
            if du * du + dv * dv > r2 {
                continue;
            }
            let p = heatmap.at(u, v);
            mass += p;
            su += p * du;
            sv += p * dv;
        }
    }
    let location = Point2::new(T::from_count(pu) + su / mass, T::from_count(pv) + sv / mass);
    Ok(KeypointDetection {
        location,
        peak_value,
        channel_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(w: usize, h: usize, cu: f64, cv: f64, sigma: f64) -> Heatmap<f64> {
        Heatmap::from_fn(w, h, sigma, |u, v| {
            let du = u as f64 - cu;
            let dv = v as f64 - cv;
            (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp()
        })
        .unwrap()
    }

    /// Brute-force weighted mean over every pixel of the grid inside the disc.
    fn disc_centroid_oracle(h: &Heatmap<f64>, center: (usize, usize), radius: f64) -> (f64, f64) {
        let (mut m, mut su, mut sv) = (0.0, 0.0, 0.0);
        for v in 0..h.height() {
            for u in 0..h.width() {
                let d = ((u as f64 - center.0 as f64).powi(2) + (v as f64 - center.1 as f64).powi(2)).sqrt();
                if d <= radius {
                    let p = h.at(u, v);
                    m += p;
                    su += p * u as f64;
                    sv += p * v as f64;
                }
            }
        }
        (su / m, sv / m)
    }

    #[test]
    fn delta_peak() {
        let h = Heatmap::from_fn(32, 32, 2.0, |u, v| if (u, v) == (10, 20) { 0.7 } else { 0.0 }).unwrap();
        let det = extract_keypoint(&h, 1).unwrap();
        assert_eq!(det.location, Point2::new(10.0, 20.0));
        assert_eq!(det.peak_value, 0.7);
        assert_eq!(det.channel_index, 1);
    }

    #[test]
    fn gaussian_peak_matches_disc_oracle() {
        let h = gaussian(64, 64, 15.4, 22.7, 5.0);
        let det = extract_keypoint(&h, 2).unwrap();
        let oracle = disc_centroid_oracle(&h, (15, 23), 15.0);
        assert!((det.location.u - oracle.0).abs() < 1e-12);
        assert!((det.location.v - oracle.1).abs() < 1e-12);
        assert!((det.location.u - 15.4).abs() < 0.1);
        assert!((det.location.v - 22.7).abs() < 0.1);
    }

    #[test]
    fn tie_break_smallest_row_major_index() {
        // (30, 2) has linear index 2*40+30 = 110, (5, 9) has 365.
        let h = Heatmap::from_fn(40, 40, 1.0, |u, v| {
            if (u, v) == (30, 2) || (u, v) == (5, 9) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let det = extract_keypoint(&h, 1).unwrap();
        assert_eq!(det.location, Point2::new(30.0, 2.0));
    }

    #[test]
    fn all_zero_is_an_error() {
        let h = Heatmap::new(4, 4, vec![0.0f64; 16], 1.0).unwrap();
        assert_eq!(extract_keypoint(&h, 1), Err(KeypointError::AllZeroHeatmap));
    }

    #[test]
    fn invalid_heatmaps_rejected() {
        assert!(Heatmap::new(0, 4, Vec::<f64>::new(), 1.0).is_err());
        assert!(Heatmap::new(2, 2, vec![0.0f64; 3], 1.0).is_err());
        assert!(Heatmap::new(2, 2, vec![0.0f64; 4], 0.0).is_err());
        assert!(Heatmap::new(2, 2, vec![0.0, -1.0, 0.0, 0.0f64], 1.0).is_err());
        assert!(Heatmap::new(2, 2, vec![0.0, f64::NAN, 0.0, 0.0f64], 1.0).is_err());
    }

    #[test]
    fn disc_boundary_is_inclusive() {
        // sigma = 1 → radius 3; a pixel exactly 3 px away must count.
        let h = Heatmap::<f64>::from_fn(20, 20, 1.0, |u, v| match (u, v) {
            (10, 10) => 2.0,
            (13, 10) => 1.0,
            (14, 10) => 1.5, // outside the disc
            _ => 0.0,
        })
        .unwrap();
        let det = extract_keypoint(&h, 1).unwrap();
        assert!((det.location.u - 11.0).abs() < 1e-15);
        assert_eq!(det.location.v, 10.0);
    }

    #[test]
    fn symmetric_pattern_returns_centre() {
        let h = Heatmap::from_fn(21, 21, 2.0, |u, v| {
            let du = u as f64 - 10.0;
            let dv = v as f64 - 10.0;
            1.0 / (1.0 + du * du + 2.0 * dv * dv)
        })
        .unwrap();
        let det = extract_keypoint(&h, 1).unwrap();
        assert_eq!(det.location, Point2::new(10.0, 10.0));
    }

    #[test]
    fn single_precision_gaussian() {
        let h = Heatmap::<f32>::from_fn(48, 48, 3.0, |u, v| {
            let du = u as f32 - 20.3;
            let dv = v as f32 - 25.6;
            (-(du * du + dv * dv) / 18.0).exp()
        })
        .unwrap();
        let det = extract_keypoint(&h, 1).unwrap();
        assert!((det.location.u - 20.3).abs() < 0.1);
        assert!((det.location.v - 25.6).abs() < 0.1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn integer_shift_equivariance(
                cu in 12.0f64..20.0, cv in 12.0f64..20.0,
                du in 0usize..10, dv in 0usize..10,
            ) {
                let sigma = 3.0;
                let base = gaussian(64, 64, cu, cv, sigma);
                let shifted = Heatmap::from_fn(64, 64, sigma, |u, v| {
                    if u >= du && v >= dv { base.at(u - du, v - dv) } else { 0.0 }
                }).unwrap();
                let a = extract_keypoint(&base, 1).unwrap().location;
                let b = extract_keypoint(&shifted, 1).unwrap().location;
                prop_assert!((b.u - a.u - du as f64).abs() < 1e-12);
                prop_assert!((b.v - a.v - dv as f64).abs() < 1e-12);
            }

            #[test]
            fn output_inside_support_hull(seed in any::<u64>()) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let h = Heatmap::from_fn(16, 16, 1.5, |_, _| {
                    if rng.random_bool(0.3) { rng.random_range(0.0..1.0) } else { 0.0 }
                }).unwrap();
                if let Ok(det) = extract_keypoint(&h, 1) {
                    // bounding box of nonzero pixels is a superset of their hull
                    let nz: Vec<(usize, usize)> = (0..16).flat_map(|v| (0..16).map(move |u| (u, v)))
                        .filter(|&(u, v)| h.at(u, v) > 0.0).collect();
                    let umin = nz.iter().map(|p| p.0).min().unwrap() as f64;
                    let umax = nz.iter().map(|p| p.0).max().unwrap() as f64;
                    let vmin = nz.iter().map(|p| p.1).min().unwrap() as f64;
                    let vmax = nz.iter().map(|p| p.1).max().unwrap() as f64;
                    prop_assert!(det.location.u >= umin - 1e-12 && det.location.u <= umax + 1e-12);
                    prop_assert!(det.location.v >= vmin - 1e-12 && det.location.v <= vmax + 1e-12);
                }
            }
        }
    }
}
