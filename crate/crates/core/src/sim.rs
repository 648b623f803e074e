//! Synthetic robot + stereo-microscope scenes with known ground truth.
//!
//! Everything here is `f64` and driven by a single [`RngSeed`]; the same
//! configuration and seed always regenerate bit-identical data. Independent
//! parts of a scene (trajectory, pixel noise, outliers, surface samples,
//! registration frames) draw from separate derived streams, so changing one
//! of them leaves the others untouched.
//!
//! Geometry: the microscope looks down the robot `z` axis at `target`. Each
//! camera is an orthographic projection rotated by half the vergence angle
//! about `y` (in opposite directions) and then by its own roll about `x`,
//! scaled by the magnification and shifted to the image centre.

use nalgebra::{Matrix2x4, Rotation3, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{AffineProjection, CalibrationError, Correspondence, CorrespondenceSet};
use crate::geometry::{Point2, Point3, RngSeed};
use crate::registration::{Frame, RigidTransform};
use crate::stereo::{PixelMatch, StereoError, StereoRig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Stereo(#[from] StereoError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("invalid scene configuration: {0}")]
    InvalidConfig(String),
}

/// Camera pair geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub magnification_px_per_um: f64,
    pub vergence_deg: f64,
    /// Roll of each camera about the horizontal image axis, degrees.
    pub roll_deg: [f64; 2],
    pub image_width: u32,
    pub image_height: u32,
    /// Robot-frame point imaged at the centre of both images, µm.
    pub target_um: [f64; 3],
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            magnification_px_per_um: 0.15,
            vergence_deg: 12.0,
            roll_deg: [0.0, 0.0],
            image_width: 1920,
            image_height: 1080,
            target_um: [0.0, 0.0, 0.0],
        }
    }
}

/// Calibration trajectory of the tool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub frames: usize,
    /// Landmarks per frame, 1 to 3 (tip, second tip, shaft).
    pub keypoints: usize,
    /// Box side lengths the tool base moves through, µm.
    pub extent_um: [f64; 3],
    /// Largest tool tilt away from its rest orientation, degrees.
    pub max_tilt_deg: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            frames: 100,
            keypoints: 3,
            extent_um: [8000.0, 5000.0, 3000.0],
            max_tilt_deg: 20.0,
        }
    }
}

/// Measurement noise of the calibration correspondences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma_u_px: f64,
    pub sigma_x_um: f64,
    /// Fraction of correspondences whose pixels are replaced by gross errors.
    pub outlier_fraction: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_u_px: 0.5,
            sigma_x_um: 10.0,
            outlier_fraction: 0.1,
        }
    }
}

/// Analytic tissue surface `z = f(x, y)` around the rig target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceShape {
    /// `z = z0 + gx·x + gy·y` in target-centred coordinates.
    Plane { gx: f64, gy: f64 },
    /// Cap of a sphere of the given radius with its apex at the target,
    /// bulging towards the cameras.
    SphereCap { radius_um: f64 },
    /// `z = A·sin(2πx/λ)·cos(2πy/λ)`.
    HeightField { amplitude_um: f64, wavelength_um: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceConfig {
    pub shape: SurfaceShape,
    /// Side of the square patch sampled around the target, µm.
    pub patch_um: f64,
    pub samples: usize,
    /// Pixel noise of the simulated dense matcher.
    pub matcher_noise_px: f64,
    /// Fraction of matches displaced along their epipolar line.
    pub outlier_fraction: f64,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            shape: SurfaceShape::SphereCap { radius_um: 12_000.0 },
            patch_um: 2000.0,
            samples: 2000,
            matcher_noise_px: 0.0,
            outlier_fraction: 0.05,
        }
    }
}

/// Post-calibration camera motion and the landmark stream used to recover it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub frames: usize,
    pub keypoints: usize,
    /// Isotropic noise of the reconstructed landmarks, µm.
    pub noise_um: f64,
    /// Rotation of the camera motion, degrees.
    pub motion_deg: f64,
    /// Translation of the camera motion, µm.
    pub motion_um: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            frames: 10,
            keypoints: 3,
            noise_um: 20.0,
            motion_deg: 2.0,
            motion_um: 500.0,
        }
    }
}

/// Complete scene description, serialisable as the JSON scene file.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub rig: RigConfig,
    pub trajectory: TrajectoryConfig,
    pub noise: NoiseConfig,
    pub surface: SurfaceConfig,
    pub registration: RegistrationConfig,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.rig.magnification_px_per_um > 0.0) {
            return bad("magnification must be positive".into());
        }
        if self.trajectory.frames == 0 || !(1..=3).contains(&self.trajectory.keypoints) {
            return bad("trajectory needs >= 1 frame and 1..=3 keypoints".into());
        }
        if self.trajectory.extent_um.iter().any(|e| !(*e > 0.0)) {
            return bad("trajectory extent must be positive on every axis".into());
        }
        for (name, f) in [
            ("noise.outlier_fraction", self.noise.outlier_fraction),
            ("surface.outlier_fraction", self.surface.outlier_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1)"));
            }
        }
        if self.noise.sigma_u_px < 0.0 || self.noise.sigma_x_um < 0.0 || self.surface.matcher_noise_px < 0.0 {
            return bad("noise levels must be non-negative".into());
        }
        if !(self.surface.patch_um > 0.0) {
            return bad("surface patch must be positive".into());
        }
        if let SurfaceShape::SphereCap { radius_um } = self.surface.shape {
            if !(radius_um > self.surface.patch_um * std::f64::consts::FRAC_1_SQRT_2) {
                return bad("sphere radius must exceed the patch half-diagonal".into());
            }
        }
        if !(1..=3).contains(&self.registration.keypoints) || self.registration.noise_um < 0.0 {
            return bad("registration needs 1..=3 keypoints and non-negative noise".into());
        }
        Ok(())
    }
}

fn camera_matrix(cfg: &RigConfig, yaw_deg: f64, roll_deg: f64) -> Matrix2x4<f64> {
    let r = Rotation3::from_axis_angle(&Vector3::x_axis(), roll_deg.to_radians())
        * Rotation3::from_axis_angle(&Vector3::y_axis(), yaw_deg.to_radians());
    let target = Vector3::from(cfg.target_um);
    let centre = [f64::from(cfg.image_width) / 2.0, f64::from(cfg.image_height) / 2.0];
    let offset = -(r * target);
    let s = cfg.magnification_px_per_um;
    let mut m = Matrix2x4::zeros();
    for row in 0..2 {
        for c in 0..3 {
            m[(row, c)] = s * r[(row, c)];
        }
        m[(row, 3)] = s * offset[row] + centre[row];
    }
    m
}

/// Builds the ground-truth camera pair.
pub fn make_rig_from(cfg: &RigConfig) -> Result<StereoRig<f64>, SimError> {
    if !(cfg.magnification_px_per_um > 0.0) {
        return Err(SimError::InvalidConfig("magnification must be positive".into()));
    }
    let half = cfg.vergence_deg / 2.0;
    let left = AffineProjection::new(camera_matrix(cfg, -half, cfg.roll_deg[0]))?;
    let right = AffineProjection::new(camera_matrix(cfg, half, cfg.roll_deg[1]))?;
    Ok(StereoRig::new(left, right)?)
}

/// Camera pair with the default image size and target.
pub fn make_rig(
    magnification_px_per_um: f64,
    vergence_deg: f64,
    roll_deg: [f64; 2],
) -> Result<StereoRig<f64>, SimError> {
    make_rig_from(&RigConfig {
        magnification_px_per_um,
        vergence_deg,
        roll_deg,
        ..RigConfig::default()
    })
}

/// Van der Corput radical inverse of `index` in `base`.
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut result = 0.0;
    let mut scale = inv;
    while index > 0 {
        result += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    result
}

/// Point `index` of the 3D Halton sequence, in `[0, 1)³`.
fn halton3(index: u64) -> [f64; 3] {
    [
        radical_inverse(index, 2),
        radical_inverse(index, 3),
        radical_inverse(index, 5),
    ]
}

/// Tool landmark offsets in the tool frame: two jaw tips 0.5 mm apart and a
/// shaft point 3 mm behind them.
const TOOL_LANDMARKS: [[f64; 3]; 3] = [[-250.0, 0.0, 0.0], [250.0, 0.0, 0.0], [0.0, -3000.0, 500.0]];

/// Noiseless data for one synthetic correspondence set.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceTruth {
    pub points: Vec<Point3<f64>>,
    pub left: Vec<Point2<f64>>,
    pub right: Vec<Point2<f64>>,
    /// `true` where the pixels were replaced by gross errors.
    pub outlier: Vec<bool>,
}

/// Dense stereo matches of the tissue surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSample {
    pub matches: Vec<PixelMatch<f64>>,
    /// True surface point behind each match.
    pub points: Vec<Point3<f64>>,
    /// Noiseless left pixel of each true point.
    pub left: Vec<Point2<f64>>,
    /// `true` where the right pixel was pushed along its epipolar line.
    pub outlier: Vec<bool>,
}

/// Landmark stream after the camera has moved.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationScene {
    /// Camera-to-robot transform to be recovered.
    pub truth: RigidTransform<f64>,
    /// Reconstructed (with `noise_um` added) and measured landmarks per frame.
    pub frames: Vec<Frame<f64>>,
    /// Noisy pixel observations of each landmark through the moved rig.
    pub pixels: Vec<Vec<PixelMatch<f64>>>,
}

/// A generated scene: ground-truth rig and tool trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScene {
    pub config: SceneConfig,
    pub seed: RngSeed,
    pub rig: StereoRig<f64>,
    /// `trajectory[t][k]`: landmark `k` in frame `t`, robot frame, µm.
    pub trajectory: Vec<Vec<Point3<f64>>>,
}

const STREAM_TRAJECTORY: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_OUTLIERS: u64 = 3;
const STREAM_SURFACE: u64 = 4;
const STREAM_REGISTRATION: u64 = 5;

impl SimScene {
    pub fn new(config: SceneConfig, seed: RngSeed) -> Result<Self, SimError> {
        config.validate()?;
        let rig = make_rig_from(&config.rig)?;
        let trajectory = tool_trajectory(
            &config,
            config.trajectory.frames,
            config.trajectory.keypoints,
            0,
            seed.derive(STREAM_TRAJECTORY),
        );
        Ok(Self {
            config,
            seed,
            rig,
            trajectory,
        })
    }

    /// Projects the trajectory through the rig, then adds kinematic and pixel
    /// noise and replaces exactly `⌊outlier_fraction · |C|⌋` pixel pairs by
    /// gross errors of 50–500 px in random directions.
    pub fn generate_correspondences(&self) -> Result<(CorrespondenceSet<f64>, CorrespondenceTruth), SimError> {
        let noise = &self.config.noise;
        let mut rng = self.seed.derive(STREAM_NOISE).rng();
        let pixel = Normal::new(0.0, noise.sigma_u_px).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let kin = Normal::new(0.0, noise.sigma_x_um).map_err(|e| SimError::InvalidConfig(e.to_string()))?;

        let mut items = Vec::new();
        let mut truth = CorrespondenceTruth {
            points: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            outlier: Vec::new(),
        };
        for (t, frame) in self.trajectory.iter().enumerate() {
            for (k, x) in frame.iter().enumerate() {
                let (ul, ur) = self.rig.project(x);
                truth.points.push(*x);
                truth.left.push(ul);
                truth.right.push(ur);
                let mut jitter2 =
                    |p: Point2<f64>| Point2::new(p.u + pixel.sample(&mut rng), p.v + pixel.sample(&mut rng));
                let (nl, nr) = (jitter2(ul), jitter2(ur));
                let nx = Point3::new(
                    x.x + kin.sample(&mut rng),
                    x.y + kin.sample(&mut rng),
                    x.z + kin.sample(&mut rng),
                );
                items.push(Correspondence {
                    x: nx,
                    u_left: nl,
                    u_right: nr,
                    frame: t + 1,
                    keypoint: k + 1,
                });
            }
        }
        let n = items.len();
        let count = (noise.outlier_fraction * n as f64).floor() as usize;
        truth.outlier = vec![false; n];
        let mut rng = self.seed.derive(STREAM_OUTLIERS).rng();
        let mut picked: Vec<usize> = sample(&mut rng, n, count).into_vec();
        picked.sort_unstable();
        for i in picked {
            truth.outlier[i] = true;
            let mut gross = |p: Point2<f64>| {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let mag = rng.random_range(50.0..500.0);
                Point2::new(p.u + mag * angle.cos(), p.v + mag * angle.sin())
            };
            items[i].u_left = gross(items[i].u_left);
            items[i].u_right = gross(items[i].u_right);
        }
        let set = CorrespondenceSet::new(items, self.trajectory.len(), self.config.trajectory.keypoints)?;
        Ok((set, truth))
    }

    /// Height of the analytic surface at robot `(x, y)`.
    pub fn surface_height(&self, x: f64, y: f64) -> f64 {
        let [tx, ty, tz] = self.config.rig.target_um;
        let (dx, dy) = (x - tx, y - ty);
        tz + match self.config.surface.shape {
            SurfaceShape::Plane { gx, gy } => gx * dx + gy * dy,
            SurfaceShape::SphereCap { radius_um } => (radius_um * radius_um - dx * dx - dy * dy).sqrt() - radius_um,
            SurfaceShape::HeightField {
                amplitude_um,
                wavelength_um,
            } => {
                let w = std::f64::consts::TAU / wavelength_um;
                amplitude_um * (w * dx).sin() * (w * dy).cos()
            }
        }
    }

    /// Samples `n_points` surface points uniformly over the patch, projects
    /// them into both images and perturbs the pixels by `matcher_noise_px`.
    /// A `surface.outlier_fraction` share of the matches has its right pixel
    /// moved 20–100 px along the epipolar line, which keeps the epipolar
    /// constraint but corrupts depth.
    pub fn sample_surface(&self, n_points: usize, matcher_noise_px: f64) -> Result<SurfaceSample, SimError> {
        if !(matcher_noise_px >= 0.0) {
            return Err(SimError::InvalidConfig("matcher noise must be non-negative".into()));
        }
        let mut rng = self.seed.derive(STREAM_SURFACE).rng();
        let half = self.config.surface.patch_um / 2.0;
        let [tx, ty, _] = self.config.rig.target_um;
        let noise = Normal::new(0.0, matcher_noise_px).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let mut out = SurfaceSample {
            matches: Vec::with_capacity(n_points),
            points: Vec::with_capacity(n_points),
            left: Vec::with_capacity(n_points),
            outlier: vec![false; n_points],
        };
        for _ in 0..n_points {
            let x = tx + rng.random_range(-half..half);
            let y = ty + rng.random_range(-half..half);
            let p = Point3::new(x, y, self.surface_height(x, y));
            let (ul, ur) = self.rig.project(&p);
            out.points.push(p);
            out.left.push(ul);
            let mut jitter = |q: Point2<f64>| Point2::new(q.u + noise.sample(&mut rng), q.v + noise.sample(&mut rng));
            out.matches.push((jitter(ul), jitter(ur)));
        }
        let count = (self.config.surface.outlier_fraction * n_points as f64).floor() as usize;
        let f = &self.rig.fundamental;
        let dir = Point2::new(-f.b, f.a);
        let len = (dir.u * dir.u + dir.v * dir.v).sqrt();
        let mut picked: Vec<usize> = sample(&mut rng, n_points, count).into_vec();
        picked.sort_unstable();
        for i in picked {
            let shift = rng.random_range(20.0..100.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let m = &mut out.matches[i];
            m.1 = Point2::new(m.1.u + shift * dir.u / len, m.1.v + shift * dir.v / len);
            out.outlier[i] = true;
        }
        Ok(out)
    }

    /// Moves the camera by a rigid motion and streams `frames` frames of tool
    /// landmarks. Reconstructions are the landmarks expressed in the moved
    /// camera's (stale) frame plus isotropic noise; the recoverable
    /// transform maps them back onto the robot frame.
    pub fn registration_scene(&self, frames: usize) -> Result<RegistrationScene, SimError> {
        let cfg = &self.config.registration;
        let seed = self.seed.derive(STREAM_REGISTRATION);
        let mut rng = seed.derive(0).rng();
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let dir = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        // motion about the target so the tool stays in view
        let target = Vector3::from(self.config.rig.target_um);
        let spin = RigidTransform::from_axis_angle(axis, cfg.motion_deg.to_radians(), Vector3::zeros());
        let to_target = RigidTransform::from_axis_angle(Vector3::zeros(), 0.0, target);
        let motion = to_target
            .compose(&spin)
            .compose(&to_target.inverse())
            .compose(&RigidTransform::from_axis_angle(
                Vector3::zeros(),
                0.0,
                dir * cfg.motion_um,
            ));

        let landmarks = tool_trajectory(&self.config, frames, cfg.keypoints, 1 << 16, seed.derive(1));
        let noise = Normal::new(0.0, cfg.noise_um).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let pixel =
            Normal::new(0.0, self.config.noise.sigma_u_px).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let mut rng = seed.derive(2).rng();
        let mut out = RegistrationScene {
            truth: motion.inverse(),
            frames: Vec::with_capacity(frames),
            pixels: Vec::with_capacity(frames),
        };
        for frame in landmarks {
            let mut rec = Vec::with_capacity(frame.len());
            let mut pix = Vec::with_capacity(frame.len());
            for x in &frame {
                let seen = motion.apply(x);
                rec.push(Point3::new(
                    seen.x + noise.sample(&mut rng),
                    seen.y + noise.sample(&mut rng),
                    seen.z + noise.sample(&mut rng),
                ));
                let (ul, ur) = self.rig.project(&seen);
                let mut jitter =
                    |q: Point2<f64>| Point2::new(q.u + pixel.sample(&mut rng), q.v + pixel.sample(&mut rng));
                pix.push((jitter(ul), jitter(ur)));
            }
            out.frames.push(Frame {
                reconstructed: rec,
                measured: frame,
            });
            out.pixels.push(pix);
        }
        Ok(out)
    }
}

/// Tool landmarks for `frames` frames: the tool base follows a Halton lattice
/// over the trajectory box (starting at lattice index `offset + 1`), and the
/// tool is tilted by a random rotation of at most `max_tilt_deg`.
fn tool_trajectory(
    cfg: &SceneConfig,
    frames: usize,
    keypoints: usize,
    offset: u64,
    seed: RngSeed,
) -> Vec<Vec<Point3<f64>>> {
    let mut rng = seed.rng();
    let target = Vector3::from(cfg.rig.target_um);
    let extent = Vector3::from(cfg.trajectory.extent_um);
    (0..frames)
        .map(|t| {
            let h = halton3(offset + t as u64 + 1);
            let base = target
                + Vector3::new(
                    (h[0] - 0.5) * extent.x,
                    (h[1] - 0.5) * extent.y,
                    (h[2] - 0.5) * extent.z,
                );
            let axis = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let tilt = rng.random_range(0.0..cfg.trajectory.max_tilt_deg.to_radians().max(f64::MIN_POSITIVE));
            let pose = RigidTransform::from_axis_angle(axis, tilt, base);
            TOOL_LANDMARKS[..keypoints]
                .iter()
                .map(|o| pose.apply(&Point3::new(o[0], o[1], o[2])))
                .collect()
        })
        .collect()
}
