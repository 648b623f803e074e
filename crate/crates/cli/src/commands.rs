use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use affine_stereo::calibration::{bundle_adjust, dlt_affine_ransac, AffineProjection, CorrespondenceSet};
use affine_stereo::io::{
    self, CalibrationDocument, InlierCounts, PlyCloud, PointTable, SurfaceDocument, TransformDocument,
};
use affine_stereo::keypoints::extract_keypoint;
use affine_stereo::registration::{register_accumulated, Frame, Registration, ResidualStats};
use affine_stereo::sim::{RegistrationScene, SceneConfig, SimScene, SurfaceSample};
use affine_stereo::stereo::{filter_epipolar, triangulate_set};
use affine_stereo::surface::fit_surface;
use affine_stereo::{Point2, Point3, RngSeed};
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{input, CliError};
use crate::files::{open, read_json, write_atomic, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Dlt,
    #[default]
    Ba,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random draw.
    #[arg(long, default_value_t = 0, global = true)]
    pub seed: u64,
    /// JSON file with per-stage settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn csv_writer<T>(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<T, io::FormatError>) -> Result<(), CliError> {
    write_atomic(path, |w| {
        f(w)?;
        Ok(())
    })
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Scene description; built-in defaults when omitted.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub const CORRESPONDENCES: &str = "correspondences.csv";
pub const RIG_TRUTH: &str = "rig_truth.json";
pub const MATCHES: &str = "matches.csv";
pub const SURFACE_TRUTH: &str = "surface_truth.ply";
pub const REG_RECONSTRUCTED: &str = "registration_reconstructed.csv";
pub const REG_MEASURED: &str = "registration_measured.csv";
pub const REG_TRUTH: &str = "registration_truth.json";

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub correspondences: usize,
    pub correspondence_outliers: usize,
    pub matches: usize,
    pub match_outliers: usize,
    pub registration_frames: usize,
    #[serde(skip)]
    pub scene: SimScene,
    #[serde(skip)]
    pub correspondence_outlier_mask: Vec<bool>,
    #[serde(skip)]
    pub surface: SurfaceSample,
    #[serde(skip)]
    pub registration: RegistrationScene,
}

pub fn load_scene(path: Option<&Path>) -> Result<SceneConfig, CliError> {
    let cfg: SceneConfig = match path {
        Some(p) => read_json(p)?,
        None => SceneConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn frames_table(frames: &[Frame<f64>], pick: impl Fn(&Frame<f64>) -> &Vec<Point3<f64>>) -> PointTable {
    let mut table = PointTable {
        points: Vec::new(),
        frames: Some(Vec::new()),
    };
    for (t, f) in frames.iter().enumerate() {
        for p in pick(f) {
            table.points.push(*p);
            table.frames.as_mut().expect("framed table").push(t + 1);
        }
    }
    table
}

pub fn simulate(args: &SimulateArgs, common: &Common) -> Result<SimulateReport, CliError> {
    let config = load_scene(args.scene.as_deref())?;
    let scene = SimScene::new(config, RngSeed(common.seed))?;
    let (set, truth) = scene.generate_correspondences()?;
    let surface = scene.sample_surface(config.surface.samples, config.surface.matcher_noise_px)?;
    let registration = scene.registration_scene(config.registration.frames)?;
    let out = &args.out;

    write_json(&out.join("scene.json"), &config)?;
    csv_writer(&out.join(CORRESPONDENCES), |w| io::write_correspondences(w, &set))?;
    let all = InlierCounts {
        total: set.len(),
        left: set.len(),
        right: set.len(),
        used: set.len(),
    };
    let mut rig_doc = CalibrationDocument::from_projections(&scene.rig.left, &scene.rig.right, all)?;
    rig_doc.stage = "truth".into();
    write_json(&out.join(RIG_TRUTH), &rig_doc)?;
    csv_writer(&out.join(MATCHES), |w| io::write_matches(w, &surface.matches))?;
    let truth_cloud = PlyCloud {
        points: surface.points.clone(),
        pixels: Some(surface.left.clone()),
        comments: vec!["source simulate".into(), format!("seed {}", common.seed)],
    };
    write_atomic(&out.join(SURFACE_TRUTH), |w| Ok(io::write_ply_cloud(w, &truth_cloud)?))?;
    let rec = frames_table(&registration.frames, |f| &f.reconstructed);
    let meas = frames_table(&registration.frames, |f| &f.measured);
    csv_writer(&out.join(REG_RECONSTRUCTED), |w| io::write_points(w, &rec))?;
    csv_writer(&out.join(REG_MEASURED), |w| io::write_points(w, &meas))?;
    let truth_reg = Registration {
        stats: ResidualStats::compute(&registration.truth, &rec.points, &meas.points),
        transform: registration.truth,
    };
    write_json(
        &out.join(REG_TRUTH),
        &TransformDocument::from_registration(&truth_reg, false, None),
    )?;

    Ok(SimulateReport {
        correspondences: set.len(),
        correspondence_outliers: truth.outlier.iter().filter(|o| **o).count(),
        matches: surface.matches.len(),
        match_outliers: surface.outlier.iter().filter(|o| **o).count(),
        registration_frames: registration.frames.len(),
        scene,
        correspondence_outlier_mask: truth.outlier,
        surface,
        registration,
    })
}

// ------------------------------------------------------------------ detect

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    /// Heatmap file, one per keypoint channel, in channel order.
    #[arg(long = "heatmap", required = true)]
    pub heatmaps: Vec<PathBuf>,
    /// Output keypoint CSV (`channel,u_px,v_px,peak`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct DetectReport {
    pub channels: usize,
}

pub fn detect(args: &DetectArgs) -> Result<DetectReport, CliError> {
    let mut found = Vec::with_capacity(args.heatmaps.len());
    for (i, path) in args.heatmaps.iter().enumerate() {
        let hm = io::read_heatmap(open(path)?).map_err(|e| input(&path.display().to_string(), e))?;
        let d = extract_keypoint(&hm, i + 1).map_err(|e| input(&path.display().to_string(), e))?;
        found.push(affine_stereo::keypoints::KeypointDetection {
            location: d.location.cast::<f64>(),
            peak_value: f64::from(d.peak_value),
            channel_index: d.channel_index,
        });
    }
    csv_writer(&args.out, |w| io::write_keypoints(w, &found))?;
    Ok(DetectReport { channels: found.len() })
}

// --------------------------------------------------------------- calibrate

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    /// Correspondence CSV (`t,k,x_um,y_um,z_um,ul_px,vl_px,ur_px,vr_px`).
    #[arg(long)]
    pub correspondences: PathBuf,
    /// Output calibration document (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Stop after RANSAC-DLT or continue with bundle adjustment.
    #[arg(long, value_enum, default_value_t = Stage::Ba)]
    pub stage: Stage,
}

#[derive(Debug, Serialize)]
pub struct CalibrateReport {
    pub stage: Stage,
    pub inliers: InlierCounts,
    pub reprojection_rmse_px: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle_iterations: Option<usize>,
    #[serde(skip)]
    pub inlier_mask: Vec<bool>,
}

fn reprojection_rmse(set: &CorrespondenceSet<f64>, left: &AffineProjection<f64>, right: &AffineProjection<f64>) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let sq: f64 = set
        .items()
        .iter()
        .map(|c| left.project(&c.x).distance(&c.u_left).powi(2) + right.project(&c.x).distance(&c.u_right).powi(2))
        .sum();
    (sq / (2 * set.len()) as f64).sqrt()
}

pub fn calibrate(args: &CalibrateArgs, common: &Common) -> Result<CalibrateReport, CliError> {
    let cfg = PipelineConfig::load(common.config.as_deref())?;
    let set = io::read_correspondences(open(&args.correspondences)?)
        .map_err(|e| input(&args.correspondences.display().to_string(), e))?;
    let seed = RngSeed(common.seed);
    let ransac_cfg = |stream| affine_stereo::calibration::RansacConfig {
        seed: seed.derive(stream),
        ..cfg.ransac
    };
    let (left, in_l) = dlt_affine_ransac(&set.left_pairs(), &ransac_cfg(1))?;
    let (right, in_r) = dlt_affine_ransac(&set.right_pairs(), &ransac_cfg(2))?;
    let mask: Vec<bool> = in_l.iter().zip(&in_r).map(|(a, b)| *a && *b).collect();
    let inliers = InlierCounts {
        total: set.len(),
        left: in_l.iter().filter(|v| **v).count(),
        right: in_r.iter().filter(|v| **v).count(),
        used: mask.iter().filter(|v| **v).count(),
    };
    let kept = set.filtered(&mask);

    let (doc, rmse, iterations) = match args.stage {
        Stage::Dlt => {
            let rmse = reprojection_rmse(&kept, &left, &right);
            (
                CalibrationDocument::from_projections(&left, &right, inliers)?,
                rmse,
                None,
            )
        }
        Stage::Ba => {
            let cal = bundle_adjust(&kept, &left, &right, &cfg.bundle)?;
            cal.check_converged()?;
            let rmse = reprojection_rmse(&kept, &cal.left.projection, &cal.right.projection);
            let doc = CalibrationDocument::from_calibration(&cal, (&left, &right), inliers, rmse)?;
            (doc, rmse, Some(cal.report.iterations))
        }
    };
    write_json(&args.out, &doc)?;
    Ok(CalibrateReport {
        stage: args.stage,
        inliers,
        reprojection_rmse_px: rmse,
        bundle_iterations: iterations,
        inlier_mask: mask,
    })
}

// ------------------------------------------------------------- triangulate

#[derive(Debug, Clone, Args)]
pub struct TriangulateArgs {
    /// Calibration document written by `calibrate`.
    #[arg(long)]
    pub calibration: PathBuf,
    /// Match CSV (`ul_px,vl_px,ur_px,vr_px`).
    #[arg(long)]
    pub matches: PathBuf,
    /// Output point cloud (ASCII PLY).
    #[arg(long)]
    pub out: PathBuf,
    /// Epipolar filtering threshold, px.
    #[arg(long)]
    pub threshold_px: Option<f64>,
    /// Which cameras' fundamental matrix filters the matches.
    #[arg(long, value_enum, default_value_t = Stage::Ba)]
    pub stage: Stage,
}

#[derive(Debug, Serialize)]
pub struct TriangulateReport {
    pub matches: usize,
    pub kept: usize,
    pub failed: usize,
    pub points: usize,
    pub threshold_px: f64,
    /// Index into the match file of every output point.
    #[serde(skip)]
    pub source_indices: Vec<usize>,
}

pub fn triangulate(args: &TriangulateArgs, common: &Common) -> Result<TriangulateReport, CliError> {
    let cfg = PipelineConfig::load(common.config.as_deref())?;
    let threshold = args.threshold_px.unwrap_or(cfg.epipolar.threshold_px);
    let doc: CalibrationDocument = read_json(&args.calibration)?;
    let rig = doc.to_rig()?;
    let filter_rig = match args.stage {
        Stage::Ba => rig,
        Stage::Dlt => doc.dlt_rig()?,
    };
    let matches = io::read_matches(open(&args.matches)?).map_err(|e| input(&args.matches.display().to_string(), e))?;
    let keep = filter_epipolar(&matches, &filter_rig.fundamental, threshold)?;
    let kept_idx: Vec<usize> = (0..matches.len()).filter(|&i| keep[i]).collect();
    let kept: Vec<_> = kept_idx.iter().map(|&i| matches[i]).collect();
    let cloud = triangulate_set(&rig, &kept);
    let source_indices: Vec<usize> = cloud.source_indices.iter().map(|&i| kept_idx[i]).collect();

    let ply = PlyCloud {
        points: cloud.points.clone(),
        pixels: Some(cloud.source_indices.iter().map(|&i| kept[i].0).collect()),
        comments: vec![
            "source triangulate".into(),
            format!("calibration {} stage {}", file_name(&args.calibration), doc.stage),
            format!("rig left {:?}", doc.left.matrix),
            format!("rig right {:?}", doc.right.matrix),
            format!("epipolar threshold_px {threshold} filter_stage {:?}", args.stage).to_lowercase(),
        ],
    };
    write_atomic(&args.out, |w| Ok(io::write_ply_cloud(w, &ply)?))?;
    Ok(TriangulateReport {
        matches: matches.len(),
        kept: kept.len(),
        failed: cloud.failed,
        points: cloud.points.len(),
        threshold_px: threshold,
        source_indices,
    })
}

// ------------------------------------------------------------- fit-surface

#[derive(Debug, Clone, Args)]
pub struct FitSurfaceArgs {
    /// Point cloud (ASCII PLY), with `u_left v_left` vertex properties
    /// unless `--pixels` is given.
    #[arg(long)]
    pub cloud: PathBuf,
    /// Pixel CSV (`u_px,v_px`), one row per cloud vertex.
    #[arg(long)]
    pub pixels: Option<PathBuf>,
    /// Output surface document (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a triangle mesh sampled from the surface.
    #[arg(long)]
    pub emit_mesh: Option<PathBuf>,
    /// Mesh lattice resolution per side.
    #[arg(long, default_value_t = 64)]
    pub mesh_res: usize,
}

#[derive(Debug, Serialize)]
pub struct FitSurfaceReport {
    pub points: usize,
    pub rejected: usize,
    pub bending_energy: f64,
    /// Mean ℓ1 residual of the surviving points after the refit, µm.
    pub mean_residual_um: f64,
    #[serde(skip)]
    pub rejected_mask: Vec<bool>,
}

pub fn fit_surface_cmd(args: &FitSurfaceArgs, common: &Common) -> Result<FitSurfaceReport, CliError> {
    let cfg = PipelineConfig::load(common.config.as_deref())?;
    let cloud = io::read_ply_cloud(open(&args.cloud)?).map_err(|e| input(&args.cloud.display().to_string(), e))?;
    let pixels = match (&args.pixels, cloud.pixels) {
        (Some(p), _) => io::read_pixels(open(p)?).map_err(|e| input(&p.display().to_string(), e))?,
        (None, Some(px)) => px,
        (None, None) => {
            return Err(CliError::Input(format!(
                "{} has no u_left/v_left properties; pass --pixels",
                args.cloud.display()
            )))
        }
    };
    if pixels.len() != cloud.points.len() {
        return Err(CliError::Input(format!(
            "{} pixels for {} points",
            pixels.len(),
            cloud.points.len()
        )));
    }
    let pairs: Vec<(Point2<f64>, Point3<f64>)> = pixels.into_iter().zip(cloud.points).collect();
    let fit = fit_surface(&pairs, &cfg.surface)?;
    write_json(&args.out, &SurfaceDocument::from_surface(&fit.surface))?;
    if let Some(mesh) = &args.emit_mesh {
        let res = args.mesh_res.max(2);
        let lattice = fit.surface.sample_grid(res);
        let comments = vec!["source fit-surface".into(), format!("surface {}", file_name(&args.out))];
        write_atomic(mesh, |w| Ok(io::write_ply_mesh(w, &lattice, res, &comments)?))?;
    }
    let survivors: Vec<f64> = fit
        .residuals
        .iter()
        .zip(&fit.rejected)
        .filter(|(_, r)| !**r)
        .map(|(v, _)| *v)
        .collect();
    Ok(FitSurfaceReport {
        points: pairs.len(),
        rejected: fit.rejected_count(),
        bending_energy: fit.surface.bending_energy(),
        mean_residual_um: survivors.iter().sum::<f64>() / survivors.len().max(1) as f64,
        rejected_mask: fit.rejected,
    })
}

// ---------------------------------------------------------------- register

#[derive(Debug, Clone, Args)]
pub struct RegisterArgs {
    /// Reconstructed landmarks, camera frame (`x,y,z` or `frame,x,y,z`).
    #[arg(long)]
    pub reconstructed: PathBuf,
    /// Matching robot-frame landmarks, same layout.
    #[arg(long)]
    pub measured: PathBuf,
    /// Output transform document (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Number of most recent frames to accumulate.
    #[arg(long)]
    pub window: Option<usize>,
    /// Minimise the sum of residual norms instead of their squares.
    #[arg(long)]
    pub robust: bool,
    /// Also write the residual curve over window sizes (CSV).
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub frames_used: usize,
    pub residual_rmse_um: f64,
}

#[derive(Debug, Serialize)]
pub struct RegisterReport {
    pub pairs: usize,
    pub frames: usize,
    pub frames_used: usize,
    pub robust: bool,
    pub residual_rmse_um: f64,
    pub curve: Vec<CurveRow>,
    #[serde(skip)]
    pub transforms: Vec<affine_stereo::registration::RigidTransform<f64>>,
}

fn group_frames(rec: PointTable, meas: PointTable) -> Result<Vec<Frame<f64>>, CliError> {
    if rec.points.len() != meas.points.len() {
        return Err(CliError::Input(format!(
            "{} reconstructed points but {} measured",
            rec.points.len(),
            meas.points.len()
        )));
    }
    match (rec.frames, meas.frames) {
        (None, None) => Ok(vec![Frame {
            reconstructed: rec.points,
            measured: meas.points,
        }]),
        (Some(fa), Some(fb)) if fa == fb => {
            let mut grouped: BTreeMap<usize, Frame<f64>> = BTreeMap::new();
            for ((f, a), b) in fa.into_iter().zip(rec.points).zip(meas.points) {
                let e = grouped.entry(f).or_insert_with(|| Frame {
                    reconstructed: Vec::new(),
                    measured: Vec::new(),
                });
                e.reconstructed.push(a);
                e.measured.push(b);
            }
            Ok(grouped.into_values().collect())
        }
        _ => Err(CliError::Input(
            "reconstructed and measured files must carry identical frame columns".into(),
        )),
    }
}

pub fn register_cmd(args: &RegisterArgs, common: &Common) -> Result<RegisterReport, CliError> {
    let cfg = PipelineConfig::load(common.config.as_deref())?;
    let window = args.window.unwrap_or(cfg.registration.window);
    if window == 0 {
        return Err(CliError::Input("--window must be at least 1".into()));
    }
    let robust = args.robust || cfg.registration.robust;
    let read = |p: &PathBuf| io::read_points(open(p)?).map_err(|e| input(&p.display().to_string(), e));
    let frames = group_frames(read(&args.reconstructed)?, read(&args.measured)?)?;
    let pairs = frames.iter().map(|f| f.reconstructed.len()).sum();
    let acc = register_accumulated(&frames, window, robust.then_some(&cfg.registration.robust_config))?;

    let doc = TransformDocument::from_registration(&acc.registration, robust, Some(acc.frames_used));
    write_json(&args.out, &doc)?;
    let curve: Vec<CurveRow> = acc
        .curve
        .iter()
        .map(|c| CurveRow {
            frames_used: c.frames_used,
            residual_rmse_um: c.residual_rmse,
        })
        .collect();
    if let Some(path) = &args.curve {
        write_curve(path, &curve)?;
    }
    Ok(RegisterReport {
        pairs,
        frames: frames.len(),
        frames_used: acc.frames_used,
        robust,
        residual_rmse_um: acc.registration.stats.rmse,
        curve,
        transforms: acc.curve.iter().map(|c| c.transform).collect(),
    })
}

fn write_curve<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        for r in rows {
            out.serialize(r).map_err(|e| input("curve", e))?;
        }
        out.flush().map_err(|e| input("curve", e))
    })
}

// ---------------------------------------------------------------- pipeline

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Scene description; built-in defaults when omitted.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Output directory for every artifact and `summary.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Write `mesh.ply` next to the surface.
    #[arg(long)]
    pub emit_mesh: bool,
    /// Mesh lattice resolution per side.
    #[arg(long, default_value_t = 64)]
    pub mesh_res: usize,
    /// Use robust registration.
    #[arg(long)]
    pub robust: bool,
    /// Registration window in frames.
    #[arg(long)]
    pub window: Option<usize>,
    /// Epipolar filtering threshold, px.
    #[arg(long)]
    pub threshold_px: Option<f64>,
    /// Stage whose cameras filter the surface matches.
    #[arg(long, value_enum, default_value_t = Stage::Ba)]
    pub stage: Stage,
}

#[derive(Debug, Serialize)]
pub struct CalibrationSummary {
    #[serde(flatten)]
    pub report: CalibrateReport,
    pub outliers_injected: usize,
    pub outliers_excluded: usize,
    pub left_relative_error: f64,
    pub right_relative_error: f64,
}

#[derive(Debug, Serialize)]
pub struct TriangulationSummary {
    #[serde(flatten)]
    pub report: TriangulateReport,
    /// RMSE against the true surface points over kept, uncorrupted matches.
    pub rmse_vs_truth_um: f64,
}

#[derive(Debug, Serialize)]
pub struct SurfaceSummary {
    #[serde(flatten)]
    pub report: FitSurfaceReport,
    pub outliers_in_cloud: usize,
    pub outliers_rejected: usize,
    /// RMS distance of the fitted surface from the true points.
    pub rms_vs_truth_um: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorCurveRow {
    pub frames_used: usize,
    pub residual_rmse_um: f64,
    pub rotation_error_deg: f64,
    pub translation_error_um: f64,
    pub mean_displacement_um: f64,
}

#[derive(Debug, Serialize)]
pub struct RegistrationSummary {
    pub pairs: usize,
    pub frames: usize,
    pub frames_used: usize,
    pub robust: bool,
    pub residual_rmse_um: f64,
    pub error_curve: Vec<ErrorCurveRow>,
}

#[derive(Debug, Serialize)]
pub struct PipelineSummary {
    pub seed: u64,
    pub simulation: SimulateReport,
    pub calibration: CalibrationSummary,
    pub triangulation: TriangulationSummary,
    pub surface: SurfaceSummary,
    pub registration: RegistrationSummary,
}

pub const SUMMARY: &str = "summary.json";

pub fn pipeline(args: &PipelineArgs, common: &Common) -> Result<PipelineSummary, CliError> {
    let out = &args.out;
    let sim = simulate(
        &SimulateArgs {
            scene: args.scene.clone(),
            out: out.clone(),
        },
        common,
    )?;

    let calibration = out.join("calibration.json");
    let cal = calibrate(
        &CalibrateArgs {
            correspondences: out.join(CORRESPONDENCES),
            out: calibration.clone(),
            stage: Stage::Ba,
        },
        common,
    )?;
    let doc: CalibrationDocument = read_json(&calibration)?;
    let rig = doc.to_rig()?;
    let outliers = &sim.correspondence_outlier_mask;
    let calibration = CalibrationSummary {
        outliers_injected: outliers.iter().filter(|o| **o).count(),
        outliers_excluded: outliers
            .iter()
            .zip(&cal.inlier_mask)
            .filter(|(o, k)| **o && !**k)
            .count(),
        left_relative_error: rig.left.relative_error(&sim.scene.rig.left),
        right_relative_error: rig.right.relative_error(&sim.scene.rig.right),
        report: cal,
    };

    let cloud_path = out.join("cloud.ply");
    let tri = triangulate(
        &TriangulateArgs {
            calibration: out.join("calibration.json"),
            matches: out.join(MATCHES),
            out: cloud_path.clone(),
            threshold_px: args.threshold_px,
            stage: args.stage,
        },
        common,
    )?;
    let cloud = io::read_ply_cloud(open(&cloud_path)?)?;
    let truth = &sim.surface;
    let clean: Vec<(usize, usize)> = tri
        .source_indices
        .iter()
        .enumerate()
        .filter(|(_, &j)| !truth.outlier[j])
        .map(|(i, &j)| (i, j))
        .collect();
    let rms = |d: &dyn Fn(usize, usize) -> f64| {
        (clean.iter().map(|&(i, j)| d(i, j).powi(2)).sum::<f64>() / clean.len().max(1) as f64).sqrt()
    };
    let triangulation = TriangulationSummary {
        rmse_vs_truth_um: rms(&|i, j| cloud.points[i].distance(&truth.points[j])),
        report: tri,
    };

    let surface_path = out.join("surface.json");
    let fit = fit_surface_cmd(
        &FitSurfaceArgs {
            cloud: cloud_path,
            pixels: None,
            out: surface_path.clone(),
            emit_mesh: args.emit_mesh.then(|| out.join("mesh.ply")),
            mesh_res: args.mesh_res,
        },
        common,
    )?;
    let surface = read_json::<SurfaceDocument>(&surface_path)?.to_surface()?;
    let pixels = cloud.pixels.as_ref().expect("triangulate writes pixels");
    let in_cloud: Vec<bool> = triangulation
        .report
        .source_indices
        .iter()
        .map(|&j| truth.outlier[j])
        .collect();
    let surface = SurfaceSummary {
        outliers_in_cloud: in_cloud.iter().filter(|o| **o).count(),
        outliers_rejected: in_cloud
            .iter()
            .zip(&fit.rejected_mask)
            .filter(|(o, r)| **o && **r)
            .count(),
        rms_vs_truth_um: rms(&|i, j| {
            surface
                .evaluate(&pixels[i])
                .map(|p| p.distance(&truth.points[j]))
                .unwrap_or(f64::NAN)
        }),
        report: fit,
    };

    let reg = register_cmd(
        &RegisterArgs {
            reconstructed: out.join(REG_RECONSTRUCTED),
            measured: out.join(REG_MEASURED),
            out: out.join("transform.json"),
            window: args.window,
            robust: args.robust,
            curve: None,
        },
        common,
    )?;
    let reg_truth = read_json::<TransformDocument>(&out.join(REG_TRUTH))?.to_transform()?;
    let probes: Vec<Point3<f64>> = sim
        .registration
        .frames
        .iter()
        .flat_map(|f| f.measured.clone())
        .collect();
    let error_curve: Vec<ErrorCurveRow> = reg
        .curve
        .iter()
        .zip(&reg.transforms)
        .map(|(c, t)| {
            let e = affine_stereo::registration::alignment_error(t, &reg_truth, &probes);
            ErrorCurveRow {
                frames_used: c.frames_used,
                residual_rmse_um: c.residual_rmse_um,
                rotation_error_deg: e.rotation_rad.to_degrees(),
                translation_error_um: e.translation,
                mean_displacement_um: e.mean_displacement,
            }
        })
        .collect();
    write_curve(&out.join("registration_error_curve.csv"), &error_curve)?;
    let registration = RegistrationSummary {
        pairs: reg.pairs,
        frames: reg.frames,
        frames_used: reg.frames_used,
        robust: reg.robust,
        residual_rmse_um: reg.residual_rmse_um,
        error_curve,
    };

    let summary = PipelineSummary {
        seed: common.seed,
        simulation: sim,
        calibration,
        triangulation,
        surface,
        registration,
    };
    write_json(&out.join(SUMMARY), &summary)?;
    Ok(summary)
}
