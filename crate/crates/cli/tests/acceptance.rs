use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use affine_stereo::calibration::{
    bundle_adjust, compose, dlt_affine, dlt_affine_ransac, resect, AffineProjection, BundleConfig, RansacConfig,
};
use affine_stereo::keypoints::{extract_keypoint, Heatmap};
use affine_stereo::registration::{alignment_error, register, register_accumulated, RigidTransform};
use affine_stereo::sim::{make_rig, NoiseConfig, RigConfig, SceneConfig, SimScene, SurfaceConfig, SurfaceShape};
use affine_stereo::stereo::triangulate;
use affine_stereo::surface::{fit_surface, BBSurface, Domain, SplineFitConfig};
use affine_stereo::{Point2, Point3, RngSeed};
use nalgebra::{Matrix2x4, Matrix4x3, Vector3, Vector4};
use rand::Rng;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

impl Check {
    fn new(name: &'static str, pass: bool, detail: String) -> Self {
        Self { name, pass, detail }
    }
}

fn scene(config: SceneConfig, seed: u64) -> SimScene {
    SimScene::new(config, RngSeed(seed)).expect("valid scene")
}

fn noiseless_recovery() -> Check {
    let start = Instant::now();
    let s = scene(
        SceneConfig {
            noise: NoiseConfig {
                sigma_u_px: 0.0,
                sigma_x_um: 0.0,
                outlier_fraction: 0.0,
            },
            ..SceneConfig::default()
        },
        1,
    );
    let (set, _) = s.generate_correspondences().unwrap();
    let left = dlt_affine(&set.left_pairs()).unwrap();
    let right = dlt_affine(&set.right_pairs()).unwrap();
    let dlt_err = left.relative_error(&s.rig.left).max(right.relative_error(&s.rig.right));
    let cal = bundle_adjust(&set, &left, &right, &BundleConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    Check::new(
        "noiseless recovery",
        set.len() == 300 && dlt_err <= 1e-6 && cal.final_objective <= 1e-12 && secs <= 5.0,
        format!(
            "pairs={} dlt_rel_err={dlt_err:.2e} (<=1e-6) ba_objective={:.2e} (<=1e-12) runtime={secs:.2}s (<=5s)",
            set.len(),
            cal.final_objective
        ),
    )
}

fn resection_round_trip() -> Check {
    let mut rng = RngSeed(2).rng();
    let (mut worst_dm, mut worst_orth) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let m = Matrix2x4::from_fn(|_, c| {
            if c < 3 {
                rng.random_range(-1.0..1.0)
            } else {
                rng.random_range(-1000.0..1000.0)
            }
        });
        let m = AffineProjection::new(m).unwrap();
        let (k, pose) = resect(&m).unwrap();
        let back = compose(&k, &pose).unwrap();
        worst_dm = worst_dm.max((back.matrix() - m.matrix()).norm());
        worst_orth = worst_orth.max(pose.orthonormality_error());
    }

    let s = scene(
        SceneConfig {
            noise: NoiseConfig {
                outlier_fraction: 0.0,
                ..NoiseConfig::default()
            },
            ..SceneConfig::default()
        },
        2,
    );
    let (set, _) = s.generate_correspondences().unwrap();
    let left = dlt_affine(&set.left_pairs()).unwrap();
    let right = dlt_affine(&set.right_pairs()).unwrap();
    let cfg = BundleConfig {
        sigma_u: s.config.noise.sigma_u_px,
        sigma_x: s.config.noise.sigma_x_um,
        ..BundleConfig::default()
    };
    let cal = bundle_adjust(&set, &left, &right, &cfg).unwrap();
    let skews = [cal.left.intrinsics.skew, cal.right.intrinsics.skew];
    Check::new(
        "resection round trip",
        worst_dm <= 1e-9 && worst_orth <= 1e-9 && skews == [0.0, 0.0],
        format!(
            "matrices=1000 max_dM={worst_dm:.2e} (<=1e-9) max_orth_err={worst_orth:.2e} (<=1e-9) ba_skew={skews:?} (==0)"
        ),
    )
}

fn ransac_robustness() -> Check {
    let config = SceneConfig {
        noise: NoiseConfig {
            sigma_u_px: 0.0,
            sigma_x_um: 0.0,
            outlier_fraction: 0.3,
        },
        ..SceneConfig::default()
    };
    let (mut leaked, mut injected, mut worst) = (0usize, 0usize, 0.0f64);
    for seed in 0..20 {
        let s = scene(config, 100 + seed);
        let (set, truth) = s.generate_correspondences().unwrap();
        let cfg = |stream| RansacConfig {
            seed: RngSeed(seed).derive(stream),
            ..RansacConfig::default()
        };
        let (left, in_l) = dlt_affine_ransac(&set.left_pairs(), &cfg(1)).unwrap();
        let (right, in_r) = dlt_affine_ransac(&set.right_pairs(), &cfg(2)).unwrap();
        for i in 0..set.len() {
            if truth.outlier[i] {
                injected += 1;
                leaked += usize::from(in_l[i]) + usize::from(in_r[i]);
            }
        }
        worst = worst
            .max(left.relative_error(&s.rig.left))
            .max(right.relative_error(&s.rig.right));
    }
    Check::new(
        "ransac robustness",
        injected > 0 && leaked == 0 && worst <= 1e-5,
        format!("seeds=20 injected={injected} leaked={leaked} (==0) max_rel_err={worst:.2e} (<=1e-5)"),
    )
}

fn triangulation_trend() -> Check {
    let config = SceneConfig {
        rig: RigConfig {
            magnification_px_per_um: 1.0,
            ..RigConfig::default()
        },
        surface: SurfaceConfig {
            shape: SurfaceShape::HeightField {
                amplitude_um: 100.0,
                wavelength_um: 400.0,
            },
            patch_um: 800.0,
            outlier_fraction: 0.0,
            ..SurfaceConfig::default()
        },
        ..SceneConfig::default()
    };
    let s = scene(config, 4);
    let rmse: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|&sigma| {
            let sample = s.sample_surface(2000, sigma).unwrap();
            let sq: f64 = sample
                .matches
                .iter()
                .zip(&sample.points)
                .map(|((ul, ur), x)| triangulate(&s.rig, ul, ur).unwrap().distance(x).powi(2))
                .sum();
            (sq / sample.points.len() as f64).sqrt()
        })
        .collect();
    let monotone = rmse.windows(2).all(|w| w[1] > w[0]);
    Check::new(
        "triangulation trend",
        monotone && rmse[0] <= 1e-6 && (1.0..=100.0).contains(&rmse[2]),
        format!(
            "rmse_um@sigma[0,0.5,1,2]=[{:.2e}, {:.3}, {:.3}, {:.3}] monotone={monotone} rmse@0 (<=1e-6) rmse@1 in [1,100]",
            rmse[0], rmse[1], rmse[2], rmse[3]
        ),
    )
}

fn surface_fitting() -> Check {
    let fit_cfg = SplineFitConfig {
        epsilon: 30.0,
        ..SplineFitConfig::default()
    };
    let (mut exact, mut worst_rms, mut outliers) = (0, 0.0f64, 0);
    let seeds = 10u64;
    for seed in 0..seeds {
        let s = scene(SceneConfig::default(), 500 + seed);
        let sample = s.sample_surface(2000, 0.0).unwrap();
        let pairs: Vec<_> = sample
            .matches
            .iter()
            .map(|(ul, ur)| (*ul, triangulate(&s.rig, ul, ur).unwrap()))
            .collect();
        let fit = fit_surface(&pairs, &fit_cfg).unwrap();
        exact += u64::from(fit.rejected == sample.outlier);
        outliers += sample.outlier.iter().filter(|o| **o).count();
        let inliers: Vec<usize> = (0..pairs.len()).filter(|&i| !sample.outlier[i]).collect();
        let sq: f64 = inliers
            .iter()
            .map(|&i| {
                fit.surface
                    .evaluate(&pairs[i].0)
                    .unwrap()
                    .distance(&sample.points[i])
                    .powi(2)
            })
            .sum();
        worst_rms = worst_rms.max((sq / inliers.len() as f64).sqrt());
    }

    let plane = scene(
        SceneConfig {
            surface: SurfaceConfig {
                shape: SurfaceShape::Plane { gx: 0.1, gy: -0.05 },
                outlier_fraction: 0.0,
                ..SurfaceConfig::default()
            },
            ..SceneConfig::default()
        },
        9,
    );
    let sample = plane.sample_surface(2000, 0.0).unwrap();
    let pairs: Vec<_> = sample.left.iter().copied().zip(sample.points.iter().copied()).collect();
    let energy = fit_surface(&pairs, &fit_cfg).unwrap().surface.bending_energy();
    Check::new(
        "surface fitting",
        exact == seeds && worst_rms <= 2.0 && energy.abs() <= 1e-10,
        format!(
            "seeds={seeds} outliers={outliers} exact_rejection={exact}/{seeds} max_rms_um={worst_rms:.2e} (<=2) \
             plane_energy={energy:.2e} (<=1e-10)"
        ),
    )
}

fn registration_convergence() -> Check {
    let start = Instant::now();
    let trials = 200;
    let (mut better, mut translation) = (0, 0.0);
    for seed in 0..trials {
        let s = scene(SceneConfig::default(), 1000 + seed);
        let reg = s.registration_scene(3).unwrap();
        let probes: Vec<_> = reg.frames.iter().flat_map(|f| f.measured.clone()).collect();
        let acc = register_accumulated(&reg.frames, 3, None).unwrap();
        let one = alignment_error(&acc.curve[0].transform, &reg.truth, &probes);
        let three = alignment_error(&acc.registration.transform, &reg.truth, &probes);
        better += usize::from(three.mean_displacement < one.mean_displacement);
        translation += three.translation;
    }
    let mean_translation = translation / trials as f64;
    let secs = start.elapsed().as_secs_f64();
    let needed = (0.95 * trials as f64).ceil() as usize;
    Check::new(
        "registration convergence",
        better >= needed && mean_translation <= 150.0 && secs <= 60.0,
        format!(
            "window3_better={better}/{trials} (>={needed}) mean_translation_err_um={mean_translation:.1} (<=150) \
             runtime={secs:.2}s (<=60s)"
        ),
    )
}

fn gaussian(width: usize, height: usize, sigma: f32, cu: f32, cv: f32) -> Heatmap<f32> {
    Heatmap::from_fn(width, height, sigma, |u, v| {
        let (du, dv) = (u as f32 - cu, v as f32 - cv);
        (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp()
    })
    .unwrap()
}

fn keypoint_extraction() -> Check {
    let mut rng = RngSeed(7).rng();
    let mut total = 0.0f64;
    for _ in 0..100 {
        let (cu, cv) = (rng.random_range(16.0..48.0f32), rng.random_range(16.0..48.0f32));
        let sigma = rng.random_range(1.0..3.0f32);
        let kp = extract_keypoint(&gaussian(64, 64, sigma, cu, cv), 1).unwrap();
        total += f64::from(((kp.location.u - cu).powi(2) + (kp.location.v - cv).powi(2)).sqrt());
    }
    let mean = total / 100.0;

    let mut delta = vec![0.0f32; 64 * 64];
    delta[21 * 64 + 37] = 1.0;
    let kp = extract_keypoint(&Heatmap::new(64, 64, delta.clone(), 2.0).unwrap(), 1).unwrap();
    let delta_exact = (kp.location.u, kp.location.v) == (37.0, 21.0);

    delta[50 * 64 + 5] = 1.0;
    delta[21 * 64 + 37] = 0.0;
    delta[10 * 64 + 60] = 1.0;
    let kp = extract_keypoint(&Heatmap::new(64, 64, delta, 2.0).unwrap(), 1).unwrap();
    let tie_exact = (kp.location.u, kp.location.v) == (60.0, 10.0);
    Check::new(
        "keypoint extraction",
        mean <= 0.1 && delta_exact && tie_exact,
        format!("centers=100 mean_err_px={mean:.4} (<=0.1) delta_exact={delta_exact} tie_break_exact={tie_exact}"),
    )
}

fn run_pipeline(out: &Path, scene: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_affine-stereo"))
        .args(["--seed", "7", "pipeline", "--emit-mesh", "--scene"])
        .arg(scene)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&status.stderr).trim().to_string())
    }
}

fn listing(dir: &Path) -> Vec<PathBuf> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| PathBuf::from(e.unwrap().file_name()))
        .collect();
    names.sort();
    names
}

fn determinism() -> Check {
    let scene = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes/default.json");
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if let Err(e) = run_pipeline(&a, &scene).and_then(|_| run_pipeline(&b, &scene)) {
        return Check::new("determinism", false, format!("pipeline failed: {e}"));
    }
    let files = listing(&a);
    let same_names = files == listing(&b);
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    Check::new(
        "determinism",
        same_names && differing.is_empty() && !files.is_empty(),
        format!("files={} same_names={same_names} differing={differing:?}", files.len()),
    )
}

fn de_boor(t: &[f64], c: &[f64], x: f64) -> f64 {
    let mut k = 3;
    while k + 1 < c.len() && x >= t[k + 1] {
        k += 1;
    }
    let mut d: Vec<f64> = (0..4).map(|j| c[j + k - 3]).collect();
    for r in 1..4 {
        for j in (r..4).rev() {
            let (lo, hi) = (t[j + k - 3], t[j + 1 + k - r]);
            let alpha = (x - lo) / (hi - lo);
            d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j];
        }
    }
    d[3]
}

fn surface_oracle_error(rng: &mut impl Rng) -> f64 {
    let (gu, gv) = (11, 8);
    let domain = Domain {
        u_min: 200.0,
        u_max: 1700.0,
        v_min: 100.0,
        v_max: 950.0,
    };
    let coefs: Vec<Point3<f64>> = (0..gu * gv)
        .map(|_| {
            Point3::new(
                rng.random_range(-1000.0..1000.0),
                rng.random_range(-1000.0..1000.0),
                rng.random_range(-500.0..500.0),
            )
        })
        .collect();
    let s = BBSurface::new(domain, gu, gv, coefs.clone()).unwrap();
    let (tu, tv) = (s.knots_u(), s.knots_v());
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = Point2::new(rng.random_range(200.0..1700.0), rng.random_range(100.0..950.0));
        let got = s.evaluate(&p).unwrap().to_vector();
        for ch in 0..3 {
            let rows: Vec<f64> = (0..gv)
                .map(|j| {
                    let row: Vec<f64> = (0..gu).map(|i| coefs[j * gu + i].to_vector()[ch]).collect();
                    de_boor(&tu, &row, p.u)
                })
                .collect();
            worst = worst.max((de_boor(&tv, &rows, p.v) - got[ch]).abs());
        }
    }
    worst
}

fn triangulation_oracle_error(rng: &mut impl Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let rig = make_rig(
            rng.random_range(0.05..2.0),
            rng.random_range(4.0..30.0),
            [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)],
        )
        .unwrap();
        let x = Point3::new(
            rng.random_range(-2000.0..2000.0),
            rng.random_range(-2000.0..2000.0),
            rng.random_range(-500.0..500.0),
        );
        let (l, r) = rig.project(&x);
        let ul = Point2::new(l.u + rng.random_range(-3.0..3.0), l.v + rng.random_range(-3.0..3.0));
        let ur = Point2::new(r.u + rng.random_range(-3.0..3.0), r.v + rng.random_range(-3.0..3.0));

        let (ml, mr) = (rig.left.matrix(), rig.right.matrix());
        let a = Matrix4x3::from_fn(|i, j| if i < 2 { ml[(i, j)] } else { mr[(i - 2, j)] });
        let b = Vector4::new(
            ul.u - ml[(0, 3)],
            ul.v - ml[(1, 3)],
            ur.u - mr[(0, 3)],
            ur.v - mr[(1, 3)],
        );
        let oracle: Vector3<f64> = (a.transpose() * a).try_inverse().unwrap() * a.transpose() * b;
        let got = triangulate(&rig, &ul, &ur).unwrap().to_vector();
        worst = worst.max((got - oracle).norm());
    }
    worst
}

fn registration_oracle_error(rng: &mut impl Rng) -> (f64, f64) {
    let (mut angle, mut translation) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let t = Vector3::new(
            rng.random_range(-5000.0..5000.0),
            rng.random_range(-5000.0..5000.0),
            rng.random_range(-5000.0..5000.0),
        );
        let truth = RigidTransform::from_axis_angle(axis, rng.random_range(0.0..3.1), t);
        let n = rng.random_range(3..40);
        let a: Vec<Point3<f64>> = (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-3000.0..3000.0),
                    rng.random_range(-3000.0..3000.0),
                    rng.random_range(-1000.0..1000.0),
                )
            })
            .collect();
        let b: Vec<Point3<f64>> = a.iter().map(|p| truth.apply(p)).collect();
        let est = register(&a, &b).unwrap().transform;
        angle = angle.max(est.rotation_angle_to(&truth));
        translation = translation.max((est.translation() - truth.translation()).norm());
    }
    (angle, translation)
}

fn oracle_equivalence() -> Check {
    let mut rng = RngSeed(9).rng();
    let surface = surface_oracle_error(&mut rng);
    let tri = triangulation_oracle_error(&mut rng);
    let (angle, translation) = registration_oracle_error(&mut rng);
    Check::new(
        "oracle equivalence",
        surface <= 1e-12 && tri <= 1e-9 && angle <= 1e-9 && translation <= 1e-9,
        format!(
            "de_boor_max_err={surface:.2e} (<=1e-12) pinv_max_err_um={tri:.2e} (<=1e-9) \
             register_max_angle_rad={angle:.2e} (<=1e-9) register_max_translation_um={translation:.2e} (<=1e-9)"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [fn() -> Check; 9] = [
        noiseless_recovery,
        resection_round_trip,
        ransac_robustness,
        triangulation_trend,
        surface_fitting,
        registration_convergence,
        keypoint_extraction,
        determinism,
        oracle_equivalence,
    ];
    let mut failed = 0;
    for (i, criterion) in criteria.iter().enumerate() {
        let c = criterion();
        println!(
            "{} {} {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            i + 1,
            c.name,
            c.detail
        );
        failed += usize::from(!c.pass);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
