use std::path::Path;
use std::process::{Command, Output};

use affine_stereo::io::{self, CalibrationDocument, TransformDocument};
use affine_stereo::keypoints::Heatmap;
use affine_stereo::sim::{NoiseConfig, SceneConfig};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_affine-stereo"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON report")
}

fn fails_with(args: &[&str], code: i32) -> Value {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let line = String::from_utf8(out.stderr).unwrap();
    assert_eq!(line.trim_end().lines().count(), 1);
    serde_json::from_str(line.trim_end()).expect("stderr is one JSON line")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_scene(path: &Path, scene: &SceneConfig) {
    std::fs::write(path, serde_json::to_string(scene).unwrap()).unwrap();
}

#[test]
fn stages_invoked_one_by_one_reproduce_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("pipeline"), dir.path().join("stages"));
    let summary = ok(&["--seed", "3", "pipeline", "--out", s(&a)]);

    ok(&["--seed", "3", "simulate", "--out", s(&b)]);
    let cal = ok(&[
        "--seed",
        "3",
        "calibrate",
        "--correspondences",
        s(&b.join("correspondences.csv")),
        "--out",
        s(&b.join("calibration.json")),
    ]);
    let tri = ok(&[
        "triangulate",
        "--calibration",
        s(&b.join("calibration.json")),
        "--matches",
        s(&b.join("matches.csv")),
        "--out",
        s(&b.join("cloud.ply")),
    ]);
    let fit = ok(&[
        "fit-surface",
        "--cloud",
        s(&b.join("cloud.ply")),
        "--out",
        s(&b.join("surface.json")),
    ]);
    let reg = ok(&[
        "register",
        "--reconstructed",
        s(&b.join("registration_reconstructed.csv")),
        "--measured",
        s(&b.join("registration_measured.csv")),
        "--out",
        s(&b.join("transform.json")),
    ]);

    for f in [
        "calibration.json",
        "cloud.ply",
        "surface.json",
        "transform.json",
        "matches.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let sum = &summary;
    assert_eq!(sum["calibration"]["reprojection_rmse_px"], cal["reprojection_rmse_px"]);
    assert_eq!(sum["calibration"]["inliers"], cal["inliers"]);
    assert_eq!(sum["triangulation"]["points"], tri["points"]);
    assert_eq!(sum["surface"]["rejected"], fit["rejected"]);
    assert_eq!(sum["surface"]["bending_energy"], fit["bending_energy"]);
    assert_eq!(sum["registration"]["residual_rmse_um"], reg["residual_rmse_um"]);
    let written: Value = serde_json::from_slice(&std::fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(&written, sum);
}

#[test]
fn noiseless_calibration_matches_the_true_rig() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    write_scene(
        &scene,
        &SceneConfig {
            noise: NoiseConfig {
                sigma_u_px: 0.0,
                sigma_x_um: 0.0,
                outlier_fraction: 0.0,
            },
            ..SceneConfig::default()
        },
    );
    ok(&["simulate", "--scene", s(&scene), "--out", s(dir.path())]);
    let out = dir.path().join("cal.json");
    ok(&[
        "calibrate",
        "--correspondences",
        s(&dir.path().join("correspondences.csv")),
        "--out",
        s(&out),
    ]);
    let read = |p: &Path| -> CalibrationDocument { serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap() };
    let est = read(&out).to_rig().unwrap();
    let truth = read(&dir.path().join("rig_truth.json")).to_rig().unwrap();
    assert!(est.left.relative_error(&truth.left) <= 1e-6);
    assert!(est.right.relative_error(&truth.right) <= 1e-6);
}

#[test]
fn registering_a_file_onto_itself_gives_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("pts.csv");
    std::fs::write(&pts, "x,y,z\n0,0,0\n1000,0,0\n0,2000,0\n0,0,500\n300,-200,40\n").unwrap();
    let out = dir.path().join("t.json");
    let rep = ok(&[
        "register",
        "--reconstructed",
        s(&pts),
        "--measured",
        s(&pts),
        "--out",
        s(&out),
    ]);
    assert_eq!(rep["frames"], 1);
    let doc: TransformDocument = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let t = doc.to_transform().unwrap();
    assert!((t.rotation() - nalgebra::Matrix3::identity()).norm() <= 1e-12);
    assert!(t.translation().norm() <= 1e-9);
    assert!(doc.residuals.max <= 1e-9);
}

#[test]
fn framed_registration_honours_the_window_and_writes_a_curve() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["--seed", "11", "simulate", "--out", s(dir.path())]);
    let curve = dir.path().join("curve.csv");
    let rep = ok(&[
        "register",
        "--reconstructed",
        s(&dir.path().join("registration_reconstructed.csv")),
        "--measured",
        s(&dir.path().join("registration_measured.csv")),
        "--out",
        s(&dir.path().join("t.json")),
        "--window",
        "4",
        "--robust",
        "--curve",
        s(&curve),
    ]);
    assert_eq!(rep["frames"], 10);
    assert_eq!(rep["frames_used"], 4);
    assert_eq!(rep["robust"], true);
    let text = std::fs::read_to_string(&curve).unwrap();
    assert!(text.starts_with("frames_used,residual_rmse_um\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn detect_reads_heatmaps_in_channel_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (i, (cu, cv)) in [(10.25f32, 7.5f32), (30.0, 20.0)].into_iter().enumerate() {
        let hm = Heatmap::from_fn(48, 32, 1.5f32, |u, v| {
            let (du, dv) = (u as f32 - cu, v as f32 - cv);
            (-(du * du + dv * dv) / (2.0 * 1.5 * 1.5)).exp()
        })
        .unwrap();
        let p = dir.path().join(format!("ch{i}.hm"));
        io::write_heatmap(std::fs::File::create(&p).unwrap(), &hm).unwrap();
        paths.push(p);
    }
    let out = dir.path().join("kp.csv");
    ok(&[
        "detect",
        "--heatmap",
        s(&paths[0]),
        "--heatmap",
        s(&paths[1]),
        "--out",
        s(&out),
    ]);
    let found = io::read_keypoints(std::fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(found.len(), 2);
    assert_eq!(found[0].channel_index, 1);
    assert!((found[0].location.u - 10.25).abs() < 0.05 && (found[0].location.v - 7.5).abs() < 0.05);
    assert_eq!((found[1].location.u, found[1].location.v), (30.0, 20.0));
}

#[test]
fn surface_mesh_is_emitted_on_request() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["pipeline", "--out", s(dir.path()), "--emit-mesh", "--mesh-res", "8"]);
    let mesh = std::fs::read_to_string(dir.path().join("mesh.ply")).unwrap();
    assert!(mesh.contains("element vertex 64\n"));
    assert!(mesh.contains("element face 98\n"));
}

#[test]
fn errors_are_reported_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = dir.path().join("out.json");
    let e = fails_with(&["calibrate", "--correspondences", s(&missing), "--out", s(&out)], 2);
    assert_eq!(e["error"], "input");
    assert!(!out.exists());

    let bad_scene = dir.path().join("bad.json");
    std::fs::write(&bad_scene, r#"{"rig": {"magnification_px_per_um": -1}}"#).unwrap();
    fails_with(&["simulate", "--scene", s(&bad_scene), "--out", s(dir.path())], 2);
    fails_with(&["pipeline"], 2);

    // every tool point on one plane: the affine camera is not observable
    let flat = dir.path().join("flat.csv");
    let mut text = String::from("t,k,x_um,y_um,z_um,ul_px,vl_px,ur_px,vr_px\n");
    for i in 0..30 {
        let (x, y) = ((i % 6) as f64 * 100.0, (i / 6) as f64 * 100.0);
        text += &format!(
            "{},1,{x},{y},0,{},{},{},{}\n",
            i + 1,
            x * 0.1,
            y * 0.1,
            x * 0.1 + 3.0,
            y * 0.1
        );
    }
    std::fs::write(&flat, text).unwrap();
    let e = fails_with(&["calibrate", "--correspondences", s(&flat), "--out", s(&out)], 3);
    assert_eq!(e["error"], "numerical");

    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"bundle": {"max_iterations": 1}}"#).unwrap();
    ok(&["simulate", "--out", s(dir.path())]);
    let e = fails_with(
        &[
            "--config",
            s(&config),
            "calibrate",
            "--correspondences",
            s(&dir.path().join("correspondences.csv")),
            "--out",
            s(&out),
        ],
        4,
    );
    assert_eq!(e["error"], "non_convergence");
    assert!(!out.exists());
}

#[test]
fn dlt_stage_filtering_is_selectable() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--out", s(dir.path())]);
    let cal = dir.path().join("cal.json");
    ok(&[
        "calibrate",
        "--correspondences",
        s(&dir.path().join("correspondences.csv")),
        "--out",
        s(&cal),
    ]);
    let doc: CalibrationDocument = serde_json::from_slice(&std::fs::read(&cal).unwrap()).unwrap();
    assert_eq!(doc.stage, "ba");
    assert!(doc.dlt.is_some() && doc.bundle.is_some());
    for stage in ["dlt", "ba"] {
        let rep = ok(&[
            "triangulate",
            "--calibration",
            s(&cal),
            "--matches",
            s(&dir.path().join("matches.csv")),
            "--out",
            s(&dir.path().join(format!("{stage}.ply"))),
            "--stage",
            stage,
            "--threshold-px",
            "0.5",
        ]);
        assert_eq!(rep["threshold_px"], 0.5);
        assert!(rep["kept"].as_u64().unwrap() > 1900);
    }
}
