use affine_stereo::calibration::{
    bundle_adjust, dlt_affine, dlt_affine_ransac, resect, AffineProjection, BundleConfig, RansacConfig,
};
use affine_stereo::io::{read_correspondences, write_correspondences};
use affine_stereo::sim::{NoiseConfig, SceneConfig, SimScene};
use affine_stereo::RngSeed;
use nalgebra::Matrix2x4;
use proptest::prelude::*;

fn scene(noise: NoiseConfig, seed: u64) -> SimScene {
    let config = SceneConfig {
        noise,
        ..SceneConfig::default()
    };
    SimScene::new(config, RngSeed(seed)).unwrap()
}

#[test]
fn noiseless_scene_is_recovered_exactly() {
    let s = scene(
        NoiseConfig {
            sigma_u_px: 0.0,
            sigma_x_um: 0.0,
            outlier_fraction: 0.0,
        },
        1,
    );
    let (set, _) = s.generate_correspondences().unwrap();
    assert_eq!(set.len(), 300);
    let left = dlt_affine(&set.left_pairs()).unwrap();
    let right = dlt_affine(&set.right_pairs()).unwrap();
    assert!(left.relative_error(&s.rig.left) <= 1e-9);
    assert!(right.relative_error(&s.rig.right) <= 1e-9);

    let cal = bundle_adjust(&set, &left, &right, &BundleConfig::default()).unwrap();
    assert!(cal.converged());
    assert!(cal.final_objective <= 1e-12, "objective {}", cal.final_objective);
    assert!(cal.left.projection.relative_error(&s.rig.left) <= 1e-9);
    assert!(cal.left.intrinsics.skew == 0.0 && cal.right.intrinsics.skew == 0.0);
}

#[test]
fn noisy_scene_with_outliers_calibrates_within_noise() {
    let s = scene(NoiseConfig::default(), 2);
    let (set, truth) = s.generate_correspondences().unwrap();
    let cfg = RansacConfig {
        seed: RngSeed(7),
        ..Default::default()
    };
    let (left, in_l) = dlt_affine_ransac(&set.left_pairs(), &cfg).unwrap();
    let (right, in_r) = dlt_affine_ransac(&set.right_pairs(), &cfg).unwrap();
    let keep: Vec<bool> = in_l.iter().zip(&in_r).map(|(a, b)| *a && *b).collect();
    for (k, o) in keep.iter().zip(&truth.outlier) {
        assert!(!(*k && *o), "an outlier survived RANSAC");
    }
    let inliers = set.filtered(&keep);
    assert!(inliers.len() >= 250, "{} inliers", inliers.len());

    let cfg = BundleConfig {
        sigma_u: s.config.noise.sigma_u_px,
        sigma_x: s.config.noise.sigma_x_um,
        ..Default::default()
    };
    let cal = bundle_adjust(&inliers, &left, &right, &cfg).unwrap();
    cal.check_converged().unwrap();
    assert!(cal.report.last.total <= cal.report.initial.total);
    for (est, gt) in [(&cal.left, &s.rig.left), (&cal.right, &s.rig.right)] {
        assert!(est.projection.relative_error(gt) <= 1e-2);
        assert!(est.pose.orthonormality_error() <= 1e-9);
        let (k, _) = resect(gt).unwrap();
        assert!((est.intrinsics.alpha_x / k.alpha_x - 1.0).abs() <= 1e-2);
    }
}

#[test]
fn csv_round_trip_does_not_change_the_calibration() {
    let s = scene(NoiseConfig::default(), 3);
    let (set, _) = s.generate_correspondences().unwrap();
    let mut buf = Vec::new();
    write_correspondences(&mut buf, &set).unwrap();
    let reread = read_correspondences(&buf[..]).unwrap();
    assert_eq!(reread, set);
    let a = dlt_affine(&set.left_pairs()).unwrap();
    let b = dlt_affine(&reread.left_pairs()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn generation_is_deterministic_per_seed() {
    let a = scene(NoiseConfig::default(), 4).generate_correspondences().unwrap();
    let b = scene(NoiseConfig::default(), 4).generate_correspondences().unwrap();
    let c = scene(NoiseConfig::default(), 5).generate_correspondences().unwrap();
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

fn camera_strategy() -> impl Strategy<Value = AffineProjection<f64>> {
    prop::array::uniform8(-2.0f64..2.0)
        .prop_map(|v| Matrix2x4::from_row_slice(&v))
        .prop_filter_map("rank-2 linear block", |m| {
            let a = m.fixed_view::<2, 3>(0, 0);
            let cross = a.row(0).transpose().cross(&a.row(1).transpose());
            (cross.norm() > 0.1).then(|| AffineProjection::new(m).ok()).flatten()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resection_is_a_factorisation(m in camera_strategy()) {
        let (k, pose) = resect(&m).unwrap();
        prop_assert!(k.alpha_x > 0.0 && k.alpha_y > 0.0);
        prop_assert!(pose.orthonormality_error() <= 1e-9);
        prop_assert!((pose.rotation.determinant() - 1.0).abs() <= 1e-9);
        let back = k.matrix() * pose.reduced();
        prop_assert!((back - m.matrix()).norm() <= 1e-9 * m.matrix().norm());
    }

    #[test]
    fn dlt_recovers_any_camera_from_exact_data(m in camera_strategy(), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = RngSeed(seed).rng();
        let pts: Vec<_> = (0..12)
            .map(|_| {
                let x = affine_stereo::Point3::new(
                    rng.random_range(-1e3..1e3),
                    rng.random_range(-1e3..1e3),
                    rng.random_range(-1e3..1e3),
                );
                (x, m.project(&x))
            })
            .collect();
        let est = dlt_affine(&pts).unwrap();
        prop_assert!(est.relative_error(&m) <= 1e-8);
    }
}
