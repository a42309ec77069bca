use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, TAU};

use posekit::metrics::{adi_error, rotation_error_deg, PoseEstimate};
use posekit::model::HypothesisSet;
use posekit::pipeline::*;
use posekit::robust::{median_scalar, weiszfeld_median};
use posekit::rotation::*;
use posekit::toy::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn jitter(rng: &mut impl Rng, q: &UnitQuaternion, scale: f64) -> UnitQuaternion {
    let v = TangentVector([
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
    ]);
    exp_map(q, &v)
}

fn bundles(seed: u64) -> (Vec<UnitQuaternion>, HypothesisSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = random_rotation(&mut rng);
    let centers: Vec<UnitQuaternion> = (0..4)
        .map(|k| base.multiply(&UnitQuaternion::rot_z(k as f64 * FRAC_PI_2)))
        .collect();
    let mut rotations = Vec::new();
    let mut depths = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..(6 + k) {
            rotations.push(jitter(&mut rng, c, 0.005));
            depths.push(1.0 + rng.gen_range(-0.01..0.01));
        }
    }
    (centers, HypothesisSet::new(rotations, depths).unwrap())
}

#[test]
fn four_bundles_fuse_to_four_poses() {
    let (centers, hyps) = bundles(17);
    let cam = PinholeCamera::default();
    let r = infer(&hyps, &cam, [320.0, 240.0], &InferenceConfig::for_object(ObjectKind::Cube)).unwrap();
    assert!(r.ambiguity.ambiguous);
    let clusters = r.clusters.as_ref().unwrap();
    assert_eq!(clusters.len(), 4);
    assert_eq!(r.cluster_poses.len(), 4);
    for (k, pose) in r.cluster_poses.iter().enumerate() {
        let members: Vec<UnitQuaternion> = clusters.members(k).iter().map(|&i| hyps.rotations[i]).collect();
        let oracle = weiszfeld_median(&members, 1e-12, 1000).unwrap().rotation;
        assert!(rotation_error_deg(&pose.rotation, &oracle) < 1e-3);
        let nearest = centers
            .iter()
            .map(|c| rotation_error_deg(&pose.rotation, c))
            .fold(f64::INFINITY, f64::min);
        assert!(nearest < 1.0, "cluster {k}: {nearest} deg");
    }
    // the largest bundle (9 members) is selected
    assert_eq!(clusters.member_counts[r.selected_cluster.unwrap()], 9);
}

#[test]
fn ring_selection_is_symmetric_under_adi() {
    let cyl = ToyObject::cylinder();
    let base = UnitQuaternion::normalize([0.8, 0.3, -0.2, 0.4]).unwrap();
    let ring: Vec<UnitQuaternion> = (0..30)
        .map(|k| SymmetrySet::arc_member(&base, &[0.0, 0.0, 1.0], TAU * k as f64 / 30.0))
        .collect();
    let hyps = HypothesisSet::new(ring.clone(), vec![1.0; 30]).unwrap();
    let cam = PinholeCamera::default();
    let r = infer(&hyps, &cam, [300.0, 200.0], &InferenceConfig::for_object(ObjectKind::Cylinder)).unwrap();
    assert!(r.ambiguity.ambiguous);

    // worst-case ADI of any rotation about the axis, found by brute force
    let t = [0.0, 0.0, 1.0];
    let id = PoseEstimate::new(UnitQuaternion::IDENTITY, t);
    let bound = (0..=200)
        .map(|k| {
            let turn = UnitQuaternion::rot_z(TAU / 64.0 * k as f64 / 200.0);
            adi_error(&cyl.model_points, &PoseEstimate::new(turn, t), &id).unwrap()
        })
        .fold(0.0, f64::max);
    assert!(bound < 0.002);
    for m in &ring {
        let e = adi_error(
            &cyl.model_points,
            &PoseEstimate::new(r.pose.rotation, t),
            &PoseEstimate::new(*m, t),
        )
        .unwrap();
        assert!(e <= bound + 1e-9, "ADI {e} exceeds {bound}");
    }
}

#[test]
fn bad_configuration_is_rejected() {
    let (_, hyps) = bundles(1);
    let cam = PinholeCamera::default();
    let mut cfg = InferenceConfig::default();
    cfg.meanshift_bandwidth = 0.0;
    assert!(infer(&hyps, &cam, [0.0, 0.0], &cfg).is_err());
    let cfg = InferenceConfig {
        pca_threshold: -1.0,
        ..InferenceConfig::default()
    };
    assert!(infer(&hyps, &cam, [0.0, 0.0], &cfg).is_err());
}

#[test]
fn partial_config_files_take_defaults() {
    let cfg: InferenceConfig = serde_json::from_str(r#"{"meanshift_bandwidth": 0.5}"#).unwrap();
    assert_eq!(cfg.meanshift_bandwidth, 0.5);
    assert_eq!(cfg.pca_threshold, 0.8);
    assert_eq!(InferenceConfig::for_object(ObjectKind::Cup).meanshift_bandwidth, FRAC_PI_4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unambiguous_branch_is_median_composition(
        seed in any::<u64>(),
        m in 2usize..30,
        u in 0.0f64..640.0,
        v in 0.0f64..480.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center = random_rotation(&mut rng);
        let rotations: Vec<UnitQuaternion> = (0..m).map(|_| jitter(&mut rng, &center, 0.01)).collect();
        let depths: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..2.0)).collect();
        let hyps = HypothesisSet::new(rotations.clone(), depths.clone()).unwrap();
        let cam = PinholeCamera::default();
        let cfg = InferenceConfig::default();
        let r = infer(&hyps, &cam, [u, v], &cfg).unwrap();
        prop_assert!(!r.ambiguity.ambiguous);
        prop_assert!(r.clusters.is_none());
        let rot = weiszfeld_median(&hyps.rotations, cfg.weiszfeld_tol, cfg.weiszfeld_max_iter).unwrap().rotation;
        let depth = median_scalar(&depths).unwrap();
        prop_assert_eq!(r.pose.rotation, rot);
        prop_assert_eq!(r.depth, depth);
        prop_assert_eq!(r.pose.translation, cam.backproject(u, v, depth).unwrap());
        let [pu, pv, pz] = cam.project(&r.pose.translation);
        prop_assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9 && (pz - depth).abs() < 1e-12);
        prop_assert!(r.confidence_sigma >= 0.0);
    }

    #[test]
    fn inference_is_deterministic(seed in any::<u64>()) {
        let (_, hyps) = bundles(seed);
        let cam = PinholeCamera::default();
        let cfg = InferenceConfig::default();
        let a = serde_json::to_string(&infer(&hyps, &cam, [100.0, 50.0], &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&infer(&hyps, &cam, [100.0, 50.0], &cfg).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn clusters_present_iff_ambiguous(seed in any::<u64>(), spread in 0.0f64..1.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center = random_rotation(&mut rng);
        let rotations: Vec<UnitQuaternion> = (0..20).map(|_| jitter(&mut rng, &center, spread)).collect();
        let hyps = HypothesisSet::new(rotations, vec![1.0; 20]).unwrap();
        let r = infer(&hyps, &PinholeCamera::default(), [320.0, 240.0], &InferenceConfig::default()).unwrap();
        prop_assert_eq!(r.clusters.is_some(), r.ambiguity.ambiguous);
        prop_assert_eq!(r.selected_cluster.is_some(), r.ambiguity.ambiguous);
    }
}
