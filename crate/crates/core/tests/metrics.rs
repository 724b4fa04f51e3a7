mod common;

use common::*;
use larm::camera::{JointKind, JointSpec, Vec3};
use larm::joint::GtSynthesizer;
use larm::metrics::{
    aggregate, chamfer, evaluate_object, fscore, joint_metrics, psnr, report_csv, scene_surface_points, EvalConfig, KdTree, MeshObject,
    SceneObject, PSNR_CAP, REPORT_CSV_HEADER,
};
use larm::recon::{reconstruct, ReconConfig};
use larm::synth::{self, Family};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cloud(max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z)), 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn chamfer_is_symmetric_and_zero_on_itself(a in cloud(200), b in cloud(200)) {
        prop_assert!((chamfer(&a, &b).unwrap() - chamfer(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(fscore(&a, &a, 1e-9).unwrap(), 1.0);
    }

    #[test]
    fn fscore_grows_with_tau(a in cloud(100), b in cloud(100), t1 in 0.0..0.5f64, dt in 0.0..0.5f64) {
        prop_assert!(fscore(&a, &b, t1).unwrap() <= fscore(&a, &b, t1 + dt).unwrap());
    }

    #[test]
    fn kd_tree_matches_brute_force(pts in cloud(300), q in cloud(20)) {
        let tree = KdTree::new(&pts);
        for x in &q {
            let brute = pts.iter().map(|p| (p - x).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!((tree.nearest_distance(x) - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_metrics_ignore_the_gauge(seed in 0u64..10_000, revolute in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = if revolute { JointKind::Revolute } else { JointKind::Prismatic };
        let a = random_joint(&mut rng, kind);
        let b = random_joint(&mut rng, kind);
        let flip = |j: &JointSpec| JointSpec::new(j.kind, -j.axis, j.pivot, -j.scale).unwrap();
        let m1 = joint_metrics(&a, &b).unwrap();
        let m2 = joint_metrics(&flip(&a), &flip(&b)).unwrap();
        let m3 = joint_metrics(&flip(&a), &b).unwrap();
        prop_assert!((m1.axis_angle_err - m2.axis_angle_err).abs() < 1e-9);
        prop_assert!((m1.axis_angle_err - m3.axis_angle_err).abs() < 1e-9);
        prop_assert!((m1.axis_origin_err - m3.axis_origin_err).abs() < 1e-9);
        prop_assert!((m1.m_d_angle - m3.m_d_angle).abs() < 1e-9);
        prop_assert!((m1.m_r - m3.m_r).abs() < 1e-12);
        prop_assert_eq!(m1.axis_success, m1.axis_angle_err < 0.25);
    }
}

#[test]
fn fscore_example_two_thirds() {
    let line = |xs: &[f64]| xs.iter().map(|&v| Vec3::new(v, 0.0, 0.0)).collect::<Vec<_>>();
    let f = fscore(&line(&[0.0, 1.0, 2.0]), &line(&[0.0, 1.0, 5.0]), 0.05).unwrap();
    assert!((f - 2.0 / 3.0).abs() < 1e-12);
    // Chamfer by hand: forward distances 0, 0, 1; backward 0, 0, 3.
    let cd = chamfer(&line(&[0.0, 1.0, 2.0]), &line(&[0.0, 1.0, 5.0])).unwrap();
    assert!((cd - 0.5 * (1.0 / 3.0 + 3.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn empty_sets_are_rejected() {
    assert!(chamfer(&[], &[Vec3::zeros()]).is_err());
    assert!(fscore(&[Vec3::zeros()], &[], 0.1).is_err());
    assert!(psnr(&[], &[]).is_err());
}

#[test]
fn psnr_known_values() {
    let a = vec![0.5f32; 30];
    let b = vec![0.6f32; 30];
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-4);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
}

#[test]
fn parallel_axes_and_motion_errors() {
    let gt = JointSpec::revolute(Vec3::z(), Vec3::zeros(), 1.0).unwrap();
    let shifted = JointSpec::revolute(Vec3::z(), Vec3::new(0.0, 0.1, 0.0), 1.2).unwrap();
    let m = joint_metrics(&shifted, &gt).unwrap();
    assert!((m.axis_origin_err - 0.1).abs() < 1e-12);
    assert!((m.m_r - 0.2).abs() < 1e-12);
    assert!(m.axis_success && m.origin_success && m.m_r_success && m.m_d_success);
    let reversed = JointSpec::revolute(Vec3::z(), Vec3::zeros(), -1.0).unwrap();
    let m = joint_metrics(&reversed, &gt).unwrap();
    assert!(m.axis_success && !m.m_d_success);
    let skew = JointSpec::revolute(Vec3::x(), Vec3::new(0.0, 0.3, 0.0), 1.0).unwrap();
    assert!((joint_metrics(&skew, &gt).unwrap().axis_origin_err - 0.3).abs() < 1e-12);
}

#[test]
fn scene_evaluated_against_itself_is_perfect() {
    let scene = synth::sample_scene(7, Family::Drawer);
    let obj = SceneObject { scene: &scene, joint_id: 0 };
    let cfg = EvalConfig { n_points: 5000, n_states: 3, n_render_views: 2, ..Default::default() };
    let r = evaluate_object("self", &obj, &obj, &cfg).unwrap();
    assert_eq!(r.cd, 0.0);
    assert_eq!(r.fscore, 1.0);
    assert_eq!(r.psnr, PSNR_CAP);
    let suite = aggregate(vec![r]).unwrap();
    assert_eq!(suite.axis_success_rate, 1.0);
    let csv = report_csv(&suite);
    assert_eq!(csv.lines().next().unwrap(), REPORT_CSV_HEADER);
    assert_eq!(csv.lines().count(), 1 + 3 + 1);
}

#[test]
fn scale_does_not_change_normalized_geometry() {
    let scene = synth::sample_scene(3, Family::Lid);
    let rec = reconstruct(&GtSynthesizer { scene: &scene, joint_id: 0 }, &ReconConfig { n_views: 32, ..Default::default() }).unwrap();
    let joint = scene.parts[0].joint;
    let gt = SceneObject { scene: &scene, joint_id: 0 };
    let cfg = EvalConfig { n_points: 20_000, n_states: 1, n_render_views: 1, ..Default::default() };
    let base = evaluate_object("a", &MeshObject { meshes: rec.clone(), joint }, &gt, &cfg).unwrap();
    let scaled = |m: &larm::recon::PartMesh| m.transformed(|v| v * 2.0);
    let big = larm::recon::Reconstruction { body: scaled(&rec.body), movable: scaled(&rec.movable) };
    let r2 = evaluate_object("b", &MeshObject { meshes: big, joint }, &gt, &cfg).unwrap();
    assert!((base.cd - r2.cd).abs() < 1e-4, "{} vs {}", base.cd, r2.cd);
    assert!(base.cd < 0.03);
}

#[test]
fn gt_surface_samples_are_deterministic_and_on_the_boundary() {
    let scene = synth::sample_scene(5, Family::Door);
    let a = scene_surface_points(&scene, &[0.5], 2000, 3).unwrap();
    let b = scene_surface_points(&scene, &[0.5], 2000, 3).unwrap();
    assert_eq!(a, b);
    let boxes = scene.posed_boxes(&[0.5]);
    for p in &a {
        let inside_other = boxes.iter().filter(|(bx, _)| {
            let r = p - bx.center;
            (0..3).all(|k| r.dot(&bx.axes[k]).abs() < bx.half[k] - 1e-6)
        });
        assert_eq!(inside_other.count(), 0);
    }
}
