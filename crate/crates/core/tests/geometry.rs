mod common;

use common::*;
use larm::camera::{
    compute_plucker_map, joint_transform, project_point, unproject_depth, unproject_pixel, CameraIntrinsics, CameraPose, JointKind,
    JointSpec, Vec3,
};
use larm::synth::{self, Family, OrientedBox, SceneParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn direction() -> impl Strategy<Value = Vec3> {
    vec3(1.0).prop_filter("non-degenerate", |v| v.norm() > 1e-2).prop_map(|v| v.normalize())
}

fn pose() -> impl Strategy<Value = CameraPose> {
    (direction(), 1.0..3.0f64, vec3(0.2)).prop_map(|(d, r, target)| CameraPose::look_at(d * r, target, Vec3::y()).unwrap())
        .prop_filter("valid look-at", |p| p.validate().is_ok())
}

fn joint() -> impl Strategy<Value = JointSpec> {
    (any::<bool>(), direction(), vec3(0.5), -2.0..2.0f64).prop_map(|(rev, a, p, s)| {
        let kind = if rev { JointKind::Revolute } else { JointKind::Prismatic };
        JointSpec::new(kind, a, p, s).unwrap()
    })
}

/// Distance from a point to the surface of an oriented box.
fn surface_distance(b: &OrientedBox, p: &Vec3) -> f64 {
    let r = p - b.center;
    let local = [r.dot(&b.axes[0]), r.dot(&b.axes[1]), r.dot(&b.axes[2])];
    let half = [b.half.x, b.half.y, b.half.z];
    let outside: f64 = (0..3).map(|k| (local[k].abs() - half[k]).max(0.0).powi(2)).sum::<f64>().sqrt();
    if outside > 0.0 {
        outside
    } else {
        (0..3).map(|k| half[k] - local[k].abs()).fold(f64::INFINITY, f64::min)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn plucker_rays_are_valid_lines(pose in pose(), w in 1usize..6, h in 1usize..6) {
        let intr = CameraIntrinsics::from_fov(0.9, w, h).unwrap();
        let map = compute_plucker_map(&intr, &pose);
        for r in map.data.chunks(6) {
            let d = Vec3::new(r[0], r[1], r[2]);
            let m = Vec3::new(r[3], r[4], r[5]);
            prop_assert!((d.norm() - 1.0).abs() < 1e-12);
            prop_assert!(d.dot(&m).abs() < 1e-12);
        }
    }

    #[test]
    fn project_inverts_unproject(pose in pose(), u in 0.0..32.0f64, v in 0.0..32.0f64, z in 0.1..4.0f64) {
        let intr = CameraIntrinsics::from_fov(0.9, 32, 32).unwrap();
        let x = unproject_pixel(u, v, z, &intr, &pose);
        let (u2, v2, z2) = project_point(&x, &intr, &pose).unwrap();
        prop_assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9 && (z - z2).abs() < 1e-12);
    }

    #[test]
    fn joint_transforms_compose(j in joint(), a in -1.0..2.0f64, b in -1.0..2.0f64, c in -1.0..2.0f64, p in vec3(1.0)) {
        let direct = joint_transform(&j, a, c).apply(&p);
        let via = joint_transform(&j, b, c).apply(&joint_transform(&j, a, b).apply(&p));
        prop_assert!((direct - via).norm() < 1e-9);
        let back = joint_transform(&j, a, b).inverse().apply(&p);
        prop_assert!((back - joint_transform(&j, b, a).apply(&p)).norm() < 1e-9);
        prop_assert!((joint_transform(&j, a, a).apply(&p) - p).norm() < 1e-12);
    }

    #[test]
    fn joint_transform_matches_rodrigues(j in joint(), a in 0.0..1.0f64, b in 0.0..1.0f64, p in vec3(1.0)) {
        let rest = oracle_pose(&j, &p, -a);
        prop_assert!((joint_transform(&j, a, b).apply(&p) - oracle_pose(&j, &rest, b)).norm() < 1e-9);
    }

    #[test]
    fn gauge_flip_leaves_motion_unchanged(j in joint(), a in 0.0..1.0f64, b in 0.0..1.0f64, p in vec3(1.0)) {
        let flipped = JointSpec::new(j.kind, -j.axis, j.pivot, -j.scale).unwrap();
        prop_assert!((joint_transform(&j, a, b).apply(&p) - joint_transform(&flipped, a, b).apply(&p)).norm() < 1e-9);
        let c = j.canonical();
        prop_assert!(c.scale >= 0.0);
        prop_assert!((joint_transform(&c, a, b).apply(&p) - joint_transform(&j, a, b).apply(&p)).norm() < 1e-9);
    }

    #[test]
    fn pivot_is_canonical(a in direction(), p in vec3(1.0), t in -3.0..3.0f64) {
        let j1 = JointSpec::revolute(a, p, 1.0).unwrap();
        let j2 = JointSpec::revolute(a, p + a * t, 1.0).unwrap();
        prop_assert!((j1.pivot - j2.pivot).norm() < 1e-9);
        prop_assert!(j1.pivot.dot(&j1.axis).abs() < 1e-12);
    }
}

#[test]
fn unprojected_depth_lies_on_box_surfaces() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (i, fam) in Family::ALL.iter().enumerate() {
        let scene = synth::sample_scene(i as u64, *fam);
        for theta in [0.0, 0.4, 1.0] {
            let cam = synth::random_camera(&mut rng, synth::default_intrinsics(48));
            let f = synth::rasterize(&scene, &cam, theta, 0);
            assert!(f.fg_count() > 50);
            let boxes = scene.posed_boxes(&[theta]);
            let pts = unproject_depth(&f.depth, &f.fg_mask, &cam.intrinsics, &cam.pose).unwrap();
            for (_, _, p) in pts {
                let d = boxes.iter().map(|(b, _)| surface_distance(b, &p)).fold(f64::INFINITY, f64::min);
                assert!(d < 1e-5, "{fam:?} theta {theta}: {d}");
            }
        }
    }
}

#[test]
fn quarter_roll_rotates_masks() {
    let scene = synth::sample_scene(4, Family::Door);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = 40;
    for _ in 0..4 {
        let cam = synth::random_camera(&mut rng, synth::default_intrinsics(w));
        let mut rolled = cam;
        rolled.pose = cam.pose.rolled_quarter_turns(1);
        let a = synth::rasterize(&scene, &cam, 0.5, 0);
        let b = synth::rasterize(&scene, &rolled, 0.5, 0);
        // Pixel (i, j) of the original lands on (j, w - 1 - i) after the roll.
        let mut differ = 0;
        for j in 0..w {
            for i in 0..w {
                let k = (w - 1 - i) * w + j;
                differ += (a.fg_mask[j * w + i] != b.fg_mask[k]) as usize + (a.part_mask[j * w + i] != b.part_mask[k]) as usize;
            }
        }
        // Only pixels whose centre sits exactly on an edge may resolve differently.
        assert!(differ <= w * w / 200, "{differ} mismatches");
        let back = cam.pose.rolled_quarter_turns(4);
        assert!((back.rotation - cam.pose.rotation).norm() < 1e-12);
    }
}

#[test]
fn texture_reseed_keeps_geometry() {
    let base = SceneParams::new(11, Family::Drawer);
    let reseeded = SceneParams { texture_seed: 999, ..base };
    let (s1, s2) = (synth::sample_scene_with(&base), synth::sample_scene_with(&reseeded));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cam = synth::random_camera(&mut rng, synth::default_intrinsics(32));
    let (a, b) = (synth::rasterize(&s1, &cam, 0.3, 0), synth::rasterize(&s2, &cam, 0.3, 0));
    assert_eq!(a.depth, b.depth);
    assert_eq!(a.fg_mask, b.fg_mask);
    assert_eq!(a.part_mask, b.part_mask);
    assert_ne!(a.rgb, b.rgb);
}

#[test]
fn scenes_fit_the_unit_cube_at_every_state() {
    for seed in 0..20 {
        let scene = synth::sample_scene(seed, Family::ALL[seed as usize % 3]);
        let (lo, hi) = scene.state_bounds();
        assert!(lo.iter().chain(hi.iter()).all(|v| v.abs() <= 0.5 + 1e-9), "{seed}: {lo:?} {hi:?}");
        assert!(!scene.part_collides(0, &[1.0]));
    }
}
