use std::collections::BTreeSet;
use std::path::Path;

use larm::dataset::{
    load_params, make_dataset, read_depth, read_mask_png, read_rgb_png, read_sample, save_params, split_dataset, write_depth,
    write_mask_png, write_rgb_png, write_sample, DatasetIndex, GenConfig, Split,
};
use larm::error::LarmError;
use larm::model::{ModelConfig, Params};
use larm::synth::{self, Family};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

fn tree_digest(root: &Path) -> String {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(root).unwrap().to_string_lossy().as_bytes());
        h.update(std::fs::read(&f).unwrap());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn tiny_gen(scenes: usize) -> GenConfig {
    GenConfig { scenes, seed: 3, resolution: 16, views_per_state: 2, target_views: 2, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn depth_round_trips_bit_exactly(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<f32> = (0..w * h).map(|_| rng.random_range(0.0..4.0)).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.dpth");
        write_depth(&p, &d, w, h).unwrap();
        let (back, w2, h2) = read_depth(&p).unwrap();
        prop_assert_eq!((w2, h2), (w, h));
        prop_assert_eq!(back, d);
    }

    #[test]
    fn png_round_trips_within_quantization(w in 1usize..10, h in 1usize..10, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rgb: Vec<f32> = (0..3 * w * h).map(|_| rng.random()).collect();
        let mask: Vec<bool> = (0..w * h).map(|_| rng.random()).collect();
        let dir = tempfile::tempdir().unwrap();
        write_rgb_png(&dir.path().join("c.png"), &rgb, w, h).unwrap();
        write_mask_png(&dir.path().join("m.png"), &mask, w, h).unwrap();
        let (back, _, _) = read_rgb_png(&dir.path().join("c.png")).unwrap();
        prop_assert!(back.iter().zip(&rgb).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-6));
        prop_assert_eq!(read_mask_png(&dir.path().join("m.png")).unwrap().0, mask);
    }
}

#[test]
fn truncated_depth_is_a_corrupt_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.dpth");
    write_depth(&p, &[1.0; 16], 4, 4).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(read_depth(&p), Err(LarmError::CorruptHeader(_))));
    std::fs::write(&p, b"LARM").unwrap();
    assert!(matches!(read_depth(&p), Err(LarmError::CorruptHeader(_))));
    assert!(matches!(write_depth(&p, &[1.0; 3], 2, 2), Err(LarmError::SizeMismatch(_))));
}

#[test]
fn sample_round_trip() {
    let scene = synth::sample_scene(1, Family::Lid);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cam = synth::random_camera(&mut rng, synth::default_intrinsics(24));
    let f = synth::rasterize(&scene, &cam, 0.3, 0);
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("sample");
    write_sample(&f, &stem).unwrap();
    let g = read_sample(&stem).unwrap();
    assert_eq!(g.depth, f.depth);
    assert_eq!(g.fg_mask, f.fg_mask);
    assert_eq!(g.part_mask, f.part_mask);
    assert_eq!(g.theta, f.theta);
    assert!((g.camera.pose.rotation - f.camera.pose.rotation).norm() < 1e-12);
    assert!(g.rgb.iter().zip(&f.rgb).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-6));
}

#[test]
fn checkpoint_round_trip_and_config_check() {
    let cfg = ModelConfig { patch_size: 4, dim: 16, layers: 1, heads: 2, height: 8, width: 8, views_per_state: 1, out_channels: 6, mlp_ratio: 2 };
    let params = Params::<f32>::init(cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    let extra = vec![1.5f32, -2.0];
    save_params(&p, &params, &json!({ "step": 7 }), &[("opt", &extra)]).unwrap();
    let ck = load_params(&p, Some(&cfg)).unwrap();
    assert_eq!(ck.params.data, params.data);
    assert_eq!(ck.extra["step"], 7);
    assert_eq!(ck.extra_tensors, vec![("opt".to_string(), extra)]);
    let other = ModelConfig { dim: 32, ..cfg };
    assert!(matches!(load_params(&p, Some(&other)), Err(LarmError::ConfigMismatch(_))));
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_params(&p, Some(&cfg)).is_err());
}

#[test]
fn generation_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    make_dataset(a.path(), &tiny_gen(3)).unwrap();
    make_dataset(b.path(), &tiny_gen(3)).unwrap();
    assert_eq!(tree_digest(a.path()), tree_digest(b.path()));
    let c = tempfile::tempdir().unwrap();
    make_dataset(c.path(), &GenConfig { seed: 4, ..tiny_gen(3) }).unwrap();
    assert_ne!(tree_digest(a.path()), tree_digest(c.path()));
}

#[test]
fn dataset_counts_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_gen(3);
    let idx = make_dataset(dir.path(), &cfg).unwrap();
    assert_eq!(idx.records.len(), cfg.scenes * (2 * cfg.views_per_state + cfg.target_views));
    assert_eq!(idx.scene_ids().len(), 3);
    assert_eq!(DatasetIndex::scan(dir.path()).unwrap(), idx);
    for r in &idx.records {
        let f = read_sample(&r.stem).unwrap();
        assert_eq!(f.width(), 16);
        assert_eq!(f.theta, r.theta);
    }
}

#[test]
fn splits_are_disjoint_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let idx = make_dataset(dir.path(), &GenConfig { target_views: 0, ..tiny_gen(10) }).unwrap();
    let s1 = split_dataset(&idx, (0.8, 0.2, 0.0), 5).unwrap();
    let s2 = split_dataset(&idx, (0.8, 0.2, 0.0), 5).unwrap();
    assert_eq!(s1, s2);
    let scenes = |s: Split| s1.with_split(s).iter().map(|r| r.scene_id.clone()).collect::<BTreeSet<_>>();
    let (tr, va) = (scenes(Split::Train), scenes(Split::Val));
    assert_eq!((tr.len(), va.len()), (8, 2));
    assert!(tr.is_disjoint(&va));
    assert!(s1.with_split(Split::Test).is_empty());
    assert!(matches!(split_dataset(&idx, (0.99, 0.01, 0.0), 5), Err(LarmError::EmptySplit(_))));
    assert!(split_dataset(&idx, (0.5, 0.2, 0.0), 5).is_err());
}
