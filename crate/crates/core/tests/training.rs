mod common;

use common::*;
use larm::model::{self, init_finetune_heads, Params, TokenSequence};
use larm::synth::{self, Family};
use larm::train::{
    self, batch_loss, loss_depth, loss_mask_separated, loss_part, mse_with_grad, padded_bbox, train_step, AdamW, AugmentConfig, LossWeights,
    NoPerceptual, SceneSet, Stage, TrainConfig, TrainSample,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(cfg: &larm::model::ModelConfig, seed: u64) -> TrainSample {
    let scene = synth::sample_scene(seed, Family::ALL[seed as usize % 3]);
    let inputs = train::input_frames(&scene, cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = synth::random_camera(&mut rng, synth::default_intrinsics(cfg.width));
    TrainSample::new(&inputs, synth::rasterize(&scene, &cam, 0.4, 0), cfg).unwrap()
}

fn tiny_train(steps: usize) -> TrainConfig {
    TrainConfig { steps, batch_size: 2, scenes: 2, lr: 2e-3, seed: 9, log_every: 0, checkpoint_every: 0, ..TrainConfig::default() }
}

#[test]
fn loss_terms_on_known_inputs() {
    let gt = vec![0.3f32; 40];
    let pred: Vec<f64> = gt.iter().map(|&v| v as f64 + 0.1).collect();
    assert!((mse_with_grad(&pred, &gt, 1.0, None).unwrap() - 0.01).abs() < 1e-9);
    let fg: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
    let depth: Vec<f64> = gt.iter().enumerate().map(|(i, &v)| v as f64 + if fg[i] { 0.2 } else { 5.0 }).collect();
    assert!((loss_depth(&depth, &gt, &fg).unwrap() - 0.2).abs() < 1e-7);
    assert!(loss_depth(&depth, &gt, &[false; 40]).is_err());
    let half = vec![0.5; 40];
    assert!((loss_mask_separated(&half, &fg).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn separated_bce_ignores_class_balance(p in 0.05..0.95f64, q in 0.05..0.95f64, npos in 1usize..50, nneg in 1usize..50) {
        let mut gt = vec![true; npos];
        gt.extend(vec![false; nneg]);
        let pred: Vec<f64> = gt.iter().map(|&g| if g { p } else { q }).collect();
        let expect = 0.5 * (-p.ln()) + 0.5 * (-(1.0 - q).ln());
        prop_assert!((loss_mask_separated(&pred, &gt).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn part_loss_adds_the_padded_box(seed in any::<u64>()) {
        let (w, h) = (20, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x0, y0) = (rng.random_range(0..w - 3), rng.random_range(0..h - 3));
        let mut gt = vec![false; w * h];
        for y in y0..y0 + 3 {
            for x in x0..x0 + 3 {
                gt[y * w + x] = true;
            }
        }
        let pred: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.05..0.95)).collect();
        let (a, b, c, d) = padded_bbox(&gt, w, h, 4).unwrap();
        prop_assert_eq!((a, b, c, d), (x0.saturating_sub(4), y0.saturating_sub(4), (x0 + 7).min(w), (y0 + 7).min(h)));
        let (mut cp, mut cg) = (Vec::new(), Vec::new());
        for y in b..d {
            for x in a..c {
                cp.push(pred[y * w + x]);
                cg.push(gt[y * w + x]);
            }
        }
        let expect = loss_mask_separated(&pred, &gt).unwrap() + loss_mask_separated(&cp, &cg).unwrap();
        prop_assert!((loss_part(&pred, &gt, w, h).unwrap() - expect).abs() < 1e-12);
    }
}

#[test]
fn finetune_heads_start_from_pretrained_rgb() {
    let pre_cfg = tiny_cfg(3);
    let pre = Params::<f32>::init(pre_cfg, 2).unwrap();
    let fine = init_finetune_heads(&pre, tiny_cfg(6)).unwrap();
    let w = LossWeights::default();
    let l3 = batch_loss(&pre, &[sample(&pre_cfg, 1)], &w, Stage::Pretrain, &NoPerceptual, None).unwrap();
    let l6 = batch_loss(&fine, &[sample(&tiny_cfg(6), 1)], &w, Stage::Finetune, &NoPerceptual, None).unwrap();
    assert!((l3.rgb - l6.rgb).abs() < 1e-6, "{} vs {}", l3.rgb, l6.rgb);
    assert!(init_finetune_heads(&pre, tiny_cfg(3)).is_err());
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let cfg = tiny_cfg(6);
    let mut params = Params::<f32>::init(cfg, 3).unwrap();
    let before = params.data.clone();
    let mut opt = AdamW::new(&params);
    let tc = TrainConfig { lr: 0.0, ..tiny_train(1) };
    let loss = train_step(&mut params, &mut opt, &[sample(&cfg, 2)], &tc, 0, &NoPerceptual).unwrap();
    assert!(loss.total > 0.0);
    assert_eq!(params.data, before);
}

#[test]
fn stage_and_channel_count_must_agree() {
    let tc = TrainConfig { stage: Stage::Pretrain, ..tiny_train(1) };
    assert!(tc.validate(&tiny_cfg(6)).is_err());
    assert!(tc.validate(&tiny_cfg(3)).is_ok());
}

fn short_run(steps: usize) -> (Params<f32>, Vec<f64>) {
    let cfg = tiny_cfg(6);
    let tc = tiny_train(steps);
    let aug = AugmentConfig { enabled: false, ..Default::default() };
    let data = SceneSet::generate(tc.scenes, tc.seed, &aug, &cfg).unwrap();
    let mut params = Params::<f32>::init(cfg, tc.seed).unwrap();
    let mut opt = AdamW::new(&params);
    let mut losses = Vec::new();
    train::fit(&mut params, &mut opt, &data, &tc, 0, &NoPerceptual, |_, l, _, _| {
        losses.push(l.total);
        Ok(())
    })
    .unwrap();
    (params, losses)
}

#[test]
fn short_training_is_deterministic_and_reduces_loss() {
    let (p1, l1) = short_run(150);
    let (p2, l2) = short_run(150);
    assert_eq!(p1.data, p2.data);
    assert_eq!(l1, l2);
    let head = mean(&l1[..20]);
    let tail = mean(&l1[l1.len() - 20..]);
    assert!(tail < 0.8 * head, "{head} -> {tail}");
}

#[test]
fn attention_is_permutation_equivariant() {
    let cfg = tiny_cfg(6);
    let params = Params::<f64>::init(cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (ni, nt, d) = (6, 5, cfg.dim);
    let tokens: Vec<f64> = (0..(ni + nt) * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let seq = TokenSequence { tokens, input_len: ni, target_len: nt, dim: d };
    let out = model::forward(&seq, &params).unwrap();
    let mut perm: Vec<usize> = (0..ni + nt).collect();
    perm[..ni].shuffle(&mut rng);
    perm[ni..].shuffle(&mut rng);
    let permuted: Vec<f64> = perm.iter().flat_map(|&r| seq.tokens[r * d..(r + 1) * d].iter().copied()).collect();
    let out2 = model::forward(&TokenSequence { tokens: permuted, ..seq.clone() }, &params).unwrap();
    for (k, &r) in perm.iter().enumerate() {
        for c in 0..d {
            assert!((out2.tokens[k * d + c] - out.tokens[r * d + c]).abs() < 1e-10);
        }
    }
}

#[test]
fn predictions_ignore_input_order_and_stay_in_range() {
    let cfg = tiny_cfg(6);
    let params = Params::<f64>::init(cfg, 6).unwrap();
    let scene = synth::sample_scene(6, Family::Door);
    let mut inputs = train::input_frames(&scene, &cfg, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cam = synth::random_camera(&mut rng, synth::default_intrinsics(cfg.width));
    let a = model::infer(&inputs, &cam, 0.3, &params).unwrap();
    inputs.reverse();
    let b = model::infer(&inputs, &cam, 0.3, &params).unwrap();
    for (x, y) in a.rgb.iter().zip(&b.rgb) {
        assert!((x - y).abs() < 1e-6);
    }
    let probs = a.fg_prob.iter().chain(a.part_prob.iter()).flatten().chain(a.rgb.iter());
    assert!(probs.into_iter().all(|&v| v > 0.0 && v < 1.0));
    assert!(a.depth.unwrap().iter().all(|&z| (0.1..=4.0).contains(&z)));
    inputs.pop();
    assert!(model::infer(&inputs, &cam, 0.3, &params).is_err());
}
