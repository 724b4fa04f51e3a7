//! Losses with analytic output gradients, AdamW with warmup/cosine schedule,
//! the training step, finite-difference gradient verification and the
//! procedural training-sample source.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{DEPTH_FAR, DEPTH_NEAR};
use crate::error::{LarmError, Result};
use crate::frame::SampleFrame;
use crate::model::{
    self, ForwardCache, ModelConfig, Params, SampleFeatures, CH_DEPTH, CH_FG, CH_PART,
};
use crate::nn::Real;
use crate::synth::{self, ArticulatedScene, Family, SceneParams};

const BCE_CLAMP: f64 = 1e-6;
const PART_BOX_PAD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_perceptual: f64,
    pub lambda_d: f64,
    pub lambda_mf: f64,
    pub lambda_mp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_perceptual: 0.1, lambda_d: 2.0, lambda_mf: 1.0, lambda_mp: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

/// Pluggable perceptual term; must add `d loss / d pred` into `grad` when given.
pub trait PerceptualHook: Send + Sync {
    fn loss(&self, pred: &[f64], gt: &[f32], width: usize, height: usize, grad: Option<&mut [f64]>) -> f64;
}

/// The default hook: contributes nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoPerceptual;

impl PerceptualHook for NoPerceptual {
    fn loss(&self, _: &[f64], _: &[f32], _: usize, _: usize, _: Option<&mut [f64]>) -> f64 {
        0.0
    }
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(LarmError::ShapeMismatch(format!("{what}: {a} vs {b}")))
    }
}

/// Mean squared error; adds `scale · dL/dpred` into `grad`.
pub fn mse_with_grad(pred: &[f64], gt: &[f32], scale: f64, grad: Option<&mut [f64]>) -> Result<f64> {
    check_len(pred.len(), gt.len(), "mse")?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let n = pred.len() as f64;
    let loss = pred.iter().zip(gt).map(|(&p, &g)| (p - g as f64).powi(2)).sum::<f64>() / n;
    if let Some(grad) = grad {
        for ((gr, &p), &g) in grad.iter_mut().zip(pred).zip(gt) {
            *gr += scale * 2.0 * (p - g as f64) / n;
        }
    }
    Ok(loss)
}

/// `MSE + λ_p · hook`.
pub fn loss_rgb(pred: &[f64], gt: &[f32], lambda_perceptual: f64, hook: &dyn PerceptualHook, width: usize, height: usize) -> Result<f64> {
    let mse = mse_with_grad(pred, gt, 1.0, None)?;
    Ok(mse + lambda_perceptual * hook.loss(pred, gt, width, height, None))
}

/// Mean absolute error over foreground pixels.
pub fn loss_depth_with_grad(pred: &[f64], gt: &[f32], fg: &[bool], scale: f64, grad: Option<&mut [f64]>) -> Result<f64> {
    check_len(pred.len(), gt.len(), "depth")?;
    check_len(pred.len(), fg.len(), "depth mask")?;
    let n = fg.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(LarmError::EmptyForeground);
    }
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = grad;
    for i in 0..pred.len() {
        if !fg[i] {
            continue;
        }
        let r = pred[i] - gt[i] as f64;
        loss += r.abs();
        if let Some(g) = grad.as_deref_mut() {
            g[i] += scale * inv * if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 };
        }
    }
    Ok(loss * inv)
}

pub fn loss_depth(pred: &[f64], gt: &[f32], fg: &[bool]) -> Result<f64> {
    loss_depth_with_grad(pred, gt, fg, 1.0, None)
}

/// `-ln` of the clamped probability of the true label, with its derivative
/// (zero inside the clamp).
fn bce(p: f64, y: bool) -> (f64, f64) {
    let q = if y { p } else { 1.0 - p };
    if q < BCE_CLAMP {
        (-BCE_CLAMP.ln(), 0.0)
    } else if q > 1.0 - BCE_CLAMP {
        (-(1.0 - BCE_CLAMP).ln(), 0.0)
    } else {
        let dq = -1.0 / q;
        (-q.ln(), if y { dq } else { -dq })
    }
}

/// Separated BCE restricted to pixel indices in `region` (all if `None`).
fn separated_bce(
    pred: &[f64],
    gt: &[bool],
    region: Option<(usize, usize, usize, usize, usize)>,
    scale: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let idx: Box<dyn Iterator<Item = usize>> = match region {
        None => Box::new(0..pred.len()),
        Some((x0, y0, x1, y1, w)) => Box::new((y0..y1).flat_map(move |y| (x0..x1).map(move |x| y * w + x))),
    };
    let idx: Vec<usize> = idx.collect();
    let npos = idx.iter().filter(|&&i| gt[i]).count();
    let nneg = idx.len() - npos;
    let (wp, wn) = (
        if npos > 0 { 0.5 / npos as f64 } else { 0.0 },
        if nneg > 0 { 0.5 / nneg as f64 } else { 0.0 },
    );
    let mut loss = 0.0;
    for &i in &idx {
        let w = if gt[i] { wp } else { wn };
        let (l, d) = bce(pred[i], gt[i]);
        loss += w * l;
        if let Some(g) = grad.as_deref_mut() {
            g[i] += scale * w * d;
        }
    }
    loss
}

pub fn loss_mask_separated_with_grad(pred: &[f64], gt: &[bool], scale: f64, grad: Option<&mut [f64]>) -> Result<f64> {
    check_len(pred.len(), gt.len(), "mask")?;
    Ok(separated_bce(pred, gt, None, scale, grad))
}

pub fn loss_mask_separated(pred: &[f64], gt: &[bool]) -> Result<f64> {
    loss_mask_separated_with_grad(pred, gt, 1.0, None)
}

/// Tight bounding box `(x0, y0, x1, y1)` (exclusive ends) of the mask, padded and clamped.
pub fn padded_bbox(mask: &[bool], width: usize, height: usize, pad: usize) -> Option<(usize, usize, usize, usize)> {
    let mut bb: Option<(usize, usize, usize, usize)> = None;
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] {
                bb = Some(match bb {
                    None => (x, y, x, y),
                    Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                });
            }
        }
    }
    bb.map(|(x0, y0, x1, y1)| (x0.saturating_sub(pad), y0.saturating_sub(pad), (x1 + 1 + pad).min(width), (y1 + 1 + pad).min(height)))
}

/// Full-image separated BCE plus separated BCE inside the padded GT part box.
pub fn loss_part_with_grad(pred: &[f64], gt: &[bool], width: usize, height: usize, scale: f64, mut grad: Option<&mut [f64]>) -> Result<f64> {
    check_len(pred.len(), gt.len(), "part mask")?;
    check_len(pred.len(), width * height, "part image")?;
    let full = separated_bce(pred, gt, None, scale, grad.as_deref_mut());
    let crop = match padded_bbox(gt, width, height, PART_BOX_PAD) {
        Some((x0, y0, x1, y1)) => separated_bce(pred, gt, Some((x0, y0, x1, y1, width)), scale, grad),
        None => 0.0,
    };
    Ok(full + crop)
}

pub fn loss_part(pred: &[f64], gt: &[bool], width: usize, height: usize) -> Result<f64> {
    loss_part_with_grad(pred, gt, width, height, 1.0, None)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rgb: f64,
    pub depth: f64,
    pub fg: f64,
    pub part: f64,
}

impl LossBreakdown {
    fn add_scaled(&mut self, o: &LossBreakdown, s: f64) {
        self.total += s * o.total;
        self.rgb += s * o.rgb;
        self.depth += s * o.depth;
        self.fg += s * o.fg;
        self.part += s * o.part;
    }
}

/// Loss over all decoded views. `outputs` are the model's sigmoid outputs for
/// every token; `views` holds the GT frames in token order (2N inputs, then
/// the target). RGB supervises the target view; depth and mask terms average
/// over every view (views without foreground are skipped for depth).
/// Gradients w.r.t. `outputs`, scaled by `scale`, are added into `d_outputs`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<T: Real>(
    outputs: &[T],
    views: &[&SampleFrame],
    cfg: &ModelConfig,
    weights: &LossWeights,
    stage: Stage,
    hook: &dyn PerceptualHook,
    scale: f64,
    mut d_outputs: Option<&mut [T]>,
) -> Result<LossBreakdown> {
    let nviews = 2 * cfg.views_per_state + 1;
    let (c, hw) = (cfg.out_channels, cfg.height * cfg.width);
    let per = cfg.patches_per_view() * cfg.output_width();
    check_len(outputs.len(), nviews * per, "model outputs")?;
    if stage == Stage::Finetune && (c != 6 || views.len() != nviews) {
        return Err(LarmError::MissingAuxiliaryGT);
    }
    if stage == Stage::Pretrain && views.is_empty() {
        return Err(LarmError::MissingAuxiliaryGT);
    }
    for v in views {
        check_len(v.pixel_count(), hw, "view size")?;
    }
    let target_idx = nviews - 1;
    let target_gt = views[views.len() - 1];
    let active: Vec<usize> = if stage == Stage::Finetune { (0..nviews).collect() } else { vec![target_idx] };
    let depth_views = active.iter().filter(|&&v| stage == Stage::Finetune && views[v].fg_count() > 0).count();
    let mut out = LossBreakdown::default();
    let range = DEPTH_FAR - DEPTH_NEAR;
    for &v in &active {
        let gt = if v == target_idx { target_gt } else { views[v] };
        let img: Vec<f64> = model::assemble_patches(&outputs[v * per..(v + 1) * per], cfg).iter().map(|x| x.to_f64()).collect();
        let want_grad = d_outputs.is_some();
        let mut gimg = if want_grad { vec![0.0; hw * c] } else { Vec::new() };
        let plane = |k: usize| (0..hw).map(|i| img[i * c + k]).collect::<Vec<f64>>();
        let scatter = |gimg: &mut Vec<f64>, k: usize, g: &[f64], mul: f64| {
            for i in 0..hw {
                gimg[i * c + k] += g[i] * mul;
            }
        };
        if v == target_idx {
            let rgb: Vec<f64> = (0..hw * 3).map(|i| img[(i / 3) * c + i % 3]).collect();
            let mut g = vec![0.0; hw * 3];
            let mse = mse_with_grad(&rgb, &target_gt.rgb, scale, want_grad.then_some(g.as_mut_slice()))?;
            let perc = if weights.lambda_perceptual != 0.0 {
                let mut gp = vec![0.0; hw * 3];
                let l = hook.loss(&rgb, &target_gt.rgb, cfg.width, cfg.height, want_grad.then_some(gp.as_mut_slice()));
                for (a, b) in g.iter_mut().zip(&gp) {
                    *a += scale * weights.lambda_perceptual * b;
                }
                l
            } else {
                0.0
            };
            out.rgb = mse + weights.lambda_perceptual * perc;
            if want_grad {
                for i in 0..hw * 3 {
                    gimg[(i / 3) * c + i % 3] += g[i];
                }
            }
        }
        if stage == Stage::Finetune {
            let nv = nviews as f64;
            if gt.fg_count() > 0 {
                let dpred: Vec<f64> = plane(CH_DEPTH).iter().map(|s| DEPTH_NEAR + range * s).collect();
                let s = scale * weights.lambda_d / depth_views as f64;
                let mut g = vec![0.0; hw];
                let l = loss_depth_with_grad(&dpred, &gt.depth, &gt.fg_mask, s, want_grad.then_some(g.as_mut_slice()))?;
                out.depth += l / depth_views as f64;
                if want_grad {
                    scatter(&mut gimg, CH_DEPTH, &g, range);
                }
            }
            let mut g = vec![0.0; hw];
            let l = loss_mask_separated_with_grad(&plane(CH_FG), &gt.fg_mask, scale * weights.lambda_mf / nv, want_grad.then_some(g.as_mut_slice()))?;
            out.fg += l / nv;
            if want_grad {
                scatter(&mut gimg, CH_FG, &g, 1.0);
            }
            let mut g = vec![0.0; hw];
            let l = loss_part_with_grad(&plane(CH_PART), &gt.part_mask, cfg.width, cfg.height, scale * weights.lambda_mp / nv, want_grad.then_some(g.as_mut_slice()))?;
            out.part += l / nv;
            if want_grad {
                scatter(&mut gimg, CH_PART, &g, 1.0);
            }
        }
        if let Some(d) = d_outputs.as_deref_mut() {
            let gt_t: Vec<T> = gimg.iter().map(|&x| T::from_f64(x)).collect();
            let mut rows = vec![T::ZERO; per];
            model::scatter_to_patches(&gt_t, cfg, &mut rows);
            for (a, b) in d[v * per..(v + 1) * per].iter_mut().zip(&rows) {
                *a += *b;
            }
        }
    }
    out.total = out.rgb + weights.lambda_d * out.depth + weights.lambda_mf * out.fg + weights.lambda_mp * out.part;
    Ok(out)
}

/// One model input/target pairing with its GT frames.
#[derive(Debug, Clone)]
pub struct TrainSample<T = f32> {
    pub features: SampleFeatures<T>,
    /// GT frames in token order: 2N ordered inputs, then the target.
    pub views: Vec<SampleFrame>,
}

impl<T: Real> TrainSample<T> {
    pub fn new(inputs: &[SampleFrame], target: SampleFrame, cfg: &ModelConfig) -> Result<Self> {
        let ordered: Vec<SampleFrame> = model::order_input_frames(inputs, cfg)?.into_iter().cloned().collect();
        let features = SampleFeatures {
            inputs: model::input_features(inputs, cfg)?,
            target: model::target_features(&target.camera, target.theta, cfg)?,
        };
        let mut views = ordered;
        views.push(target);
        Ok(Self { features, views })
    }

    pub fn cast<U: Real>(&self) -> TrainSample<U> {
        TrainSample { features: self.features.cast(), views: self.views.clone() }
    }
}

fn sample_loss_grad<T: Real>(
    params: &Params<T>,
    sample: &TrainSample<T>,
    weights: &LossWeights,
    stage: Stage,
    hook: &dyn PerceptualHook,
    scale: f64,
    grads: Option<&mut [T]>,
) -> Result<LossBreakdown> {
    let cache: ForwardCache<T> = model::forward_train(&sample.features, params)?;
    let views: Vec<&SampleFrame> = sample.views.iter().collect();
    match grads {
        None => total_loss(&cache.outputs, &views, &params.cfg, weights, stage, hook, scale, None),
        Some(g) => {
            let mut d_out = vec![T::ZERO; cache.outputs.len()];
            let loss = total_loss(&cache.outputs, &views, &params.cfg, weights, stage, hook, scale, Some(&mut d_out))?;
            model::backward(&sample.features, params, &cache, &d_out, g);
            Ok(loss)
        }
    }
}

/// Mean loss over a batch and, optionally, its exact parameter gradient.
pub fn batch_loss<T: Real>(
    params: &Params<T>,
    batch: &[TrainSample<T>],
    weights: &LossWeights,
    stage: Stage,
    hook: &dyn PerceptualHook,
    mut grads: Option<&mut [T]>,
) -> Result<LossBreakdown> {
    let mut out = LossBreakdown::default();
    let s = 1.0 / batch.len().max(1) as f64;
    for sample in batch {
        let l = sample_loss_grad(params, sample, weights, stage, hook, s, grads.as_deref_mut())?;
        out.add_scaled(&l, s);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub scale_range: (f64, f64),
    pub variants: usize,
    pub texture_reseed: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { enabled: true, scale_range: (0.75, 1.3), variants: 8, texture_reseed: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub grad_clip: f64,
    pub weights: LossWeights,
    pub augment: AugmentConfig,
    pub scenes: usize,
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Finetune,
            lr: 3e-4,
            steps: 30_000,
            batch_size: 4,
            seed: 0,
            warmup_frac: 0.05,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.95,
            grad_clip: 1.0,
            weights: LossWeights::default(),
            augment: AugmentConfig::default(),
            scenes: 32,
            log_every: 50,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    /// Checks the stage/model pairing; pretraining is rgb-only.
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let expect = match self.stage {
            Stage::Pretrain => 3,
            Stage::Finetune => 6,
        };
        if model.out_channels != expect {
            return Err(LarmError::ConfigMismatch(format!("{:?} stage needs {expect} output channels", self.stage)));
        }
        let w = &self.weights;
        if [w.lambda_perceptual, w.lambda_d, w.lambda_mf, w.lambda_mp].iter().any(|&x| !(x >= 0.0)) {
            return Err(LarmError::ConfigMismatch("loss weights must be non-negative".into()));
        }
        if self.batch_size == 0 || !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(LarmError::ConfigMismatch("batch_size, lr or warmup_frac out of range".into()));
        }
        Ok(())
    }

    /// Linear warmup then cosine decay to zero.
    pub fn lr_at(&self, step: usize) -> f64 {
        let warm = (self.warmup_frac * self.steps as f64).ceil() as usize;
        if step < warm {
            return self.lr * (step + 1) as f64 / warm as f64;
        }
        let span = (self.steps.saturating_sub(warm)).max(1) as f64;
        let t = ((step - warm) as f64 / span).min(1.0);
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Adaptive moments with decoupled weight decay on matrices only.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub decay: Vec<bool>,
    pub t: u64,
}

impl AdamW {
    pub fn new<T: Real>(params: &Params<T>) -> Self {
        let mut decay = vec![false; params.layout.total];
        for e in &params.layout.entries {
            if e.shape.len() >= 2 {
                decay[e.range.clone()].iter_mut().for_each(|d| *d = true);
            }
        }
        Self { m: vec![0.0; decay.len()], v: vec![0.0; decay.len()], decay, t: 0 }
    }

    pub fn update(&mut self, params: &mut [f32], grads: &[f32], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let step = (lr / bc1) as f32;
        let inv_bc2 = (1.0 / bc2) as f32;
        let wd = (lr * cfg.weight_decay) as f32;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            if self.decay[i] {
                params[i] -= wd * params[i];
            }
            params[i] -= step * self.m[i] / ((self.v[i] * inv_bc2).sqrt() + 1e-8);
        }
    }
}

/// One optimizer step on the mean batch loss. Gradients are clipped to
/// global norm `grad_clip`.
pub fn train_step(
    params: &mut Params<f32>,
    opt: &mut AdamW,
    batch: &[TrainSample],
    cfg: &TrainConfig,
    step: usize,
    hook: &dyn PerceptualHook,
) -> Result<LossBreakdown> {
    let mut grads = vec![0f32; params.layout.total];
    let loss = batch_loss(params, batch, &cfg.weights, cfg.stage, hook, Some(&mut grads))?;
    let norm = grads.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
    if !norm.is_finite() || !loss.total.is_finite() {
        return Err(LarmError::NonFiniteGradient);
    }
    if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
        let s = (cfg.grad_clip / norm) as f32;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    opt.update(&mut params.data, &grads, cfg.lr_at(step), cfg);
    Ok(loss)
}

/// Compares the analytic gradient with central differences on at least
/// `n_coords` coordinates spread over every tensor. Returns
/// `max |g_a − g_fd| / max(1e-8, |g_a| + |g_fd|)`. `corrupt` multiplies the
/// analytic gradient (negative control).
#[allow(clippy::too_many_arguments)]
pub fn grad_check(
    params: &Params<f64>,
    batch: &[TrainSample<f64>],
    weights: &LossWeights,
    stage: Stage,
    eps: f64,
    n_coords: usize,
    seed: u64,
    corrupt: Option<f64>,
) -> Result<f64> {
    let hook = NoPerceptual;
    let mut grads = vec![0.0; params.layout.total];
    batch_loss(params, batch, weights, stage, &hook, Some(&mut grads))?;
    if let Some(f) = corrupt {
        grads.iter_mut().for_each(|g| *g *= f);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = n_coords.div_ceil(params.layout.entries.len()).max(1);
    let mut coords = Vec::new();
    for e in &params.layout.entries {
        for _ in 0..per.min(e.range.len()) {
            coords.push(rng.random_range(e.range.clone()));
        }
    }
    let mut worst: f64 = 0.0;
    let mut p = params.clone();
    for &i in &coords {
        let orig = p.data[i];
        p.data[i] = orig + eps;
        let lp = batch_loss(&p, batch, weights, stage, &hook, None)?.total;
        p.data[i] = orig - eps;
        let lm = batch_loss(&p, batch, weights, stage, &hook, None)?.total;
        p.data[i] = orig;
        let fd = (lp - lm) / (2.0 * eps);
        let rel = (grads[i] - fd).abs() / (grads[i].abs() + fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Fixed set of scenes with fixed input views; targets are rendered on the fly.
#[derive(Debug, Clone)]
pub struct SceneSet {
    pub scenes: Vec<ArticulatedScene>,
    /// Per scene, 2N GT input frames (N at θ=0, N at θ=1).
    pub inputs: Vec<Vec<SampleFrame>>,
    input_features: Vec<Vec<f32>>,
    pub cfg: ModelConfig,
}

/// Scene recipe `i` of a training set: base object `i / variants`, variant
/// `i % variants`, families cycling over base objects.
pub fn scene_params(seed: u64, i: usize, aug: &AugmentConfig) -> SceneParams {
    let variants = if aug.enabled { aug.variants.max(1) } else { 1 };
    let (base, variant) = (i / variants, i % variants);
    let family = Family::ALL[base % Family::ALL.len()];
    let scene_seed = seed.wrapping_mul(1_000_003).wrapping_add(base as u64);
    if variant == 0 {
        return SceneParams::new(scene_seed, family);
    }
    let mut p = SceneParams::augmented(scene_seed, family, variant as u64, aug.scale_range);
    if !aug.texture_reseed {
        p.texture_seed = scene_seed;
    }
    p
}

/// `2N` input frames with stratified azimuths, alternating between the two states.
pub fn input_frames(scene: &ArticulatedScene, cfg: &ModelConfig, seed: u64) -> Vec<SampleFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intr = synth::default_intrinsics(cfg.width);
    let cams = synth::spread_cameras(&mut rng, intr, 2 * cfg.views_per_state);
    cams.iter().enumerate().map(|(k, cam)| synth::rasterize(scene, cam, (k % 2) as f64, 0)).collect()
}

impl SceneSet {
    pub fn generate(n: usize, seed: u64, aug: &AugmentConfig, cfg: &ModelConfig) -> Result<Self> {
        let mut scenes = Vec::with_capacity(n);
        let mut inputs = Vec::with_capacity(n);
        let mut input_features = Vec::with_capacity(n);
        for i in 0..n {
            let scene = synth::sample_scene_with(&scene_params(seed, i, aug));
            let frames = input_frames(&scene, cfg, seed ^ (0xA5A5_0000 + i as u64));
            input_features.push(model::input_features(&frames, cfg)?);
            inputs.push(frames);
            scenes.push(scene);
        }
        Ok(Self { scenes, inputs, input_features, cfg: *cfg })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// A training sample for scene `i` rendered from `camera` at `theta`.
    pub fn sample_at(&self, i: usize, camera: &crate::camera::Camera, theta: f64) -> Result<TrainSample> {
        let target = synth::rasterize(&self.scenes[i], camera, theta, 0);
        let mut views: Vec<SampleFrame> = model::order_input_frames(&self.inputs[i], &self.cfg)?.into_iter().cloned().collect();
        let features = SampleFeatures {
            inputs: self.input_features[i].clone(),
            target: model::target_features(camera, theta, &self.cfg)?,
        };
        views.push(target);
        Ok(TrainSample { features, views })
    }

    /// Random scene, random camera on the viewing band, random state (the two
    /// endpoint states are drawn with extra probability).
    pub fn sample(&self, rng: &mut impl Rng) -> Result<TrainSample> {
        let i = rng.random_range(0..self.len());
        let cam = synth::random_camera(rng, synth::default_intrinsics(self.cfg.width));
        let r: f64 = rng.random();
        let theta = if r < 0.15 {
            0.0
        } else if r < 0.3 {
            1.0
        } else {
            rng.random()
        };
        self.sample_at(i, &cam, theta)
    }
}

/// Runs `cfg.steps` optimizer steps starting at `start`. `on_step` sees every
/// step's loss and may checkpoint.
pub fn fit(
    params: &mut Params<f32>,
    opt: &mut AdamW,
    data: &SceneSet,
    cfg: &TrainConfig,
    start: usize,
    hook: &dyn PerceptualHook,
    mut on_step: impl FnMut(usize, &LossBreakdown, &Params<f32>, &AdamW) -> Result<()>,
) -> Result<()> {
    cfg.validate(&params.cfg)?;
    for step in start..cfg.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(step as u64));
        let batch = (0..cfg.batch_size).map(|_| data.sample(&mut rng)).collect::<Result<Vec<_>>>()?;
        let loss = train_step(params, opt, &batch, cfg, step, hook)?;
        on_step(step, &loss, params, opt)?;
    }
    Ok(())
}

/// CSV header of the loss log.
pub const LOSS_LOG_HEADER: &str = "step,loss,loss_rgb,loss_d,loss_mf,loss_mp";

pub fn loss_log_line(step: usize, l: &LossBreakdown) -> String {
    format!("{step},{:.6},{:.6},{:.6},{:.6},{:.6}", l.total, l.rgb, l.depth, l.fg, l.part)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_offset() {
        let gt = vec![0.3f32; 12];
        let pred: Vec<f64> = gt.iter().map(|&g| g as f64 + 0.1).collect();
        let l = loss_rgb(&pred, &gt, 0.1, &NoPerceptual, 2, 2).unwrap();
        assert!((l - 0.01).abs() < 1e-9);
    }

    #[test]
    fn bce_half_is_ln2() {
        let gt = [true, false, false, true, false];
        let l = loss_mask_separated(&[0.5; 5], &gt).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_clamped_perfect() {
        let gt = [true, false, true];
        let pred = [1.0, 0.0, 1.0];
        assert!(loss_mask_separated(&pred, &gt).unwrap() <= 2e-6);
    }

    #[test]
    fn lr_schedule_shape() {
        let cfg = TrainConfig { steps: 100, lr: 1.0, warmup_frac: 0.05, ..Default::default() };
        assert!((cfg.lr_at(4) - 1.0).abs() < 1e-12);
        assert!(cfg.lr_at(0) < cfg.lr_at(3));
        assert!(cfg.lr_at(50) < 1.0 && cfg.lr_at(50) > 0.0);
        assert!(cfg.lr_at(99) < 1e-2);
    }

    #[test]
    fn padded_box_clamps() {
        let mut m = vec![false; 16 * 16];
        m[15 * 16 + 15] = true;
        assert_eq!(padded_bbox(&m, 16, 16, 4), Some((11, 11, 16, 16)));
        assert_eq!(padded_bbox(&vec![false; 4], 2, 2, 4), None);
    }
}
