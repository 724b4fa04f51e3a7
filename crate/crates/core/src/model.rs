//! Joint-state-conditioned patch tokenizer, decoder-only transformer and
//! sigmoid patch decoder.
//!
//! Token layout: `2N` input views ordered (state, view, row-major patch),
//! followed by the target view's row-major patches. Every token attends to
//! every other token; there are no positional embeddings besides the
//! Plücker rays themselves.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{compute_plucker_map, Camera, PluckerMap, DEPTH_FAR, DEPTH_NEAR};
use crate::error::{LarmError, Result};
use crate::frame::SampleFrame;
use crate::nn::{self, Real};

/// Output channel order of the finetuned head.
pub const CH_DEPTH: usize = 3;
pub const CH_FG: usize = 4;
pub const CH_PART: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub height: usize,
    pub width: usize,
    pub views_per_state: usize,
    /// 3 (rgb) during pretraining, 6 (rgb, depth, fg, part) after.
    pub out_channels: usize,
    pub mlp_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 64x64 images, 8px patches, width 128, 4 blocks, 4 heads, 3 views per state.
    pub fn desk() -> Self {
        Self {
            patch_size: 8,
            dim: 128,
            layers: 4,
            heads: 4,
            height: 64,
            width: 64,
            views_per_state: 3,
            out_channels: 6,
            mlp_ratio: 4,
        }
    }

    /// The published large configuration (512px, width 768, 12 blocks).
    pub fn reference() -> Self {
        Self { patch_size: 8, dim: 768, layers: 12, heads: 12, height: 512, width: 512, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        let bad = |m: &str| Err(LarmError::ConfigMismatch(m.to_string()));
        if p == 0 || self.height % p != 0 || self.width % p != 0 {
            return bad("patch size must divide the image size");
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return bad("dim must be divisible by heads");
        }
        if self.out_channels != 3 && self.out_channels != 6 {
            return bad("out_channels must be 3 or 6");
        }
        if self.views_per_state == 0 || self.mlp_ratio == 0 {
            return bad("views_per_state and mlp_ratio must be positive");
        }
        Ok(())
    }

    pub fn patches_per_view(&self) -> usize {
        (self.height / self.patch_size) * (self.width / self.patch_size)
    }

    /// `l_x = 2 N H W / p²`.
    pub fn input_tokens(&self) -> usize {
        2 * self.views_per_state * self.patches_per_view()
    }

    /// `l_q = H W / p²`.
    pub fn target_tokens(&self) -> usize {
        self.patches_per_view()
    }

    pub fn seq_len(&self) -> usize {
        self.input_tokens() + self.target_tokens()
    }

    /// `9p² + 1`: rgb patch, Plücker patch and the state scalar.
    pub fn input_feature_width(&self) -> usize {
        9 * self.patch_size * self.patch_size + 1
    }

    /// `6p² + 1`: Plücker patch and the state scalar.
    pub fn target_feature_width(&self) -> usize {
        6 * self.patch_size * self.patch_size + 1
    }

    pub fn output_width(&self) -> usize {
        self.patch_size * self.patch_size * self.out_channels
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.mlp_ratio * self.dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub qkv_w: Range<usize>,
    pub qkv_b: Range<usize>,
    pub out_w: Range<usize>,
    pub out_b: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub fc1_w: Range<usize>,
    pub fc1_b: Range<usize>,
    pub fc2_w: Range<usize>,
    pub fc2_b: Range<usize>,
}

/// Flat parameter layout: every tensor is a named range of one buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub entries: Vec<TensorEntry>,
    pub total: usize,
    pub input_w: Range<usize>,
    pub input_b: Range<usize>,
    pub target_w: Range<usize>,
    pub target_b: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub head_norm_g: Range<usize>,
    pub head_norm_b: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut entries = Vec::new();
        let mut total = 0;
        let mut add = |name: String, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            let range = total..total + len;
            total += len;
            entries.push(TensorEntry { name, shape, range: range.clone() });
            range
        };
        let d = cfg.dim;
        let input_w = add("input_proj.weight".into(), vec![cfg.input_feature_width(), d]);
        let input_b = add("input_proj.bias".into(), vec![d]);
        let target_w = add("target_proj.weight".into(), vec![cfg.target_feature_width(), d]);
        let target_b = add("target_proj.bias".into(), vec![d]);
        let blocks = (0..cfg.layers)
            .map(|l| BlockLayout {
                ln1_g: add(format!("blocks.{l}.ln1.gamma"), vec![d]),
                ln1_b: add(format!("blocks.{l}.ln1.beta"), vec![d]),
                qkv_w: add(format!("blocks.{l}.attn.qkv.weight"), vec![d, 3 * d]),
                qkv_b: add(format!("blocks.{l}.attn.qkv.bias"), vec![3 * d]),
                out_w: add(format!("blocks.{l}.attn.out.weight"), vec![d, d]),
                out_b: add(format!("blocks.{l}.attn.out.bias"), vec![d]),
                ln2_g: add(format!("blocks.{l}.ln2.gamma"), vec![d]),
                ln2_b: add(format!("blocks.{l}.ln2.beta"), vec![d]),
                fc1_w: add(format!("blocks.{l}.mlp.fc1.weight"), vec![d, cfg.hidden_dim()]),
                fc1_b: add(format!("blocks.{l}.mlp.fc1.bias"), vec![cfg.hidden_dim()]),
                fc2_w: add(format!("blocks.{l}.mlp.fc2.weight"), vec![cfg.hidden_dim(), d]),
                fc2_b: add(format!("blocks.{l}.mlp.fc2.bias"), vec![d]),
            })
            .collect();
        let head_norm_g = add("head_norm.gamma".into(), vec![d]);
        let head_norm_b = add("head_norm.beta".into(), vec![d]);
        let head_w = add("head.weight".into(), vec![d, cfg.output_width()]);
        let head_b = add("head.bias".into(), vec![cfg.output_width()]);
        Self {
            entries,
            total,
            input_w,
            input_b,
            target_w,
            target_b,
            blocks,
            head_norm_g,
            head_norm_b,
            head_w,
            head_b,
        }
    }
}

/// All learnable tensors of the model in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub cfg: ModelConfig,
    pub layout: Layout,
    pub data: Vec<T>,
}

pub type ModelParams = Params<f32>;

impl<T: Real> Params<T> {
    pub fn zeros(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let data = vec![T::ZERO; layout.total];
        Ok(Self { cfg, layout, data })
    }

    /// Normal(0, 0.02) weights, residual projections scaled by `1/sqrt(2L)`,
    /// unit norm gains and zero biases.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let resid = 0.02 / (2.0 * cfg.layers.max(1) as f64).sqrt();
        for e in p.layout.entries.clone() {
            let std = if e.name.ends_with("gamma") {
                p.data[e.range.clone()].iter_mut().for_each(|v| *v = T::ONE);
                continue;
            } else if e.name.ends_with("bias") || e.name.ends_with("beta") {
                continue;
            } else if e.name.ends_with("attn.out.weight") || e.name.ends_with("fc2.weight") {
                resid
            } else {
                0.02
            };
            let normal = Normal::new(0.0, std).expect("normal");
            for v in &mut p.data[e.range] {
                *v = T::from_f64(normal.sample(&mut rng));
            }
        }
        Ok(p)
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.entries.iter().find(|e| e.name == name).map(|e| &self.data[e.range.clone()])
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params { cfg: self.cfg, layout: self.layout.clone(), data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Warm-starts a 6-channel model from a 3-channel one: every tensor is
/// copied, and the output columns of the depth and mask channels repeat the
/// columns of rgb channel 0.
pub fn init_finetune_heads<T: Real>(pretrained: &Params<T>, cfg: ModelConfig) -> Result<Params<T>> {
    let src = pretrained.cfg;
    if src.out_channels != 3 || cfg.out_channels != 6 || (ModelConfig { out_channels: 6, ..src }) != cfg {
        return Err(LarmError::ConfigMismatch(format!(
            "finetune heads need a 3-channel source with otherwise equal config ({src:?} vs {cfg:?})"
        )));
    }
    let mut dst = Params::<T>::zeros(cfg)?;
    for (se, de) in pretrained.layout.entries.iter().zip(dst.layout.entries.clone()) {
        if se.name.starts_with("head.") {
            continue;
        }
        dst.data[de.range].copy_from_slice(&pretrained.data[se.range.clone()]);
    }
    let pp = cfg.patch_size * cfg.patch_size;
    let (sw, dw) = (src.output_width(), cfg.output_width());
    let map = |k: usize, ch: usize| k * 6 + ch;
    let src_col = |k: usize, ch: usize| k * 3 + ch;
    for r in 0..cfg.dim {
        for k in 0..pp {
            for ch in 0..6 {
                let from = src_col(k, if ch < 3 { ch } else { 0 });
                dst.data[dst.layout.head_w.start + r * dw + map(k, ch)] =
                    pretrained.data[pretrained.layout.head_w.start + r * sw + from];
            }
        }
    }
    for k in 0..pp {
        for ch in 0..6 {
            let from = src_col(k, if ch < 3 { ch } else { 0 });
            dst.data[dst.layout.head_b.start + map(k, ch)] = pretrained.data[pretrained.layout.head_b.start + from];
        }
    }
    Ok(dst)
}

/// Patch-major features of one input view: per patch `[rgb 3p², plücker 6p², θ]`.
pub fn input_view_features<T: Real>(rgb: &[f32], plucker: &PluckerMap, theta: f64, cfg: &ModelConfig) -> Result<Vec<T>> {
    let (h, w, p) = (cfg.height, cfg.width, cfg.patch_size);
    if rgb.len() != h * w * 3 || plucker.width != w || plucker.height != h {
        return Err(LarmError::ShapeMismatch(format!(
            "input view {}x{} (rgb len {}) vs model {}x{}",
            plucker.width,
            plucker.height,
            rgb.len(),
            w,
            h
        )));
    }
    let fw = cfg.input_feature_width();
    let mut out = vec![T::ZERO; cfg.patches_per_view() * fw];
    let (pw, pp) = (w / p, p * p);
    for y in 0..h {
        for x in 0..w {
            let row = (y / p) * pw + x / p;
            let k = (y % p) * p + x % p;
            let base = row * fw;
            let pix = y * w + x;
            for c in 0..3 {
                out[base + k * 3 + c] = T::from_f64(rgb[pix * 3 + c] as f64);
            }
            for c in 0..6 {
                out[base + 3 * pp + k * 6 + c] = T::from_f64(plucker.data[pix * 6 + c]);
            }
        }
    }
    for row in out.chunks_exact_mut(fw) {
        row[fw - 1] = T::from_f64(theta);
    }
    Ok(out)
}

/// Patch-major features of the target view: per patch `[plücker 6p², θ]`.
pub fn target_view_features<T: Real>(plucker: &PluckerMap, theta: f64, cfg: &ModelConfig) -> Result<Vec<T>> {
    let (h, w, p) = (cfg.height, cfg.width, cfg.patch_size);
    if plucker.width != w || plucker.height != h {
        return Err(LarmError::ShapeMismatch(format!("target view {}x{} vs model {w}x{h}", plucker.width, plucker.height)));
    }
    let fw = cfg.target_feature_width();
    let mut out = vec![T::ZERO; cfg.patches_per_view() * fw];
    let pw = w / p;
    for y in 0..h {
        for x in 0..w {
            let row = (y / p) * pw + x / p;
            let k = (y % p) * p + x % p;
            let pix = y * w + x;
            for c in 0..6 {
                out[row * fw + k * 6 + c] = T::from_f64(plucker.data[pix * 6 + c]);
            }
        }
    }
    for row in out.chunks_exact_mut(fw) {
        row[fw - 1] = T::from_f64(theta);
    }
    Ok(out)
}

pub fn tokenize_input_view<T: Real>(
    rgb: &[f32],
    plucker: &PluckerMap,
    theta: f64,
    params: &Params<T>,
) -> Result<Vec<T>> {
    let cfg = &params.cfg;
    let feats = input_view_features::<T>(rgb, plucker, theta, cfg)?;
    let mut out = vec![T::ZERO; cfg.patches_per_view() * cfg.dim];
    let l = &params.layout;
    nn::linear(
        &feats,
        &params.data[l.input_w.clone()],
        &params.data[l.input_b.clone()],
        &mut out,
        cfg.patches_per_view(),
        cfg.input_feature_width(),
        cfg.dim,
    );
    Ok(out)
}

pub fn tokenize_target_view<T: Real>(plucker: &PluckerMap, theta: f64, params: &Params<T>) -> Result<Vec<T>> {
    let cfg = &params.cfg;
    let feats = target_view_features::<T>(plucker, theta, cfg)?;
    let mut out = vec![T::ZERO; cfg.patches_per_view() * cfg.dim];
    let l = &params.layout;
    nn::linear(
        &feats,
        &params.data[l.target_w.clone()],
        &params.data[l.target_b.clone()],
        &mut out,
        cfg.patches_per_view(),
        cfg.target_feature_width(),
        cfg.dim,
    );
    Ok(out)
}

/// Token matrix (`l x d`, row-major): input tokens first, then target tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<T> {
    pub tokens: Vec<T>,
    pub input_len: usize,
    pub target_len: usize,
    pub dim: usize,
}

impl<T: Real> TokenSequence<T> {
    pub fn len(&self) -> usize {
        self.input_len + self.target_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn target_rows(&self) -> &[T] {
        &self.tokens[self.input_len * self.dim..]
    }

    pub fn input_rows(&self) -> &[T] {
        &self.tokens[..self.input_len * self.dim]
    }
}

/// Per-sample activations kept for the backward pass.
#[derive(Debug, Clone)]
struct BlockCache<T> {
    ln1_xhat: Vec<T>,
    ln1_rstd: Vec<T>,
    a: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    attn: Vec<T>,
    ln2_xhat: Vec<T>,
    ln2_rstd: Vec<T>,
    b: Vec<T>,
    f: Vec<T>,
    g: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    blocks: Vec<BlockCache<T>>,
    head_xhat: Vec<T>,
    head_rstd: Vec<T>,
    head_in: Vec<T>,
    /// Sigmoid outputs for every token, `l x p²c`.
    pub outputs: Vec<T>,
}

fn block_forward<T: Real>(x: &mut [T], params: &Params<T>, layer: usize, l: usize, keep: bool) -> Option<BlockCache<T>> {
    let cfg = &params.cfg;
    let bl = &params.layout.blocks[layer];
    let p = &params.data;
    let (d, hd, nh, hid) = (cfg.dim, cfg.head_dim(), cfg.heads, cfg.hidden_dim());
    let mut ln1_xhat = vec![T::ZERO; l * d];
    let mut ln1_rstd = vec![T::ZERO; l];
    let mut a = vec![T::ZERO; l * d];
    nn::layer_norm(x, &p[bl.ln1_g.clone()], &p[bl.ln1_b.clone()], &mut a, &mut ln1_xhat, &mut ln1_rstd, d);
    let mut qkv = vec![T::ZERO; l * 3 * d];
    nn::linear(&a, &p[bl.qkv_w.clone()], &p[bl.qkv_b.clone()], &mut qkv, l, d, 3 * d);
    let scale = T::from_f64(1.0 / (hd as f64).sqrt());
    let mut probs = vec![T::ZERO; nh * l * l];
    let mut attn = vec![T::ZERO; l * d];
    let s3 = (3 * d) as isize;
    for h in 0..nh {
        let pr = &mut probs[h * l * l..(h + 1) * l * l];
        T::gemm(l, hd, l, scale, &qkv[h * hd..], s3, 1, &qkv[d + h * hd..], 1, s3, T::ZERO, pr, l as isize, 1);
        nn::softmax_rows(pr, l);
        T::gemm(l, l, hd, T::ONE, pr, l as isize, 1, &qkv[2 * d + h * hd..], s3, 1, T::ZERO, &mut attn[h * hd..], d as isize, 1);
    }
    let mut proj = vec![T::ZERO; l * d];
    nn::linear(&attn, &p[bl.out_w.clone()], &p[bl.out_b.clone()], &mut proj, l, d, d);
    for (xi, pi) in x.iter_mut().zip(&proj) {
        *xi += *pi;
    }
    let mut ln2_xhat = vec![T::ZERO; l * d];
    let mut ln2_rstd = vec![T::ZERO; l];
    let mut b = vec![T::ZERO; l * d];
    nn::layer_norm(x, &p[bl.ln2_g.clone()], &p[bl.ln2_b.clone()], &mut b, &mut ln2_xhat, &mut ln2_rstd, d);
    let mut f = vec![T::ZERO; l * hid];
    nn::linear(&b, &p[bl.fc1_w.clone()], &p[bl.fc1_b.clone()], &mut f, l, d, hid);
    let g: Vec<T> = f.iter().map(|&v| nn::gelu(v)).collect();
    nn::linear(&g, &p[bl.fc2_w.clone()], &p[bl.fc2_b.clone()], &mut proj, l, hid, d);
    for (xi, pi) in x.iter_mut().zip(&proj) {
        *xi += *pi;
    }
    keep.then_some(BlockCache { ln1_xhat, ln1_rstd, a, qkv, probs, attn, ln2_xhat, ln2_rstd, b, f, g })
}

fn check_finite<T: Real>(x: &[T], what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LarmError::NonFiniteActivation(what.to_string()))
    }
}

/// Runs all transformer blocks over the full sequence.
pub fn forward<T: Real>(seq: &TokenSequence<T>, params: &Params<T>) -> Result<TokenSequence<T>> {
    let cfg = &params.cfg;
    if seq.dim != cfg.dim || seq.tokens.len() != seq.len() * seq.dim {
        return Err(LarmError::ShapeMismatch("token sequence".into()));
    }
    let mut x = seq.tokens.clone();
    for layer in 0..cfg.layers {
        block_forward(&mut x, params, layer, seq.len(), false);
        check_finite(&x, &format!("block {layer}"))?;
    }
    Ok(TokenSequence { tokens: x, ..*seq })
}

fn head_forward<T: Real>(x: &[T], params: &Params<T>, rows: usize) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
    let cfg = &params.cfg;
    let lay = &params.layout;
    let d = cfg.dim;
    let ow = cfg.output_width();
    let mut xhat = vec![T::ZERO; rows * d];
    let mut rstd = vec![T::ZERO; rows];
    let mut n = vec![T::ZERO; rows * d];
    nn::layer_norm(x, &params.data[lay.head_norm_g.clone()], &params.data[lay.head_norm_b.clone()], &mut n, &mut xhat, &mut rstd, d);
    let mut out = vec![T::ZERO; rows * ow];
    nn::linear(&n, &params.data[lay.head_w.clone()], &params.data[lay.head_b.clone()], &mut out, rows, d, ow);
    for v in &mut out {
        *v = nn::sigmoid(*v);
    }
    (out, xhat, rstd, n)
}

/// Head normalization, linear `d -> p²c`, sigmoid, and patch reassembly into
/// an `H x W x c` image. `tokens` must hold exactly one view (`HW/p²` rows).
pub fn decode_patches<T: Real>(tokens: &[T], params: &Params<T>) -> Result<Vec<T>> {
    let cfg = &params.cfg;
    let rows = cfg.patches_per_view();
    if tokens.len() != rows * cfg.dim {
        return Err(LarmError::ShapeMismatch(format!("decode expects {rows} rows of width {}", cfg.dim)));
    }
    let (out, ..) = head_forward(tokens, params, rows);
    Ok(assemble_patches(&out, cfg))
}

/// Rows of `p²c` patch values to an `H x W x c` image.
pub fn assemble_patches<T: Real>(rows: &[T], cfg: &ModelConfig) -> Vec<T> {
    let (h, w, p, c) = (cfg.height, cfg.width, cfg.patch_size, cfg.out_channels);
    let pw = w / p;
    let ow = cfg.output_width();
    let mut img = vec![T::ZERO; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let row = (y / p) * pw + x / p;
            let k = (y % p) * p + x % p;
            let src = row * ow + k * c;
            img[(y * w + x) * c..(y * w + x + 1) * c].copy_from_slice(&rows[src..src + c]);
        }
    }
    img
}

/// Inverse of [`assemble_patches`] (used for output gradients).
pub fn scatter_to_patches<T: Real>(img: &[T], cfg: &ModelConfig, rows: &mut [T]) {
    let (h, w, p, c) = (cfg.height, cfg.width, cfg.patch_size, cfg.out_channels);
    let pw = w / p;
    let ow = cfg.output_width();
    for y in 0..h {
        for x in 0..w {
            let row = (y / p) * pw + x / p;
            let k = (y % p) * p + x % p;
            let dst = row * ow + k * c;
            rows[dst..dst + c].copy_from_slice(&img[(y * w + x) * c..(y * w + x + 1) * c]);
        }
    }
}

/// Patch features of one training/inference sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFeatures<T> {
    /// `l_x x (9p²+1)`.
    pub inputs: Vec<T>,
    /// `l_q x (6p²+1)`.
    pub target: Vec<T>,
}

impl<T: Real> SampleFeatures<T> {
    pub fn cast<U: Real>(&self) -> SampleFeatures<U> {
        SampleFeatures {
            inputs: self.inputs.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            target: self.target.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Orders input frames as (state 0 views, state 1 views) and checks that
/// exactly two distinct states with `N` views each are present.
pub fn order_input_frames<'a>(frames: &'a [SampleFrame], cfg: &ModelConfig) -> Result<Vec<&'a SampleFrame>> {
    let n = cfg.views_per_state;
    let mut states: Vec<f64> = Vec::new();
    for f in frames {
        if !states.iter().any(|&s| s == f.theta) {
            states.push(f.theta);
        }
    }
    states.sort_by(|a, b| a.total_cmp(b));
    let counts: Vec<usize> = states.iter().map(|&s| frames.iter().filter(|f| f.theta == s).count()).collect();
    if states.len() != 2 || counts.iter().any(|&c| c != n) {
        return Err(LarmError::StateCountMismatch {
            expected: n,
            detail: format!("states {states:?} with view counts {counts:?}"),
        });
    }
    Ok(states.iter().flat_map(|&s| frames.iter().filter(move |f| f.theta == s)).collect())
}

pub fn input_features<T: Real>(frames: &[SampleFrame], cfg: &ModelConfig) -> Result<Vec<T>> {
    let ordered = order_input_frames(frames, cfg)?;
    let mut out = Vec::with_capacity(cfg.input_tokens() * cfg.input_feature_width());
    for f in ordered {
        let pl = compute_plucker_map(&f.camera.intrinsics, &f.camera.pose);
        out.extend(input_view_features::<T>(&f.rgb, &pl, f.theta, cfg)?);
    }
    Ok(out)
}

pub fn target_features<T: Real>(camera: &Camera, theta: f64, cfg: &ModelConfig) -> Result<Vec<T>> {
    let pl = compute_plucker_map(&camera.intrinsics, &camera.pose);
    target_view_features(&pl, theta, cfg)
}

fn embed<T: Real>(feats: &SampleFeatures<T>, params: &Params<T>) -> Result<Vec<T>> {
    let cfg = &params.cfg;
    let lay = &params.layout;
    let d = cfg.dim;
    let (lx, lq) = (cfg.input_tokens(), cfg.target_tokens());
    if feats.inputs.len() != lx * cfg.input_feature_width() || feats.target.len() != lq * cfg.target_feature_width() {
        return Err(LarmError::ShapeMismatch("sample features".into()));
    }
    let mut x = vec![T::ZERO; (lx + lq) * d];
    let (xi, xt) = x.split_at_mut(lx * d);
    nn::linear(&feats.inputs, &params.data[lay.input_w.clone()], &params.data[lay.input_b.clone()], xi, lx, cfg.input_feature_width(), d);
    nn::linear(&feats.target, &params.data[lay.target_w.clone()], &params.data[lay.target_b.clone()], xt, lq, cfg.target_feature_width(), d);
    Ok(x)
}

/// Full forward pass keeping activations for [`backward`].
pub fn forward_train<T: Real>(feats: &SampleFeatures<T>, params: &Params<T>) -> Result<ForwardCache<T>> {
    let cfg = &params.cfg;
    let l = cfg.seq_len();
    let mut x = embed(feats, params)?;
    let mut blocks = Vec::with_capacity(cfg.layers);
    for layer in 0..cfg.layers {
        blocks.push(block_forward(&mut x, params, layer, l, true).expect("cache"));
        check_finite(&x, &format!("block {layer}"))?;
    }
    let (outputs, head_xhat, head_rstd, head_in) = head_forward(&x, params, l);
    check_finite(&outputs, "head")?;
    Ok(ForwardCache { blocks, head_xhat, head_rstd, head_in, outputs })
}

/// Forward pass without caches; returns sigmoid outputs for every token.
pub fn forward_outputs<T: Real>(feats: &SampleFeatures<T>, params: &Params<T>) -> Result<Vec<T>> {
    let cfg = &params.cfg;
    let l = cfg.seq_len();
    let mut x = embed(feats, params)?;
    for layer in 0..cfg.layers {
        block_forward(&mut x, params, layer, l, false);
        check_finite(&x, &format!("block {layer}"))?;
    }
    Ok(head_forward(&x, params, l).0)
}

/// Accumulates parameter gradients into `grads` given `d_outputs`, the loss
/// gradient with respect to the sigmoid outputs (`l x p²c`).
pub fn backward<T: Real>(feats: &SampleFeatures<T>, params: &Params<T>, cache: &ForwardCache<T>, d_outputs: &[T], grads: &mut [T]) {
    let cfg = &params.cfg;
    let lay = &params.layout;
    let p = &params.data;
    let l = cfg.seq_len();
    let (d, hd, nh, hid, ow) = (cfg.dim, cfg.head_dim(), cfg.heads, cfg.hidden_dim(), cfg.output_width());

    let dlogits: Vec<T> = d_outputs.iter().zip(&cache.outputs).map(|(&g, &s)| g * s * (T::ONE - s)).collect();
    let mut dn = vec![T::ZERO; l * d];
    {
        let (gw, gb) = split2(grads, &lay.head_w, &lay.head_b);
        nn::linear_backward(&cache.head_in, &p[lay.head_w.clone()], &dlogits, Some(&mut dn), gw, gb, l, d, ow);
    }
    let mut dx = vec![T::ZERO; l * d];
    {
        let (gg, gb) = split2(grads, &lay.head_norm_g, &lay.head_norm_b);
        nn::layer_norm_backward(&dn, &cache.head_xhat, &cache.head_rstd, &p[lay.head_norm_g.clone()], &mut dx, gg, gb, d);
    }

    let s3 = (3 * d) as isize;
    let scale = T::from_f64(1.0 / (hd as f64).sqrt());
    let mut dg = vec![T::ZERO; l * hid];
    let mut db_ = vec![T::ZERO; l * d];
    let mut dattn = vec![T::ZERO; l * d];
    let mut dqkv = vec![T::ZERO; l * 3 * d];
    let mut dp = vec![T::ZERO; l * l];
    let mut da = vec![T::ZERO; l * d];
    for layer in (0..cfg.layers).rev() {
        let bl = &lay.blocks[layer];
        let c = &cache.blocks[layer];
        // MLP branch.
        {
            let (gw, gb) = split2(grads, &bl.fc2_w, &bl.fc2_b);
            nn::linear_backward(&c.g, &p[bl.fc2_w.clone()], &dx, Some(&mut dg), gw, gb, l, hid, d);
        }
        for (gi, &fi) in dg.iter_mut().zip(&c.f) {
            *gi *= nn::gelu_grad(fi);
        }
        {
            let (gw, gb) = split2(grads, &bl.fc1_w, &bl.fc1_b);
            nn::linear_backward(&c.b, &p[bl.fc1_w.clone()], &dg, Some(&mut db_), gw, gb, l, d, hid);
        }
        {
            let (gg, gb) = split2(grads, &bl.ln2_g, &bl.ln2_b);
            nn::layer_norm_backward(&db_, &c.ln2_xhat, &c.ln2_rstd, &p[bl.ln2_g.clone()], &mut dx, gg, gb, d);
        }
        // Attention branch.
        {
            let (gw, gb) = split2(grads, &bl.out_w, &bl.out_b);
            nn::linear_backward(&c.attn, &p[bl.out_w.clone()], &dx, Some(&mut dattn), gw, gb, l, d, d);
        }
        for h in 0..nh {
            let pr = &c.probs[h * l * l..(h + 1) * l * l];
            let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
            // dP = dO Vᵀ
            T::gemm(l, hd, l, T::ONE, &dattn[qo..], d as isize, 1, &c.qkv[vo..], 1, s3, T::ZERO, &mut dp, l as isize, 1);
            // dV = Pᵀ dO
            T::gemm(l, l, hd, T::ONE, pr, 1, l as isize, &dattn[qo..], d as isize, 1, T::ZERO, &mut dqkv[vo..], s3, 1);
            nn::softmax_backward_rows(pr, &mut dp, l);
            // dQ = scale dS K ; dK = scale dSᵀ Q
            T::gemm(l, l, hd, scale, &dp, l as isize, 1, &c.qkv[ko..], s3, 1, T::ZERO, &mut dqkv[qo..], s3, 1);
            T::gemm(l, l, hd, scale, &dp, 1, l as isize, &c.qkv[qo..], s3, 1, T::ZERO, &mut dqkv[ko..], s3, 1);
        }
        {
            let (gw, gb) = split2(grads, &bl.qkv_w, &bl.qkv_b);
            nn::linear_backward(&c.a, &p[bl.qkv_w.clone()], &dqkv, Some(&mut da), gw, gb, l, d, 3 * d);
        }
        {
            let (gg, gb) = split2(grads, &bl.ln1_g, &bl.ln1_b);
            nn::layer_norm_backward(&da, &c.ln1_xhat, &c.ln1_rstd, &p[bl.ln1_g.clone()], &mut dx, gg, gb, d);
        }
    }

    // Token projections.
    let (lx, lq) = (cfg.input_tokens(), cfg.target_tokens());
    {
        let (gw, gb) = split2(grads, &lay.input_w, &lay.input_b);
        nn::linear_backward(&feats.inputs, &p[lay.input_w.clone()], &dx[..lx * d], None, gw, gb, lx, cfg.input_feature_width(), d);
    }
    {
        let (gw, gb) = split2(grads, &lay.target_w, &lay.target_b);
        nn::linear_backward(&feats.target, &p[lay.target_w.clone()], &dx[lx * d..], None, gw, gb, lq, cfg.target_feature_width(), d);
    }
}

/// Two disjoint mutable sub-slices; `a` must precede `b`.
fn split2<'a, T>(buf: &'a mut [T], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [T], &'a mut [T]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = buf.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

/// Decoded target view with per-pixel probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub camera: Camera,
    pub theta: f64,
    pub rgb: Vec<f32>,
    /// Camera-frame depth in `[near, far]`; present for 6-channel models.
    pub depth: Option<Vec<f32>>,
    pub fg_prob: Option<Vec<f32>>,
    pub part_prob: Option<Vec<f32>>,
}

impl Prediction {
    /// Splits an `H x W x c` sigmoid image into named channels.
    pub fn from_image<T: Real>(img: &[T], cfg: &ModelConfig, camera: Camera, theta: f64) -> Self {
        let c = cfg.out_channels;
        let n = cfg.height * cfg.width;
        let chan = |k: usize| (0..n).map(|i| img[i * c + k].to_f64() as f32).collect::<Vec<f32>>();
        let rgb = (0..n * 3).map(|i| img[(i / 3) * c + i % 3].to_f64() as f32).collect();
        if c == 6 {
            let depth = (0..n)
                .map(|i| (DEPTH_NEAR + (DEPTH_FAR - DEPTH_NEAR) * img[i * c + CH_DEPTH].to_f64()) as f32)
                .collect();
            Self { camera, theta, rgb, depth: Some(depth), fg_prob: Some(chan(CH_FG)), part_prob: Some(chan(CH_PART)) }
        } else {
            Self { camera, theta, rgb, depth: None, fg_prob: None, part_prob: None }
        }
    }

    /// Thresholds the masks at 0.5; depth is zeroed outside the foreground.
    pub fn to_frame(&self, joint_id: usize) -> SampleFrame {
        let n = self.camera.width() * self.camera.height();
        let fg: Vec<bool> = match &self.fg_prob {
            Some(p) => p.iter().map(|&v| v >= 0.5).collect(),
            None => vec![false; n],
        };
        let part: Vec<bool> = match &self.part_prob {
            Some(p) => p.iter().zip(&fg).map(|(&v, &f)| f && v >= 0.5).collect(),
            None => vec![false; n],
        };
        let depth = match &self.depth {
            Some(d) => d.iter().zip(&fg).map(|(&z, &f)| if f { z } else { 0.0 }).collect(),
            None => vec![0.0; n],
        };
        SampleFrame { rgb: self.rgb.clone(), depth, fg_mask: fg, part_mask: part, camera: self.camera, theta: self.theta, joint_id }
    }
}

/// Synthesizes the target view at `(camera, theta_t)` from `2N` posed input
/// frames captured at two states.
pub fn infer<T: Real>(inputs: &[SampleFrame], camera: &Camera, theta_t: f64, params: &Params<T>) -> Result<Prediction> {
    let cfg = &params.cfg;
    let feats = SampleFeatures { inputs: input_features::<T>(inputs, cfg)?, target: target_features::<T>(camera, theta_t, cfg)? };
    infer_features(&feats, camera, theta_t, params)
}

pub fn infer_features<T: Real>(feats: &SampleFeatures<T>, camera: &Camera, theta_t: f64, params: &Params<T>) -> Result<Prediction> {
    let cfg = &params.cfg;
    let out = forward_outputs(feats, params)?;
    let target_rows = &out[cfg.input_tokens() * cfg.output_width()..];
    let img = assemble_patches(target_rows, cfg);
    Ok(Prediction::from_image(&img, cfg, *camera, theta_t))
}

/// Decoded auxiliary predictions for every input view (in token order).
pub fn decode_input_views<T: Real>(outputs: &[T], cfg: &ModelConfig) -> Vec<Vec<T>> {
    let per = cfg.patches_per_view() * cfg.output_width();
    (0..2 * cfg.views_per_state).map(|v| assemble_patches(&outputs[v * per..(v + 1) * per], cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, CameraPose};

    fn tiny() -> ModelConfig {
        ModelConfig { patch_size: 4, dim: 16, layers: 2, heads: 2, height: 8, width: 8, views_per_state: 1, out_channels: 6, mlp_ratio: 2 }
    }

    #[test]
    fn feature_widths() {
        let cfg = ModelConfig::desk();
        assert_eq!(cfg.input_feature_width(), 577);
        assert_eq!(cfg.target_feature_width(), 385);
        assert_eq!(cfg.input_tokens(), 2 * 3 * 64 * 64 / 64);
        assert_eq!(cfg.target_tokens(), 64);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { patch_size: 5, ..ModelConfig::desk() }.validate().is_err());
        assert!(ModelConfig { heads: 3, ..ModelConfig::desk() }.validate().is_err());
        assert!(ModelConfig { out_channels: 4, ..ModelConfig::desk() }.validate().is_err());
        assert!(ModelConfig::reference().validate().is_ok());
    }

    #[test]
    fn zero_everything_gives_zero_tokens() {
        let params = Params::<f64>::zeros(tiny()).unwrap();
        let pl = PluckerMap { width: 8, height: 8, data: vec![0.0; 8 * 8 * 6] };
        let t = tokenize_input_view(&vec![0.0; 8 * 8 * 3], &pl, 0.0, &params).unwrap();
        assert!(t.iter().all(|&v| v == 0.0));
        assert_eq!(t.len(), 4 * 16);
    }

    #[test]
    fn theta_enters_linearly() {
        let params = Params::<f64>::init(tiny(), 3).unwrap();
        let cam = Camera::new(CameraIntrinsics::from_fov(1.0, 8, 8).unwrap(), CameraPose::identity());
        let pl = compute_plucker_map(&cam.intrinsics, &cam.pose);
        let rgb: Vec<f32> = (0..192).map(|i| (i % 7) as f32 / 7.0).collect();
        let a = tokenize_input_view(&rgb, &pl, 0.0, &params).unwrap();
        let b = tokenize_input_view(&rgb, &pl, 1.0, &params).unwrap();
        let fw = params.cfg.input_feature_width();
        let w = &params.data[params.layout.input_w.clone()];
        let theta_row = &w[(fw - 1) * 16..fw * 16];
        for r in 0..4 {
            for j in 0..16 {
                assert!((b[r * 16 + j] - a[r * 16 + j] - theta_row[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_layers_is_identity() {
        let cfg = ModelConfig { layers: 0, ..tiny() };
        let params = Params::<f64>::init(cfg, 1).unwrap();
        let seq = TokenSequence { tokens: (0..(cfg.seq_len() * 16)).map(|i| i as f64).collect(), input_len: cfg.input_tokens(), target_len: 4, dim: 16 };
        assert_eq!(forward(&seq, &params).unwrap(), seq);
    }

    #[test]
    fn zero_head_decodes_to_half() {
        let params = Params::<f64>::zeros(tiny()).unwrap();
        let img = decode_patches(&vec![0.3; 4 * 16], &params).unwrap();
        assert!(img.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_hot_token_colors_one_block() {
        let cfg = tiny();
        let mut params = Params::<f64>::zeros(cfg).unwrap();
        // Bias pushes every output far negative; a hot token lifts its patch.
        let hb = params.layout.head_b.clone();
        params.data[hb].iter_mut().for_each(|v| *v = -20.0);
        let hg = params.layout.head_norm_g.clone();
        params.data[hg].iter_mut().for_each(|v| *v = 1.0);
        let hw = params.layout.head_w.clone();
        let ow = cfg.output_width();
        for c in 0..ow {
            params.data[hw.start + c] = 40.0; // row 0 of head.weight
        }
        let mut tokens = vec![0.0; 4 * 16];
        tokens[2 * 16] = 1.0; // token 2 -> patch (row 1, col 0)
        let img = decode_patches(&tokens, &params).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let hot = y >= 4 && x < 4;
                let v = img[(y * 8 + x) * 6];
                assert_eq!(v > 0.5, hot, "pixel {x},{y}");
            }
        }
    }

    #[test]
    fn state_count_is_enforced() {
        let cfg = tiny();
        let cam = Camera::new(CameraIntrinsics::from_fov(1.0, 8, 8).unwrap(), CameraPose::identity());
        let frame = |theta: f64| SampleFrame {
            rgb: vec![0.0; 192],
            depth: vec![0.0; 64],
            fg_mask: vec![false; 64],
            part_mask: vec![false; 64],
            camera: cam,
            theta,
            joint_id: 0,
        };
        assert!(order_input_frames(&[frame(0.0), frame(1.0)], &cfg).is_ok());
        assert!(matches!(order_input_frames(&[frame(0.0), frame(0.0)], &cfg), Err(LarmError::StateCountMismatch { .. })));
        assert!(order_input_frames(&[frame(0.0), frame(1.0), frame(0.5)], &cfg).is_err());
    }
}
