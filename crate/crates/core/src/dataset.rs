//! On-disk formats: frames (PNG + raw depth + JSON sidecar), dataset trees,
//! scene-level splits and model checkpoints.
//!
//! Layout: `scenes/<scene_id>/<joint_id>/<frame>.{png,fg.png,part.png,dpth,json}`
//! with `scenes/<scene_id>/scene.json` holding the generating scene.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::camera::{Camera, CameraIntrinsics, CameraPose};
use crate::error::{LarmError, Result};
use crate::frame::SampleFrame;
use crate::model::{ModelConfig, Params};
use crate::synth::{self, ArticulatedScene};
use crate::train::{self, AugmentConfig};

pub const DEPTH_MAGIC: &[u8; 8] = b"LARMDPTH";
pub const CKPT_MAGIC: &[u8; 8] = b"LARMCKPT";
pub const CKPT_VERSION: u32 = 1;

fn disk<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|source| LarmError::DiskWrite { path: path.display().to_string(), source })
}

fn png_err(e: impl std::fmt::Display) -> LarmError {
    LarmError::Png(e.to_string())
}

pub fn write_depth(path: &Path, depth: &[f32], width: usize, height: usize) -> Result<()> {
    if depth.len() != width * height {
        return Err(LarmError::SizeMismatch(format!("depth has {} values for {width}x{height}", depth.len())));
    }
    let mut buf = Vec::with_capacity(16 + depth.len() * 4);
    buf.extend_from_slice(DEPTH_MAGIC);
    buf.extend_from_slice(&(width as u32).to_le_bytes());
    buf.extend_from_slice(&(height as u32).to_le_bytes());
    for &z in depth {
        buf.extend_from_slice(&z.to_le_bytes());
    }
    disk(path, fs::write(path, buf))
}

/// Returns `(depth, width, height)`.
pub fn read_depth(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != DEPTH_MAGIC {
        return Err(LarmError::CorruptHeader(format!("{}: missing depth header", path.display())));
    }
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != w * h * 4 {
        return Err(LarmError::CorruptHeader(format!(
            "{}: header says {w}x{h} but payload has {} bytes",
            path.display(),
            body.len()
        )));
    }
    let depth = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((depth, w, h))
}

fn write_png(path: &Path, data: &[u8], width: usize, height: usize, color: png::ColorType, depth: png::BitDepth) -> Result<()> {
    let file = disk(path, File::create(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(data).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Decodes to 8 bits per sample; returns `(bytes, width, height, channels)`.
fn read_png(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let mut dec = png::Decoder::new(BufReader::new(File::open(path)?));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    let ch = info.color_type.samples();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(format!("{}: unsupported bit depth {:?}", path.display(), info.bit_depth)));
    }
    Ok((buf, info.width as usize, info.height as usize, ch))
}

pub fn write_rgb_png(path: &Path, rgb: &[f32], width: usize, height: usize) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(LarmError::SizeMismatch("rgb buffer".into()));
    }
    let bytes: Vec<u8> = rgb.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    write_png(path, &bytes, width, height, png::ColorType::Rgb, png::BitDepth::Eight)
}

pub fn read_rgb_png(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let (buf, w, h, ch) = read_png(path)?;
    if ch < 3 {
        return Err(LarmError::SizeMismatch(format!("{}: expected rgb, found {ch} channels", path.display())));
    }
    let rgb = buf.chunks_exact(ch).flat_map(|px| px[..3].iter().map(|&b| b as f32 / 255.0)).collect();
    Ok((rgb, w, h))
}

/// 1-bit grayscale PNG.
pub fn write_mask_png(path: &Path, mask: &[bool], width: usize, height: usize) -> Result<()> {
    if mask.len() != width * height {
        return Err(LarmError::SizeMismatch("mask buffer".into()));
    }
    let stride = width.div_ceil(8);
    let mut bytes = vec![0u8; stride * height];
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] {
                bytes[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    write_png(path, &bytes, width, height, png::ColorType::Grayscale, png::BitDepth::One)
}

pub fn read_mask_png(path: &Path) -> Result<(Vec<bool>, usize, usize)> {
    let (buf, w, h, ch) = read_png(path)?;
    Ok((buf.chunks_exact(ch).map(|px| px[0] >= 128).collect(), w, h))
}

/// JSON sidecar of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-to-world rotation, row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub theta: f64,
    pub joint_id: usize,
}

impl FrameMeta {
    pub fn from_frame(f: &SampleFrame) -> Self {
        Self::from_camera(&f.camera, f.theta, f.joint_id)
    }

    pub fn from_camera(c: &Camera, theta: f64, joint_id: usize) -> Self {
        let i = &c.intrinsics;
        let r = &c.pose.rotation;
        let mut rotation = [0.0; 9];
        for row in 0..3 {
            for col in 0..3 {
                rotation[row * 3 + col] = r[(row, col)];
            }
        }
        let t = &c.pose.translation;
        Self {
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            width: i.width,
            height: i.height,
            rotation,
            translation: [t.x, t.y, t.z],
            theta,
            joint_id,
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let intr = CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?;
        let pose = CameraPose::new(Matrix3::from_row_slice(&self.rotation), Vector3::from(self.translation))?;
        Ok(Camera::new(intr, pose))
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `<stem>.png`, `<stem>.fg.png`, `<stem>.part.png`, `<stem>.dpth`, `<stem>.json`.
pub fn write_sample(frame: &SampleFrame, stem: &Path) -> Result<()> {
    let (w, h) = (frame.width(), frame.height());
    if let Some(dir) = stem.parent() {
        disk(dir, fs::create_dir_all(dir))?;
    }
    write_rgb_png(&with_ext(stem, ".png"), &frame.rgb, w, h)?;
    write_mask_png(&with_ext(stem, ".fg.png"), &frame.fg_mask, w, h)?;
    write_mask_png(&with_ext(stem, ".part.png"), &frame.part_mask, w, h)?;
    write_depth(&with_ext(stem, ".dpth"), &frame.depth, w, h)?;
    let json = with_ext(stem, ".json");
    disk(&json, fs::write(&json, serde_json::to_string_pretty(&FrameMeta::from_frame(frame))?))
}

pub fn read_sample(stem: &Path) -> Result<SampleFrame> {
    let meta: FrameMeta = serde_json::from_str(&fs::read_to_string(with_ext(stem, ".json"))?)?;
    let camera = meta.camera()?;
    let (w, h) = (meta.width, meta.height);
    let check = |what: &str, ww: usize, hh: usize| {
        if (ww, hh) == (w, h) {
            Ok(())
        } else {
            Err(LarmError::SizeMismatch(format!("{what} is {ww}x{hh}, sidecar says {w}x{h}")))
        }
    };
    let (rgb, ww, hh) = read_rgb_png(&with_ext(stem, ".png"))?;
    check("rgb", ww, hh)?;
    let (fg_mask, ww, hh) = read_mask_png(&with_ext(stem, ".fg.png"))?;
    check("fg mask", ww, hh)?;
    let (part_mask, ww, hh) = read_mask_png(&with_ext(stem, ".part.png"))?;
    check("part mask", ww, hh)?;
    let (depth, ww, hh) = read_depth(&with_ext(stem, ".dpth"))?;
    check("depth", ww, hh)?;
    Ok(SampleFrame { rgb, depth, fg_mask, part_mask, camera, theta: meta.theta, joint_id: meta.joint_id })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub scene_id: String,
    pub joint_id: usize,
    /// Frame path without extension.
    pub stem: PathBuf,
    pub camera: Camera,
    pub theta: f64,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub records: Vec<IndexRecord>,
}

impl DatasetIndex {
    /// Scans `root/scenes/*/*/*.json`, sorted by path.
    pub fn scan(root: &Path) -> Result<Self> {
        let mut records = Vec::new();
        let scenes = root.join("scenes");
        let mut scene_dirs: Vec<_> = fs::read_dir(&scenes)?.collect::<std::io::Result<Vec<_>>>()?;
        scene_dirs.sort_by_key(|e| e.file_name());
        for sd in scene_dirs.iter().filter(|e| e.path().is_dir()) {
            let scene_id = sd.file_name().to_string_lossy().into_owned();
            let mut joint_dirs: Vec<_> = fs::read_dir(sd.path())?.collect::<std::io::Result<Vec<_>>>()?;
            joint_dirs.sort_by_key(|e| e.file_name());
            for jd in joint_dirs.iter().filter(|e| e.path().is_dir()) {
                let mut files: Vec<PathBuf> = fs::read_dir(jd.path())?
                    .map(|e| e.map(|e| e.path()))
                    .collect::<std::io::Result<Vec<_>>>()?
                    .into_iter()
                    .filter(|p| p.extension().is_some_and(|x| x == "json"))
                    .collect();
                files.sort();
                for json in files {
                    let meta: FrameMeta = serde_json::from_str(&fs::read_to_string(&json)?)?;
                    records.push(IndexRecord {
                        scene_id: scene_id.clone(),
                        joint_id: meta.joint_id,
                        stem: json.with_extension(""),
                        camera: meta.camera()?,
                        theta: meta.theta,
                        split: None,
                    });
                }
            }
        }
        Ok(Self { records })
    }

    pub fn scene_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.scene_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn with_split(&self, split: Split) -> Vec<&IndexRecord> {
        self.records.iter().filter(|r| r.split == Some(split)).collect()
    }
}

/// Tags every record with a split chosen per scene. `fractions` are
/// (train, val, test) and must sum to 1; a positive fraction that rounds to
/// zero scenes is an error.
pub fn split_dataset(index: &DatasetIndex, fractions: (f64, f64, f64), seed: u64) -> Result<DatasetIndex> {
    let (a, b, c) = fractions;
    if ((a + b + c) - 1.0).abs() > 1e-9 || a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(LarmError::ConfigMismatch(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let mut ids = index.scene_ids();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let n_train = (a * n as f64).round() as usize;
    let n_val = ((b * n as f64).round() as usize).min(n - n_train.min(n));
    let n_test = n - n_train.min(n) - n_val;
    for (name, frac, count) in [("train", a, n_train), ("val", b, n_val), ("test", c, n_test)] {
        if frac > 0.0 && count == 0 {
            return Err(LarmError::EmptySplit(name.into()));
        }
    }
    let tag = |id: &String| {
        let k = ids.iter().position(|x| x == id).expect("known scene");
        if k < n_train {
            Split::Train
        } else if k < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        }
    };
    let records = index.records.iter().map(|r| IndexRecord { split: Some(tag(&r.scene_id)), ..r.clone() }).collect();
    Ok(DatasetIndex { records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub scenes: usize,
    pub seed: u64,
    pub resolution: usize,
    pub views_per_state: usize,
    /// Extra random-pose frames at random states per scene.
    pub target_views: usize,
    pub augment: AugmentConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { scenes: 4, seed: 0, resolution: 64, views_per_state: 3, target_views: 8, augment: AugmentConfig::default() }
    }
}

pub fn scene_id(i: usize) -> String {
    format!("scene_{i:04}")
}

/// Renders a dataset tree under `root`. Fully determined by `cfg`.
pub fn make_dataset(root: &Path, cfg: &GenConfig) -> Result<DatasetIndex> {
    let mcfg = ModelConfig { height: cfg.resolution, width: cfg.resolution, views_per_state: cfg.views_per_state, ..ModelConfig::desk() };
    let intr = synth::default_intrinsics(cfg.resolution);
    for i in 0..cfg.scenes {
        let scene = synth::sample_scene_with(&train::scene_params(cfg.seed, i, &cfg.augment));
        let dir = root.join("scenes").join(scene_id(i));
        disk(&dir, fs::create_dir_all(&dir))?;
        save_scene(&dir.join("scene.json"), &scene)?;
        let frames = train::input_frames(&scene, &mcfg, cfg.seed ^ (0xA5A5_0000 + i as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED_0000 + i as u64));
        let jdir = dir.join("0");
        for (k, f) in frames.iter().enumerate() {
            write_sample(f, &jdir.join(format!("input_{k:03}")))?;
        }
        for k in 0..cfg.target_views {
            let cam = synth::random_camera(&mut rng, intr);
            let theta: f64 = rng.random();
            write_sample(&synth::rasterize(&scene, &cam, theta, 0), &jdir.join(format!("target_{k:03}")))?;
        }
    }
    DatasetIndex::scan(root)
}

pub fn save_scene(path: &Path, scene: &ArticulatedScene) -> Result<()> {
    disk(path, fs::write(path, serde_json::to_string_pretty(scene)?))
}

pub fn load_scene(path: &Path) -> Result<ArticulatedScene> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Header block of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    #[serde(default)]
    pub extra: Value,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

/// Serialized checkpoint bytes: magic, version, JSON header, then named
/// f32 tensors (`name`, shape, little-endian data). `extra_tensors` follow
/// the model tensors (e.g. optimizer moments).
pub fn checkpoint_bytes(params: &Params<f32>, extra: &Value, extra_tensors: &[(&str, &[f32])]) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(16 + 4 * params.data.len());
    buf.extend_from_slice(CKPT_MAGIC);
    put_u32(&mut buf, CKPT_VERSION as usize);
    let header = serde_json::to_vec(&CheckpointHeader { model: params.cfg, extra: extra.clone() })?;
    put_u32(&mut buf, header.len());
    buf.extend_from_slice(&header);
    put_u32(&mut buf, params.layout.entries.len() + extra_tensors.len());
    let mut put = |name: &str, shape: &[usize], data: &[f32]| {
        put_u32(&mut buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, shape.len());
        for &d in shape {
            put_u32(&mut buf, d);
        }
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    };
    for e in &params.layout.entries {
        put(&e.name, &e.shape, &params.data[e.range.clone()]);
    }
    for (name, data) in extra_tensors {
        put(name, &[data.len()], data);
    }
    Ok(buf)
}

pub fn save_params(path: &Path, params: &Params<f32>, extra: &Value, extra_tensors: &[(&str, &[f32])]) -> Result<()> {
    let bytes = checkpoint_bytes(params, extra, extra_tensors)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        disk(dir, fs::create_dir_all(dir))?;
    }
    let tmp = with_ext(path, ".tmp");
    disk(&tmp, File::create(&tmp).and_then(|mut f| f.write_all(&bytes)))?;
    disk(path, fs::rename(&tmp, path))
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: Params<f32>,
    pub extra: Value,
    pub extra_tensors: Vec<(String, Vec<f32>)>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(LarmError::CorruptHeader("checkpoint truncated".into()));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

/// Loads a checkpoint; with `expected`, the stored config must match exactly.
pub fn load_params(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8)? != CKPT_MAGIC {
        return Err(LarmError::CorruptHeader(format!("{}: not a checkpoint", path.display())));
    }
    let version = c.u32()?;
    if version != CKPT_VERSION as usize {
        return Err(LarmError::CorruptHeader(format!("unsupported checkpoint version {version}")));
    }
    let hlen = c.u32()?;
    let header: CheckpointHeader = serde_json::from_slice(c.take(hlen)?)?;
    if let Some(want) = expected {
        if *want != header.model {
            return Err(LarmError::ConfigMismatch(format!("checkpoint has {:?}, expected {want:?}", header.model)));
        }
    }
    let mut params = Params::<f32>::zeros(header.model)?;
    let count = c.u32()?;
    let mut extra_tensors = Vec::new();
    for k in 0..count {
        let nlen = c.u32()?;
        let name = String::from_utf8(c.take(nlen)?.to_vec()).map_err(|_| LarmError::CorruptHeader("tensor name".into()))?;
        let ndim = c.u32()?;
        let shape = (0..ndim).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data: Vec<f32> = c.take(len * 4)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        match params.layout.entries.get(k) {
            Some(e) if k < params.layout.entries.len() => {
                if e.name != name || e.shape != shape {
                    return Err(LarmError::ConfigMismatch(format!("tensor {name} {shape:?} does not match {} {:?}", e.name, e.shape)));
                }
                let r = e.range.clone();
                params.data[r].copy_from_slice(&data);
            }
            _ => extra_tensors.push((name, data)),
        }
    }
    if (count as usize) < params.layout.entries.len() {
        return Err(LarmError::CorruptHeader("checkpoint is missing tensors".into()));
    }
    if c.pos != bytes.len() {
        return Err(LarmError::CorruptHeader("trailing bytes after tensors".into()));
    }
    Ok(Checkpoint { params, extra: header.extra, extra_tensors })
}
