//! Multi-view fusion of RGB-D frames with part labels into per-part meshes:
//! labeled point clouds, projective TSDF volumes, marching cubes, and
//! articulation of the canonical meshes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{joint_transform, unproject_pixel, Camera, JointSpec, Vec3, DEPTH_NEAR};
use crate::error::{LarmError, Result};
use crate::frame::SampleFrame;
use crate::joint::{self, CorrespondenceProvider, EstimateConfig, FrameSynthesizer, JointFitResult};
use crate::mc_table::{CORNERS, EDGES, TRIANGLES};
use crate::synth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartLabel {
    Body,
    Movable,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPointCloud {
    pub points: Vec<Vec3>,
    pub colors: Vec<[f32; 3]>,
    pub labels: Vec<PartLabel>,
}

impl LabeledPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn push(&mut self, p: Vec3, c: [f32; 3], l: PartLabel) {
        self.points.push(p);
        self.colors.push(c);
        self.labels.push(l);
    }
}

/// How a pixel contributes to fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelClass {
    Background,
    Body,
    Movable,
    /// Part probability too close to 0.5 to trust.
    Ambiguous,
}

pub const AMBIGUITY_BAND: f64 = 0.1;

/// Classifies pixel `i` from the thresholded masks, dropping pixels whose
/// part probability lies within `band` of 0.5.
pub fn classify_pixel(frame: &SampleFrame, part_prob: Option<&[f32]>, band: f64, i: usize) -> PixelClass {
    if !frame.fg_mask[i] {
        return PixelClass::Background;
    }
    if let Some(p) = part_prob {
        if (p[i] as f64 - 0.5).abs() < band {
            return PixelClass::Ambiguous;
        }
    }
    if frame.part_mask[i] {
        PixelClass::Movable
    } else {
        PixelClass::Body
    }
}

/// A frame with optional soft part probabilities (from the model).
#[derive(Debug, Clone)]
pub struct Observation {
    pub frame: SampleFrame,
    pub part_prob: Option<Vec<f32>>,
}

impl From<SampleFrame> for Observation {
    fn from(frame: SampleFrame) -> Self {
        Self { frame, part_prob: None }
    }
}

/// Unprojects foreground pixels, labeling them body or movable.
pub fn fuse_views(obs: &[Observation]) -> Result<(LabeledPointCloud, LabeledPointCloud)> {
    if obs.len() < 4 {
        return Err(LarmError::TooFewFrames);
    }
    let mut body = LabeledPointCloud::default();
    let mut movable = LabeledPointCloud::default();
    for o in obs {
        let f = &o.frame;
        let cam = &f.camera;
        let w = cam.width();
        for i in 0..f.pixel_count() {
            let class = classify_pixel(f, o.part_prob.as_deref(), AMBIGUITY_BAND, i);
            if !matches!(class, PixelClass::Body | PixelClass::Movable) {
                continue;
            }
            let z = f.depth[i] as f64;
            if !(z > DEPTH_NEAR) {
                return Err(LarmError::NonPositiveDepth { u: i % w, v: i / w, depth: z });
            }
            let p = unproject_pixel((i % w) as f64 + 0.5, (i / w) as f64 + 0.5, z, &cam.intrinsics, &cam.pose);
            let c = [f.rgb[3 * i], f.rgb[3 * i + 1], f.rgb[3 * i + 2]];
            if class == PixelClass::Movable {
                movable.push(p, c, PartLabel::Movable);
            } else {
                body.push(p, c, PartLabel::Body);
            }
        }
    }
    if body.is_empty() && movable.is_empty() {
        return Err(LarmError::EmptyCloud);
    }
    Ok((body, movable))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelFilter {
    Body,
    Movable,
    All,
}

impl LabelFilter {
    fn accepts(self, c: PixelClass) -> bool {
        matches!(
            (self, c),
            (LabelFilter::Body, PixelClass::Body) | (LabelFilter::Movable, PixelClass::Movable) | (LabelFilter::All, PixelClass::Body | PixelClass::Movable)
        )
    }
}

/// Dense voxel grid of truncated signed distances (positive in front of
/// surfaces), observation weights and colors. Values live at voxel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    pub res: usize,
    pub origin: Vec3,
    pub voxel: f64,
    pub trunc: f64,
    /// Normalized to `[-1, 1]` (multiples of `trunc`).
    pub sdf: Vec<f32>,
    pub weight: Vec<f32>,
    pub color: Vec<[f32; 3]>,
}

impl TsdfVolume {
    /// `res³` voxels spanning `[-half, half]³`, truncation `trunc_voxels` voxels.
    pub fn new(res: usize, half: f64, trunc_voxels: f64) -> Result<Self> {
        if res < 2 || !(half > 0.0) || trunc_voxels < 2.0 {
            return Err(LarmError::Usage("volume needs res >= 2, positive extent and truncation >= 2 voxels".into()));
        }
        let n = res * res * res;
        let voxel = 2.0 * half / res as f64;
        Ok(Self {
            res,
            origin: Vec3::repeat(-half),
            voxel,
            trunc: trunc_voxels * voxel,
            sdf: vec![1.0; n],
            weight: vec![0.0; n],
            color: vec![[0.0; 3]; n],
        })
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.res + j) * self.res + i
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.voxel
    }

    /// Fills every voxel from an analytic signed distance (full weight).
    pub fn fill_from_sdf(&mut self, f: impl Fn(&Vec3) -> f64) {
        for k in 0..self.res {
            for j in 0..self.res {
                for i in 0..self.res {
                    let idx = self.index(i, j, k);
                    let d = f(&self.center(i, j, k));
                    self.sdf[idx] = (d / self.trunc).clamp(-1.0, 1.0) as f32;
                    self.weight[idx] = 1.0;
                    self.color[idx] = [0.5; 3];
                }
            }
        }
    }
}

/// Projective TSDF update. Accepted pixels update voxels up to `trunc` behind
/// the observed depth; background pixels carve free space; other pixels are
/// ignored.
pub fn tsdf_integrate(vol: &mut TsdfVolume, frame: &SampleFrame, part_prob: Option<&[f32]>, filter: LabelFilter) {
    let cam = &frame.camera;
    let intr = &cam.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let rt = cam.pose.rotation.transpose();
    let c0 = cam.pose.translation;
    let classes: Vec<PixelClass> = (0..w * h).map(|i| classify_pixel(frame, part_prob, AMBIGUITY_BAND, i)).collect();
    if !classes.iter().any(|&c| filter.accepts(c)) {
        return;
    }
    let inv_trunc = 1.0 / vol.trunc;
    let step_i = rt * Vec3::x() * vol.voxel;
    for k in 0..vol.res {
        for j in 0..vol.res {
            let mut pc = rt * (vol.center(0, j, k) - c0);
            for i in 0..vol.res {
                let z = pc.z;
                let cur = pc;
                pc += step_i;
                if z <= DEPTH_NEAR {
                    continue;
                }
                let u = intr.fx * cur.x / z + intr.cx;
                let v = intr.fy * cur.y / z + intr.cy;
                if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
                    continue;
                }
                let pix = v as usize * w + u as usize;
                let (obs, rgb) = match classes[pix] {
                    PixelClass::Background => (1.0f32, None),
                    c if filter.accepts(c) => {
                        let sd = frame.depth[pix] as f64 - z;
                        if sd < -vol.trunc {
                            continue;
                        }
                        let rgb = [frame.rgb[3 * pix], frame.rgb[3 * pix + 1], frame.rgb[3 * pix + 2]];
                        ((sd * inv_trunc).min(1.0) as f32, Some(rgb))
                    }
                    _ => continue,
                };
                let idx = vol.index(i, j, k);
                let wgt = vol.weight[idx];
                let nw = wgt + 1.0;
                vol.sdf[idx] = (vol.sdf[idx] * wgt + obs) / nw;
                if let Some(c) = rgb {
                    // Colors average over surface observations only.
                    let cw = vol.color[idx];
                    let a = if wgt == 0.0 { 1.0 } else { 1.0 / nw };
                    vol.color[idx] = [cw[0] + (c[0] - cw[0]) * a, cw[1] + (c[1] - cw[1]) * a, cw[2] + (c[2] - cw[2]) * a];
                }
                vol.weight[idx] = nw;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Vec<[f32; 3]>,
    pub label: PartLabel,
}

impl PartMesh {
    pub fn empty(label: PartLabel) -> Self {
        Self { vertices: Vec::new(), triangles: Vec::new(), colors: Vec::new(), label }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if self.colors.len() != self.vertices.len()
            || self.triangles.iter().any(|t| t.iter().any(|&i| i >= n))
            || self.vertices.iter().any(|v| !v.iter().all(|x| x.is_finite()))
        {
            return Err(LarmError::DegenerateMesh);
        }
        Ok(())
    }

    /// Concatenation of two meshes (label of `self`).
    pub fn merged(&self, other: &PartMesh) -> PartMesh {
        let off = self.vertices.len() as u32;
        let mut m = self.clone();
        m.vertices.extend_from_slice(&other.vertices);
        m.colors.extend_from_slice(&other.colors);
        m.triangles.extend(other.triangles.iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
        m
    }

    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> PartMesh {
        PartMesh { vertices: self.vertices.iter().map(f).collect(), ..self.clone() }
    }

    /// Signed enclosed volume (positive for outward-facing closed meshes).
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }
}

/// Marching cubes over voxel centers; cubes touching unobserved voxels are
/// skipped. Vertices are shared between neighboring cubes and colors are
/// interpolated along cube edges.
pub fn extract_mesh(vol: &TsdfVolume, label: PartLabel) -> Result<PartMesh> {
    let r = vol.res;
    let mut mesh = PartMesh::empty(label);
    let mut cache: HashMap<(usize, usize), u32> = HashMap::new();
    let mut corner_idx = [0usize; 8];
    let mut vals = [0f32; 8];
    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let mut observed = true;
                let mut case = 0usize;
                for c in 0..8 {
                    let [di, dj, dk] = CORNERS[c];
                    let idx = vol.index(i + di, j + dj, k + dk);
                    if vol.weight[idx] <= 0.0 {
                        observed = false;
                        break;
                    }
                    corner_idx[c] = idx;
                    vals[c] = vol.sdf[idx];
                    if vals[c] < 0.0 {
                        case |= 1 << c;
                    }
                }
                if !observed || case == 0 || case == 255 {
                    continue;
                }
                let row = &TRIANGLES[case];
                let mut t = 0;
                while t < 15 && row[t] >= 0 {
                    let mut tri = [0u32; 3];
                    for (s, slot) in tri.iter_mut().enumerate() {
                        let e = row[t + s] as usize;
                        let (a, b) = (EDGES[e][0], EDGES[e][1]);
                        let (ga, gb) = (corner_idx[a], corner_idx[b]);
                        let key = (ga.min(gb), ga.max(gb));
                        *slot = *cache.entry(key).or_insert_with(|| {
                            let (va, vb) = (vals[a] as f64, vals[b] as f64);
                            let s = if (va - vb).abs() > 1e-12 { va / (va - vb) } else { 0.5 };
                            let pa = vol.center(i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]);
                            let pb = vol.center(i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]);
                            let (ca, cb) = (vol.color[ga], vol.color[gb]);
                            let sf = s as f32;
                            mesh.vertices.push(pa + (pb - pa) * s);
                            mesh.colors.push([ca[0] + (cb[0] - ca[0]) * sf, ca[1] + (cb[1] - ca[1]) * sf, ca[2] + (cb[2] - ca[2]) * sf]);
                            (mesh.vertices.len() - 1) as u32
                        });
                    }
                    // The table winds triangles clockwise seen from outside.
                    mesh.triangles.push([tri[0], tri[2], tri[1]]);
                    t += 3;
                }
            }
        }
    }
    if mesh.triangles.is_empty() {
        return Err(LarmError::NoSurface);
    }
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub n_views: usize,
    pub resolution: usize,
    pub half_extent: f64,
    pub trunc_voxels: f64,
    /// Image size of the synthesized views.
    pub image_size: usize,
    pub elevation_deg: (f64, f64),
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self { n_views: 64, resolution: 128, half_extent: 0.6, trunc_voxels: 3.0, image_size: 64, elevation_deg: (-30.0, 60.0) }
    }
}

impl ReconConfig {
    pub fn cameras(&self) -> Vec<Camera> {
        synth::fibonacci_cameras(
            synth::default_intrinsics(self.image_size),
            self.n_views,
            (self.elevation_deg.0.to_radians(), self.elevation_deg.1.to_radians()),
        )
    }
}

fn observe(src: &dyn FrameSynthesizer, camera: &Camera, theta: f64) -> Result<Observation> {
    let (frame, part_prob) = src.synthesize_soft(camera, theta)?;
    Ok(Observation { frame, part_prob })
}

/// Body and movable meshes of one articulated object in its canonical state.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub body: PartMesh,
    pub movable: PartMesh,
}

/// Synthesizes the canonical state (θ=0) from `cfg.n_views` cameras on the
/// viewing band, fuses body and movable pixels into separate volumes and
/// extracts both meshes.
pub fn reconstruct(src: &dyn FrameSynthesizer, cfg: &ReconConfig) -> Result<Reconstruction> {
    let obs = cfg.cameras().iter().map(|c| observe(src, c, 0.0)).collect::<Result<Vec<_>>>()?;
    reconstruct_from(&obs, cfg)
}

pub fn reconstruct_from(obs: &[Observation], cfg: &ReconConfig) -> Result<Reconstruction> {
    if obs.iter().all(|o| o.frame.fg_count() == 0) {
        return Err(LarmError::EmptyCloud);
    }
    let mut vb = TsdfVolume::new(cfg.resolution, cfg.half_extent, cfg.trunc_voxels)?;
    let mut vm = vb.clone();
    for o in obs {
        tsdf_integrate(&mut vb, &o.frame, o.part_prob.as_deref(), LabelFilter::Body);
        tsdf_integrate(&mut vm, &o.frame, o.part_prob.as_deref(), LabelFilter::Movable);
    }
    Ok(Reconstruction { body: extract_mesh(&vb, PartLabel::Body)?, movable: extract_mesh(&vm, PartLabel::Movable)? })
}

/// Moves the movable mesh from the canonical state to `theta`; the body is unchanged.
pub fn pose_mesh_at_state(rec: &Reconstruction, joint: &JointSpec, theta: f64) -> Reconstruction {
    let t = joint_transform(joint, 0.0, theta);
    Reconstruction { body: rec.body.clone(), movable: rec.movable.transformed(|v| t.apply(v)) }
}

/// Body plus `K` movable parts, each with its fitted joint.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPartReconstruction {
    pub body: PartMesh,
    pub parts: Vec<(PartMesh, JointFitResult)>,
}

fn annotate<T>(part: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| LarmError::Part { part, source: Box::new(e) })
}

/// Processes each part independently through its own synthesizer (built
/// from the rest triplet and that part's maximal-state triplet); the body
/// keeps rest-state pixels that no part claims.
pub fn multi_part_reconstruct(
    parts: &[(&dyn FrameSynthesizer, &dyn CorrespondenceProvider, crate::camera::JointKind)],
    query_cameras: &[Camera],
    est: &EstimateConfig,
    cfg: &ReconConfig,
) -> Result<MultiPartReconstruction> {
    if parts.is_empty() {
        return Err(LarmError::Usage("at least one part is required".into()));
    }
    let cams = cfg.cameras();
    let mut body_vol = TsdfVolume::new(cfg.resolution, cfg.half_extent, cfg.trunc_voxels)?;
    let mut part_vols = vec![body_vol.clone(); parts.len()];
    for cam in &cams {
        let frames = parts
            .iter()
            .enumerate()
            .map(|(k, (s, _, _))| annotate(k, observe(*s, cam, 0.0)))
            .collect::<Result<Vec<_>>>()?;
        for (k, o) in frames.iter().enumerate() {
            tsdf_integrate(&mut part_vols[k], &o.frame, o.part_prob.as_deref(), LabelFilter::Movable);
        }
        // Body pixels: foreground in the first view and claimed by no part.
        let mut body = frames[0].frame.clone();
        let mut ambiguous = vec![false; body.pixel_count()];
        for o in &frames {
            for i in 0..body.pixel_count() {
                let class = classify_pixel(&o.frame, o.part_prob.as_deref(), AMBIGUITY_BAND, i);
                body.part_mask[i] |= class == PixelClass::Movable;
                ambiguous[i] |= class == PixelClass::Ambiguous;
            }
        }
        let prob: Vec<f32> = (0..body.pixel_count()).map(|i| if ambiguous[i] { 0.5 } else if body.part_mask[i] { 1.0 } else { 0.0 }).collect();
        tsdf_integrate(&mut body_vol, &body, Some(&prob), LabelFilter::Body);
    }
    let mut out = Vec::with_capacity(parts.len());
    for (k, (s, m, kind)) in parts.iter().enumerate() {
        let fit = annotate(k, joint::estimate_joint(*s, *m, query_cameras, *kind, est))?;
        let mesh = annotate(k, extract_mesh(&part_vols[k], PartLabel::Movable))?;
        out.push((mesh, fit));
    }
    Ok(MultiPartReconstruction { body: extract_mesh(&body_vol, PartLabel::Body)?, parts: out })
}

/// ASCII PLY with per-vertex 8-bit colors.
pub fn ply_string(mesh: &PartMesh) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nelement face {}\n\
         property list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
        let b = c.map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8);
        let _ = writeln!(s, "{} {} {} {} {} {}", v.x as f32, v.y as f32, v.z as f32, b[0], b[1], b[2]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}

pub fn write_ply(path: &Path, mesh: &PartMesh) -> Result<()> {
    std::fs::write(path, ply_string(mesh)).map_err(|source| LarmError::DiskWrite { path: path.display().to_string(), source })
}

/// Parses the ASCII PLY written by [`write_ply`].
pub fn read_ply(path: &Path, label: PartLabel) -> Result<PartMesh> {
    let text = std::fs::read_to_string(path)?;
    let bad = || LarmError::CorruptHeader(format!("{}: malformed PLY", path.display()));
    let mut lines = text.lines();
    let (mut nv, mut nf) = (0usize, 0usize);
    for line in lines.by_ref() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["element", "vertex", n] => nv = n.parse().map_err(|_| bad())?,
            ["element", "face", n] => nf = n.parse().map_err(|_| bad())?,
            ["end_header"] => break,
            _ => {}
        }
    }
    let mut mesh = PartMesh::empty(label);
    for _ in 0..nv {
        let vals: Vec<f64> = lines.next().ok_or_else(bad)?.split_whitespace().map(|x| x.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        if vals.len() < 3 {
            return Err(bad());
        }
        mesh.vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
        mesh.colors.push(if vals.len() >= 6 { [vals[3] as f32 / 255.0, vals[4] as f32 / 255.0, vals[5] as f32 / 255.0] } else { [0.5; 3] });
    }
    for _ in 0..nf {
        let vals: Vec<u32> = lines.next().ok_or_else(bad)?.split_whitespace().map(|x| x.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        if vals.len() != 4 || vals[0] != 3 {
            return Err(bad());
        }
        mesh.triangles.push([vals[1], vals[2], vals[3]]);
    }
    mesh.validate()?;
    Ok(mesh)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDescriptor {
    pub kind: crate::camera::JointKind,
    pub axis: [f64; 3],
    pub pivot: [f64; 3],
    pub scale: f64,
}

impl From<&JointSpec> for JointDescriptor {
    fn from(s: &JointSpec) -> Self {
        Self { kind: s.kind, axis: [s.axis.x, s.axis.y, s.axis.z], pivot: [s.pivot.x, s.pivot.y, s.pivot.z], scale: s.scale }
    }
}

impl JointDescriptor {
    pub fn to_spec(&self) -> Result<JointSpec> {
        JointSpec::new(self.kind, Vec3::from(self.axis), Vec3::from(self.pivot), self.scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartDescriptor {
    pub mesh_path: String,
    pub joint: JointDescriptor,
}

/// `{parts: [{mesh_path, joint: {kind, axis, pivot, scale}}], body: mesh_path}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDescriptor {
    pub parts: Vec<PartDescriptor>,
    pub body: String,
}

/// Writes `body.ply`, `part_<k>.ply` and `object.json` into `dir`.
pub fn write_object(dir: &Path, body: &PartMesh, parts: &[(PartMesh, JointSpec)]) -> Result<ObjectDescriptor> {
    std::fs::create_dir_all(dir).map_err(|source| LarmError::DiskWrite { path: dir.display().to_string(), source })?;
    write_ply(&dir.join("body.ply"), body)?;
    let mut descs = Vec::new();
    for (k, (mesh, spec)) in parts.iter().enumerate() {
        let name = format!("part_{k}.ply");
        write_ply(&dir.join(&name), mesh)?;
        descs.push(PartDescriptor { mesh_path: name, joint: spec.into() });
    }
    let desc = ObjectDescriptor { parts: descs, body: "body.ply".into() };
    let path = dir.join("object.json");
    std::fs::write(&path, serde_json::to_string_pretty(&desc)?).map_err(|source| LarmError::DiskWrite { path: path.display().to_string(), source })?;
    Ok(desc)
}

/// Loads an object written by [`write_object`].
pub fn read_object(dir: &Path) -> Result<(PartMesh, Vec<(PartMesh, JointSpec)>)> {
    let desc: ObjectDescriptor = serde_json::from_str(&std::fs::read_to_string(dir.join("object.json"))?)?;
    let body = read_ply(&dir.join(&desc.body), PartLabel::Body)?;
    let parts = desc
        .parts
        .iter()
        .map(|p| Ok((read_ply(&dir.join(&p.mesh_path), PartLabel::Movable)?, p.joint.to_spec()?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((body, parts))
}
