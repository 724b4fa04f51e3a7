//! Geometry, appearance, consistency and joint-accuracy metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{JointKind, JointSpec, Vec3};
use crate::error::{LarmError, Result};
use crate::raster::{render, Light, RasterTriangle, Shade};
use crate::recon::{pose_mesh_at_state, PartMesh, Reconstruction};
use crate::synth::{self, ArticulatedScene, OrientedBox};

/// Exact nearest-neighbor index over a fixed point set (implicit kd-tree:
/// each subrange is split at its median along its widest axis).
pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<u32>,
    axis: Vec<u8>,
}

const LEAF: usize = 8;

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut t = Self { points, order: (0..points.len() as u32).collect(), axis: vec![0; points.len()] };
        t.build(0, points.len());
        t
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= LEAF {
            return;
        }
        let (mut mn, mut mx) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[lo..hi] {
            let p = self.points[i as usize];
            mn = mn.inf(&p);
            mx = mx.sup(&p);
        }
        let ax = (mx - mn).imax();
        let mid = (lo + hi) / 2;
        let pts = self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| pts[a as usize][ax].total_cmp(&pts[b as usize][ax]));
        self.axis[mid] = ax as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    /// Distance from `q` to the closest indexed point (infinite if empty).
    pub fn nearest_distance(&self, q: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        self.search(q, 0, self.points.len(), &mut best);
        best.sqrt()
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, best: &mut f64) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                *best = best.min((self.points[i as usize] - q).norm_squared());
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let p = self.points[self.order[mid] as usize];
        *best = best.min((p - q).norm_squared());
        let ax = self.axis[mid] as usize;
        let diff = q[ax] - p[ax];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, best);
        if diff * diff < *best {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn nearest_all(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    let tree = KdTree::new(to);
    from.iter().map(|p| tree.nearest_distance(p)).collect()
}

/// Area-weighted uniform samples on the mesh surface, deterministic per seed.
pub fn sample_surface(mesh: &PartMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    mesh.validate()?;
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
        total += 0.5 * (b - a).cross(&(c - a)).norm();
        cdf.push(total);
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(LarmError::DegenerateMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let r = rng.random::<f64>() * total;
            let k = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
            let [a, b, c] = mesh.triangles[k].map(|i| mesh.vertices[i as usize]);
            let (r1, r2): (f64, f64) = (rng.random::<f64>().sqrt(), rng.random());
            a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2)
        })
        .collect())
}

/// `0.5 * (mean_a min_b |a-b| + mean_b min_a |a-b|)`.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(LarmError::EmptySet);
    }
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Ok(0.5 * (mean(nearest_all(a, b)) + mean(nearest_all(b, a))))
}

pub fn fscore(a: &[Vec3], b: &[Vec3], tau: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(LarmError::EmptySet);
    }
    let frac = |d: Vec<f64>| d.iter().filter(|&&x| x <= tau).count() as f64 / d.len() as f64;
    let p = frac(nearest_all(a, b));
    let r = frac(nearest_all(b, a));
    Ok(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
}

pub const PSNR_CAP: f64 = 99.0;

pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(LarmError::ShapeMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64)
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at 99 dB.
pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m <= 0.0 { PSNR_CAP } else { (10.0 * (1.0 / m).log10()).min(PSNR_CAP) })
}

/// Replaces background pixels with white.
pub fn composite_over_white(rgb: &[f32], fg: &[bool]) -> Vec<f32> {
    rgb.chunks_exact(3).zip(fg).flat_map(|(c, &f)| if f { [c[0], c[1], c[2]] } else { [1.0; 3] }).collect()
}

/// Mean per-pixel MSE between adjacent frames.
pub fn temporal_consistency(frames: &[Vec<f32>]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(LarmError::TooFewFrames);
    }
    let total = frames.windows(2).map(|w| mse(&w[0], &w[1])).sum::<Result<f64>>()?;
    Ok(total / (frames.len() - 1) as f64)
}

/// Bounding-box normalization: `x -> (x - center) / longest_side`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Vec3>) -> Result<Self> {
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for p in pts {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let side = (hi - lo).max();
        if !(side > 1e-12) || !side.is_finite() {
            return Err(LarmError::DegenerateMesh);
        }
        Ok(Self { center: (lo + hi) * 0.5, scale: 1.0 / side })
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.center) * self.scale
    }
}

/// Normalizes each mesh independently; rotation is not aligned.
pub fn align_normalize(pred: &PartMesh, gt: &PartMesh) -> Result<(PartMesh, PartMesh)> {
    let np = Normalization::from_points(&pred.vertices)?;
    let ng = Normalization::from_points(&gt.vertices)?;
    Ok((pred.transformed(|v| np.apply(v)), gt.transformed(|v| ng.apply(v))))
}

pub const AXIS_ANGLE_THRESHOLD: f64 = 0.25;
pub const AXIS_ORIGIN_THRESHOLD: f64 = 0.15;
pub const MOTION_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointMetrics {
    pub axis_angle_err: f64,
    pub axis_origin_err: f64,
    /// Relative motion-range error `|s_pred - s_gt| / |s_gt|`.
    pub m_r: f64,
    /// Angle between the signed motion vectors `a s`.
    pub m_d_angle: f64,
    pub axis_success: bool,
    pub origin_success: bool,
    pub m_r_success: bool,
    pub m_d_success: bool,
}

fn line_distance(p1: &Vec3, a1: &Vec3, p2: &Vec3, a2: &Vec3) -> f64 {
    let d = p2 - p1;
    let n = a1.cross(a2);
    let nn = n.norm();
    if nn < 1e-8 {
        d.cross(a1).norm() / a1.norm()
    } else {
        d.dot(&n).abs() / nn
    }
}

pub fn joint_metrics(pred: &JointSpec, gt: &JointSpec) -> Result<JointMetrics> {
    if pred.kind != gt.kind {
        return Err(LarmError::KindMismatch);
    }
    let axis_angle_err = pred.axis.dot(&gt.axis).abs().min(1.0).acos();
    let axis_origin_err = match gt.kind {
        JointKind::Revolute => line_distance(&pred.pivot, &pred.axis, &gt.pivot, &gt.axis),
        JointKind::Prismatic => 0.0,
    };
    let m_r = if gt.scale.abs() > 0.0 { (pred.scale.abs() - gt.scale.abs()).abs() / gt.scale.abs() } else { f64::INFINITY };
    let (mp, mg) = (pred.axis * pred.scale, gt.axis * gt.scale);
    let cos = mp.dot(&mg) / (mp.norm() * mg.norm());
    let m_d_angle = if cos.is_finite() { cos.clamp(-1.0, 1.0).acos() } else { std::f64::consts::PI };
    Ok(JointMetrics {
        axis_angle_err,
        axis_origin_err,
        m_r,
        m_d_angle,
        axis_success: axis_angle_err < AXIS_ANGLE_THRESHOLD,
        origin_success: axis_origin_err < AXIS_ORIGIN_THRESHOLD,
        m_r_success: m_r < MOTION_THRESHOLD,
        m_d_success: cos > 0.0 && m_d_angle <= MOTION_THRESHOLD,
    })
}

/// Signed distance to an oriented box (negative inside).
fn box_distance(b: &OrientedBox, p: &Vec3) -> f64 {
    let r = p - b.center;
    let q = Vec3::new(r.dot(&b.axes[0]).abs(), r.dot(&b.axes[1]).abs(), r.dot(&b.axes[2]).abs()) - b.half;
    Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm() + q.max().min(0.0)
}

/// Points on faces in contact with (or inside) another box are not visible
/// surface and are rejected.
const CONTACT_EPS: f64 = 1e-4;

/// Area-weighted samples of the scene's exposed surface with all parts at `states`.
pub fn scene_surface_points(scene: &ArticulatedScene, states: &[f64], n: usize, seed: u64) -> Result<Vec<Vec3>> {
    labeled_surface_points(scene, states, |_| true, n, seed)
}

/// As [`scene_surface_points`], restricted to boxes whose label (0 body,
/// `k + 1` part `k`) passes `keep`; contact with any box still hides a face.
pub fn labeled_surface_points(scene: &ArticulatedScene, states: &[f64], keep: impl Fn(i32) -> bool, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    let posed = scene.posed_boxes(states);
    let boxes: Vec<OrientedBox> = posed.iter().map(|(b, _)| *b).collect();
    // Faces as (box, axis, sign) with area.
    let mut faces = Vec::new();
    let mut cdf = Vec::new();
    let mut total = 0.0;
    for (bi, b) in boxes.iter().enumerate().filter(|(i, _)| keep(posed[*i].1)) {
        for ax in 0..3 {
            let area = 4.0 * b.half[(ax + 1) % 3] * b.half[(ax + 2) % 3];
            for sign in [-1.0, 1.0] {
                total += area;
                faces.push((bi, ax, sign));
                cdf.push(total);
            }
        }
    }
    if !(total > 0.0) {
        return Err(LarmError::DegenerateMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 100 * n.max(100) {
            return Err(LarmError::DegenerateMesh);
        }
        let r = rng.random::<f64>() * total;
        let (bi, ax, sign) = faces[cdf.partition_point(|&c| c <= r).min(faces.len() - 1)];
        let b = &boxes[bi];
        let (a1, a2) = ((ax + 1) % 3, (ax + 2) % 3);
        let (u, v): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let p = b.center + b.axes[ax] * (sign * b.half[ax]) + b.axes[a1] * (u * b.half[a1]) + b.axes[a2] * (v * b.half[a2]);
        let hidden = boxes.iter().enumerate().any(|(j, o)| j != bi && box_distance(o, &p) <= CONTACT_EPS);
        if !hidden {
            out.push(p);
        }
    }
    Ok(out)
}

/// Something that can be posed, rendered and sampled for evaluation.
pub trait EvalObject {
    fn joint(&self) -> JointSpec;
    fn triangles_at(&self, theta: f64) -> Vec<RasterTriangle>;
    fn light(&self) -> Light;
    fn normalization_at(&self, theta: f64) -> Result<Normalization>;
    fn surface_at(&self, theta: f64, n: usize, seed: u64) -> Result<Vec<Vec3>>;
}

/// Reconstructed canonical meshes plus the fitted joint.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshObject {
    pub meshes: Reconstruction,
    pub joint: JointSpec,
}

impl MeshObject {
    fn posed(&self, theta: f64) -> PartMesh {
        let r = pose_mesh_at_state(&self.meshes, &self.joint, theta);
        r.body.merged(&r.movable)
    }
}

pub fn mesh_triangles(mesh: &PartMesh, label: i32) -> Vec<RasterTriangle> {
    mesh.triangles
        .iter()
        .map(|t| RasterTriangle {
            verts: t.map(|i| mesh.vertices[i as usize]),
            shade: Shade::Vertex(t.map(|i| mesh.colors[i as usize])),
            label,
            cull_back: false,
        })
        .collect()
}

impl EvalObject for MeshObject {
    fn joint(&self) -> JointSpec {
        self.joint
    }

    fn triangles_at(&self, theta: f64) -> Vec<RasterTriangle> {
        let r = pose_mesh_at_state(&self.meshes, &self.joint, theta);
        let mut t = mesh_triangles(&r.body, 0);
        t.extend(mesh_triangles(&r.movable, 1));
        t
    }

    fn light(&self) -> Light {
        Light::default()
    }

    fn normalization_at(&self, theta: f64) -> Result<Normalization> {
        Normalization::from_points(&self.posed(theta).vertices)
    }

    fn surface_at(&self, theta: f64, n: usize, seed: u64) -> Result<Vec<Vec3>> {
        sample_surface(&self.posed(theta), n, seed)
    }
}

/// A ground-truth scene articulated through one of its joints.
#[derive(Debug, Clone, Copy)]
pub struct SceneObject<'a> {
    pub scene: &'a ArticulatedScene,
    pub joint_id: usize,
}

impl SceneObject<'_> {
    fn states(&self, theta: f64) -> Vec<f64> {
        let mut s = vec![0.0; self.scene.parts.len()];
        if let Some(x) = s.get_mut(self.joint_id) {
            *x = theta;
        }
        s
    }
}

impl EvalObject for SceneObject<'_> {
    fn joint(&self) -> JointSpec {
        self.scene.parts[self.joint_id].joint
    }

    fn triangles_at(&self, theta: f64) -> Vec<RasterTriangle> {
        self.scene.triangles(&self.states(theta))
    }

    fn light(&self) -> Light {
        self.scene.light
    }

    fn normalization_at(&self, theta: f64) -> Result<Normalization> {
        let boxes = self.scene.posed_boxes(&self.states(theta));
        let corners: Vec<Vec3> = boxes
            .iter()
            .flat_map(|(b, _)| {
                (0..8).map(move |c| {
                    let s = |k: usize| if c >> k & 1 == 1 { 1.0 } else { -1.0 };
                    b.center + b.axes[0] * (s(0) * b.half.x) + b.axes[1] * (s(1) * b.half.y) + b.axes[2] * (s(2) * b.half.z)
                })
            })
            .collect();
        Normalization::from_points(&corners)
    }

    fn surface_at(&self, theta: f64, n: usize, seed: u64) -> Result<Vec<Vec3>> {
        scene_surface_points(self.scene, &self.states(theta), n, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_states: usize,
    pub n_render_views: usize,
    pub n_points: usize,
    pub fscore_tau: f64,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_states: 5, n_render_views: 8, n_points: 100_000, fscore_tau: 0.05, image_size: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateReport {
    pub theta: f64,
    pub cd: f64,
    pub fscore: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub name: String,
    pub states: Vec<StateReport>,
    pub cd: f64,
    pub fscore: f64,
    pub psnr: f64,
    pub joint: JointMetrics,
}

/// Geometry after normalization at one state.
pub fn state_geometry(pred: &dyn EvalObject, gt: &dyn EvalObject, theta: f64, cfg: &EvalConfig, seed: u64) -> Result<(f64, f64)> {
    let np = pred.normalization_at(theta)?;
    let ng = gt.normalization_at(theta)?;
    let a: Vec<Vec3> = pred.surface_at(theta, cfg.n_points, seed)?.iter().map(|p| np.apply(p)).collect();
    let b: Vec<Vec3> = gt.surface_at(theta, cfg.n_points, seed)?.iter().map(|p| ng.apply(p)).collect();
    Ok((chamfer(&a, &b)?, fscore(&a, &b, cfg.fscore_tau)?))
}

/// Per-state CD / F-score / PSNR at `n_states` uniformly spaced states plus
/// joint metrics; object-level values are state averages.
pub fn evaluate_object(name: &str, pred: &dyn EvalObject, gt: &dyn EvalObject, cfg: &EvalConfig) -> Result<ObjectReport> {
    if cfg.n_states == 0 || cfg.n_render_views == 0 {
        return Err(LarmError::Usage("n_states and n_render_views must be positive".into()));
    }
    let joint = joint_metrics(&pred.joint(), &gt.joint())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let intr = synth::default_intrinsics(cfg.image_size);
    let cams: Vec<_> = (0..cfg.n_render_views).map(|_| synth::random_camera(&mut rng, intr)).collect();
    let mut states = Vec::with_capacity(cfg.n_states);
    for k in 0..cfg.n_states {
        let theta = if cfg.n_states == 1 { 0.0 } else { k as f64 / (cfg.n_states - 1) as f64 };
        let (cd, f) = state_geometry(pred, gt, theta, cfg, cfg.seed.wrapping_add(k as u64))?;
        let (tp, tg) = (pred.triangles_at(theta), gt.triangles_at(theta));
        let mut p = 0.0;
        for cam in &cams {
            let a = render(&tp, cam, &pred.light()).rgb;
            let b = render(&tg, cam, &gt.light()).rgb;
            p += psnr(&a, &b)?;
        }
        states.push(StateReport { theta, cd, fscore: f, psnr: p / cams.len() as f64 });
    }
    let mean = |f: fn(&StateReport) -> f64| states.iter().map(f).sum::<f64>() / states.len() as f64;
    Ok(ObjectReport { name: name.to_string(), cd: mean(|s| s.cd), fscore: mean(|s| s.fscore), psnr: mean(|s| s.psnr), joint, states })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub objects: Vec<ObjectReport>,
    pub cd: f64,
    pub fscore: f64,
    pub psnr: f64,
    pub axis_success_rate: f64,
    pub origin_success_rate: f64,
    pub m_r_success_rate: f64,
    pub m_d_success_rate: f64,
}

/// Averages over objects (each already averaged over its states).
pub fn aggregate(objects: Vec<ObjectReport>) -> Result<SuiteReport> {
    if objects.is_empty() {
        return Err(LarmError::EmptySet);
    }
    let n = objects.len() as f64;
    let mean = |f: &dyn Fn(&ObjectReport) -> f64| objects.iter().map(f).sum::<f64>() / n;
    let rate = |f: &dyn Fn(&JointMetrics) -> bool| objects.iter().filter(|o| f(&o.joint)).count() as f64 / n;
    Ok(SuiteReport {
        cd: mean(&|o| o.cd),
        fscore: mean(&|o| o.fscore),
        psnr: mean(&|o| o.psnr),
        axis_success_rate: rate(&|j| j.axis_success),
        origin_success_rate: rate(&|j| j.origin_success),
        m_r_success_rate: rate(&|j| j.m_r_success),
        m_d_success_rate: rate(&|j| j.m_d_success),
        objects,
    })
}

pub const REPORT_CSV_HEADER: &str =
    "name,theta,cd,fscore,psnr,axis_angle_err,axis_origin_err,m_r,m_d_angle,axis_success,origin_success,m_r_success,m_d_success";

/// One row per (object, state) plus one `mean` row per object.
pub fn report_csv(report: &SuiteReport) -> String {
    let mut s = format!("{REPORT_CSV_HEADER}\n");
    for o in &report.objects {
        let j = &o.joint;
        let tail = format!(
            "{},{},{},{},{},{},{},{}",
            j.axis_angle_err, j.axis_origin_err, j.m_r, j.m_d_angle, j.axis_success, j.origin_success, j.m_r_success, j.m_d_success
        );
        for st in &o.states {
            s += &format!("{},{},{},{},{},{tail}\n", o.name, st.theta, st.cd, st.fscore, st.psnr);
        }
        s += &format!("{},mean,{},{},{},{tail}\n", o.name, o.cd, o.fscore, o.psnr);
    }
    s
}
