//! Joint-parameter recovery from same-pose, different-state frame pairs:
//! correspondence filtering, lifting to 3D point pairs, closed-form minimal
//! solvers, damped Gauss-Newton refinement and RANSAC.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, SMatrix, SVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{
    in_image, joint_transform, project_point, unproject_pixel, Camera, JointKind, JointSpec, Vec3, DEPTH_NEAR,
};
use crate::error::{LarmError, Result};
use crate::frame::SampleFrame;
use crate::model::{self, Params};
use crate::synth::{self, ArticulatedScene};

/// Pixel match between two frames. Pixel coordinates are continuous, pixel
/// `(i, j)` covering `[i, i+1) x [j, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    #[serde(rename = "u")]
    pub pixel_u: [f64; 2],
    #[serde(rename = "v")]
    pub pixel_v: [f64; 2],
    #[serde(rename = "conf")]
    pub confidence: f64,
}

/// World-frame point of the part at state `theta_u` and the same material point at `theta_v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPair {
    pub pu: Vec3,
    pub pv: Vec3,
    pub theta_u: f64,
    pub theta_v: f64,
}

impl PointPair {
    pub fn dtheta(&self) -> f64 {
        self.theta_v - self.theta_u
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointPairSet {
    pub pairs: Vec<PointPair>,
}

impl PointPairSet {
    pub fn from_points(points: &[(Vec3, Vec3)], theta_u: f64, theta_v: f64) -> Self {
        Self { pairs: points.iter().map(|&(pu, pv)| PointPair { pu, pv, theta_u, theta_v }).collect() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn extend(&mut self, other: PointPairSet) {
        self.pairs.extend(other.pairs);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointFitResult {
    pub spec: JointSpec,
    pub inlier_fraction: f64,
    pub rms: f64,
}

/// `{kind, axis, pivot, scale, inlier_fraction, rms}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointResultJson {
    pub kind: JointKind,
    pub axis: [f64; 3],
    pub pivot: [f64; 3],
    pub scale: f64,
    pub inlier_fraction: f64,
    pub rms: f64,
}

impl From<&JointFitResult> for JointResultJson {
    fn from(r: &JointFitResult) -> Self {
        let s = r.spec;
        Self {
            kind: s.kind,
            axis: [s.axis.x, s.axis.y, s.axis.z],
            pivot: [s.pivot.x, s.pivot.y, s.pivot.z],
            scale: s.scale,
            inlier_fraction: r.inlier_fraction,
            rms: r.rms,
        }
    }
}

impl JointResultJson {
    pub fn to_result(&self) -> Result<JointFitResult> {
        Ok(JointFitResult {
            spec: JointSpec::new(self.kind, Vec3::from(self.axis), Vec3::from(self.pivot), self.scale)?,
            inlier_fraction: self.inlier_fraction,
            rms: self.rms,
        })
    }
}

/// Revolute: 3 pairs; prismatic: 2 pairs.
pub fn minimal_sample_size(kind: JointKind) -> usize {
    match kind {
        JointKind::Revolute => 3,
        JointKind::Prismatic => 2,
    }
}

fn mask_at(mask: &[bool], width: usize, height: usize, p: [f64; 2]) -> bool {
    let (x, y) = (p[0].floor(), p[1].floor());
    if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
        return false;
    }
    mask[y as usize * width + x as usize]
}

/// Greedy filter in descending confidence: keeps matches with confidence
/// `>= conf_min`, both endpoints on the part, and no kept match within
/// `min_px_dist` (measured at the `u` endpoint).
#[allow(clippy::too_many_arguments)]
pub fn filter_correspondences(
    cands: &[Correspondence],
    part_mask_u: &[bool],
    part_mask_v: &[bool],
    width: usize,
    height: usize,
    conf_min: f64,
    min_px_dist: f64,
    min_count: usize,
) -> Result<Vec<Correspondence>> {
    if part_mask_u.len() != width * height || part_mask_v.len() != width * height {
        return Err(LarmError::ShapeMismatch("part masks".into()));
    }
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| cands[b].confidence.total_cmp(&cands[a].confidence));
    let mut kept: Vec<Correspondence> = Vec::new();
    let d2 = min_px_dist * min_px_dist;
    for i in order {
        let c = cands[i];
        if c.confidence < conf_min
            || !mask_at(part_mask_u, width, height, c.pixel_u)
            || !mask_at(part_mask_v, width, height, c.pixel_v)
        {
            continue;
        }
        let close = kept.iter().any(|k| {
            let (dx, dy) = (k.pixel_u[0] - c.pixel_u[0], k.pixel_u[1] - c.pixel_u[1]);
            dx * dx + dy * dy < d2
        });
        if !close {
            kept.push(c);
        }
    }
    if kept.len() < min_count {
        return Err(LarmError::TooFewMatches { found: kept.len(), needed: min_count });
    }
    Ok(kept)
}

fn depth_px(depth: &[f32], w: usize, u: usize, v: usize) -> Result<f64> {
    let z = depth[v * w + u] as f64;
    if !(z > DEPTH_NEAR) {
        return Err(LarmError::NonPositiveDepth { u, v, depth: z });
    }
    Ok(z)
}

/// Depth at a sub-pixel location: bilinear in inverse depth over the four
/// surrounding pixel centers (exact on planes), or the containing pixel's
/// depth when a neighbor is missing.
pub fn depth_at(depth: &[f32], cam: &Camera, p: [f64; 2]) -> Result<f64> {
    let (w, h) = (cam.width(), cam.height());
    if !(p[0] >= 0.0 && p[1] >= 0.0 && p[0] < w as f64 && p[1] < h as f64) {
        return Err(LarmError::NonPositiveDepth { u: 0, v: 0, depth: 0.0 });
    }
    let nearest = depth_px(depth, w, p[0] as usize, p[1] as usize)?;
    let (fx, fy) = (p[0] - 0.5, p[1] - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    if x0 < 0.0 || y0 < 0.0 || x0 + 1.0 >= w as f64 || y0 + 1.0 >= h as f64 {
        return Ok(nearest);
    }
    let (tx, ty) = (fx - x0, fy - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    let mut inv = 0.0;
    for (dx, dy, wgt) in [(0, 0, (1.0 - tx) * (1.0 - ty)), (1, 0, tx * (1.0 - ty)), (0, 1, (1.0 - tx) * ty), (1, 1, tx * ty)] {
        match depth_px(depth, w, x0 + dx, y0 + dy) {
            Ok(z) => inv += wgt / z,
            Err(_) => return Ok(nearest),
        }
    }
    Ok(1.0 / inv)
}

/// Unprojects both endpoints with their own state's depth (same camera).
pub fn lift_pairs(
    corrs: &[Correspondence],
    depth_u: &[f32],
    depth_v: &[f32],
    camera: &Camera,
    theta_u: f64,
    theta_v: f64,
) -> Result<PointPairSet> {
    let n = camera.width() * camera.height();
    if depth_u.len() != n || depth_v.len() != n {
        return Err(LarmError::ShapeMismatch("depth maps".into()));
    }
    let (intr, pose) = (&camera.intrinsics, &camera.pose);
    let mut pairs = Vec::with_capacity(corrs.len());
    for c in corrs {
        let zu = depth_at(depth_u, camera, c.pixel_u)?;
        let zv = depth_at(depth_v, camera, c.pixel_v)?;
        pairs.push(PointPair {
            pu: unproject_pixel(c.pixel_u[0], c.pixel_u[1], zu, intr, pose),
            pv: unproject_pixel(c.pixel_v[0], c.pixel_v[1], zv, intr, pose),
            theta_u,
            theta_v,
        });
    }
    Ok(PointPairSet { pairs })
}

fn pair_error(spec: &JointSpec, p: &PointPair) -> Vec3 {
    joint_transform(spec, p.theta_u, p.theta_v).apply(&p.pu) - p.pv
}

/// `Σ ||T(P_u) − P_v||²`.
pub fn joint_residual(pairs: &PointPairSet, spec: &JointSpec) -> f64 {
    pairs.pairs.iter().map(|p| pair_error(spec, p).norm_squared()).sum()
}

fn rms(pairs: &[PointPair], spec: &JointSpec) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    (pairs.iter().map(|p| pair_error(spec, p).norm_squared()).sum::<f64>() / pairs.len() as f64).sqrt()
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn tangent_basis(a: &Vec3) -> (Vec3, Vec3) {
    let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let b1 = a.cross(&helper).normalize();
    (b1, a.cross(&b1))
}

/// Closed-form least-squares solution from displacements:
/// revolute axis = direction least aligned with displacements, pivot from
/// perpendicular-bisector planes, scale from signed angles; prismatic
/// `w = Σ Δθ d / Σ Δθ²`.
pub fn closed_form_init(pairs: &[PointPair], kind: JointKind) -> Result<JointSpec> {
    if pairs.len() < minimal_sample_size(kind) {
        return Err(LarmError::TooFewMatches { found: pairs.len(), needed: minimal_sample_size(kind) });
    }
    let dt2: f64 = pairs.iter().map(|p| p.dtheta().powi(2)).sum();
    if dt2 < 1e-18 {
        return Err(LarmError::Diverged("all state differences are zero".into()));
    }
    match kind {
        JointKind::Prismatic => {
            let w = pairs.iter().fold(Vec3::zeros(), |acc, p| acc + (p.pv - p.pu) * p.dtheta()) / dt2;
            if w.norm() < 1e-12 {
                return Err(LarmError::Diverged("no translation observed".into()));
            }
            Ok(JointSpec::prismatic(w, w.norm())?.canonical())
        }
        JointKind::Revolute => {
            let mut cov = Matrix3::zeros();
            for p in pairs {
                let d = p.pv - p.pu;
                cov += d * d.transpose();
            }
            if cov.trace() < 1e-20 {
                return Err(LarmError::Diverged("no motion observed".into()));
            }
            let eig = SymmetricEigen::new(cov);
            let mut idx = [0, 1, 2];
            idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
            if eig.eigenvalues[idx[1]] < 1e-12 * eig.eigenvalues[idx[2]].max(1e-300) {
                return Err(LarmError::Diverged("displacements are collinear".into()));
            }
            let a: Vec3 = eig.eigenvectors.column(idx[0]).into_owned().normalize();
            // Bisector planes d·x = d·m plus the gauge a·x = 0.
            let mut ata = a * a.transpose();
            let mut atb = Vec3::zeros();
            for p in pairs {
                let d = p.pv - p.pu;
                let m = (p.pu + p.pv) * 0.5;
                ata += d * d.transpose();
                atb += d * d.dot(&m);
            }
            let pivot = ata.try_inverse().ok_or_else(|| LarmError::Diverged("singular pivot system".into()))? * atb;
            let (mut num, mut den) = (0.0, 0.0);
            for p in pairs {
                let u = p.pu - pivot;
                let v = p.pv - pivot;
                let u = u - a * a.dot(&u);
                let v = v - a * a.dot(&v);
                let phi = a.dot(&u.cross(&v)).atan2(u.dot(&v));
                num += phi * p.dtheta();
                den += p.dtheta().powi(2);
            }
            Ok(JointSpec::revolute(a, pivot, num / den)?.canonical())
        }
    }
}

const LM_MAX_ITERS: usize = 500;
const LM_REL_TOL: f64 = 1e-10;

/// Damped Gauss-Newton on `joint_residual`. Revolute parameters: axis via a
/// 2-dof tangent rotation, pivot (3), scale (1); the pivot is
/// re-canonicalized after every accepted step. Prismatic parameters: the
/// axis-scale product `w` (3), whose least-squares optimum is exact.
pub fn fit_joint(pairs: &PointPairSet, kind: JointKind, init: &JointSpec) -> Result<JointFitResult> {
    fit_pairs(&pairs.pairs, kind, init, LM_MAX_ITERS)
}

fn finish(pairs: &[PointPair], spec: JointSpec) -> Result<JointFitResult> {
    if !spec.axis.iter().all(|x| x.is_finite()) || !spec.scale.is_finite() {
        return Err(LarmError::Diverged("non-finite joint".into()));
    }
    let spec = spec.canonical();
    Ok(JointFitResult { spec, inlier_fraction: 1.0, rms: rms(pairs, &spec) })
}

fn fit_pairs(pairs: &[PointPair], kind: JointKind, init: &JointSpec, max_iters: usize) -> Result<JointFitResult> {
    let m = minimal_sample_size(kind);
    if pairs.len() < m {
        return Err(LarmError::TooFewMatches { found: pairs.len(), needed: m });
    }
    if kind != init.kind {
        return Err(LarmError::KindMismatch);
    }
    match kind {
        JointKind::Prismatic => finish(pairs, closed_form_init(pairs, kind)?),
        JointKind::Revolute => finish(pairs, lm_revolute(pairs, init, max_iters)?),
    }
}

fn cost(pairs: &[PointPair], spec: &JointSpec) -> f64 {
    pairs.iter().map(|p| pair_error(spec, p).norm_squared()).sum()
}

fn lm_revolute(pairs: &[PointPair], init: &JointSpec, max_iters: usize) -> Result<JointSpec> {
    type M6 = SMatrix<f64, 6, 6>;
    type V6 = SVector<f64, 6>;
    let mut spec = *init;
    let mut c = cost(pairs, &spec);
    let mut lambda = 1e-3;
    for _ in 0..max_iters {
        if c < 1e-30 {
            break;
        }
        let (b1, b2) = tangent_basis(&spec.axis);
        let mut jtj = M6::zeros();
        let mut jtr = V6::zeros();
        for p in pairs {
            let t = joint_transform(&spec, p.theta_u, p.theta_v);
            let v = p.pu - spec.pivot;
            let rv = t.rotation * v;
            let r = rv + spec.pivot - p.pv;
            // d/dω of R(Qa) v with Q = exp([ω]×): −[Rv]× ω + R [v]× ω.
            let jw = -skew(&rv) + t.rotation * skew(&v);
            let jp = Matrix3::identity() - t.rotation;
            let js = spec.axis.cross(&rv) * p.dtheta();
            let mut j = SMatrix::<f64, 3, 6>::zeros();
            j.fixed_view_mut::<3, 1>(0, 0).copy_from(&(jw * b1));
            j.fixed_view_mut::<3, 1>(0, 1).copy_from(&(jw * b2));
            j.fixed_view_mut::<3, 3>(0, 2).copy_from(&jp);
            j.fixed_view_mut::<3, 1>(0, 5).copy_from(&js);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj;
            for k in 0..6 {
                a[(k, k)] += lambda * (1.0 + jtj[(k, k)]);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-jtr));
            let omega = b1 * delta[0] + b2 * delta[1];
            let rot = nalgebra::Rotation3::new(omega);
            let cand = JointSpec::revolute(
                rot * spec.axis,
                spec.pivot + Vec3::new(delta[2], delta[3], delta[4]),
                spec.scale + delta[5],
            );
            let Ok(cand) = cand else {
                lambda *= 10.0;
                continue;
            };
            let cc = cost(pairs, &cand);
            if cc.is_finite() && cc <= c {
                let rel = (c - cc) / c.max(1e-300);
                spec = cand;
                c = cc;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if rel < LM_REL_TOL {
                    return Ok(spec);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    if !c.is_finite() {
        return Err(LarmError::Diverged("residual is not finite".into()));
    }
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iters: usize,
    pub inlier_tol: f64,
    pub seed: u64,
    pub min_inlier_fraction: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iters: 256, inlier_tol: 0.02, seed: 0, min_inlier_fraction: 0.2 }
    }
}

fn lex_cmp(a: &PointPair, b: &PointPair) -> std::cmp::Ordering {
    let key = |p: &PointPair| [p.pu.x, p.pu.y, p.pu.z, p.pv.x, p.pv.y, p.pv.z, p.theta_u, p.theta_v];
    let (ka, kb) = (key(a), key(b));
    for i in 0..ka.len() {
        match ka[i].total_cmp(&kb[i]) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

fn inliers(pairs: &[PointPair], spec: &JointSpec, tol: f64) -> Vec<usize> {
    (0..pairs.len()).filter(|&i| pair_error(spec, &pairs[i]).norm() <= tol).collect()
}

/// Minimal-sample consensus followed by a refit on the best inlier set.
/// Pairs are sorted first, so the result does not depend on their order.
pub fn ransac_fit_joint(pairs: &PointPairSet, kind: JointKind, cfg: &RansacConfig) -> Result<JointFitResult> {
    let m = minimal_sample_size(kind);
    let n = pairs.len();
    if n < m {
        return Err(LarmError::TooFewMatches { found: n, needed: m });
    }
    let mut sorted = pairs.pairs.clone();
    sorted.sort_by(lex_cmp);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // (inlier count, rms on inliers, iteration, spec)
    let mut best: Option<(usize, f64, usize, JointSpec)> = None;
    for it in 0..cfg.iters {
        let idx = sample(&mut rng, n, m);
        let subset: Vec<PointPair> = idx.iter().map(|i| sorted[i]).collect();
        let Ok(init) = closed_form_init(&subset, kind) else { continue };
        let Ok(fit) = fit_pairs(&subset, kind, &init, 50) else { continue };
        let inl = inliers(&sorted, &fit.spec, cfg.inlier_tol);
        let inl_pairs: Vec<PointPair> = inl.iter().map(|&i| sorted[i]).collect();
        let r = rms(&inl_pairs, &fit.spec);
        let better = match &best {
            None => !inl.is_empty(),
            Some((bc, br, _, _)) => inl.len() > *bc || (inl.len() == *bc && r < *br),
        };
        if better {
            best = Some((inl.len(), r, it, fit.spec));
        }
    }
    let Some((count, _, _, spec)) = best else {
        return Err(LarmError::NoConsensus(0.0));
    };
    let frac = count as f64 / n as f64;
    if frac < cfg.min_inlier_fraction {
        return Err(LarmError::NoConsensus(frac));
    }
    let mut current = spec;
    let mut inl = inliers(&sorted, &current, cfg.inlier_tol);
    for _ in 0..3 {
        let subset: Vec<PointPair> = inl.iter().map(|&i| sorted[i]).collect();
        let fit = fit_pairs(&subset, kind, &current, LM_MAX_ITERS)?;
        let next = inliers(&sorted, &fit.spec, cfg.inlier_tol);
        current = fit.spec;
        if next == inl || next.len() < m {
            break;
        }
        inl = next;
    }
    let inl = inliers(&sorted, &current, cfg.inlier_tol);
    let inl_pairs: Vec<PointPair> = inl.iter().map(|&i| sorted[i]).collect();
    Ok(JointFitResult {
        spec: current.canonical(),
        inlier_fraction: inl.len() as f64 / n as f64,
        rms: rms(&inl_pairs, &current),
    })
}

/// Source of frames at arbitrary (camera, state).
pub trait FrameSynthesizer {
    fn synthesize(&self, camera: &Camera, theta: f64) -> Result<SampleFrame>;

    /// The frame plus soft part probabilities when the source has them.
    fn synthesize_soft(&self, camera: &Camera, theta: f64) -> Result<(SampleFrame, Option<Vec<f32>>)> {
        Ok((self.synthesize(camera, theta)?, None))
    }
}

/// Ground-truth rendering (bypasses the network).
pub struct GtSynthesizer<'a> {
    pub scene: &'a ArticulatedScene,
    pub joint_id: usize,
}

impl FrameSynthesizer for GtSynthesizer<'_> {
    fn synthesize(&self, camera: &Camera, theta: f64) -> Result<SampleFrame> {
        Ok(synth::rasterize(self.scene, camera, theta, self.joint_id))
    }
}

/// Model predictions from a fixed set of `2N` input frames.
pub struct ModelSynthesizer<'a> {
    pub params: &'a Params<f32>,
    pub inputs: &'a [SampleFrame],
    pub joint_id: usize,
}

impl FrameSynthesizer for ModelSynthesizer<'_> {
    fn synthesize(&self, camera: &Camera, theta: f64) -> Result<SampleFrame> {
        Ok(model::infer(self.inputs, camera, theta, self.params)?.to_frame(self.joint_id))
    }

    fn synthesize_soft(&self, camera: &Camera, theta: f64) -> Result<(SampleFrame, Option<Vec<f32>>)> {
        let pred = model::infer(self.inputs, camera, theta, self.params)?;
        let frame = pred.to_frame(self.joint_id);
        Ok((frame, pred.part_prob))
    }
}

/// Identifies one queried frame pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchQuery {
    pub pose_index: usize,
    pub state_u: usize,
    pub state_v: usize,
    pub theta_u: f64,
    pub theta_v: f64,
}

/// Pixel matcher between two frames of the same pose.
pub trait CorrespondenceProvider {
    fn matches(&self, frame_u: &SampleFrame, frame_v: &SampleFrame, query: &MatchQuery) -> Result<Vec<Correspondence>>;
}

/// Exact matcher tracing part surface points through the ground-truth scene:
/// a pixel's GT surface point at `θ_u` is moved by the GT joint and
/// projected into the second view; matches occluded there are dropped.
const TRACE_TOL: f64 = 1e-5;

pub struct SyntheticMatcher<'a> {
    pub scene: &'a ArticulatedScene,
    pub joint_id: usize,
    /// Sample every `stride`-th pixel in each direction.
    pub stride: usize,
}

impl CorrespondenceProvider for SyntheticMatcher<'_> {
    fn matches(&self, frame_u: &SampleFrame, _frame_v: &SampleFrame, q: &MatchQuery) -> Result<Vec<Correspondence>> {
        let cam = frame_u.camera;
        let gt_u = synth::rasterize(self.scene, &cam, q.theta_u, self.joint_id);
        let gt_v = synth::rasterize(self.scene, &cam, q.theta_v, self.joint_id);
        let spec = self.scene.parts[self.joint_id].joint;
        let t = joint_transform(&spec, q.theta_u, q.theta_v);
        let (w, h) = (cam.width(), cam.height());
        let mut out = Vec::new();
        let stride = self.stride.max(1);
        for y in (0..h).step_by(stride) {
            for x in (0..w).step_by(stride) {
                let i = y * w + x;
                if !gt_u.part_mask[i] {
                    continue;
                }
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let xw = unproject_pixel(px, py, gt_u.depth[i] as f64, &cam.intrinsics, &cam.pose);
                let Ok((u2, v2, z2)) = project_point(&t.apply(&xw), &cam.intrinsics, &cam.pose) else { continue };
                if !in_image(u2, v2, &cam.intrinsics) {
                    continue;
                }
                let j = v2.floor() as usize * w + u2.floor() as usize;
                if !gt_v.part_mask[j] {
                    continue;
                }
                // Keep matches whose target depth reproduces the traced point:
                // drops occluded points and samples straddling a depth edge.
                let Ok(zv) = depth_at(&gt_v.depth, &cam, [u2, v2]) else { continue };
                if (zv - z2).abs() > TRACE_TOL {
                    continue;
                }
                out.push(Correspondence { pixel_u: [px, py], pixel_v: [u2, v2], confidence: 1.0 });
            }
        }
        Ok(out)
    }
}

/// Precomputed matches from `dir/matches_p{pose}_s{u}_s{v}.json`, each a
/// list of `{u: [x, y], v: [x, y], conf}`.
pub struct JsonMatcher {
    pub dir: PathBuf,
}

impl JsonMatcher {
    pub fn path_for(dir: &Path, q: &MatchQuery) -> PathBuf {
        dir.join(format!("matches_p{}_s{}_s{}.json", q.pose_index, q.state_u, q.state_v))
    }
}

pub fn read_correspondences(path: &Path) -> Result<Vec<Correspondence>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

impl CorrespondenceProvider for JsonMatcher {
    fn matches(&self, _: &SampleFrame, _: &SampleFrame, q: &MatchQuery) -> Result<Vec<Correspondence>> {
        let path = Self::path_for(&self.dir, q);
        if !path.exists() {
            return Ok(Vec::new());
        }
        read_correspondences(&path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    pub n_states: usize,
    pub n_poses: usize,
    pub conf_min: f64,
    pub min_px_dist: f64,
    pub ransac: RansacConfig,
    /// Cap on matches kept per frame pair (highest confidence first).
    pub pairs_per_state: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self { n_states: 5, n_poses: 4, conf_min: 0.8, min_px_dist: 3.0, ransac: RansacConfig::default(), pairs_per_state: 64 }
    }
}

/// Query poses: azimuths spread around the object at a moderate elevation.
pub fn query_cameras(width: usize, n: usize) -> Vec<Camera> {
    synth::fibonacci_cameras(synth::default_intrinsics(width), n, (10f64.to_radians(), 45f64.to_radians()))
}

/// Queries the synthesizer at `n_states` uniformly spaced states over
/// `n_poses` poses, matches every same-pose state pair, lifts matches with
/// the synthesized depth and part masks, pools all pairs and runs RANSAC.
pub fn estimate_joint(
    synth: &dyn FrameSynthesizer,
    matcher: &dyn CorrespondenceProvider,
    cameras: &[Camera],
    kind: JointKind,
    cfg: &EstimateConfig,
) -> Result<JointFitResult> {
    if cfg.n_states < 2 {
        return Err(LarmError::Usage("n_states must be at least 2".into()));
    }
    let thetas: Vec<f64> = (0..cfg.n_states).map(|k| k as f64 / (cfg.n_states - 1) as f64).collect();
    let mut pooled = PointPairSet::default();
    for (pi, cam) in cameras.iter().enumerate() {
        let frames = thetas.iter().map(|&t| synth.synthesize(cam, t)).collect::<Result<Vec<_>>>()?;
        let (w, h) = (cam.width(), cam.height());
        for su in 0..thetas.len() {
            for sv in su + 1..thetas.len() {
                let q = MatchQuery { pose_index: pi, state_u: su, state_v: sv, theta_u: thetas[su], theta_v: thetas[sv] };
                let (fu, fv) = (&frames[su], &frames[sv]);
                let cands = matcher.matches(fu, fv, &q)?;
                let mut kept = filter_correspondences(&cands, &fu.part_mask, &fv.part_mask, w, h, cfg.conf_min, cfg.min_px_dist, 0)?;
                kept.truncate(cfg.pairs_per_state);
                // Predicted depth may be missing at a matched pixel; skip those matches.
                let usable: Vec<Correspondence> = kept
                    .into_iter()
                    .filter(|c| depth_at(&fu.depth, cam, c.pixel_u).is_ok() && depth_at(&fv.depth, cam, c.pixel_v).is_ok())
                    .collect();
                pooled.extend(lift_pairs(&usable, &fu.depth, &fv.depth, cam, q.theta_u, q.theta_v)?);
            }
        }
    }
    let m = minimal_sample_size(kind);
    if pooled.len() < m {
        return Err(LarmError::TooFewMatches { found: pooled.len(), needed: m });
    }
    ransac_fit_joint(&pooled, kind, &cfg.ransac)
}

/// Groups pairs by state pair (for reporting).
pub fn pairs_by_states(pairs: &PointPairSet) -> BTreeMap<(u64, u64), usize> {
    let mut m = BTreeMap::new();
    for p in &pairs.pairs {
        *m.entry((p.theta_u.to_bits(), p.theta_v.to_bits())).or_insert(0) += 1;
    }
    m
}
