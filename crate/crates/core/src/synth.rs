//! Procedural articulated scenes built from textured boxes, and the
//! ground-truth renderer producing [`SampleFrame`]s.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{
    orbit_camera, Camera, CameraIntrinsics, JointKind, JointSpec, RigidTransform, Vec3, CAMERA_RADIUS,
};
use crate::error::Result;
use crate::frame::SampleFrame;
use crate::raster::{render, Light, RasterTriangle, Shade, Texture};

/// Vertical field of view of the default dataset camera.
pub const DEFAULT_FOV_Y: f64 = 52.0 * PI / 180.0;
/// Elevation range of sampled cameras.
pub const ELEVATION_RANGE: (f64, f64) = (-30.0 * PI / 180.0, 60.0 * PI / 180.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Door,
    Drawer,
    Lid,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Door, Family::Drawer, Family::Lid];

    pub fn kind(&self) -> JointKind {
        match self {
            Family::Drawer => JointKind::Prismatic,
            Family::Door | Family::Lid => JointKind::Revolute,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = crate::error::LarmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "door" => Ok(Family::Door),
            "drawer" => Ok(Family::Drawer),
            "lid" => Ok(Family::Lid),
            other => Err(crate::error::LarmError::Usage(format!("unknown family '{other}'"))),
        }
    }
}

/// Axis-aligned box in its rest placement, one texture per face in the
/// order -x, +x, -y, +y, -z, +z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TexturedBox {
    pub min: Vec3,
    pub max: Vec3,
    pub faces: [Texture; 6],
}

impl TexturedBox {
    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn half_extents(&self) -> Vec3 {
        (self.max - self.min) * 0.5
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }

    /// Face quads (counter-clockwise seen from outside) with outward normals.
    pub fn face_quads(&self) -> [([Vec3; 4], Vec3); 6] {
        let c = self.corners();
        [
            ([c[0], c[4], c[6], c[2]], -Vec3::x()),
            ([c[1], c[3], c[7], c[5]], Vec3::x()),
            ([c[0], c[1], c[5], c[4]], -Vec3::y()),
            ([c[2], c[6], c[7], c[3]], Vec3::y()),
            ([c[0], c[2], c[3], c[1]], -Vec3::z()),
            ([c[4], c[5], c[7], c[6]], Vec3::z()),
        ]
    }

    fn scaled(&self, scale: f64, offset: &Vec3) -> Self {
        Self { min: (self.min - offset) * scale, max: (self.max - offset) * scale, faces: self.faces }
    }

    /// Signed distance from a point to the box surface (negative inside).
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let q = (p - self.center()).abs() - self.half_extents();
        let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
        outside + q.x.max(q.y).max(q.z).min(0.0)
    }
}

/// A box under a rigid transform: center, rotation columns and half extents.
#[derive(Debug, Clone, Copy)]
pub struct OrientedBox {
    pub center: Vec3,
    pub axes: [Vec3; 3],
    pub half: Vec3,
}

impl OrientedBox {
    pub fn from_box(b: &TexturedBox, t: &RigidTransform) -> Self {
        let r = t.rotation;
        Self {
            center: t.apply(&b.center()),
            axes: [r.column(0).into(), r.column(1).into(), r.column(2).into()],
            half: b.half_extents(),
        }
    }

    fn radius_along(&self, axis: &Vec3) -> f64 {
        (0..3).map(|i| self.half[i] * self.axes[i].dot(axis).abs()).sum()
    }

    /// Separating-axis test; boxes that merely touch (penetration ≤ `tol`)
    /// do not count as overlapping.
    pub fn overlaps(&self, other: &OrientedBox, tol: f64) -> bool {
        let mut axes: Vec<Vec3> = Vec::with_capacity(15);
        axes.extend_from_slice(&self.axes);
        axes.extend_from_slice(&other.axes);
        for a in &self.axes {
            for b in &other.axes {
                if let Some(c) = a.cross(b).try_normalize(1e-9) {
                    axes.push(c);
                }
            }
        }
        let d = other.center - self.center;
        for axis in &axes {
            let gap = d.dot(axis).abs() - self.radius_along(axis) - other.radius_along(axis);
            if gap >= -tol {
                return false;
            }
        }
        true
    }

    /// Ray entry distance (parametric `t`, ray `o + t d`) or `None` on miss.
    pub fn ray_hit(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        let rel = o - self.center;
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..3 {
            let oi = rel.dot(&self.axes[i]);
            let di = d.dot(&self.axes[i]);
            if di.abs() < 1e-15 {
                if oi.abs() > self.half[i] {
                    return None;
                }
                continue;
            }
            let a = (-self.half[i] - oi) / di;
            let b = (self.half[i] - oi) / di;
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovablePart {
    pub part: TexturedBox,
    pub joint: JointSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedScene {
    pub body: Vec<TexturedBox>,
    pub parts: Vec<MovablePart>,
    pub light: Light,
}

/// Augmentation knobs: geometry seed, an independent texture seed and a
/// per-axis stretch applied before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub seed: u64,
    pub family: Family,
    pub texture_seed: u64,
    pub axis_scale: [f64; 3],
}

impl SceneParams {
    pub fn new(seed: u64, family: Family) -> Self {
        Self { seed, family, texture_seed: seed, axis_scale: [1.0; 3] }
    }

    /// Random per-axis stretch in `range` and a fresh texture seed.
    pub fn augmented(seed: u64, family: Family, variant: u64, range: (f64, f64)) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ variant.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let axis_scale = [
            rng.random_range(range.0..=range.1),
            rng.random_range(range.0..=range.1),
            rng.random_range(range.0..=range.1),
        ];
        Self { seed, family, texture_seed: rng.random(), axis_scale }
    }
}

pub fn sample_scene(seed: u64, family: Family) -> ArticulatedScene {
    sample_scene_with(&SceneParams::new(seed, family))
}

struct Palette {
    rng: ChaCha8Rng,
}

impl Palette {
    fn color(&mut self) -> [f32; 3] {
        // Saturated-ish colors away from the white background.
        let h: f64 = self.rng.random_range(0.0..6.0);
        let s: f64 = self.rng.random_range(0.35..0.85);
        let v: f64 = self.rng.random_range(0.45..0.9);
        let c = v * s;
        let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
        let (r, g, b) = match h as usize {
            0 => (c, x, 0.0),
            1 => (x, c, 0.0),
            2 => (0.0, c, x),
            3 => (0.0, x, c),
            4 => (x, 0.0, c),
            _ => (c, 0.0, x),
        };
        let m = v - c;
        [(r + m) as f32, (g + m) as f32, (b + m) as f32]
    }

    fn texture(&mut self) -> Texture {
        let base = self.color();
        if self.rng.random_bool(0.3) {
            let alt = base.map(|c| (c * 0.6).min(1.0));
            Texture { base, alt, checker: Some(self.rng.random_range(0.12..0.3)) }
        } else {
            Texture::solid(base)
        }
    }

    /// One texture for the whole box with slight per-face variation.
    fn box_faces(&mut self) -> [Texture; 6] {
        let t = self.texture();
        std::array::from_fn(|_| {
            let k = self.rng.random_range(0.9f32..1.0);
            Texture { base: t.base.map(|c| c * k), alt: t.alt.map(|c| c * k), checker: t.checker }
        })
    }
}

fn aabb(min: Vec3, max: Vec3) -> (Vec3, Vec3) {
    (min, max)
}

/// Raw (un-normalized) layout of one movable part on a body.
struct PartLayout {
    part: (Vec3, Vec3),
    kind: JointKind,
    axis: Vec3,
    pivot: Vec3,
    scale: f64,
}

pub fn sample_scene_with(params: &SceneParams) -> ArticulatedScene {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_mul(6364136223846793005).wrapping_add(params.family as u64));
    let mut palette = Palette { rng: ChaCha8Rng::seed_from_u64(params.texture_seed ^ 0xA5A5_5A5A_0F0F_F0F0) };
    let st = params.axis_scale;
    let w = rng.random_range(0.6..1.0) * st[0];
    let h = rng.random_range(0.55..1.0) * st[1];
    let d = rng.random_range(0.45..0.85) * st[2];
    let (hx, hy, hz) = (w / 2.0, h / 2.0, d / 2.0);

    let mut body: Vec<(Vec3, Vec3)> = Vec::new();
    let layout = match params.family {
        Family::Door => {
            body.push(aabb(Vec3::new(-hx, -hy, -hz), Vec3::new(hx, hy, hz)));
            let t = rng.random_range(0.03..0.06) * st[2];
            let inset = rng.random_range(0.0..0.04);
            let part = (Vec3::new(-hx + inset, -hy + inset, hz), Vec3::new(hx - inset, hy - inset, hz + t));
            let left = rng.random_bool(0.5);
            let hinge_x = if left { part.0.x } else { part.1.x };
            PartLayout {
                part,
                kind: JointKind::Revolute,
                axis: Vec3::y(),
                pivot: Vec3::new(hinge_x, 0.0, hz),
                scale: rng.random_range(PI / 6.0..=PI / 2.0),
            }
        }
        Family::Lid => {
            body.push(aabb(Vec3::new(-hx, -hy, -hz), Vec3::new(hx, hy, hz)));
            let t = rng.random_range(0.03..0.06) * st[1];
            let part = (Vec3::new(-hx, hy, -hz), Vec3::new(hx, hy + t, hz));
            PartLayout {
                part,
                kind: JointKind::Revolute,
                axis: Vec3::x(),
                pivot: Vec3::new(0.0, hy, -hz),
                scale: rng.random_range(PI / 6.0..=PI / 2.0),
            }
        }
        Family::Drawer => {
            // Open-front shell with the drawer filling the cavity.
            let wall = rng.random_range(0.04..0.08) * st[0].min(st[1]);
            let back = rng.random_range(0.04..0.08) * st[2];
            let cav_lo = rng.random_range(-hy + wall..-hy + wall + 0.25 * h);
            let cav_hi = (cav_lo + rng.random_range(0.25..0.45) * h).min(hy - wall);
            body.push(aabb(Vec3::new(-hx, -hy, -hz), Vec3::new(hx, hy, -hz + back)));
            body.push(aabb(Vec3::new(-hx, -hy, -hz + back), Vec3::new(-hx + wall, hy, hz)));
            body.push(aabb(Vec3::new(hx - wall, -hy, -hz + back), Vec3::new(hx, hy, hz)));
            body.push(aabb(Vec3::new(-hx + wall, -hy, -hz + back), Vec3::new(hx - wall, cav_lo, hz)));
            body.push(aabb(Vec3::new(-hx + wall, cav_hi, -hz + back), Vec3::new(hx - wall, hy, hz)));
            let part = (Vec3::new(-hx + wall, cav_lo, -hz + back), Vec3::new(hx - wall, cav_hi, hz));
            PartLayout {
                part,
                kind: JointKind::Prismatic,
                axis: Vec3::z(),
                pivot: Vec3::zeros(),
                scale: rng.random_range(0.12..0.38),
            }
        }
    };
    let body_tex = palette.box_faces();
    let part_tex = palette.box_faces();
    let body: Vec<TexturedBox> = body.into_iter().map(|(min, max)| TexturedBox { min, max, faces: body_tex }).collect();
    let part = TexturedBox { min: layout.part.0, max: layout.part.1, faces: part_tex };
    let joint = JointSpec::new(layout.kind, layout.axis, layout.pivot, layout.scale).expect("valid joint");
    let mut scene = ArticulatedScene { body, parts: vec![MovablePart { part, joint }], light: Light::default() };
    orient_joints_outward(&mut scene);
    normalize_scene(&mut scene, layout.kind == JointKind::Prismatic);
    scene
}

/// Two-part cabinet: `kinds.len()` parts stacked vertically, drawers are
/// prismatic and doors revolute, all on the front face.
pub fn sample_multi_part_scene(seed: u64, kinds: &[JointKind]) -> ArticulatedScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_CAB1);
    let mut palette = Palette { rng: ChaCha8Rng::seed_from_u64(seed ^ 0x7E47) };
    let k = kinds.len().max(1);
    let w = rng.random_range(0.6..0.9);
    let h = rng.random_range(0.8..1.1);
    let d = rng.random_range(0.5..0.8);
    let (hx, hy, hz) = (w / 2.0, h / 2.0, d / 2.0);
    let wall = 0.05;
    let back = 0.05;
    let slot = (h - wall * (k as f64 + 1.0)) / k as f64;
    let body_tex = palette.box_faces();
    let mut body = vec![
        TexturedBox { min: Vec3::new(-hx, -hy, -hz), max: Vec3::new(hx, hy, -hz + back), faces: body_tex },
        TexturedBox { min: Vec3::new(-hx, -hy, -hz + back), max: Vec3::new(-hx + wall, hy, hz), faces: body_tex },
        TexturedBox { min: Vec3::new(hx - wall, -hy, -hz + back), max: Vec3::new(hx, hy, hz), faces: body_tex },
    ];
    let mut parts = Vec::new();
    for (i, kind) in kinds.iter().enumerate() {
        let y0 = -hy + wall + i as f64 * (slot + wall);
        body.push(TexturedBox {
            min: Vec3::new(-hx + wall, y0 - wall, -hz + back),
            max: Vec3::new(hx - wall, y0, hz),
            faces: body_tex,
        });
        let tex = palette.box_faces();
        let (lo, hi) = (Vec3::new(-hx + wall, y0, -hz + back), Vec3::new(hx - wall, y0 + slot, hz));
        let (part, joint) = match kind {
            JointKind::Prismatic => (
                TexturedBox { min: lo, max: hi, faces: tex },
                JointSpec::prismatic(Vec3::z(), rng.random_range(0.15..0.35)).expect("joint"),
            ),
            JointKind::Revolute => {
                // Hollow slot with a door panel in front of it.
                let t = 0.04;
                body.push(TexturedBox { min: lo, max: Vec3::new(hi.x, hi.y, lo.z + 0.02), faces: body_tex });
                (
                    TexturedBox { min: Vec3::new(lo.x, lo.y, hz), max: Vec3::new(hi.x, hi.y, hz + t), faces: tex },
                    JointSpec::revolute(Vec3::y(), Vec3::new(lo.x, 0.0, hz), rng.random_range(PI / 4.0..PI / 2.0))
                        .expect("joint"),
                )
            }
        };
        parts.push(MovablePart { part, joint });
    }
    body.push(TexturedBox {
        min: Vec3::new(-hx + wall, hy - wall, -hz + back),
        max: Vec3::new(hx - wall, hy, hz),
        faces: body_tex,
    });
    let mut scene = ArticulatedScene { body, parts, light: Light::default() };
    orient_joints_outward(&mut scene);
    normalize_scene(&mut scene, false);
    scene
}

/// Flips each revolute axis so that opening moves the part away from the body.
fn orient_joints_outward(scene: &mut ArticulatedScene) {
    for i in 0..scene.parts.len() {
        if scene.parts[i].joint.kind != JointKind::Revolute {
            continue;
        }
        if scene.part_collides(i, &[0.25, 0.5, 0.75, 1.0]) {
            let j = scene.parts[i].joint;
            scene.parts[i].joint = JointSpec { axis: -j.axis, ..j };
        }
    }
}

const BOUND_SAMPLES: usize = 65;

/// Uniformly rescales and recenters the scene so that the union bounding box
/// over all parts and all states fits the unit cube around the origin.
fn normalize_scene(scene: &mut ArticulatedScene, keep_prismatic_travel: bool) {
    // Prismatic travel is specified in normalized units; the travel itself
    // changes the bounds, so iterate to a fixed point.
    let targets: Vec<f64> = scene.parts.iter().map(|p| p.joint.scale).collect();
    let mut factor = 1.0;
    for _ in 0..40 {
        if keep_prismatic_travel {
            for (p, &t) in scene.parts.iter_mut().zip(&targets) {
                if p.joint.kind == JointKind::Prismatic {
                    p.joint.scale = t / factor;
                }
            }
        }
        let (lo, hi) = scene.state_bounds();
        let new_factor = 1.0 / (hi - lo).max();
        let converged = (new_factor - factor).abs() < 1e-13 * factor;
        factor = new_factor;
        if converged || !keep_prismatic_travel {
            break;
        }
    }
    let (lo, hi) = scene.state_bounds();
    let center = (lo + hi) * 0.5;
    // Slight shrink keeps sampled-bound errors of swept arcs inside the cube.
    let k = (1.0 - 1e-3) / (hi - lo).max();
    for b in &mut scene.body {
        *b = b.scaled(k, &center);
    }
    for p in &mut scene.parts {
        p.part = p.part.scaled(k, &center);
        let j = p.joint;
        let scale = match j.kind {
            JointKind::Prismatic => j.scale * k,
            JointKind::Revolute => j.scale,
        };
        p.joint = JointSpec::new(j.kind, j.axis, (j.pivot - center) * k, scale).expect("joint");
    }
}

impl ArticulatedScene {
    /// Rigid placement of every part when part `joint_id` is at `theta` and
    /// the others rest.
    pub fn part_transforms(&self, joint_id: usize, theta: f64) -> Vec<RigidTransform> {
        let mut states = vec![0.0; self.parts.len()];
        if joint_id < states.len() {
            states[joint_id] = theta;
        }
        self.part_transforms_at(&states)
    }

    pub fn part_transforms_at(&self, states: &[f64]) -> Vec<RigidTransform> {
        self.parts
            .iter()
            .enumerate()
            .map(|(i, p)| p.joint.transform(0.0, states.get(i).copied().unwrap_or(0.0)))
            .collect()
    }

    /// Union bounding box over all parts and sampled states.
    pub fn state_bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let mut add = |p: Vec3| {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        };
        for b in &self.body {
            b.corners().into_iter().for_each(&mut add);
        }
        for p in &self.parts {
            for s in 0..BOUND_SAMPLES {
                let t = p.joint.transform(0.0, s as f64 / (BOUND_SAMPLES - 1) as f64);
                p.part.corners().iter().for_each(|c| add(t.apply(c)));
            }
        }
        (lo, hi)
    }

    /// True if part `i` penetrates the body or another resting part at any of `thetas`.
    pub fn part_collides(&self, i: usize, thetas: &[f64]) -> bool {
        let id = RigidTransform::identity();
        let others: Vec<OrientedBox> = self
            .body
            .iter()
            .map(|b| OrientedBox::from_box(b, &id))
            .chain(self.parts.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, p)| OrientedBox::from_box(&p.part, &id)))
            .collect();
        let tol = 1e-6;
        thetas.iter().any(|&theta| {
            let ob = OrientedBox::from_box(&self.parts[i].part, &self.parts[i].joint.transform(0.0, theta));
            others.iter().any(|o| ob.overlaps(o, tol))
        })
    }

    /// Oriented boxes with their labels (0 = body, k + 1 = part k).
    pub fn posed_boxes(&self, states: &[f64]) -> Vec<(OrientedBox, i32)> {
        let id = RigidTransform::identity();
        let tf = self.part_transforms_at(states);
        self.body
            .iter()
            .map(|b| (OrientedBox::from_box(b, &id), 0))
            .chain(self.parts.iter().zip(&tf).enumerate().map(|(k, (p, t))| (OrientedBox::from_box(&p.part, t), k as i32 + 1)))
            .collect()
    }

    /// Triangles of every box, parts posed at `states`.
    pub fn triangles(&self, states: &[f64]) -> Vec<RasterTriangle> {
        let tf = self.part_transforms_at(states);
        let mut out = Vec::with_capacity(12 * (self.body.len() + self.parts.len()));
        let id = RigidTransform::identity();
        for b in &self.body {
            push_box_triangles(&mut out, b, &id, 0);
        }
        for (k, (p, t)) in self.parts.iter().zip(&tf).enumerate() {
            push_box_triangles(&mut out, &p.part, t, k as i32 + 1);
        }
        out
    }
}

fn push_box_triangles(out: &mut Vec<RasterTriangle>, b: &TexturedBox, t: &RigidTransform, label: i32) {
    for (f, (quad, normal)) in b.face_quads().iter().enumerate() {
        let q: Vec<Vec3> = quad.iter().map(|p| t.apply(p)).collect();
        let n = t.apply_vector(normal);
        let u_dir = (q[1] - q[0]).normalize();
        let v_dir = n.cross(&u_dir);
        let shade = Shade::Face { texture: b.faces[f], origin: q[0], u_dir, v_dir, normal: n };
        out.push(RasterTriangle { verts: [q[0], q[1], q[2]], shade, label, cull_back: true });
        out.push(RasterTriangle { verts: [q[0], q[2], q[3]], shade, label, cull_back: true });
    }
}

pub fn default_intrinsics(resolution: usize) -> CameraIntrinsics {
    CameraIntrinsics::from_fov(DEFAULT_FOV_Y, resolution, resolution).expect("valid intrinsics")
}

/// Uniform on the viewing sphere restricted to the elevation band.
pub fn random_camera(rng: &mut impl Rng, intr: CameraIntrinsics) -> Camera {
    let az = rng.random_range(0.0..2.0 * PI);
    let (s0, s1) = (ELEVATION_RANGE.0.sin(), ELEVATION_RANGE.1.sin());
    let el = rng.random_range(s0..s1).asin();
    orbit_camera(intr, az, el, CAMERA_RADIUS).expect("orbit camera")
}

/// `n` cameras with azimuths stratified around the object.
pub fn spread_cameras(rng: &mut impl Rng, intr: CameraIntrinsics, n: usize) -> Vec<Camera> {
    let phase = rng.random_range(0.0..2.0 * PI);
    let (s0, s1) = (ELEVATION_RANGE.0.sin(), ELEVATION_RANGE.1.sin());
    (0..n)
        .map(|k| {
            let jitter = rng.random_range(-0.25..0.25) * 2.0 * PI / n as f64;
            let az = phase + 2.0 * PI * k as f64 / n as f64 + jitter;
            let el = rng.random_range((0.3 * s0)..(0.8 * s1)).asin();
            orbit_camera(intr, az, el, CAMERA_RADIUS).expect("orbit camera")
        })
        .collect()
}

/// Deterministic near-uniform directions on the viewing band (Fibonacci spiral).
pub fn fibonacci_cameras(intr: CameraIntrinsics, n: usize, elevation: (f64, f64)) -> Vec<Camera> {
    let golden = PI * (3.0 - 5f64.sqrt());
    let (s0, s1) = (elevation.0.sin(), elevation.1.sin());
    (0..n)
        .map(|i| {
            let s = s0 + (s1 - s0) * (i as f64 + 0.5) / n as f64;
            orbit_camera(intr, golden * i as f64, s.asin(), CAMERA_RADIUS).expect("orbit camera")
        })
        .collect()
}

/// Ground-truth render of the scene with part `joint_id` at `theta`.
pub fn rasterize(scene: &ArticulatedScene, camera: &Camera, theta: f64, joint_id: usize) -> SampleFrame {
    let mut states = vec![0.0; scene.parts.len()];
    if joint_id < states.len() {
        states[joint_id] = theta;
    }
    let mut frame = rasterize_states(scene, camera, &states, joint_id);
    frame.theta = theta;
    frame
}

/// Ground-truth render with every part at its own state; the part mask marks `joint_id`.
pub fn rasterize_states(scene: &ArticulatedScene, camera: &Camera, states: &[f64], joint_id: usize) -> SampleFrame {
    let buf = render(&scene.triangles(states), camera, &scene.light);
    let target = joint_id as i32 + 1;
    SampleFrame {
        fg_mask: buf.labels.iter().map(|&l| l >= 0).collect(),
        part_mask: buf.labels.iter().map(|&l| l == target).collect(),
        rgb: buf.rgb,
        depth: buf.depth,
        camera: *camera,
        theta: states.get(joint_id).copied().unwrap_or(0.0),
        joint_id,
    }
}

/// Per-pixel label buffer (-1 background, 0 body, k + 1 part k).
pub fn rasterize_labels(scene: &ArticulatedScene, camera: &Camera, states: &[f64]) -> Vec<i32> {
    render(&scene.triangles(states), camera, &scene.light).labels
}
