//! Pinhole cameras, Plücker ray maps and joint-induced rigid motions.
//!
//! Conventions: the camera looks down its local +z axis, +x points right and
//! +y points down in the image. Pixel `(u, v)` covers `[u, u+1) x [v, v+1)`
//! and rays go through the pixel center `(u + 0.5, v + 0.5)`. Depth values
//! are camera-frame z (distance along the optical axis), not ray length.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{LarmError, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Near plane of the normalized world, also the lower end of the depth head.
pub const DEPTH_NEAR: f64 = 0.1;
/// Far plane of the normalized world, also the upper end of the depth head.
pub const DEPTH_FAR: f64 = 4.0;
/// Radius of the viewing sphere cameras are placed on.
pub const CAMERA_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self { fx, fy, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    /// Square-pixel camera with the principal point at the image center.
    pub fn from_fov(fov_y_rad: f64, width: usize, height: usize) -> Result<Self> {
        let f = 0.5 * height as f64 / (0.5 * fov_y_rad).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(LarmError::InvalidCamera(format!("bad intrinsics {self:?}")))
        }
    }

    /// Camera-frame direction (z = 1) through continuous pixel coordinates.
    #[inline]
    pub fn backproject(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Camera-to-world rigid pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl CameraPose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let pose = Self { rotation, translation };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
        let det = r.determinant();
        if ortho <= 1e-9 && (det - 1.0).abs() <= 1e-9 && self.translation.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(LarmError::InvalidCamera(format!(
                "rotation not orthonormal (err {ortho:e}, det {det})"
            )))
        }
    }

    /// Camera at `eye` looking at `target`. `up` is the approximate world up;
    /// the image y axis points away from it.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| LarmError::InvalidCamera("eye equals target".into()))?;
        let x = z
            .cross(&up)
            .try_normalize(1e-9)
            .or_else(|| z.cross(&Vec3::x()).try_normalize(1e-9))
            .ok_or_else(|| LarmError::InvalidCamera("degenerate up vector".into()))?;
        let y = z.cross(&x);
        let rotation = Mat3::from_columns(&[x, y, z]);
        Self::new(rotation, eye)
    }

    /// Camera center in world coordinates.
    #[inline]
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    #[inline]
    pub fn world_to_camera(&self, x: &Vec3) -> Vec3 {
        self.rotation.tr_mul(&(x - self.translation))
    }

    #[inline]
    pub fn camera_to_world(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// Rotates the camera about its own optical axis by `k` quarter turns.
    pub fn rolled_quarter_turns(&self, k: i32) -> Self {
        let mut r = Mat3::identity();
        let quarter = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        for _ in 0..k.rem_euclid(4) {
            r *= quarter;
        }
        Self { rotation: self.rotation * r, translation: self.translation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, pose: CameraPose) -> Self {
        Self { intrinsics, pose }
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// World-frame unit ray direction through pixel `(u, v)` center.
    pub fn ray_direction(&self, u: usize, v: usize) -> Vec3 {
        let d = self.intrinsics.backproject(u as f64 + 0.5, v as f64 + 0.5);
        (self.pose.rotation * d).normalize()
    }
}

/// Per-pixel Plücker coordinates `(d, o x d)`, stored row-major as H x W x 6.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl PluckerMap {
    #[inline]
    pub fn ray(&self, u: usize, v: usize) -> &[f64] {
        let i = (v * self.width + u) * 6;
        &self.data[i..i + 6]
    }
}

pub fn compute_plucker_map(intr: &CameraIntrinsics, pose: &CameraPose) -> PluckerMap {
    let (w, h) = (intr.width, intr.height);
    let o = pose.center();
    let mut data = Vec::with_capacity(w * h * 6);
    for v in 0..h {
        for u in 0..w {
            let d = (pose.rotation * intr.backproject(u as f64 + 0.5, v as f64 + 0.5)).normalize();
            let m = o.cross(&d);
            data.extend_from_slice(&[d.x, d.y, d.z, m.x, m.y, m.z]);
        }
    }
    PluckerMap { width: w, height: h, data }
}

/// Projects a world point. Returns continuous pixel coordinates and the
/// camera-frame depth; points outside the image are returned as-is (callers
/// decide about bounds), points behind the near plane are an error.
pub fn project_point(x: &Vec3, intr: &CameraIntrinsics, pose: &CameraPose) -> Result<(f64, f64, f64)> {
    let pc = pose.world_to_camera(x);
    if pc.z <= DEPTH_NEAR * 1e-3 {
        return Err(LarmError::BehindCamera);
    }
    Ok((intr.fx * pc.x / pc.z + intr.cx, intr.fy * pc.y / pc.z + intr.cy, pc.z))
}

pub fn in_image(u: f64, v: f64, intr: &CameraIntrinsics) -> bool {
    u >= 0.0 && v >= 0.0 && u < intr.width as f64 && v < intr.height as f64
}

/// Lifts continuous pixel coordinates at camera-frame depth `z` to world.
#[inline]
pub fn unproject_pixel(u: f64, v: f64, z: f64, intr: &CameraIntrinsics, pose: &CameraPose) -> Vec3 {
    pose.camera_to_world(&(intr.backproject(u, v) * z))
}

/// Unprojects every foreground pixel (mask set) of a depth map. Returns the
/// world points along with their pixel indices.
pub fn unproject_depth(
    depth: &[f32],
    fg_mask: &[bool],
    intr: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Vec<(usize, usize, Vec3)>> {
    let (w, h) = (intr.width, intr.height);
    if depth.len() != w * h || fg_mask.len() != w * h {
        return Err(LarmError::ShapeMismatch(format!(
            "depth/mask length {}/{} vs {}x{}",
            depth.len(),
            fg_mask.len(),
            w,
            h
        )));
    }
    let mut out = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            if !fg_mask[i] {
                continue;
            }
            let z = depth[i] as f64;
            if !(z > DEPTH_NEAR) {
                return Err(LarmError::NonPositiveDepth { u, v, depth: z });
            }
            out.push((u, v, unproject_pixel(u as f64 + 0.5, v as f64 + 0.5, z, intr, pose)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

impl std::fmt::Display for JointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            JointKind::Revolute => f.write_str("revolute"),
            JointKind::Prismatic => f.write_str("prismatic"),
        }
    }
}

impl std::str::FromStr for JointKind {
    type Err = LarmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "revolute" => Ok(JointKind::Revolute),
            "prismatic" => Ok(JointKind::Prismatic),
            other => Err(LarmError::Usage(format!("unknown joint kind '{other}'"))),
        }
    }
}

/// One-dof joint. `scale` maps a unit change of normalized state to radians
/// (revolute) or world units (prismatic).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub kind: JointKind,
    pub axis: Vec3,
    pub pivot: Vec3,
    pub scale: f64,
}

impl JointSpec {
    pub fn revolute(axis: Vec3, pivot: Vec3, scale: f64) -> Result<Self> {
        Self::new(JointKind::Revolute, axis, pivot, scale)
    }

    pub fn prismatic(axis: Vec3, scale: f64) -> Result<Self> {
        Self::new(JointKind::Prismatic, axis, Vec3::zeros(), scale)
    }

    /// Normalizes the axis and canonicalizes the pivot to the point of the
    /// axis line closest to the origin. Prismatic pivots are zeroed.
    pub fn new(kind: JointKind, axis: Vec3, pivot: Vec3, scale: f64) -> Result<Self> {
        let axis = axis
            .try_normalize(1e-12)
            .ok_or_else(|| LarmError::InvalidJoint("zero axis".into()))?;
        if !scale.is_finite() || !pivot.iter().all(|x| x.is_finite()) {
            return Err(LarmError::InvalidJoint("non-finite parameters".into()));
        }
        let pivot = match kind {
            JointKind::Revolute => pivot - axis * axis.dot(&pivot),
            JointKind::Prismatic => Vec3::zeros(),
        };
        Ok(Self { kind, axis, pivot, scale })
    }

    /// Flips the `(a, s) -> (-a, -s)` gauge so that `s >= 0`.
    pub fn canonical(&self) -> Self {
        if self.scale < 0.0 {
            Self { axis: -self.axis, scale: -self.scale, ..*self }
        } else {
            *self
        }
    }

    /// Rigid motion taking the part from state `theta_u` to state `theta_v`.
    pub fn transform(&self, theta_u: f64, theta_v: f64) -> RigidTransform {
        joint_transform(self, theta_u, theta_v)
    }
}

/// `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    #[inline]
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, x: &Vec3) -> Vec3 {
        self.rotation * x
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }
}

pub fn joint_transform(spec: &JointSpec, theta_u: f64, theta_v: f64) -> RigidTransform {
    let amount = spec.scale * (theta_v - theta_u);
    match spec.kind {
        JointKind::Prismatic => RigidTransform { rotation: Mat3::identity(), translation: spec.axis * amount },
        JointKind::Revolute => {
            let rotation = Rotation3::from_axis_angle(&Unit::new_unchecked(spec.axis), amount).into_inner();
            RigidTransform { rotation, translation: spec.pivot - rotation * spec.pivot }
        }
    }
}

/// Camera on the viewing sphere looking at the origin.
pub fn orbit_camera(intr: CameraIntrinsics, azimuth: f64, elevation: f64, radius: f64) -> Result<Camera> {
    let eye = Vec3::new(
        radius * elevation.cos() * azimuth.sin(),
        radius * elevation.sin(),
        radius * elevation.cos() * azimuth.cos(),
    );
    let pose = CameraPose::look_at(eye, Vec3::zeros(), Vec3::y())?;
    Ok(Camera::new(intr, pose))
}
