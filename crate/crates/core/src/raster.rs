//! Z-buffer triangle rasterizer used for ground-truth frames and for
//! rendering reconstructed meshes during evaluation.

use crate::camera::{Camera, Vec3, DEPTH_NEAR};

/// Background color of every rendered frame.
pub const BACKGROUND: [f32; 3] = [1.0, 1.0, 1.0];

/// Solid or two-color checker surface pattern.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Texture {
    pub base: [f32; 3],
    pub alt: [f32; 3],
    /// Checker cell size in world units; `None` for a solid face.
    pub checker: Option<f64>,
}

impl Texture {
    pub fn solid(rgb: [f32; 3]) -> Self {
        Self { base: rgb, alt: rgb, checker: None }
    }

    pub fn sample(&self, s: f64, t: f64) -> [f32; 3] {
        match self.checker {
            Some(cell) if cell > 0.0 => {
                let parity = ((s / cell).floor() as i64 + (t / cell).floor() as i64).rem_euclid(2);
                if parity == 0 {
                    self.base
                } else {
                    self.alt
                }
            }
            _ => self.base,
        }
    }
}

/// Single directional light plus ambient term.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Light {
    pub direction: Vec3,
    pub ambient: f32,
    pub diffuse: f32,
}

impl Default for Light {
    fn default() -> Self {
        Self { direction: Vec3::new(0.35, 0.8, 0.5).normalize(), ambient: 0.4, diffuse: 0.6 }
    }
}

impl Light {
    pub fn shade(&self, color: [f32; 3], normal: &Vec3) -> [f32; 3] {
        let k = self.ambient + self.diffuse * normal.dot(&self.direction).max(0.0) as f32;
        [(color[0] * k).min(1.0), (color[1] * k).min(1.0), (color[2] * k).min(1.0)]
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Shade {
    /// Planar face with a texture laid out along `(u_dir, v_dir)` from `origin`.
    Face { texture: Texture, origin: Vec3, u_dir: Vec3, v_dir: Vec3, normal: Vec3 },
    /// Pre-lit per-vertex colors, interpolated perspective-correctly.
    Vertex([[f32; 3]; 3]),
}

#[derive(Debug, Clone, Copy)]
pub struct RasterTriangle {
    pub verts: [Vec3; 3],
    pub shade: Shade,
    /// Opaque label written to the label buffer (e.g. body / part index).
    pub label: i32,
    /// Skip triangles whose front side faces away from the camera.
    pub cull_back: bool,
}

#[derive(Debug, Clone)]
pub struct RenderBuffers {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f32>,
    /// Camera-frame depth, 0 for background.
    pub depth: Vec<f32>,
    /// Label of the closest triangle, -1 for background.
    pub labels: Vec<i32>,
}

impl RenderBuffers {
    fn new(width: usize, height: usize) -> Self {
        let mut rgb = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            rgb.extend_from_slice(&BACKGROUND);
        }
        Self { width, height, rgb, depth: vec![0.0; width * height], labels: vec![-1; width * height] }
    }
}

pub fn render(tris: &[RasterTriangle], camera: &Camera, light: &Light) -> RenderBuffers {
    let (w, h) = (camera.width(), camera.height());
    let mut buf = RenderBuffers::new(w, h);
    let mut zbuf = vec![f64::INFINITY; w * h];
    for tri in tris {
        if tri.cull_back {
            let n = (tri.verts[1] - tri.verts[0]).cross(&(tri.verts[2] - tri.verts[0]));
            if n.dot(&(camera.pose.center() - tri.verts[0])) <= 0.0 {
                continue;
            }
        }
        let cam: [Vec3; 3] = [
            camera.pose.world_to_camera(&tri.verts[0]),
            camera.pose.world_to_camera(&tri.verts[1]),
            camera.pose.world_to_camera(&tri.verts[2]),
        ];
        // Near-plane clipping: polygon of (camera point, barycentric weights).
        let poly = clip_near(&cam);
        if poly.len() < 3 {
            continue;
        }
        for k in 1..poly.len() - 1 {
            raster_clipped(tri, [poly[0], poly[k], poly[k + 1]], camera, light, &mut buf, &mut zbuf);
        }
    }
    buf
}

type ClipVertex = (Vec3, [f64; 3]);

fn clip_near(cam: &[Vec3; 3]) -> Vec<ClipVertex> {
    let bary = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    if cam.iter().all(|p| p.z >= DEPTH_NEAR) {
        return (0..3).map(|i| (cam[i], bary[i])).collect();
    }
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let j = (i + 1) % 3;
        let (a, b) = (cam[i], cam[j]);
        let a_in = a.z >= DEPTH_NEAR;
        let b_in = b.z >= DEPTH_NEAR;
        if a_in {
            out.push((a, bary[i]));
        }
        if a_in != b_in {
            let t = (DEPTH_NEAR - a.z) / (b.z - a.z);
            let p = a + (b - a) * t;
            let mut wgt = [0.0; 3];
            wgt[i] = 1.0 - t;
            wgt[j] = t;
            out.push((p, wgt));
        }
    }
    out
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Top-left style tie breaking so that shared edges are drawn exactly once.
#[inline]
fn owns_edge(ax: f64, ay: f64, bx: f64, by: f64, ccw: bool) -> bool {
    let (dx, dy) = if ccw { (bx - ax, by - ay) } else { (ax - bx, ay - by) };
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

fn raster_clipped(
    tri: &RasterTriangle,
    poly: [ClipVertex; 3],
    camera: &Camera,
    light: &Light,
    buf: &mut RenderBuffers,
    zbuf: &mut [f64],
) {
    let intr = &camera.intrinsics;
    let (w, h) = (buf.width, buf.height);
    let mut sx = [0.0; 3];
    let mut sy = [0.0; 3];
    let mut inv_z = [0.0; 3];
    for i in 0..3 {
        let p = poly[i].0;
        sx[i] = intr.fx * p.x / p.z + intr.cx;
        sy[i] = intr.fy * p.y / p.z + intr.cy;
        inv_z[i] = 1.0 / p.z;
    }
    let area = edge(sx[0], sy[0], sx[1], sy[1], sx[2], sy[2]);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    let ccw = area > 0.0;
    let min_x = sx.iter().cloned().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let min_y = sy.iter().cloned().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let max_x = sx.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil().min(w as f64);
    let max_y = sy.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil().min(h as f64);
    if max_x <= 0.0 || max_y <= 0.0 {
        return;
    }
    let (max_x, max_y) = (max_x as usize, max_y as usize);
    let owns = [
        owns_edge(sx[1], sy[1], sx[2], sy[2], ccw),
        owns_edge(sx[2], sy[2], sx[0], sy[0], ccw),
        owns_edge(sx[0], sy[0], sx[1], sy[1], ccw),
    ];
    for py in min_y..max_y {
        let cy = py as f64 + 0.5;
        for px in min_x..max_x {
            let cx = px as f64 + 0.5;
            let e = [
                edge(sx[1], sy[1], sx[2], sy[2], cx, cy) / area,
                edge(sx[2], sy[2], sx[0], sy[0], cx, cy) / area,
                edge(sx[0], sy[0], sx[1], sy[1], cx, cy) / area,
            ];
            let inside = (0..3).all(|k| e[k] > 0.0 || (e[k] == 0.0 && owns[k]));
            if !inside {
                continue;
            }
            let denom = e[0] * inv_z[0] + e[1] * inv_z[1] + e[2] * inv_z[2];
            let z = 1.0 / denom;
            let idx = py * w + px;
            if !(z < zbuf[idx]) {
                continue;
            }
            // Perspective-correct weights on the clipped polygon, then mapped
            // back to the original triangle's vertices.
            let pw = [e[0] * inv_z[0] * z, e[1] * inv_z[1] * z, e[2] * inv_z[2] * z];
            let mut bw = [0.0; 3];
            for (k, wk) in pw.iter().enumerate() {
                for j in 0..3 {
                    bw[j] += wk * poly[k].1[j];
                }
            }
            let color = match tri.shade {
                Shade::Face { texture, origin, u_dir, v_dir, normal } => {
                    let p = tri.verts[0] * bw[0] + tri.verts[1] * bw[1] + tri.verts[2] * bw[2];
                    let d = p - origin;
                    light.shade(texture.sample(d.dot(&u_dir), d.dot(&v_dir)), &normal)
                }
                Shade::Vertex(c) => {
                    let mut out = [0.0f32; 3];
                    for ch in 0..3 {
                        let v = bw[0] * c[0][ch] as f64 + bw[1] * c[1][ch] as f64 + bw[2] * c[2][ch] as f64;
                        out[ch] = v.clamp(0.0, 1.0) as f32;
                    }
                    out
                }
            };
            zbuf[idx] = z;
            buf.depth[idx] = z as f32;
            buf.labels[idx] = tri.label;
            buf.rgb[idx * 3..idx * 3 + 3].copy_from_slice(&color);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, CameraPose};

    fn quad(z: f64, half: f64) -> Vec<RasterTriangle> {
        let c = [
            Vec3::new(-half, -half, z),
            Vec3::new(half, -half, z),
            Vec3::new(half, half, z),
            Vec3::new(-half, half, z),
        ];
        let shade = Shade::Vertex([[0.2, 0.4, 0.6]; 3]);
        vec![
            RasterTriangle { verts: [c[0], c[1], c[2]], shade, label: 0, cull_back: false },
            RasterTriangle { verts: [c[0], c[2], c[3]], shade, label: 0, cull_back: false },
        ]
    }

    #[test]
    fn shared_diagonal_has_no_gaps_or_overdraw_holes() {
        let cam = Camera::new(CameraIntrinsics::from_fov(1.0, 32, 32).unwrap(), CameraPose::identity());
        let buf = render(&quad(2.0, 5.0), &cam, &Light::default());
        assert!(buf.labels.iter().all(|&l| l == 0));
        assert!(buf.depth.iter().all(|&d| (d - 2.0).abs() < 1e-6));
    }

    #[test]
    fn near_clipped_triangle_still_covers_far_part() {
        let cam = Camera::new(CameraIntrinsics::from_fov(1.0, 16, 16).unwrap(), CameraPose::identity());
        let t = RasterTriangle {
            verts: [Vec3::new(-3.0, -3.0, 0.01), Vec3::new(3.0, -3.0, 6.0), Vec3::new(0.0, 3.0, 6.0)],
            shade: Shade::Vertex([[1.0, 0.0, 0.0]; 3]),
            label: 7,
            cull_back: false,
        };
        let buf = render(&[t], &cam, &Light::default());
        assert!(buf.labels.iter().any(|&l| l == 7));
        assert!(buf.depth.iter().all(|&d| d == 0.0 || d as f64 >= DEPTH_NEAR));
    }

    #[test]
    fn checker_alternates() {
        let t = Texture { base: [0.0; 3], alt: [1.0; 3], checker: Some(0.5) };
        assert_eq!(t.sample(0.1, 0.1), [0.0; 3]);
        assert_eq!(t.sample(0.6, 0.1), [1.0; 3]);
        assert_eq!(t.sample(0.6, 0.6), [0.0; 3]);
    }
}
