#![allow(dead_code)]

use larm::camera::{JointKind, JointSpec, Vec3};
use larm::joint::{PointPair, PointPairSet};
use larm::model::ModelConfig;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn tiny_cfg(out_channels: usize) -> ModelConfig {
    ModelConfig { patch_size: 4, dim: 32, layers: 2, heads: 2, height: 16, width: 16, views_per_state: 2, out_channels, mlp_ratio: 4 }
}

pub fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        if v.norm() > 1e-3 {
            return v.normalize();
        }
    }
}

pub fn random_joint(rng: &mut impl Rng, kind: JointKind) -> JointSpec {
    let axis = unit_vector(rng);
    match kind {
        JointKind::Revolute => {
            let pivot = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            JointSpec::revolute(axis, pivot, rng.random_range(0.5..1.6)).unwrap()
        }
        JointKind::Prismatic => JointSpec::prismatic(axis, rng.random_range(0.1..0.4)).unwrap(),
    }
}

/// Rodrigues rotation of `x` by `angle` about the line through `p` along unit `a`.
pub fn rodrigues(x: &Vec3, a: &Vec3, p: &Vec3, angle: f64) -> Vec3 {
    let r = x - p;
    let (s, c) = angle.sin_cos();
    p + r * c + a.cross(&r) * s + a * (a.dot(&r) * (1.0 - c))
}

/// Position of a material point (given at rest) at state `theta`.
pub fn oracle_pose(spec: &JointSpec, x: &Vec3, theta: f64) -> Vec3 {
    match spec.kind {
        JointKind::Revolute => rodrigues(x, &spec.axis, &spec.pivot, spec.scale * theta),
        JointKind::Prismatic => x + spec.axis * (spec.scale * theta),
    }
}

/// Distance between two lines, each given by a point and a unit direction.
pub fn line_distance(p1: &Vec3, a1: &Vec3, p2: &Vec3, a2: &Vec3) -> f64 {
    let n = a1.cross(a2);
    if n.norm() < 1e-9 {
        return (p2 - p1).cross(a1).norm();
    }
    (p2 - p1).dot(&n).abs() / n.norm()
}

pub fn axis_angle(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b).abs().min(1.0).acos()
}

/// `per_pair` rest points on a part-sized box, moved to every pair of the
/// `n_states` uniformly spaced states.
pub fn forward_pairs(rng: &mut impl Rng, spec: &JointSpec, n_states: usize, per_pair: usize) -> PointPairSet {
    let thetas: Vec<f64> = (0..n_states).map(|k| k as f64 / (n_states - 1) as f64).collect();
    let center = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    let mut set = PointPairSet::default();
    for i in 0..n_states {
        for j in i + 1..n_states {
            for _ in 0..per_pair {
                let x = center + Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
                set.pairs.push(PointPair {
                    pu: oracle_pose(spec, &x, thetas[i]),
                    pv: oracle_pose(spec, &x, thetas[j]),
                    theta_u: thetas[i],
                    theta_v: thetas[j],
                });
            }
        }
    }
    set
}

/// Perturbs a point along the ray from `eye` by a Gaussian depth error.
pub fn depth_noise(rng: &mut impl Rng, eye: &Vec3, x: &Vec3, sigma: f64) -> Vec3 {
    let n: f64 = StandardNormal.sample(rng);
    x + (x - eye).normalize() * (sigma * n)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
