//! Deformable capsule meshes for the synthetic corpus.
//!
//! The hand template is a capsule open at the wrist: 48 rings of 16 vertices
//! (one tube section plus a hemispherical cap), an 8-vertex ring, and a
//! two-vertex ridge closing the tip. That yields 778 vertices, 1538 faces,
//! and a single 16-vertex boundary loop.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::{Point, TriangleMesh};

pub const TEMPLATE_VERTICES: usize = 778;
pub const TEMPLATE_FACES: usize = 1538;

const RING: usize = 16;
const TUBE_RINGS: usize = 40;
const CAP_RINGS: usize = 8;
const RADIUS: f64 = 0.5;
const LENGTH: f64 = 2.5;

/// Template vertex with its undeformed frame.
#[derive(Debug, Clone, Copy)]
struct TemplateVertex {
    position: Point,
    normal: Point,
    /// Normalized position along the profile, 0 at the wrist, 1 at the tip.
    s: f64,
    phi: f64,
}

fn template_vertices() -> Vec<TemplateVertex> {
    let total = LENGTH + RADIUS * PI / 2.0;
    let half = PI / RING as f64;
    let mut out = Vec::with_capacity(TEMPLATE_VERTICES);
    let cap_step = (PI / 2.0) / 10.5;
    let ring_count = TUBE_RINGS + CAP_RINGS;
    for r in 0..ring_count {
        // consecutive rings are rotated by half a step so triangles stay near-equilateral
        let offset = r as f64 * half;
        let (z, radius, theta) = if r < TUBE_RINGS {
            (LENGTH * r as f64 / (TUBE_RINGS - 1) as f64, RADIUS, 0.0)
        } else {
            let theta = (r - TUBE_RINGS + 1) as f64 * cap_step;
            (LENGTH + RADIUS * theta.sin(), RADIUS * theta.cos(), theta)
        };
        let s = if r < TUBE_RINGS {
            z / total
        } else {
            (LENGTH + RADIUS * theta) / total
        };
        for k in 0..RING {
            let phi = offset + 2.0 * PI * k as f64 / RING as f64;
            let (c, sn) = (phi.cos(), phi.sin());
            out.push(TemplateVertex {
                position: Point::new(radius * c, radius * sn, z),
                normal: Point::new(theta.cos() * c, theta.cos() * sn, theta.sin()),
                s,
                phi,
            });
        }
    }
    // 8-ring, each vertex between two vertices of the last 16-ring
    let last_offset = (ring_count - 1) as f64 * half;
    let theta8 = 9.0 * cap_step;
    for j in 0..8 {
        let phi = last_offset + 2.0 * PI * (2 * j) as f64 / RING as f64 + half;
        let (c, sn) = (phi.cos(), phi.sin());
        out.push(TemplateVertex {
            position: Point::new(
                RADIUS * theta8.cos() * c,
                RADIUS * theta8.cos() * sn,
                LENGTH + RADIUS * theta8.sin(),
            ),
            normal: Point::new(theta8.cos() * c, theta8.cos() * sn, theta8.sin()),
            s: (LENGTH + RADIUS * theta8) / total,
            phi,
        });
    }
    let ridge_theta = 10.0 * cap_step;
    let phi0 = last_offset + half;
    for phi in [phi0, phi0 + PI] {
        let (c, sn) = (phi.cos(), phi.sin());
        out.push(TemplateVertex {
            position: Point::new(
                RADIUS * ridge_theta.cos() * c,
                RADIUS * ridge_theta.cos() * sn,
                LENGTH + RADIUS * ridge_theta.sin(),
            ),
            normal: Point::new(ridge_theta.cos() * c, ridge_theta.cos() * sn, ridge_theta.sin()),
            s: (LENGTH + RADIUS * ridge_theta) / total,
            phi,
        });
    }
    out
}

fn template_faces() -> Vec<[usize; 3]> {
    let ring_count = TUBE_RINGS + CAP_RINGS;
    let idx = |r: usize, k: usize| r * RING + k % RING;
    let mut f = Vec::with_capacity(TEMPLATE_FACES);
    for r in 0..ring_count - 1 {
        for k in 0..RING {
            f.push([idx(r, k), idx(r, k + 1), idx(r + 1, k)]);
            f.push([idx(r + 1, k), idx(r, k + 1), idx(r + 1, k + 1)]);
        }
    }
    let a = |k: usize| idx(ring_count - 1, k);
    let b0 = ring_count * RING;
    let b = |j: usize| b0 + j % 8;
    for j in 0..8 {
        f.push([a(2 * j), a(2 * j + 1), b(j)]);
        f.push([a(2 * j + 1), a(2 * j + 2), b(j + 1)]);
        f.push([a(2 * j + 1), b(j + 1), b(j)]);
    }
    let (p, q) = (b0 + 8, b0 + 9);
    for j in [6, 7, 0, 1] {
        f.push([p, b(j), b(j + 1)]);
    }
    for j in [2, 3, 4, 5] {
        f.push([q, b(j), b(j + 1)]);
    }
    f.push([p, b(2), q]);
    f.push([q, b(6), p]);
    f
}

/// The undeformed 778-vertex template.
pub fn hand_template() -> TriangleMesh {
    let v = template_vertices().into_iter().map(|t| t.position).collect();
    TriangleMesh::new(v, template_faces()).expect("template is valid")
}

/// Shape parameters of one grasp type; scaled by a per-frame amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspShape {
    /// `(s, phi, amplitude)` radial bumps, amplitudes relative to the tube radius.
    pub bumps: Vec<(f64, f64, f64)>,
    /// Elliptical flattening of the cross-section.
    pub flatten: f64,
    /// Total bend angle of the axis in radians, about the x axis.
    pub bend: f64,
}

const BUMP_WIDTH_S: f64 = 0.09;
const BUMP_WIDTH_PHI: f64 = 0.7;

impl GraspShape {
    /// Fixed shape for a grasp index; independent of any corpus seed.
    pub fn for_grasp(grasp: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6173_7000 + grasp as u64);
        let bumps = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.2..0.9),
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.12..0.4) * if rng.random_bool(0.3) { -1.0 } else { 1.0 },
                )
            })
            .collect();
        Self {
            bumps,
            flatten: rng.random_range(-0.2..0.2),
            bend: rng.random_range(-0.8..0.8),
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Deforms the template by `shape` scaled by `scale`; `scale = 0` returns the template.
pub fn deform(shape: &GraspShape, scale: f64) -> TriangleMesh {
    let verts = template_vertices()
        .into_iter()
        .map(|t| {
            let mut d = shape.flatten * (2.0 * t.phi).cos();
            for &(s, phi, amp) in &shape.bumps {
                let ds = (t.s - s) / BUMP_WIDTH_S;
                let dp = wrap_angle(t.phi - phi) / BUMP_WIDTH_PHI;
                d += amp * (-0.5 * (ds * ds + dp * dp)).exp();
            }
            let p = t.position + t.normal * (RADIUS * scale * d);
            bend(p, shape.bend * scale)
        })
        .collect();
    TriangleMesh::new(verts, template_faces()).expect("deformed template is valid")
}

/// Bends the z axis into a circular arc of total angle `angle` over the capsule length.
fn bend(p: Point, angle: f64) -> Point {
    if angle.abs() < 1e-12 {
        return p;
    }
    let total = LENGTH + RADIUS;
    let rho = total / angle;
    let t = p.z / rho;
    // the axis point (0, 0, z) maps to (0, rho - rho cos t, rho sin t); y offsets follow the arc normal
    let r = rho - p.y;
    Point::new(p.x, rho - r * t.cos(), r * t.sin())
}

/// Open cylinder of the given radius along z, boundary rings at both ends.
pub fn cylinder(radius: f64, height: f64, n_around: usize, n_rings: usize) -> TriangleMesh {
    let half = PI / n_around as f64;
    let mut v = Vec::with_capacity(n_around * n_rings);
    for r in 0..n_rings {
        let z = height * r as f64 / (n_rings - 1) as f64;
        for k in 0..n_around {
            let phi = r as f64 * half + 2.0 * PI * k as f64 / n_around as f64;
            v.push(Point::new(radius * phi.cos(), radius * phi.sin(), z));
        }
    }
    let idx = |r: usize, k: usize| r * n_around + k % n_around;
    let mut f = Vec::with_capacity(2 * n_around * (n_rings - 1));
    for r in 0..n_rings - 1 {
        for k in 0..n_around {
            f.push([idx(r, k), idx(r, k + 1), idx(r + 1, k)]);
            f.push([idx(r + 1, k), idx(r, k + 1), idx(r + 1, k + 1)]);
        }
    }
    TriangleMesh::new(v, f).expect("cylinder is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{angle_defects, build_adjacency, mean_curvature};

    #[test]
    fn template_matches_hand_topology() {
        let m = hand_template();
        assert_eq!(m.n_vertices(), TEMPLATE_VERTICES);
        assert_eq!(m.n_faces(), TEMPLATE_FACES);
        assert_eq!(m.euler_characteristic(), 1);
        let adj = build_adjacency(&m).unwrap();
        let boundary: Vec<usize> = (0..m.n_vertices()).filter(|&v| adj.is_boundary(v)).collect();
        assert_eq!(boundary, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn template_faces_point_outward() {
        let m = hand_template();
        let h = mean_curvature(&m, &build_adjacency(&m).unwrap()).unwrap();
        assert!(h.interior_values().all(|x| x > 0.0));
    }

    #[test]
    fn template_gauss_bonnet_disk() {
        let m = hand_template();
        let adj = build_adjacency(&m).unwrap();
        let total: f64 = angle_defects(&m, &adj).iter().sum();
        assert!((total - 2.0 * PI).abs() < 1e-9, "{total}");
    }

    #[test]
    fn zero_scale_is_template() {
        let shape = GraspShape::for_grasp(3);
        assert_eq!(deform(&shape, 0.0), hand_template());
    }

    #[test]
    fn grasp_shapes_are_fixed_and_distinct() {
        assert_eq!(GraspShape::for_grasp(2), GraspShape::for_grasp(2));
        assert_ne!(GraspShape::for_grasp(2), GraspShape::for_grasp(5));
    }

    #[test]
    fn cylinder_counts() {
        let m = cylinder(0.5, 2.0, 32, 20);
        assert_eq!(m.n_vertices(), 640);
        assert_eq!(m.euler_characteristic(), 0);
    }
}
