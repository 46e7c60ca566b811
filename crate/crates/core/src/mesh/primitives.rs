//! Reference meshes with known curvature: Platonic solids, icospheres, flat grids.

use std::collections::HashMap;

use super::{Point, TriangleMesh};

pub fn octahedron() -> TriangleMesh {
    let v = vec![
        Point::new(1.0, 0.0, 0.0),
        Point::new(-1.0, 0.0, 0.0),
        Point::new(0.0, 1.0, 0.0),
        Point::new(0.0, -1.0, 0.0),
        Point::new(0.0, 0.0, 1.0),
        Point::new(0.0, 0.0, -1.0),
    ];
    let f = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    TriangleMesh::new(v, f).expect("octahedron is valid")
}

fn icosahedron() -> (Vec<Point>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let v = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Point::new(p[0], p[1], p[2]).normalize())
    .collect();
    let f = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (v, f)
}

/// Unit icosphere after `subdivisions` rounds of 1-to-4 midpoint splitting,
/// with every vertex projected back onto the sphere.
pub fn icosphere(subdivisions: u32) -> TriangleMesh {
    let (mut v, mut f) = icosahedron();
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(f.len() * 4);
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<Point>| -> usize {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        for &[a, b, c] in &f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    TriangleMesh::new(v, f).expect("icosphere is valid")
}

/// Flat `nx × ny` grid of squares in the z = 0 plane, each split along a diagonal.
/// Vertex `(i, j)` has index `j * (nx + 1) + i`.
pub fn grid(nx: usize, ny: usize, spacing: f64) -> TriangleMesh {
    let mut v = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            v.push(Point::new(i as f64 * spacing, j as f64 * spacing, 0.0));
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut f = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            // alternate the diagonal so interior vertices see mixed valences
            if (i + j) % 2 == 0 {
                f.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                f.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            } else {
                f.push([idx(i, j), idx(i + 1, j), idx(i, j + 1)]);
                f.push([idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
    }
    TriangleMesh::new(v, f).expect("grid is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        for (level, v, f) in [(0u32, 12, 20), (1, 42, 80), (2, 162, 320), (3, 642, 1280)] {
            let m = icosphere(level);
            assert_eq!(m.n_vertices(), v);
            assert_eq!(m.n_faces(), f);
            assert_eq!(m.euler_characteristic(), 2);
            for p in m.vertices() {
                assert!((p.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_is_a_disk() {
        let m = grid(4, 3, 0.5);
        assert_eq!(m.n_vertices(), 20);
        assert_eq!(m.n_faces(), 24);
        assert_eq!(m.euler_characteristic(), 1);
    }

    #[test]
    fn octahedron_faces_point_outward() {
        let m = octahedron();
        for f in m.faces() {
            let [a, b, c] = f.map(|i| m.vertices()[i]);
            let n = (b - a).cross(&(c - a));
            assert!(n.dot(&(a + b + c)) > 0.0);
        }
    }
}
