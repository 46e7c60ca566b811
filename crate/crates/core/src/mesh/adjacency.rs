use super::{MeshError, TriangleMesh};

/// Ordered 1-ring of every vertex.
///
/// Rings follow the face orientation: for an interior vertex, consecutive
/// ring entries `ring[k], ring[k + 1]` (cyclically) span one incident face.
/// For a boundary vertex the ring is open, starting and ending on boundary
/// edges, and has one more entry than incident faces.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexAdjacency {
    rings: Vec<Vec<usize>>,
    faces: Vec<Vec<usize>>,
    boundary: Vec<bool>,
}

impl VertexAdjacency {
    pub fn ring(&self, v: usize) -> &[usize] {
        &self.rings[v]
    }

    /// Incident faces, ordered the same way as the ring.
    pub fn incident_faces(&self, v: usize) -> &[usize] {
        &self.faces[v]
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn n_vertices(&self) -> usize {
        self.rings.len()
    }
}

pub fn build_adjacency(mesh: &TriangleMesh) -> Result<VertexAdjacency, MeshError> {
    let n = mesh.n_vertices();
    // for each vertex: (next, prev, face) triples, one per incident face
    let mut wedges: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); n];
    for (fi, f) in mesh.faces().iter().enumerate() {
        for k in 0..3 {
            let v = f[k];
            if v >= n {
                return Err(MeshError::InvalidIndex {
                    face: fi,
                    index: v,
                    n_vertices: n,
                });
            }
            wedges[v].push((f[(k + 1) % 3], f[(k + 2) % 3], fi));
        }
    }

    let mut rings = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    let mut boundary = Vec::with_capacity(n);
    for (v, w) in wedges.iter().enumerate() {
        if w.is_empty() {
            rings.push(Vec::new());
            faces.push(Vec::new());
            boundary.push(true);
            continue;
        }
        // a wedge (next, prev) links next -> prev around v; the ring starts at a
        // `next` that is nobody's `prev` when the fan is open
        let start = w
            .iter()
            .position(|&(next, _, _)| !w.iter().any(|&(_, prev, _)| prev == next));
        let is_boundary = start.is_some();
        let mut current = start.unwrap_or(0);
        let mut used = vec![false; w.len()];
        let mut ring = vec![w[current].0];
        let mut ring_faces = Vec::with_capacity(w.len());
        loop {
            used[current] = true;
            let (_, prev, face) = w[current];
            ring_faces.push(face);
            match w.iter().position(|&(next, _, _)| next == prev) {
                Some(nx) if !used[nx] => {
                    ring.push(prev);
                    current = nx;
                }
                Some(_) => break,
                None => {
                    ring.push(prev);
                    break;
                }
            }
        }
        if used.iter().any(|u| !u) {
            return Err(MeshError::NonManifoldVertex(v));
        }
        rings.push(ring);
        faces.push(ring_faces);
        boundary.push(is_boundary);
    }
    Ok(VertexAdjacency { rings, faces, boundary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{primitives, Point};

    #[test]
    fn single_triangle_is_all_boundary() {
        let m = TriangleMesh::new(
            vec![
                Point::new(0.0, 0.0, 0.0),
                Point::new(1.0, 0.0, 0.0),
                Point::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let adj = build_adjacency(&m).unwrap();
        for v in 0..3 {
            assert!(adj.is_boundary(v));
            let mut ring = adj.ring(v).to_vec();
            ring.sort();
            let others: Vec<usize> = (0..3).filter(|&u| u != v).collect();
            assert_eq!(ring, others);
        }
        assert_eq!(adj.ring(0), &[1, 2]);
    }

    #[test]
    fn octahedron_rings_are_closed_with_four_neighbors() {
        let m = primitives::octahedron();
        let adj = build_adjacency(&m).unwrap();
        for v in 0..6 {
            assert!(!adj.is_boundary(v));
            assert_eq!(adj.ring(v).len(), 4);
            assert_eq!(adj.incident_faces(v).len(), 4);
        }
    }

    #[test]
    fn ring_entries_span_incident_faces_in_order() {
        let m = primitives::icosphere(1);
        let adj = build_adjacency(&m).unwrap();
        for v in 0..m.n_vertices() {
            let ring = adj.ring(v);
            for (k, &f) in adj.incident_faces(v).iter().enumerate() {
                let a = ring[k];
                let b = ring[(k + 1) % ring.len()];
                let face = m.faces()[f];
                assert!(face.contains(&v) && face.contains(&a) && face.contains(&b));
            }
        }
    }

    #[test]
    fn grid_boundary_flags() {
        let m = primitives::grid(4, 3, 1.0);
        let adj = build_adjacency(&m).unwrap();
        for j in 0..=3 {
            for i in 0..=4 {
                let v = j * 5 + i;
                let on_edge = i == 0 || i == 4 || j == 0 || j == 3;
                assert_eq!(adj.is_boundary(v), on_edge, "vertex {v}");
                if on_edge {
                    assert_eq!(adj.ring(v).len(), adj.incident_faces(v).len() + 1);
                }
            }
        }
    }

    #[test]
    fn bowtie_vertex_is_rejected() {
        // two triangles sharing only vertex 0
        let m = TriangleMesh::new(
            vec![
                Point::new(0.0, 0.0, 0.0),
                Point::new(1.0, 0.0, 0.0),
                Point::new(1.0, 1.0, 0.0),
                Point::new(-1.0, 0.0, 0.0),
                Point::new(-1.0, -1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 3, 4]],
        )
        .unwrap();
        assert!(matches!(build_adjacency(&m), Err(MeshError::NonManifoldVertex(0))));
    }
}
