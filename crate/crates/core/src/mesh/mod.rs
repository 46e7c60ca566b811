//! Indexed triangle meshes and the discrete curvature operators defined on them.
//!
//! A [`TriangleMesh`] is validated on construction: indices in range, no
//! repeated corner, no zero-area face, and every edge shared by at most two
//! faces with opposite orientation. Curvature fields are computed per vertex
//! from the 1-ring described by [`VertexAdjacency`].

mod adjacency;
mod curvature;
pub mod io;
pub mod primitives;

use std::collections::HashMap;

use nalgebra::Vector3;
use thiserror::Error;

pub use adjacency::{build_adjacency, VertexAdjacency};
pub use curvature::{
    angle_defects, compute_field, gaussian_curvature, mean_curvature, principal_curvatures, write_field_csv,
    CurvatureField, CurvatureKind, COT_CLAMP, MIN_VERTEX_AREA,
};

/// Faces below this area are rejected as degenerate.
pub const MIN_FACE_AREA: f64 = 1e-12;

pub type Point = Vector3<f64>;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("face {face} references vertex {index} but the mesh has {n_vertices} vertices")]
    InvalidIndex {
        face: usize,
        index: usize,
        n_vertices: usize,
    },
    #[error("edge ({0}, {1}) is shared by more than two faces")]
    NonManifoldEdge(usize, usize),
    #[error("vertex {0} has a fan that is not a single connected ring")]
    NonManifoldVertex(usize),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("vertex {vertex} has mixed area {area:e} below threshold")]
    DegenerateArea { vertex: usize, area: f64 },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Vertex positions plus counter-clockwise index triples.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Builds a mesh and checks every structural invariant.
    pub fn new(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Number of distinct undirected edges.
    pub fn n_edges(&self) -> usize {
        let mut edges = std::collections::HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.n_vertices() as i64 - self.n_edges() as i64 + self.n_faces() as i64
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * (pb - pa).cross(&(pc - pa)).norm()
    }

    /// Applies `f` to every vertex position, keeping connectivity.
    pub fn map_vertices(&self, f: impl Fn(&Point) -> Point) -> Result<Self, MeshError> {
        Self::new(self.vertices.iter().map(f).collect(), self.faces.clone())
    }

    fn validate(&self) -> Result<(), MeshError> {
        let n = self.vertices.len();
        if self.vertices.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(MeshError::InvariantViolation(
                "vertex coordinates must be finite".into(),
            ));
        }
        for (fi, f) in self.faces.iter().enumerate() {
            for &i in f {
                if i >= n {
                    return Err(MeshError::InvalidIndex {
                        face: fi,
                        index: i,
                        n_vertices: n,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::InvariantViolation(format!("face {fi} repeats a vertex")));
            }
            let area = self.face_area(fi);
            if area <= MIN_FACE_AREA {
                return Err(MeshError::InvariantViolation(format!(
                    "face {fi} has area {area:e} (zero-area face)"
                )));
            }
        }

        // directed edge -> face; an undirected edge may appear once in each direction
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        let mut undirected: HashMap<(usize, usize), u8> = HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let count = undirected.entry((a.min(b), a.max(b))).or_default();
                *count += 1;
                if *count > 2 {
                    return Err(MeshError::NonManifoldEdge(a.min(b), a.max(b)));
                }
                if directed.insert((a, b), fi).is_some() {
                    return Err(MeshError::InvariantViolation(format!(
                        "edge ({a}, {b}) appears twice with the same orientation"
                    )));
                }
            }
        }
        Ok(())
    }
}
