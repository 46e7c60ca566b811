//! Per-vertex discrete curvature.
//!
//! Mean curvature uses the cotangent Laplace-Beltrami operator over the
//! 1-ring, normalized by the mixed Voronoi area; Gaussian curvature is the
//! angle defect over the same area. Principal curvatures follow from both.
//!
//! Sign convention: a sphere with outward-facing (counter-clockwise) faces has
//! positive mean curvature. Boundary vertices carry a mask flag; their mean
//! curvature is pinned to zero.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use super::{MeshError, Point, TriangleMesh, VertexAdjacency};

/// Cotangent weights are clamped to this magnitude.
pub const COT_CLAMP: f64 = 1e4;

/// Vertices whose mixed area falls below this are reported as degenerate.
pub const MIN_VERTEX_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CurvatureKind {
    Mean,
    Gaussian,
    Maximum,
    Minimum,
}

impl CurvatureKind {
    pub const ALL: [CurvatureKind; 4] = [
        CurvatureKind::Mean,
        CurvatureKind::Gaussian,
        CurvatureKind::Maximum,
        CurvatureKind::Minimum,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CurvatureKind::Mean => "mean",
            CurvatureKind::Gaussian => "gaussian",
            CurvatureKind::Maximum => "max",
            CurvatureKind::Minimum => "min",
        }
    }
}

impl fmt::Display for CurvatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CurvatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(CurvatureKind::Mean),
            "gaussian" => Ok(CurvatureKind::Gaussian),
            "max" | "maximum" => Ok(CurvatureKind::Maximum),
            "min" | "minimum" => Ok(CurvatureKind::Minimum),
            other => Err(format!(
                "unknown curvature kind `{other}` (expected mean, gaussian, max or min)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureField {
    pub kind: CurvatureKind,
    pub values: Vec<f64>,
    pub boundary_mask: Vec<bool>,
}

impl CurvatureField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values at non-boundary vertices.
    pub fn interior_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.boundary_mask)
            .filter(|(_, &b)| !b)
            .map(|(&v, _)| v)
    }
}

/// Per-vertex quantities gathered in one pass over each 1-ring.
struct VertexMeasures {
    area: f64,
    angle_sum: f64,
    laplacian: Point,
    normal: Point,
}

fn clamp_cot(c: f64) -> f64 {
    c.clamp(-COT_CLAMP, COT_CLAMP)
}

fn angle_between(a: &Point, b: &Point) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

fn cot_between(a: &Point, b: &Point) -> f64 {
    clamp_cot(a.dot(b) / a.cross(b).norm())
}

fn vertex_measures(mesh: &TriangleMesh, adj: &VertexAdjacency, i: usize) -> VertexMeasures {
    let pts = mesh.vertices();
    let xi = pts[i];
    let mut m = VertexMeasures {
        area: 0.0,
        angle_sum: 0.0,
        laplacian: Point::zeros(),
        normal: Point::zeros(),
    };
    for &fi in adj.incident_faces(i) {
        let f = mesh.faces()[fi];
        let pos = f.iter().position(|&v| v == i).expect("incident face contains vertex");
        let (j, k) = (f[(pos + 1) % 3], f[(pos + 2) % 3]);
        let (xj, xk) = (pts[j], pts[k]);
        let (eij, eik, ejk) = (xj - xi, xk - xi, xk - xj);

        let angle_i = angle_between(&eij, &eik);
        let angle_j = angle_between(&(-eij), &ejk);
        let angle_k = PI - angle_i - angle_j;
        let cot_j = cot_between(&(-eij), &ejk);
        let cot_k = cot_between(&(-eik), &(-ejk));

        // edge ij is opposite corner k, edge ik opposite corner j
        m.laplacian += eij * cot_k + eik * cot_j;
        m.angle_sum += angle_i;

        let cross = eij.cross(&eik);
        m.normal += cross;
        let obtuse = angle_i > PI / 2.0 || angle_j > PI / 2.0 || angle_k > PI / 2.0;
        m.area += if obtuse {
            0.5 * cross.norm() / 3.0
        } else {
            (eij.norm_squared() * cot_k + eik.norm_squared() * cot_j) / 8.0
        };
    }
    m
}

fn checked_area(v: usize, area: f64) -> Result<f64, MeshError> {
    if area < MIN_VERTEX_AREA || !area.is_finite() {
        Err(MeshError::DegenerateArea { vertex: v, area })
    } else {
        Ok(area)
    }
}

/// Mean curvature `H = sign * |L| / 2` with `L` the cotangent Laplacian of position.
pub fn mean_curvature(mesh: &TriangleMesh, adj: &VertexAdjacency) -> Result<CurvatureField, MeshError> {
    let n = mesh.n_vertices();
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let m = vertex_measures(mesh, adj, i);
        let area = checked_area(i, m.area)?;
        if adj.is_boundary(i) {
            values.push(0.0);
            continue;
        }
        let lap = m.laplacian / (2.0 * area);
        let magnitude = 0.5 * lap.norm();
        // the Laplacian of position points against the outward normal on convex patches
        let sign = if lap.dot(&m.normal) > 0.0 { -1.0 } else { 1.0 };
        values.push(sign * magnitude);
    }
    Ok(CurvatureField {
        kind: CurvatureKind::Mean,
        values,
        boundary_mask: adj.boundary_flags().to_vec(),
    })
}

/// Angle defect per vertex: `2π - Σθ` inside, `π - Σθ` on the boundary.
pub fn angle_defects(mesh: &TriangleMesh, adj: &VertexAdjacency) -> Vec<f64> {
    (0..mesh.n_vertices())
        .map(|i| {
            let sum = vertex_measures(mesh, adj, i).angle_sum;
            if adj.is_boundary(i) {
                PI - sum
            } else {
                2.0 * PI - sum
            }
        })
        .collect()
}

/// Gaussian curvature as angle defect over mixed area.
pub fn gaussian_curvature(mesh: &TriangleMesh, adj: &VertexAdjacency) -> Result<CurvatureField, MeshError> {
    let n = mesh.n_vertices();
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let m = vertex_measures(mesh, adj, i);
        let area = checked_area(i, m.area)?;
        let defect = if adj.is_boundary(i) {
            PI - m.angle_sum
        } else {
            2.0 * PI - m.angle_sum
        };
        values.push(defect / area);
    }
    Ok(CurvatureField {
        kind: CurvatureKind::Gaussian,
        values,
        boundary_mask: adj.boundary_flags().to_vec(),
    })
}

/// `(k_max, k_min) = H ± sqrt(max(H² - K, 0))`.
pub fn principal_curvatures(
    mesh: &TriangleMesh,
    adj: &VertexAdjacency,
) -> Result<(CurvatureField, CurvatureField), MeshError> {
    let h = mean_curvature(mesh, adj)?;
    let k = gaussian_curvature(mesh, adj)?;
    Ok(principal_from(&h, &k))
}

pub(crate) fn principal_from(h: &CurvatureField, k: &CurvatureField) -> (CurvatureField, CurvatureField) {
    let (max, min): (Vec<f64>, Vec<f64>) = h
        .values
        .iter()
        .zip(&k.values)
        .map(|(&h, &k)| {
            let s = (h * h - k).max(0.0).sqrt();
            (h + s, h - s)
        })
        .unzip();
    (
        CurvatureField {
            kind: CurvatureKind::Maximum,
            values: max,
            boundary_mask: h.boundary_mask.clone(),
        },
        CurvatureField {
            kind: CurvatureKind::Minimum,
            values: min,
            boundary_mask: h.boundary_mask.clone(),
        },
    )
}

/// Computes one field by kind.
pub fn compute_field(
    mesh: &TriangleMesh,
    adj: &VertexAdjacency,
    kind: CurvatureKind,
) -> Result<CurvatureField, MeshError> {
    match kind {
        CurvatureKind::Mean => mean_curvature(mesh, adj),
        CurvatureKind::Gaussian => gaussian_curvature(mesh, adj),
        CurvatureKind::Maximum => principal_curvatures(mesh, adj).map(|(max, _)| max),
        CurvatureKind::Minimum => principal_curvatures(mesh, adj).map(|(_, min)| min),
    }
}

/// CSV with columns `vertex_id,kind,value,boundary_flag`.
pub fn write_field_csv<W: Write>(field: &CurvatureField, mut out: W) -> std::io::Result<()> {
    writeln!(out, "vertex_id,kind,value,boundary_flag")?;
    for (i, (v, b)) in field.values.iter().zip(&field.boundary_mask).enumerate() {
        writeln!(out, "{i},{},{v},{}", field.kind, u8::from(*b))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_adjacency, primitives};

    fn fields(m: &TriangleMesh) -> (CurvatureField, CurvatureField) {
        let adj = build_adjacency(m).unwrap();
        (mean_curvature(m, &adj).unwrap(), gaussian_curvature(m, &adj).unwrap())
    }

    #[test]
    fn flat_grid_interior_is_zero() {
        let m = primitives::grid(6, 5, 0.3);
        let (h, k) = fields(&m);
        for v in h.interior_values().chain(k.interior_values()) {
            assert!(v.abs() <= 1e-9, "{v}");
        }
        assert!(h.boundary_mask.iter().any(|&b| b));
    }

    #[test]
    fn octahedron_sign_is_positive() {
        let (h, k) = fields(&primitives::octahedron());
        assert!(h.values.iter().all(|&v| v > 0.0));
        assert!(k.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn flipped_orientation_flips_mean_sign() {
        let m = primitives::icosphere(2);
        let flipped = TriangleMesh::new(
            m.vertices().to_vec(),
            m.faces().iter().map(|&[a, b, c]| [a, c, b]).collect(),
        )
        .unwrap();
        let (h, _) = fields(&m);
        let (hf, _) = fields(&flipped);
        for (a, b) in h.values.iter().zip(&hf.values) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_mean_is_zero_and_masked() {
        let m = primitives::grid(3, 3, 1.0);
        let (h, _) = fields(&m);
        for (v, b) in h.values.iter().zip(&h.boundary_mask) {
            if *b {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn principal_sum_identity() {
        let m = primitives::icosphere(2);
        let (h, k) = fields(&m);
        let (kmax, kmin) = principal_from(&h, &k);
        for i in 0..m.n_vertices() {
            let lhs = kmax.values[i] + kmin.values[i];
            assert!((lhs - 2.0 * h.values[i]).abs() <= 1e-12 * h.values[i].abs().max(1.0));
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("max".parse::<CurvatureKind>(), Ok(CurvatureKind::Maximum));
        assert_eq!("minimum".parse::<CurvatureKind>(), Ok(CurvatureKind::Minimum));
        assert!("curly".parse::<CurvatureKind>().is_err());
    }

    #[test]
    fn csv_layout() {
        let m = primitives::octahedron();
        let (h, _) = fields(&m);
        let mut buf = Vec::new();
        write_field_csv(&h, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("vertex_id,kind,value,boundary_flag"));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "0");
        assert_eq!(first[1], "mean");
        assert_eq!(first[2].parse::<f64>().unwrap(), h.values[0]);
        assert_eq!(first[3], "0");
        assert_eq!(text.lines().count(), 7);
    }
}
