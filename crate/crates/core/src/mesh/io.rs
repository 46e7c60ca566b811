//! OFF and OBJ readers (triangles only) plus an OFF writer.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{MeshError, Point, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
}

impl MeshFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "off" => Some(MeshFormat::Off),
            "obj" => Some(MeshFormat::Obj),
            _ => None,
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num<T: FromStr>(tok: &str, line: usize, what: &str) -> Result<T, MeshError> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} `{tok}`")))
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh, MeshError> {
    let text = fs::read_to_string(path)?;
    match format {
        MeshFormat::Off => parse_off(&text),
        MeshFormat::Obj => parse_obj(&text),
    }
}

/// Parses ASCII OFF. Comments (`#`) and blank lines are skipped.
pub fn parse_off(text: &str) -> Result<TriangleMesh, MeshError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    // the counts may share the header line ("OFF 3 1 0")
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(hline, "missing OFF header"))?
        .trim();
    let (cline, counts) = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| parse_err(hline + 1, "missing vertex/face counts"))?
    } else {
        (hline, rest)
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| parse_num(t, cline, "count"))
        .collect::<Result<_, _>>()?;
    if counts.len() < 2 {
        return Err(parse_err(cline, "expected `n_vertices n_faces [n_edges]`"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    let mut last_line = cline;
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| {
            parse_err(
                last_line + 1,
                format!("expected {nv} vertices, found {}", vertices.len()),
            )
        })?;
        last_line = ln;
        let c: Vec<f64> = l
            .split_whitespace()
            .map(|t| parse_num(t, ln, "coordinate"))
            .collect::<Result<_, _>>()?;
        if c.len() != 3 {
            return Err(parse_err(ln, format!("vertex needs 3 coordinates, got {}", c.len())));
        }
        vertices.push(Point::new(c[0], c[1], c[2]));
    }

    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(last_line + 1, format!("expected {nf} faces, found {}", faces.len())))?;
        last_line = ln;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(|t| parse_num(t, ln, "index"))
            .collect::<Result<_, _>>()?;
        match idx.as_slice() {
            [3, a, b, c, ..] => faces.push([*a, *b, *c]),
            [n, ..] => return Err(parse_err(ln, format!("only triangles are supported, got a {n}-gon"))),
            [] => return Err(parse_err(ln, "empty face")),
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "unexpected trailing data"));
    }
    TriangleMesh::new(vertices, faces)
}

/// Parses the `v` and `f` records of a Wavefront OBJ; other records are ignored.
pub fn parse_obj(text: &str) -> Result<TriangleMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<f64> = toks.map(|t| parse_num(t, ln, "coordinate")).collect::<Result<_, _>>()?;
                if c.len() < 3 {
                    return Err(parse_err(ln, "vertex needs at least 3 coordinates"));
                }
                vertices.push(Point::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let refs: Vec<&str> = toks.collect();
                if refs.len() != 3 {
                    return Err(parse_err(
                        ln,
                        format!("only triangles are supported, got {} corners", refs.len()),
                    ));
                }
                let mut face = [0usize; 3];
                for (slot, r) in face.iter_mut().zip(&refs) {
                    let head = r.split('/').next().unwrap_or("");
                    let k: i64 = parse_num(head, ln, "index")?;
                    *slot = if k > 0 {
                        (k - 1) as usize
                    } else if k < 0 && (-k) as usize <= vertices.len() {
                        vertices.len() - (-k) as usize
                    } else {
                        return Err(parse_err(ln, format!("invalid vertex reference `{r}`")));
                    };
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Serializes to ASCII OFF with coordinates printed at `precision` decimals
/// (`None` keeps the shortest round-trip representation).
pub fn to_off_string(mesh: &TriangleMesh, precision: Option<usize>) -> String {
    let mut s = String::with_capacity(mesh.n_vertices() * 40 + mesh.n_faces() * 16);
    let _ = writeln!(s, "OFF\n{} {} 0", mesh.n_vertices(), mesh.n_faces());
    for p in mesh.vertices() {
        let _ = match precision {
            Some(d) => writeln!(s, "{:.d$} {:.d$} {:.d$}", p.x, p.y, p.z),
            None => writeln!(s, "{} {} {}", p.x, p.y, p.z),
        };
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}
