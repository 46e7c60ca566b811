//! Line-oriented frame manifests.
//!
//! One frame per line, whitespace separated:
//!
//! ```text
//! episode_id frame_idx image_path action_id grasp_id object_id mesh_path hand_r hand_l obj
//! ```
//!
//! Boxes are `x,y,w,h` in normalized coordinates, or `-` when absent.
//! Paths are relative to the corpus root and may not contain whitespace.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::detection::{BoundingBox, BoxClass, Side};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("path `{0}` contains whitespace")]
    BadPath(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub episode_id: usize,
    pub frame_idx: usize,
    pub image_path: String,
    pub action_id: usize,
    pub grasp_id: usize,
    pub object_id: usize,
    pub mesh_path: String,
    pub hand_r: Option<BoundingBox>,
    pub hand_l: Option<BoundingBox>,
    pub object: Option<BoundingBox>,
}

fn fmt_box(b: &Option<BoundingBox>) -> String {
    match b {
        Some(b) => format!("{},{},{},{}", b.x, b.y, b.w, b.h),
        None => "-".into(),
    }
}

fn parse_box(s: &str, class: BoxClass, side: Option<Side>) -> Result<Option<BoundingBox>, String> {
    if s == "-" {
        return Ok(None);
    }
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.parse::<f64>().map_err(|e| format!("box `{s}`: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != 4 {
        return Err(format!("box `{s}` needs 4 values"));
    }
    let mut b = BoundingBox::new(v[0], v[1], v[2], v[3], class).map_err(|e| e.to_string())?;
    b.side_hint = side;
    Ok(Some(b))
}

impl FrameRecord {
    pub fn to_line(&self) -> Result<String, ManifestError> {
        for p in [&self.image_path, &self.mesh_path] {
            if p.is_empty() || p.chars().any(char::is_whitespace) {
                return Err(ManifestError::BadPath(p.clone()));
            }
        }
        Ok(format!(
            "{} {} {} {} {} {} {} {} {} {}",
            self.episode_id,
            self.frame_idx,
            self.image_path,
            self.action_id,
            self.grasp_id,
            self.object_id,
            self.mesh_path,
            fmt_box(&self.hand_r),
            fmt_box(&self.hand_l),
            fmt_box(&self.object)
        ))
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 10 {
            return Err(format!("expected 10 fields, got {}", f.len()));
        }
        let num = |i: usize, what: &str| f[i].parse::<usize>().map_err(|e| format!("{what} `{}`: {e}", f[i]));
        Ok(Self {
            episode_id: num(0, "episode_id")?,
            frame_idx: num(1, "frame_idx")?,
            image_path: f[2].to_string(),
            action_id: num(3, "action_id")?,
            grasp_id: num(4, "grasp_id")?,
            object_id: num(5, "object_id")?,
            mesh_path: f[6].to_string(),
            hand_r: parse_box(f[7], BoxClass::Hand, Some(Side::Right))?,
            hand_l: parse_box(f[8], BoxClass::Hand, Some(Side::Left))?,
            object: parse_box(f[9], BoxClass::Object, None)?,
        })
    }
}

pub fn write_manifest(records: &[FrameRecord]) -> Result<String, ManifestError> {
    let mut s =
        String::from("# episode_id frame_idx image_path action_id grasp_id object_id mesh_path hand_r hand_l obj\n");
    for r in records {
        let _ = writeln!(s, "{}", r.to_line()?);
    }
    Ok(s)
}

pub fn parse_manifest(text: &str) -> Result<Vec<FrameRecord>, ManifestError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| FrameRecord::parse_line(l).map_err(|message| ManifestError::Parse { line: i + 1, message }))
        .collect()
}

pub fn load_manifest(path: &Path) -> Result<Vec<FrameRecord>, ManifestError> {
    parse_manifest(&std::fs::read_to_string(path)?)
}
