//! Grasp-type taxonomy, transition annotations, and label statistics.

mod labels;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

pub use labels::{
    expand_transitions, label_statistics, minimal_transitions, DistributionReport, PerFrameLabels, TransitionAnnotation,
};

/// Default taxonomy: 33 grasp types plus three non-grasp hand shapes.
pub const DEFAULT_TAXONOMY: &str = include_str!("../../data/taxonomy.tsv");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("duplicate grasp id {0}")]
    DuplicateId(usize),
    #[error("duplicate grasp name `{0}`")]
    DuplicateName(String),
    #[error("unknown category `{0}`")]
    BadCategory(String),
    #[error("grasp ids must be contiguous from 0; missing {0}")]
    NonContiguous(usize),
    #[error("taxonomy needs at least one non-grasp entry")]
    NoNonGrasp,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("annotation is empty")]
    EmptyAnnotation,
    #[error("transition at frame {index} is outside an episode of {n_frames} frames")]
    IndexOutOfRange { index: usize, n_frames: usize },
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("grasp id {id} not in taxonomy of {count}")]
    UnknownGrasp { id: usize, count: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GraspCategory {
    Power,
    Precision,
    Intermediate,
    NonGrasp,
}

impl GraspCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            GraspCategory::Power => "power",
            GraspCategory::Precision => "precision",
            GraspCategory::Intermediate => "intermediate",
            GraspCategory::NonGrasp => "non-grasp",
        }
    }
}

impl fmt::Display for GraspCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GraspCategory {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "power" => Ok(GraspCategory::Power),
            "precision" => Ok(GraspCategory::Precision),
            "intermediate" => Ok(GraspCategory::Intermediate),
            "non-grasp" | "nongrasp" | "non_grasp" => Ok(GraspCategory::NonGrasp),
            other => Err(TaxonomyError::BadCategory(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraspType {
    pub id: usize,
    pub name: String,
    pub category: GraspCategory,
}

/// Ordered grasp types with contiguous ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    types: Vec<GraspType>,
}

impl Taxonomy {
    /// Validates and sorts by id.
    pub fn new(mut types: Vec<GraspType>) -> Result<Self, TaxonomyError> {
        types.sort_by_key(|t| t.id);
        for w in types.windows(2) {
            if w[0].id == w[1].id {
                return Err(TaxonomyError::DuplicateId(w[0].id));
            }
        }
        for (i, t) in types.iter().enumerate() {
            if t.id != i {
                return Err(TaxonomyError::NonContiguous(i));
            }
        }
        let mut names: Vec<&str> = types.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(TaxonomyError::DuplicateName(w[0].to_string()));
        }
        if !types.iter().any(|t| t.category == GraspCategory::NonGrasp) {
            return Err(TaxonomyError::NoNonGrasp);
        }
        Ok(Self { types })
    }

    pub fn default_36() -> Self {
        parse_taxonomy(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }

    /// Number of grasp classes.
    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&GraspType> {
        self.types.get(id)
    }

    pub fn types(&self) -> &[GraspType] {
        &self.types
    }

    pub fn find(&self, name: &str) -> Option<&GraspType> {
        self.types.iter().find(|t| t.name == name)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("# id\tname\tcategory\n");
        for t in &self.types {
            s.push_str(&format!("{}\t{}\t{}\n", t.id, t.name, t.category));
        }
        s
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::default_36()
    }
}

/// Parses `id<TAB>name<TAB>category` lines. Blank lines and `#` comments are skipped.
pub fn parse_taxonomy(text: &str) -> Result<Taxonomy, TaxonomyError> {
    let mut types = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let parse_err = |message: String| TaxonomyError::Parse { line: i + 1, message };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 tab-separated fields, got {}",
                fields.len()
            )));
        }
        let id = fields[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| parse_err(format!("bad id `{}`: {e}", fields[0])))?;
        let name = fields[1].trim();
        if name.is_empty() {
            return Err(parse_err("empty name".into()));
        }
        types.push(GraspType {
            id,
            name: name.to_string(),
            category: fields[2].parse()?,
        });
    }
    Taxonomy::new(types)
}

pub fn load_taxonomy(path: &Path) -> Result<Taxonomy, TaxonomyError> {
    parse_taxonomy(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_36_with_flattened_palm() {
        let t = Taxonomy::default();
        assert_eq!(t.len(), 36);
        assert_eq!(t.find("flattened palm").unwrap().category, GraspCategory::NonGrasp);
    }

    #[test]
    fn tsv_round_trip() {
        let t = Taxonomy::default();
        assert_eq!(parse_taxonomy(&t.to_tsv()).unwrap(), t);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(
            parse_taxonomy("0\ta\tpower\n3\tb\tnon-grasp\n3\tc\tprecision\n"),
            Err(TaxonomyError::DuplicateId(3))
        ));
        assert!(matches!(
            parse_taxonomy("0\ta\tsqueeze\n"),
            Err(TaxonomyError::BadCategory(_))
        ));
        assert!(matches!(
            parse_taxonomy("0\ta\tpower\n2\tb\tnon-grasp\n"),
            Err(TaxonomyError::NonContiguous(1))
        ));
        assert!(matches!(
            parse_taxonomy("0\ta\tpower\n"),
            Err(TaxonomyError::NoNonGrasp)
        ));
        assert!(matches!(
            parse_taxonomy("0\ta\tpower\n1\ta\tnon-grasp\n"),
            Err(TaxonomyError::DuplicateName(_))
        ));
        assert!(matches!(
            parse_taxonomy("0 a power\n"),
            Err(TaxonomyError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn accepts_minimal_with_flattened_palm() {
        let t = parse_taxonomy("0\tflattened palm\tnon-grasp\n").unwrap();
        assert_eq!(t.len(), 1);
    }
}
