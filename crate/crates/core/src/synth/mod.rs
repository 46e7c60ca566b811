//! Deterministic desk-scale corpus generator.
//!
//! Actions come in pairs. Both members of a pair share a grasp script and an
//! object pool and differ only in how strongly the hand mesh deforms, which
//! shows up in the mesh curvature and, through it, in a fine checker texture
//! on the hand patch. Grasp type alone therefore never determines the action.

mod corpus;
pub mod meshes;
mod oracle;
mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{
    corpus_digest, generate_corpus, generate_episode, generate_mesh_sequence, load_corpus, split_episodes, Corpus,
    EpisodeManifest, MeshKey, MeshLibrary, DIGEST_FILE,
};
pub use oracle::{oracle_report, OracleReport};
pub use render::{render_frame, FrameLayout, RenderParams};

use crate::taxonomy::TaxonomyError;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("grasp types {a} and {b} have mean-curvature distance {distance:.4}, below the floor {floor}")]
    GraspSeparation {
        a: usize,
        b: usize,
        distance: f64,
        floor: f64,
    },
    #[error("corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
    #[error(transparent)]
    Manifest(#[from] crate::manifest::ManifestError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_actions: usize,
    pub n_grasp_types: usize,
    pub n_objects: usize,
    pub episodes_per_action: usize,
    pub frames_per_episode: usize,
    pub image_size: usize,
    /// Standard deviation of additive pixel noise.
    pub noise_level: f64,
    pub seed: u64,
    pub train_fraction: f64,
    /// Global multiplier on mesh deformation; 0 leaves every mesh at the template.
    pub deformation: f64,
    /// Distinct deformation phases across an episode.
    pub phase_levels: usize,
    /// Seeded shape-noise variants per (grasp, amplitude, phase).
    pub shape_variants: usize,
    /// Relative jitter of bump amplitudes between variants.
    pub shape_noise: f64,
    /// Checker amplitude per unit RMS mean-curvature deviation from the template.
    pub curvature_texture: f64,
    /// Fraction of episodes that also show a faint left hand.
    pub left_hand_rate: f64,
    /// Minimum mean-curvature L2 distance between any two grasp types.
    pub grasp_separation_floor: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_actions: 10,
            n_grasp_types: 8,
            n_objects: 5,
            episodes_per_action: 20,
            frames_per_episode: 16,
            image_size: 32,
            noise_level: 0.02,
            seed: 7,
            train_fraction: 0.8,
            deformation: 1.0,
            phase_levels: 4,
            shape_variants: 2,
            shape_noise: 0.05,
            curvature_texture: 0.1,
            left_hand_rate: 0.25,
            grasp_separation_floor: 1.0,
        }
    }
}

/// Low and high deformation amplitude of the two actions in a pair.
pub const AMPLITUDE_LEVELS: [f64; 2] = [0.5, 1.0];

impl GeneratorConfig {
    pub fn validate(&self, taxonomy_size: usize) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_actions == 0 || self.n_objects == 0 || self.episodes_per_action == 0 {
            return bad("n_actions, n_objects, and episodes_per_action must be positive".into());
        }
        if self.n_grasp_types < 2 || self.n_grasp_types > taxonomy_size {
            return bad(format!(
                "n_grasp_types {} must be in [2, {taxonomy_size}]",
                self.n_grasp_types
            ));
        }
        if self.frames_per_episode < 2 {
            return bad("frames_per_episode must be at least 2".into());
        }
        if self.image_size < 16 || !self.image_size.is_multiple_of(8) {
            return bad(format!(
                "image_size {} must be a multiple of 8, at least 16",
                self.image_size
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_level) || !(0.0..=1.0).contains(&self.left_hand_rate) {
            return bad("noise_level and left_hand_rate must lie in [0, 1]".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)".into());
        }
        if self.phase_levels == 0 || self.shape_variants == 0 {
            return bad("phase_levels and shape_variants must be positive".into());
        }
        if !(self.deformation >= 0.0 && self.deformation.is_finite()) || !(0.0..0.5).contains(&self.shape_noise) {
            return bad("deformation must be finite and non-negative; shape_noise in [0, 0.5)".into());
        }
        let scripts: Vec<Vec<usize>> = (0..self.n_pairs()).map(|p| self.pair_script(p)).collect();
        for (p, s) in scripts.iter().enumerate() {
            if s.iter().collect::<std::collections::BTreeSet<_>>().len() < 2 {
                return bad(format!("pair {p} script {s:?} has fewer than 2 grasp types"));
            }
            if scripts[..p].contains(s) {
                return bad(format!("pair {p} repeats script {s:?}; add grasp types"));
            }
        }
        Ok(())
    }

    pub fn n_pairs(&self) -> usize {
        self.n_actions.div_ceil(2)
    }

    /// Three-segment grasp script shared by both actions of pair `p`.
    /// Neighbouring pairs overlap in one or two grasp types.
    pub fn pair_script(&self, p: usize) -> Vec<usize> {
        let g = self.n_grasp_types;
        let base = (3 * p).div_ceil(2);
        let s = if p.is_multiple_of(2) {
            [base, base + 1, base + 2]
        } else {
            [base, base - 1, base + 1]
        };
        s.iter().map(|&k| k % g).collect()
    }

    pub fn action_script(&self, action: usize) -> Vec<usize> {
        self.pair_script(action / 2)
    }

    /// Index into [`AMPLITUDE_LEVELS`].
    pub fn amplitude_level(&self, action: usize) -> usize {
        action % 2
    }

    /// Objects an action's episodes draw from.
    pub fn object_pool(&self, action: usize) -> [usize; 2] {
        let p = action / 2;
        [p % self.n_objects, (p + 1) % self.n_objects]
    }

    pub fn n_episodes(&self) -> usize {
        self.n_actions * self.episodes_per_action
    }

    /// Synthetic grasp index to taxonomy id, spread evenly over the taxonomy.
    pub fn taxonomy_id(&self, grasp: usize, taxonomy_size: usize) -> usize {
        grasp * (taxonomy_size / self.n_grasp_types)
    }

    pub fn grasp_from_taxonomy(&self, id: usize, taxonomy_size: usize) -> Option<usize> {
        let step = taxonomy_size / self.n_grasp_types;
        (id.is_multiple_of(step) && id / step < self.n_grasp_types).then_some(id / step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scripts_overlap_but_differ() {
        let c = GeneratorConfig::default();
        c.validate(36).unwrap();
        let scripts: Vec<_> = (0..5).map(|p| c.pair_script(p)).collect();
        assert_eq!(
            scripts,
            vec![
                vec![0, 1, 2],
                vec![2, 1, 3],
                vec![3, 4, 5],
                vec![5, 4, 6],
                vec![6, 7, 0]
            ]
        );
        for a in 0..c.n_actions {
            let s = c.action_script(a);
            assert!(s.iter().collect::<std::collections::BTreeSet<_>>().len() >= 2);
        }
    }

    #[test]
    fn taxonomy_mapping_round_trips() {
        let c = GeneratorConfig::default();
        for g in 0..8 {
            assert_eq!(c.grasp_from_taxonomy(c.taxonomy_id(g, 36), 36), Some(g));
        }
        assert_eq!(c.grasp_from_taxonomy(3, 36), None);
    }

    #[test]
    fn rejects_bad_configs() {
        let c = GeneratorConfig {
            frames_per_episode: 1,
            ..Default::default()
        };
        assert!(c.validate(36).is_err());
        let c = GeneratorConfig {
            n_grasp_types: 40,
            ..Default::default()
        };
        assert!(c.validate(36).is_err());
        let c = GeneratorConfig {
            n_grasp_types: 2,
            ..Default::default()
        };
        assert!(c.validate(36).is_err());
    }
}
