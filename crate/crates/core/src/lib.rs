//! Egocentric hand-action recognition at desk scale.
//!
//! The crate is organized bottom-up:
//!
//! - [`mesh`]: triangle meshes, 1-ring adjacency, and the four discrete
//!   curvature fields (mean, Gaussian, maximum, minimum).
//! - [`taxonomy`]: grasp-type taxonomy, transition annotations, and label
//!   statistics.
//! - [`nn`]: a small reverse-mode tensor stack with exact backward passes,
//!   GRU cells, optimizers, checkpoints, and a finite-difference checker.
//! - [`detection`]: manifest-driven stand-in for the hand/object detector,
//!   patch cropping, and the global scene feature.
//! - [`pipeline`]: the frame-embedding generator, its losses, and the staged
//!   training driver.
//! - [`temporal`]: bidirectional GRU sequence classifier over frame embeddings.
//! - [`synth`]: deterministic corpus generator with known labels and curvature.
//! - [`harness`]: the operations behind each CLI subcommand.

pub mod config;
pub mod detection;
pub mod harness;
pub mod image;
pub mod manifest;
pub mod mesh;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod taxonomy;
pub mod temporal;

pub use mesh::{CurvatureField, CurvatureKind, TriangleMesh, VertexAdjacency};
pub use nn::{ParamStore, Tensor};
pub use taxonomy::{GraspType, Taxonomy};

/// Tool version recorded in every run directory.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
