//! Articulated quadruped shape modelling.
//!
//! The crate covers the whole pipeline from a segmented template to a
//! learned shape space that can be fit to images:
//!
//! - [`mesh`]: triangle meshes, Rodrigues rotations, linear blend skinning.
//! - [`optim`]: L-BFGS minimizer, Geman-McClure kernel, gradient checker.
//! - [`gloss`]: the stitched part-based model used for initial registration.
//! - [`arap`]: model-free as-rigid-as-possible refinement and coupling.
//! - [`smal`]: pose normalization, PCA shape space, model fitting and
//!   co-registration.
//! - [`imagefit`]: projection, rasterization, distance transforms and the
//!   staged keypoint/silhouette fit.
//! - [`pipeline`]: scan registration and model building drivers.
//! - [`synth`]: procedural template and ground-truth animal generator.
//! - [`config`]: the pipeline configuration file.
//! - [`verify`]: gradient checks and numerical invariants.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arap;
pub mod config;
pub mod error;
pub mod gloss;
pub mod imagefit;
pub mod linalg;
pub mod mesh;
pub mod optim;
pub mod pipeline;
pub mod smal;
pub mod synth;
pub mod verify;

pub use error::{Error, ErrorKind, Result};
pub use mesh::{KinematicTree, Mesh, PartLabeling, SkinningWeights};
pub use nalgebra::{Matrix3, Point3, Vector2, Vector3};

/// Version of this crate.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
