//! Length-optimal finishing tool paths on triangulated freeform surfaces.
//!
//! Tool paths are represented implicitly as iso-level curves of a scalar
//! field φ on the surface. A target vector field is built from preferred
//! feed directions (rotated by 90° about the normal) and a magnitude that
//! encodes the scallop-height constraint, φ is fitted to it in the
//! least-squares sense by solving a Poisson problem, and level values are
//! scheduled so that adjacent iso-curves leave at most the requested scallop.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`], [`curvature`], [`surfaces`], [`io`]: triangle meshes, shape
//!   operators and analytic test geometry.
//! - [`diff_ops`]: cotan Laplacian, divergence and face gradients.
//! - [`feed_field`]: cutter geometry, preferred directions, orientation,
//!   transport and smoothing.
//! - [`segmentation`]: similarity graph, Laplacian eigenmap, 1D k-means.
//! - [`solver`]: target field, Poisson solve and the constrained variants.
//! - [`paths`]: level scheduling and marching-triangle extraction.
//! - [`oracle`]: independent scallop, alignment, length and coverage checks.
//! - [`pipeline`]: job configuration, staged runs and artifact files.

pub mod curvature;
pub mod diff_ops;
mod error;
pub mod export;
pub mod feed_field;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod oracle;
pub mod par;
pub mod paths;
pub mod pipeline;
pub mod segmentation;
pub mod solver;
pub mod surfaces;

pub use error::{Error, Result};
pub use mesh::{SurfacePoint, TriMesh, Vec3};
