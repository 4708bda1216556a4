//! Part-boundary detection for 3D point clouds.
//!
//! The crate is organised bottom-up:
//!
//! - [`cloud`]: point clouds, exact KNN, local frames, curvature, noise.
//! - [`synthgen`]: labeled synthetic clouds from primitive scenes and labeled meshes.
//! - [`autograd`]: a small reverse-mode engine with the layers the network needs.
//! - [`net`]: the boundary network (EdgeConv / LocalEdgeConv backbone, two heads).
//! - [`trainer`]: training loop, checkpoints and threshold calibration.
//! - [`metrics`]: tolerance-based boundary metrics.
//! - [`refine`]: graph-cut label refinement and flood-fill decomposition.

pub mod autograd;
pub mod cloud;
mod error;
pub mod metrics;
pub mod net;
pub mod real;
pub mod refine;
pub mod synthgen;
pub mod textio;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;
