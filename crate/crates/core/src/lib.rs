//! Semantic voxel completion: TSDF volumes, multi-view feature fusion,
//! Hilbert serialization, selective state-space scans and the models and
//! tooling built on them.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod check;
pub mod chunk;
pub mod diff;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod hilbert;
pub mod model;
pub mod oracle;
pub mod ssm;
pub mod synth;
pub mod volume;
pub mod vxl;

pub use error::{Error, Result};
