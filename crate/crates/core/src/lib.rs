//! Multi-view edit propagation.
//!
//! A small set of key views is edited with a pluggable 2D editor; the edits
//! are carried to every other view through depth-guided reprojection and
//! then cleaned up with an averaged two-pass refinement. The crate is split
//! along those stages:
//!
//! - [`scene`]: cameras, images, depth, dataset I/O and analytic test scenes;
//! - [`geometry`]: unprojection, projection and filtered correspondences;
//! - [`propagation`]: key-view selection and write-once mixup;
//! - [`editing`]: the editor abstraction, mock editors and refinement passes;
//! - [`metrics`]: direction/consistency scores and photometric consistency;
//! - [`pipeline`]: end-to-end orchestration, ledger and checkpoints.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod scene;
pub mod editing;
pub mod propagation;
pub mod metrics;
pub mod pipeline;

mod process;
mod seed;

pub use process::ProcessError;
