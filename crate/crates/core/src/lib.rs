//! Point-cloud self-embedding: a dense cloud is encoded into a sparse cloud
//! that carries small learned offsets, and a second network restores the
//! dense cloud from it.
//!
//! The crate contains its own small reverse-mode autodiff engine
//! ([`autodiff`]), the network building blocks ([`netblocks`]), the embedder
//! and restorer, losses and metrics, a training loop, and file I/O.

// `!(a < b)` is used on purpose so that NaN falls through to the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod embedder;
mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod model;
pub mod netblocks;
pub mod pipeline;
pub mod restorer;
pub mod training;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use error::{Error, Result};
pub use geometry::PointCloud;
pub use model::Model;
