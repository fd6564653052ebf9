//! Training, inference and evaluation tooling for the surface-defect
//! saliency network. The binary in this package wires these modules to a
//! command line; they are exposed as a library so integration tests can
//! drive the same code paths directly.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod infer;
pub mod inspect;
pub mod pngio;
pub mod trainer;
