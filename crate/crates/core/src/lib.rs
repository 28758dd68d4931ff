//! Kinship verification from face-image pairs.
//!
//! The pipeline canonicalizes each face to a 64×64 color crop, encodes every
//! channel with learned BSIF filters and/or circular LBP at several scales,
//! turns the code maps into block-histogram feature tensors, learns a
//! two-mode exponential discriminant subspace from kin / non-kin pairs and
//! scores pairs by cosine similarity in that subspace.
//!
//! [`protocol`] holds the cross-validation harness, dataset manifests and a
//! synthetic dataset generator; [`persist`] the on-disk formats.

// `!(x > y)` checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsif;
pub mod config;
pub mod error;
pub mod features;
pub mod imaging;
pub mod lbp;
pub mod linalg;
pub mod persist;
pub mod protocol;
pub mod scoring;
pub mod subspace;

pub use error::{KinError, Result};
