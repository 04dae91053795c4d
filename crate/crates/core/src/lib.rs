//! Numerical kernels for scaling limits of regular Ξ-coalescents.
//!
//! Everything here is `no_std` with `alloc`; file formats, threading and the
//! command line live in the `coalesce-scale` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod distance;
pub mod engine;
pub mod error;
pub mod limit;
pub mod measure;
pub mod quad;
pub mod rate;
pub mod scaling;
pub mod sim;
pub mod simplex;
pub mod special;
pub mod urn;

pub use error::{Error, Result};
