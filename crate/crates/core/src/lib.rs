//! Transducer alignment-lattice likelihoods for streaming sequence models.
//!
//! * [`lattice`]: the forward-variable recursion and its enumeration oracle.
//! * [`streaming`]: chunked context schedules, the deformed likelihood, and
//!   the FoCC-weighted (forward variable causal compensation) recursion.
//! * [`focce`]: the flow-based estimator that produces FoCC values.
//! * [`transducer`]: a toy chunk-causal transducer producing lattices.
//! * [`training`]: the joint objective, optimizer loop, decoding and metrics.
//!
//! Everything runs in `f64` on an explicit reverse-mode [`autodiff::Tape`].

// `!(x <= tol)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod check;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod focce;
pub mod lattice;
pub mod nn;
pub mod rng;
pub mod streaming;
pub mod training;
pub mod transducer;

pub use error::{Error, Result};
