//! Pose-aware adversarial domain adaptation for expression recognition,
//! built from scratch on a small reverse-mode autodiff engine.
//!
//! The crate is `no_std` (with `alloc`) and contains only computation:
//!
//! - [`tensor`]: dense tensors, a define-by-run tape, parameters, optimizers
//! - [`faces`]: procedural face-like images with known subject/pose/expression
//! - [`model`]: the eight networks (two encoders, two classifiers, two domain
//!   discriminators, two generators)
//! - [`losses`]: pose, expression, adversarial, cross and reconstruction losses
//! - [`train`]: the three-phase alternating optimizer
//! - [`grid`]: the ablation grid and its aggregation
//! - [`eval`]: accuracy, linear probes and metrics records
//! - [`gradcheck`]: finite-difference verification of every loss
//!
//! File formats, CSV output and the command line live in the `upada` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod eval;
pub mod faces;
pub mod gradcheck;
pub mod grid;
pub mod losses;
pub mod math;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
