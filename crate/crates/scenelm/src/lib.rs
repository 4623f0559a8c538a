//! Structured-language scene-layout modeling.
//!
//! A desk-scale transformer decoder predicts indoor scene layouts (walls,
//! doors, windows) as token sequences conditioned on a voxelized point cloud.
//! The crate covers the full loop: synthetic scene generation, tokenization,
//! training with multi-token prediction and confidence heads, several
//! draft-and-filter decoding strategies, and geometric F1 benchmarking.
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod error;
pub mod tensor;

pub mod dsl;
pub mod scenegen;

pub mod encoder;
pub mod model;

pub mod decoding;
pub mod training;

pub mod eval;

pub mod cli;
