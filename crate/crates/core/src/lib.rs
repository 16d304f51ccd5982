//! Traffic forecasting with region-aware graph convolutions inside a
//! recurrent encoder–decoder.
//!
//! The crate covers graph construction (road, distance and latent graphs),
//! region division, the DMGCN layer, the recurrent model, a small
//! reverse-mode autodiff engine, data handling and evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod config;
pub mod data;
pub mod dmgcn;
pub mod error;
pub mod exec;
pub mod forecast;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod params;
pub mod region;
pub mod schedule;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use exec::Execution;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
