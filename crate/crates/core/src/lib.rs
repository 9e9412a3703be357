//! Session-based next-item recommendation with weighted graph attention over
//! broadly connected session (BCS) graphs.
//!
//! The pipeline runs click logs through [`ingest`], builds item graphs in
//! [`graphs`], encodes them with the model in [`fgnn`] (built on the gradient
//! tape in [`tensor`]), optimizes it with [`train`] and scores rankings with
//! [`eval`].

pub mod config;
pub mod error;
pub mod eval;
pub mod fgnn;
pub mod graphs;
pub mod ingest;
pub mod rng;
pub mod selftest;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
