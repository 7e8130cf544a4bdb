//! Factor-resolved variational graph recommender.
//!
//! Users, items and knowledge entities form a three-level graph. Every item
//! and entity is softly assigned to latent factors, information is propagated
//! upward per factor and per source type, and the resulting segment
//! distributions are trained as a variational autoencoder. Because each
//! segment only carries information from one factor of one source type, a
//! recommendation can be traced back to the historical items and entities
//! that produced it.
//!
//! This crate is `no_std` (with `alloc`). File formats, reports and the
//! command-line driver live in the companion `facetrec` crate.

#![no_std]
#![warn(rust_2018_idioms, unused_qualifications)]

extern crate alloc;

pub mod decoder;
pub mod encoder;
mod error;
pub mod eval;
pub mod explain;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{HeteroGraph, IdMap, NodeKind, NodeRef};
pub use model::{FactorConfig, Model, ModelParams};
pub use numerics::{Real, SeededRng, Tensor};
