//! File formats, run directories and the command-line driver around
//! [`facetrec_core`].

mod binary;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
mod error;
pub mod report;
pub mod run;

pub use binary::hex;
pub use error::{FormatError, FormatResult};
pub use facetrec_core as core;
