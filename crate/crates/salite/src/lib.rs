//! File formats, training driver, evaluation and command line for the SaLite
//! saliency network. The model, losses and metrics live in `salite-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod manifest;
pub mod pnm;
pub mod synth;
pub mod train;

pub use error::{AppError, Result};
