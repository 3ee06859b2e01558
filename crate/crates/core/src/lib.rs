//! Core of the SaLite saliency network.
//!
//! Everything in this crate is pure computation over in-memory buffers: a
//! tape-based reverse-mode autodiff engine over NCHW tensors, the SqueezeNet
//! encoder, the global/local attending modules, the decoder, the patch-wise
//! losses, the saliency metrics, a reproducible RNG and synthetic scene
//! generator, the optimizer and the checkpoint byte format.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. File formats, the training loop driver and the CLI live in the
//! `salite` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod encoder;
mod error;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
mod real;
pub mod rng;
pub mod synth;
pub mod tape;
mod tensor;

pub use error::{Error, Result};
pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
