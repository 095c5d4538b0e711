//! Numerical core for latent-space forward/inverse seismic modelling.
//!
//! Everything here is `no_std` + `alloc`: a small tensor engine with
//! reverse-mode autodiff, an explicit finite-difference acoustic solver,
//! procedural velocity models, the encoder/decoder/translator model family,
//! losses, the training loop and evaluation metrics. File IO and the CLI
//! live in the `gfi` crate.
#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod gft;
pub mod gradcheck;
pub mod kernels;
pub mod models;
pub mod nn;
pub mod optim;
pub mod params;
pub mod real;
pub mod tensor;
pub mod training;
pub mod wave;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use real::{DType, Real};
pub use tensor::Tensor;
