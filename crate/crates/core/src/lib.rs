//! Multi-source shared-latent adversarial domain adaptation.
//!
//! This crate holds the numerical core: a small reverse-mode tensor tape,
//! the encoder/generator/discriminator/classifier networks with their
//! weight-sharing registry, every training objective, the alternating
//! three-phase trainer, the synthetic multi-domain benchmark and the
//! evaluation harnesses. It is `no_std` (with `alloc`); file formats, image
//! IO and the command line live in the companion `msgan` crate.
//!
//! All randomness flows from explicit seeds through ChaCha streams and every
//! floating point routine is evaluated through `libm`, so a given
//! configuration produces bitwise-identical results on every run.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod linalg;
pub mod losses;
pub mod networks;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
