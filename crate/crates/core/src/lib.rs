//! Network initialization by pretraining on labeled Perlin noise.
//!
//! Noise samples are generated on a `2^n x 2^m` gradient lattice and labeled
//! by their grid exponents; a classifier trained on them supplies the
//! starting weights for a downstream task.

pub mod cli;
pub mod data;
pub mod error;
pub mod io;
pub mod nn;
pub mod perlin;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
