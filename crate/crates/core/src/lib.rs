//! Hole filling of missing low-frequency diffraction data.

pub mod error;
pub mod fft;
pub mod harness;
pub mod lattice;
pub mod recovery;
pub mod conditioning;
pub mod noise;
pub mod phantom;
pub mod retrieval;
pub mod spectral;

pub use error::{Error, Result};
