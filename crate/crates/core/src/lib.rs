//! Near-field super-resolution and planar near-field to far-field
//! transformation for fast antenna characterization.
//!
//! The crate covers the whole measurement workflow on synthetic antennas:
//! dipole near-field synthesis ([`fieldsynth`]), plane-wave-spectrum
//! far-field transformation ([`nf2ff`]), dataset construction ([`dataio`]),
//! training losses ([`losses`]), the encoder-decoder restoration network
//! ([`neuralnet`]), classical interpolation baselines ([`baselines`]) and
//! the evaluation studies ([`eval`]).

pub mod baselines;
pub mod bundle;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod fieldsynth;
pub mod losses;
pub mod neuralnet;
pub mod nf2ff;

pub use error::{Error, Result};
