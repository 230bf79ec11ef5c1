//! Distributed compressed sensing with side information.
//!
//! The crate covers the full pipeline of a desk-scale benchmark:
//!
//! * [`model`] draws JSM-1 / JSM-3 signal ensembles,
//! * [`sensing`] builds Gaussian sensing matrices, measures and quantizes,
//! * [`solver`] recovers sparse vectors (ADMM basis pursuit denoising plus an
//!   exhaustive l0 search for tiny problems),
//! * [`recovery`] implements the joint decoders (DOI, Texas DOI) and the
//!   separate / Texas Hold 'Em / TECC baselines,
//! * [`analysis`] holds error metrics, recovery bounds and rate accounting,
//! * [`harness`] runs seeded Monte Carlo sweeps and writes CSV tables,
//! * [`acceptance`] bundles the end-to-end verification criteria.

pub mod acceptance;
pub mod analysis;
pub mod error;
pub mod harness;
pub mod model;
pub mod recovery;
pub mod rng;
pub mod sensing;
pub mod solver;

pub use error::{DcsError, Result};
