//! Floquet random quantum circuits, CUE ensembles and eigenstate correlation
//! statistics, checked against closed-form random-matrix predictions.

pub mod eigencorr;
pub mod error;
pub mod eth;
pub mod haar;
pub mod harness;
pub mod io;
pub mod lattice;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};

/// Dense complex matrix used throughout.
pub type CMatrix = nalgebra::DMatrix<num_complex::Complex64>;
