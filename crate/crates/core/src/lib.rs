//! Sharp interior-penalty parameters and explicit time-step bounds for the
//! symmetric interior penalty discontinuous Galerkin (SIPDG) discretization
//! of linear wave equations with tensor coefficients.

pub mod assembly;
pub mod error;
pub mod fourier;
pub mod linalg;
pub mod mesh;
pub mod refelem;
pub mod stability;
pub mod tables;
pub mod tensors;
pub mod timeloop;

pub use error::{Error, Result};
