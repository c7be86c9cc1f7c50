//! Complex-valued fractional-Fourier neural operators for grid PDE data.

pub mod autodiff;
pub mod ctensor;
pub mod error;
pub mod frft;
pub mod layers;
pub mod model;
pub mod pdedata;
pub mod train;

pub use ctensor::{ComplexTensor, GridSpec, C64};
pub use error::{Error, Result};
