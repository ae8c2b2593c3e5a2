pub mod error;
pub mod experiments;
pub mod forward;
pub mod grid;
pub mod linalg;
pub mod qrm;
pub mod reconstruction;
pub mod solver;
pub mod spectral;
pub mod time_basis;

pub use error::{Error, Result};
