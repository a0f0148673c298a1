pub mod adaptation;
pub mod autodiff;
pub mod concepts;
pub mod diffusion;
pub mod erasure;
pub mod error;
pub mod harness;
pub mod imma;
pub mod metrics;

pub use error::{Error, Result};
