//! Inference of latent trade costs from bilateral flow matrices.

pub mod error;
pub mod evaluation;
pub mod gravity;
pub mod ingest;
pub mod inverse;
pub mod ot;
pub mod synthetic;
pub mod uncertainty;

pub use error::{Error, ErrorClass, Result};
