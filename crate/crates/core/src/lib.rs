pub mod artifact;
pub mod benchmarks;
pub mod cli;
pub mod control;
pub mod distributions;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod rng;
pub mod sdp;
pub mod synthesis;

pub use error::{Error, Result};
