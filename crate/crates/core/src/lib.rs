pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod models;
pub mod par;
pub mod pipeline;
pub mod regression;
pub mod rng;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
