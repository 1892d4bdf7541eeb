pub mod agan;
pub mod attacks;
pub mod autodiff;
pub mod cli;
pub mod dataio;
pub mod defense;
pub mod error;
pub mod features;
pub mod experiments;
pub mod forecaster;
pub mod metrics;
pub mod nn;

pub use error::{Error, Result};
