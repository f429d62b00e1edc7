pub mod binning;
pub mod dataio;
pub mod device;
pub mod error;
pub mod harness;
pub mod math;
pub mod metrics;
pub mod mnist;
pub mod nn;
pub mod optimizer;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
