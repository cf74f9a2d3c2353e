pub mod data;
pub mod dsp;
mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod postprocess;
pub mod predict;
pub mod trainer;
mod wav;

pub use error::{Error, Result};
