pub mod cli;
pub mod diffusion;
pub mod dsp;
pub mod error;
pub mod nets;
pub mod oracle;
pub mod pitch;
pub mod pipeline;

pub use error::{Error, Result};
