pub mod ablate;
pub mod bench;
pub mod cli;
pub mod datasim;
pub mod dsp;
pub mod error;
pub mod extractor;
pub mod metrics;
pub mod model;
pub mod mulca;
pub mod nn;
pub mod stream;
pub mod subband;
pub mod train;

pub use error::{Error, Result};
