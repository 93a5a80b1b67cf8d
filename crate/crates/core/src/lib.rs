pub mod cnn;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod init;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod vit;

pub use error::{Error, Result};
