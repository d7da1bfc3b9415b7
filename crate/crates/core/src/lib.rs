pub mod corpus;
pub mod decoder;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod generate;
pub mod kbembed;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod numdiff;
pub mod objective;
pub mod trainer;

pub use error::{Error, Result};
