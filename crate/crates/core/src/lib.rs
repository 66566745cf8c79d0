pub mod channels;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod nn;
pub mod ot;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tagging;
pub mod train;

pub use error::{Error, ErrorCategory, Result};
