pub mod adapt;
pub mod align;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod harness;
pub mod io;
pub mod pretrain;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
