pub mod cli;
pub mod engine;
pub mod error;
pub mod kernel;
pub mod machine;
pub mod matrix;
pub mod microkernel;
pub mod perf;
pub mod tuner;

pub use error::{Error, Result};
