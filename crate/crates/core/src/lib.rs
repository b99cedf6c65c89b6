pub mod bench;
pub mod config;
pub mod crosscov;
pub mod error;
pub mod estimate;
pub mod infer;
pub mod io;
pub mod process;
pub mod simulate;
pub mod tree;

pub use error::{Error, Result};
