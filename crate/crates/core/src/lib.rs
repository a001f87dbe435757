pub mod config;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod he;
pub mod matmul;
pub mod matrix;
pub mod model;
pub mod protocols;
pub mod shapley;
pub mod sharing;

pub use error::{Error, Result};
