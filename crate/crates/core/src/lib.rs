pub mod bench;
pub mod cli;
pub mod criteria;
pub mod error;
pub mod geometry;
pub mod hierarchy;
pub mod optimizer;
pub mod results;
pub mod scene;
pub mod synthetic;

pub use error::{Error, Result};
