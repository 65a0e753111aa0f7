pub mod cli;
pub mod continual;
pub mod data;
pub mod error;
pub mod fsio;
pub mod losses;
pub mod model;
pub mod numerics;

pub use error::{CignError, Result};
