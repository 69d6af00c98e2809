pub mod attack;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod model;
pub mod solver;

pub use error::{Error, Result};
