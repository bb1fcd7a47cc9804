pub mod controllers;
pub mod dqn;
pub mod encoder;
pub mod env;
pub mod error;
pub mod harness;
pub mod reward;
pub mod signal;
pub mod sim;

pub use error::{Error, Result};
