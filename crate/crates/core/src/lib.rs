pub mod classify;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod render;
pub mod sac;
pub mod scene;

pub use error::{Error, Result};
