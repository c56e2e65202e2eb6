//! Minimal dense/convolutional network toolkit with hand-written backward
//! passes.

mod adam;
pub mod checkpoint;
pub mod conv;
mod mlp;
mod params;
mod scalar;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CheckpointBlock};
pub use mlp::{Mlp, MlpTrace};
pub use params::{Block, Grads, Params};
pub use scalar::{gemm, Layout, Scalar};
