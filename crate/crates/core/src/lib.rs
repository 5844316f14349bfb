pub mod data;
pub mod embedding;
pub mod eval;
pub mod gnm;
pub mod linalg;
pub mod nn;
pub mod objectives;
pub mod pipeline;
pub mod rng;
pub mod structure;
pub mod synth;
pub mod tensor;
pub mod trainer;

mod error;

pub use error::{Error, Result};
