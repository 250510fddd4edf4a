pub mod baselines;
pub mod catalog;
pub mod checkpoint;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod lm;
pub mod optim;
pub mod ptuning;
pub mod ranker;
pub mod retrieval;
pub mod transformer;

pub use error::{Error, Result};
