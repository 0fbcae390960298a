pub mod autodiff;
pub mod chain;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluator;
pub mod gradcheck;
pub mod model;
pub mod objective;
pub mod rng;
pub mod trainer;

pub use error::{DdnError, Result};
