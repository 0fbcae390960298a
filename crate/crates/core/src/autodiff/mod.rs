//! Tensor arithmetic, reverse-mode differentiation and the layers the
//! density network is built from.

mod graph;
mod layers;
mod params;
mod tensor;

pub use graph::{BatchStats, Gradients, Graph, Var};
pub use layers::{BatchNorm1d, Conv1d, Linear, Mode, PendingStats, BN_EPS, BN_MOMENTUM, LEAKY_SLOPE};
pub use params::{ParamId, ParamStore};
pub use tensor::{Scalar, Tensor};
