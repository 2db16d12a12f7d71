//! Reverse-mode automatic differentiation, dense networks and Adam.

mod mlp;
mod params;
mod tape;

pub use mlp::{Activation, Mlp, MlpSpec};
pub use params::{adam_step, AdamConfig, Param, ParamRecord, ParamStore};
pub use tape::{logsumexp, sigmoid, softplus, Gradients, Matrix, Tape, Var, SOFTPLUS_LINEAR_ABOVE};
