//! Dense numerical core: a reverse-mode tape over `f64` matrices, parameter
//! storage, Adam, a plateau learning-rate schedule and keyed RNG streams.

pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod params;
pub mod rng;
pub mod schedule;
pub mod tape;

pub use layers::{Activation, LayerNorm, Linear, Mlp};
pub use optim::Adam;
pub use params::{Init, ParamBuilder, ParamId, ParamStore};
pub use schedule::{plateau_lr, PlateauSchedule, PlateauStatus, PlateauTracker};
pub use tape::{Gradients, ParamGrads, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("backward requires a 1x1 loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("duplicate parameter name '{0}'")]
    DuplicateParam(String),
    #[error("missing parameter '{0}'")]
    MissingParam(String),
    #[error("parameter '{name}' has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("no gradient for parameter '{0}'")]
    MissingGradient(String),
}
