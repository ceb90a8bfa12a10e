//! Scale-autoregressive generative modeling of fields on unstructured mesh
//! graphs.
//!
//! A mesh is split into nested resolution scales by repeated Guillard
//! coarsening ([`hierarchy`]). Fields are then generated coarse to fine: a
//! condition encoder embeds the mesh once, an autoregressive module summarizes
//! the already generated coarser scales, and a flow-matching sampler draws the
//! next scale ([`sar`]). All three networks are Transolver stacks
//! ([`transolver`]); sampling can run in the latent space of a small graph
//! VAE ([`vae`]). [`eval`] holds the distributional metrics and [`numcore`]
//! the reverse-mode tape everything is trained with.

pub mod config;
pub mod eval;
pub mod hierarchy;
pub mod meshgraph;
pub mod numcore;
pub mod pipeline;
pub mod plot;
pub mod sar;
pub mod transolver;
pub mod vae;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Mesh(#[from] meshgraph::MeshError),
    #[error(transparent)]
    Hierarchy(#[from] hierarchy::HierarchyError),
    #[error(transparent)]
    Tensor(#[from] numcore::TensorError),
    #[error(transparent)]
    Transolver(#[from] transolver::TransolverError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("malformed file: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code for the CLI: 2 configuration or input error,
    /// 3 missing prerequisite, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingPrerequisite(_) => 3,
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 3,
            Error::Numerical(_) | Error::Tensor(_) | Error::Eval(_) => 4,
            _ => 2,
        }
    }
}
