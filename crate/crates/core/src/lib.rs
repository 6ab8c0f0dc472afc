//! Replica-symmetric formulas for rank-one non-symmetric matrix and order-3
//! tensor estimation.
pub mod error;
pub mod oracle;
pub mod potentials;
pub mod priors;
pub mod scalar_channel;
pub mod solvers;
pub mod suites;
pub mod variational;

pub use error::{Error, Result};
pub use potentials::{AuxPoint, AuxPotential, ModelParams, Order, OverlapPoint};
pub use priors::{Atom, Prior, PriorDescriptor, PriorKind};
pub use scalar_channel::{ChannelMoments, QuadratureConfig, ScalarChannel, ScalarEvaluation};
pub use solvers::{
    Basin, CriticalPoint, CriticalPointSet, Method, RSResult, SolverConfig, ThresholdResult,
    TransitionKind,
};
