//! Low-rank MultiNomial Logit estimation from ordinal data.
//!
//! Users reveal k-wise rankings over item multisets (the collab setting),
//! or single purchases from a grid of item pairs (the bundled setting). The
//! preference matrix is estimated by nuclear-norm regularized maximum
//! likelihood, solved with proximal gradient descent.

pub mod densemat;
pub mod error;
pub mod harness;
pub mod likelihood;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod solver;
pub mod theory;

pub use densemat::{Matrix, NormKind};
pub use error::{Error, Result};
pub use likelihood::{BundledDataset, CollabDataset, Dataset};
pub use model::{PreferenceMatrix, Setting};
pub use sampler::{BundledObservation, RankingObservation};
pub use solver::{LambdaMode, SolverConfig, SolverResult, StepSize};

