//! Bayesian disease mapping for spatio-temporal areal counts.
//!
//! Counts `y_it ~ Poisson(E_it ρ_it)` with a log-linear relative risk built from an
//! intercept, covariates, structured (ICAR) and unstructured spatial effects,
//! a first-order random walk and an iid temporal effect, and an iid space-time
//! interaction. Fitting uses a nested Laplace approximation over a hyperparameter
//! grid; an MCMC sampler is provided as an independent check, and WAIC scores fits.

pub mod diagnostics;
pub mod error;
pub mod gmrf;
pub mod graph;
pub mod inference;
pub mod io;
pub mod model;
pub mod pipeline;

pub use error::{Error, Result};
pub use graph::{AdjacencyGraph, StructureMatrix};
pub use model::{Hyperparameters, LatentLayout, ModelSpec, PanelData, RandomBlock};
