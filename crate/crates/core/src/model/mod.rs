//! Latent Gaussian model: layout, observation map, prior precision with
//! identifiability constraints, expected counts and forward simulation.

mod design;
mod layout;
mod panel;
mod prior;
mod simulate;
mod spec;

pub use design::ObservationMap;
pub use layout::{BlockRange, LatentBlock, LatentLayout};
pub use panel::{expected_counts, standardize_covariates, Covariate, PanelData, Scaling, EXPECTED_FLOOR};
pub use prior::{prior_precision, BlockPrior, ConstrainedPrecision, PriorStructure};
pub use simulate::{simulate, Simulation, SimulationTruth, MAX_ETA};
pub use spec::{
    BlockSet, ExpectedPolicy, GammaPrior, Hyperparameters, ModelSpec, RandomBlock, DEFAULT_FIXED_PRECISION,
};
