//! Fitting engines: Laplace approximation of the latent field, a hyperparameter
//! grid with mixture marginals and joint sampling, and an MCMC oracle.

mod grid;
mod laplace;
mod latent;
mod likelihood;
mod mcmc;
mod posterior;

pub use grid::{explore_hyperparameters, GridConfig, GridPoint, HyperGrid};
pub use laplace::{gaussian_approx, laplace_log_posterior, log_hyper_posterior, GaussianApprox, NewtonConfig};
pub use latent::{LatentModel, ModelContext};
pub use likelihood::Likelihood;
pub use mcmc::{mcmc_oracle, McmcConfig, McmcRun};
pub use posterior::{latent_summaries, sample_joint, LatentMarginals, LatentSummary, PosteriorDraws};

#[cfg(test)]
pub(crate) fn grid_tests_model() -> LatentModel {
    use crate::graph::AdjacencyGraph;
    use crate::model::{BlockSet, LatentLayout, ModelSpec, ObservationMap, PanelData, PriorStructure};

    let spec = ModelSpec {
        blocks: BlockSet {
            spatial_iid: true,
            ..BlockSet::none()
        },
        ..ModelSpec::default()
    };
    let n = 30;
    let g = AdjacencyGraph::path(n);
    let layout = LatentLayout::new(&spec, n, 1, 0).unwrap();
    let prior = PriorStructure::new(&spec, &layout, &g).unwrap();
    let panel = PanelData::new(g, vec![1], vec![Some(1); n], vec![1.0; n], None, vec![]).unwrap();
    let map = ObservationMap::observed(&panel, &layout, &[], &vec![1.0; n]).unwrap();
    let y: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3).collect();
    LatentModel::from_parts(prior, map, y, Likelihood::Gaussian { variance: 0.2 }).unwrap()
}
