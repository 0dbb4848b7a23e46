use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use super::design::ObservationMap;
use super::layout::{LatentBlock, LatentLayout};
use super::panel::{Covariate, PanelData};
use super::prior::PriorStructure;
use super::spec::{Hyperparameters, ModelSpec};
use crate::error::{Error, Result};
use crate::gmrf::{draw_constrained, CholeskyFactor, Kriging, SparseSymmetric};
use crate::graph::AdjacencyGraph;

/// Largest linear predictor accepted when simulating.
pub const MAX_ETA: f64 = 30.0;

/// Generating values for a simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub intercept: f64,
    /// One coefficient per entry of `spec.covariates`.
    pub coefficients: Vec<f64>,
    /// Linear trend slope; ignored unless the trend block is on.
    #[serde(default)]
    pub trend: f64,
    pub hyperparameters: Hyperparameters,
}

/// Simulated panel with the full latent vector that generated it.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub panel: PanelData,
    pub layout: LatentLayout,
    pub latent: Vec<f64>,
    /// Linear predictor `η = log λ` per cell.
    pub eta: Vec<f64>,
}

/// Draws random effects from their constrained priors and counts from the Poisson model.
///
/// `expected` gives `E` per cell (area-major) and is stored both as exposure
/// and as the supplied expected-count column. Covariates named in `spec` must be
/// present in `covariates`.
pub fn simulate(
    spec: &ModelSpec,
    truth: &SimulationTruth,
    graph: &AdjacencyGraph,
    years: &[i32],
    expected: &[f64],
    covariates: Vec<Covariate>,
    seed: u64,
) -> Result<Simulation> {
    if truth.coefficients.len() != spec.covariates.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.covariates.len(),
            found: truth.coefficients.len(),
        });
    }
    let mut panel = PanelData::new(
        graph.clone(),
        years.to_vec(),
        vec![Some(0); graph.len() * years.len()],
        expected.to_vec(),
        Some(expected.to_vec()),
        covariates,
    )?;
    let layout = LatentLayout::new(spec, graph.len(), years.len(), spec.covariates.len())?;
    let prior = PriorStructure::new(spec, &layout, graph)?;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x = vec![0.0; layout.len()];
    x[0] = truth.intercept;
    if let Some(r) = layout.range(LatentBlock::Covariates) {
        x[r].copy_from_slice(&truth.coefficients);
    }
    if let Some(r) = layout.range(LatentBlock::TimeTrend) {
        x[r.start] = truth.trend;
    }
    let precisions = &truth.hyperparameters;
    if precisions.blocks() != prior.active_blocks().as_slice() {
        return Err(Error::InvalidInput(format!(
            "truth hyperparameters {:?} do not match active blocks {:?}",
            precisions.blocks(),
            prior.active_blocks()
        )));
    }
    for (b, &z) in prior.blocks().iter().zip(precisions.log_precisions()) {
        let tau = z.exp();
        let mut t: Vec<_> = b.structure.matrix().lower_triplets().map(|(r, c, v)| (r, c, tau * v)).collect();
        t.extend(b.constraints.gram_transpose_triplets());
        let h = SparseSymmetric::from_triplets(b.len(), t)?;
        let factor = CholeskyFactor::factorize(&h)?;
        let kriging = Kriging::new(&factor, std::sync::Arc::new(b.constraints.clone()))?;
        let draw = draw_constrained(&factor, &kriging, &vec![0.0; b.len()], &mut rng)?;
        x[b.range()].copy_from_slice(&draw);
    }

    let map = ObservationMap::all_cells(&panel, &layout, &spec.covariates, expected)?;
    let eta = map.eta(&x);
    if let Some((c, e)) = eta.iter().enumerate().find(|(_, e)| !(**e <= MAX_ETA)) {
        let (i, t) = panel.position(c);
        return Err(Error::Overflow(format!(
            "linear predictor {e:.3} above {MAX_ETA} at area {} year {}; check the scale of E and covariates",
            graph.areas()[i],
            years[t]
        )));
    }
    for (count, &e) in panel.counts.iter_mut().zip(&eta) {
        let lambda = e.exp();
        let y = if lambda > 0.0 {
            let d = Poisson::new(lambda).map_err(|err| Error::Overflow(err.to_string()))?;
            rng.sample(d) as u64
        } else {
            0
        };
        *count = Some(y);
    }
    Ok(Simulation {
        panel,
        layout,
        latent: x,
        eta,
    })
}
