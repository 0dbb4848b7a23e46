use std::sync::{Arc, OnceLock};

use super::likelihood::Likelihood;
use crate::error::{Error, Result};
use crate::gmrf::{log_det_gram, Constraints, NullSpaceProjector, SparseSymmetric, SymbolicCholesky, TripletAssembly};
use crate::model::{
    expected_counts, standardize_covariates, Hyperparameters, LatentBlock, LatentLayout, ModelSpec, ObservationMap,
    PanelData, PriorStructure, RandomBlock, Scaling,
};

/// Panel-side information kept for reporting.
#[derive(Debug, Clone)]
pub struct ModelContext {
    /// Panel restricted to the model covariates, standardized if requested.
    pub panel: PanelData,
    pub expected: Vec<f64>,
    pub scalings: Vec<Scaling>,
    pub covariates: Vec<String>,
    /// Observation map over every cell, missing ones included.
    pub prediction: ObservationMap,
}

/// Cached triplet patterns of the matrices built during Newton iterations.
#[derive(Debug, Clone, Copy)]
pub(crate) enum AssemblySlot {
    Prior = 0,
    Newton = 1,
    Posterior = 2,
}

/// Prior, observation map and data of a latent Gaussian model.
#[derive(Debug)]
pub struct LatentModel {
    prior: PriorStructure,
    map: ObservationMap,
    y: Vec<f64>,
    likelihood: Likelihood,
    constant: f64,
    log_det_gram: f64,
    projector: NullSpaceProjector,
    symbolic: OnceLock<Arc<SymbolicCholesky>>,
    assemblies: [OnceLock<TripletAssembly>; 3],
    context: Option<ModelContext>,
}

impl LatentModel {
    /// Poisson model for a panel under `spec`.
    pub fn new(spec: &ModelSpec, panel: &PanelData) -> Result<Self> {
        spec.validate()?;
        panel.validate()?;
        let expected = expected_counts(panel, spec.expected)?;
        let mut restricted = panel.clone();
        restricted.covariates = spec
            .covariates
            .iter()
            .map(|name| {
                panel
                    .covariate(name)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("covariate `{name}` not found in panel")))
            })
            .collect::<Result<_>>()?;
        let (restricted, scalings) = if spec.standardize && !restricted.covariates.is_empty() {
            standardize_covariates(&restricted)?
        } else {
            (restricted, Vec::new())
        };
        let layout = LatentLayout::new(spec, panel.n_areas(), panel.n_times(), spec.covariates.len())?;
        let prior = PriorStructure::new(spec, &layout, &panel.graph)?;
        let map = ObservationMap::observed(&restricted, &layout, &spec.covariates, &expected)?;
        let prediction = ObservationMap::all_cells(&restricted, &layout, &spec.covariates, &expected)?;
        let y = map
            .cells()
            .iter()
            .map(|&c| restricted.counts[c].expect("observed cell") as f64)
            .collect();
        let mut model = Self::from_parts(prior, map, y, Likelihood::Poisson)?;
        model.context = Some(ModelContext {
            panel: restricted,
            expected,
            scalings,
            covariates: spec.covariates.clone(),
            prediction,
        });
        Ok(model)
    }

    pub fn from_parts(prior: PriorStructure, map: ObservationMap, y: Vec<f64>, likelihood: Likelihood) -> Result<Self> {
        if map.dim() != prior.dim() {
            return Err(Error::DimensionMismatch {
                expected: prior.dim(),
                found: map.dim(),
            });
        }
        if y.len() != map.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: map.n_rows(),
                found: y.len(),
            });
        }
        likelihood.validate(&y)?;
        let constant = y.iter().map(|&v| likelihood.constant(v)).sum();
        let log_det_gram = log_det_gram(prior.constraints())?;
        let projector = NullSpaceProjector::new(Arc::clone(prior.constraints()))?;
        Ok(Self {
            prior,
            map,
            y,
            likelihood,
            constant,
            log_det_gram,
            projector,
            symbolic: OnceLock::new(),
            assemblies: Default::default(),
            context: None,
        })
    }

    /// Same model with the observations and likelihood replaced.
    pub fn with_observations(self, y: Vec<f64>, likelihood: Likelihood) -> Result<Self> {
        let context = self.context;
        let mut model = Self::from_parts(self.prior, self.map, y, likelihood)?;
        model.context = context;
        Ok(model)
    }

    pub fn prior(&self) -> &PriorStructure {
        &self.prior
    }

    pub fn layout(&self) -> &LatentLayout {
        self.prior.layout()
    }

    pub fn map(&self) -> &ObservationMap {
        &self.map
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn constraints(&self) -> &Arc<Constraints> {
        self.prior.constraints()
    }

    pub fn context(&self) -> Option<&ModelContext> {
        self.context.as_ref()
    }

    pub fn blocks(&self) -> Vec<RandomBlock> {
        self.prior.active_blocks()
    }

    pub(crate) fn log_det_gram(&self) -> f64 {
        self.log_det_gram
    }

    pub(crate) fn projector(&self) -> &NullSpaceProjector {
        &self.projector
    }

    pub(crate) fn symbolic(&self) -> Option<Arc<SymbolicCholesky>> {
        self.symbolic.get().cloned()
    }

    pub(crate) fn store_symbolic(&self, s: &Arc<SymbolicCholesky>) {
        let _ = self.symbolic.set(Arc::clone(s));
    }

    /// Sparse matrix from triplets, reusing the sorted pattern cached in `slot`.
    pub(crate) fn assemble(&self, slot: AssemblySlot, triplets: &[(usize, usize, f64)]) -> Result<SparseSymmetric> {
        let cell = &self.assemblies[slot as usize];
        if let Some(a) = cell.get() {
            return a.assemble(triplets);
        }
        let a = TripletAssembly::new(self.dim(), triplets)?;
        let out = a.assemble(triplets);
        let _ = cell.set(a);
        out
    }

    /// Log-likelihood at linear predictor `eta`, constants included.
    pub fn log_likelihood(&self, eta: &[f64]) -> f64 {
        self.constant
            + self
                .y
                .iter()
                .zip(eta)
                .map(|(&y, &e)| self.likelihood.kernel(y, e))
                .sum::<f64>()
    }

    /// Hyperparameters with every active precision set to `precision`.
    pub fn uniform_hyperparameters(&self, precision: f64) -> Result<Hyperparameters> {
        Hyperparameters::uniform(&self.blocks(), precision)
    }

    /// Display name of every latent coordinate.
    pub fn coordinate_names(&self) -> Vec<String> {
        let layout = self.layout();
        let ctx = self.context.as_ref();
        let area = |i: usize| ctx.map_or_else(|| i.to_string(), |c| c.panel.graph.areas()[i].clone());
        let year = |t: usize| ctx.map_or_else(|| t.to_string(), |c| c.panel.years[t].to_string());
        let t_len = layout.n_times();
        let mut names = Vec::with_capacity(layout.len());
        for b in layout.blocks() {
            for k in 0..b.len {
                let name = match b.kind {
                    LatentBlock::Intercept => "(Intercept)".to_string(),
                    LatentBlock::Covariates => ctx.map_or_else(|| format!("beta[{k}]"), |c| c.covariates[k].clone()),
                    LatentBlock::TimeTrend => "time_trend".to_string(),
                    LatentBlock::Random(RandomBlock::SpatialStructured) => format!("spatial[{}]", area(k)),
                    LatentBlock::Random(RandomBlock::SpatialIid) => format!("spatial.iid[{}]", area(k)),
                    LatentBlock::Random(RandomBlock::TemporalRw1) => format!("year[{}]", year(k)),
                    LatentBlock::Random(RandomBlock::TemporalIid) => format!("year.iid[{}]", year(k)),
                    LatentBlock::Random(RandomBlock::Interaction) => {
                        format!("area.year[{}:{}]", area(k / t_len), year(k % t_len))
                    }
                };
                names.push(name);
            }
        }
        names
    }

    /// Names of the fixed-effect coordinates, in layout order.
    pub fn fixed_names(&self) -> Vec<String> {
        let names = self.coordinate_names();
        self.layout().fixed_indices().into_iter().map(|j| names[j].clone()).collect()
    }
}
