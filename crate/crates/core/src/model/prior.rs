use std::sync::Arc;

use super::layout::{LatentBlock, LatentLayout};
use super::spec::{GammaPrior, Hyperparameters, ModelSpec, RandomBlock};
use crate::error::{Error, Result};
use crate::gmrf::{log_det_gram, CholeskyFactor, Constraints, Kriging, SparseSymmetric};
use crate::graph::{AdjacencyGraph, StructureMatrix};

/// Prior of one random-effect block: `x_b ~ N(0, (τ_b F_b)⁻)` on `C_b x_b = 0`.
#[derive(Debug, Clone)]
pub struct BlockPrior {
    pub block: RandomBlock,
    pub offset: usize,
    pub structure: StructureMatrix,
    /// Constraints on the block alone, indexed from zero.
    pub constraints: Constraints,
    pub hyperprior: GammaPrior,
    /// `n_b − k_b`: dimension of the constrained subspace.
    pub rank: usize,
    /// `log det(V_bᵀ F_b V_b)` for an orthonormal basis `V_b` of `null(C_b)`.
    pub log_det_structure: f64,
}

impl BlockPrior {
    pub fn len(&self) -> usize {
        self.structure.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Everything in `Q(θ)` and `C` that does not depend on θ.
#[derive(Debug, Clone)]
pub struct PriorStructure {
    layout: LatentLayout,
    fixed_precision: f64,
    blocks: Vec<BlockPrior>,
    constraints: Arc<Constraints>,
}

/// `Q(θ)` together with the constraints and `log det(VᵀQV)`.
#[derive(Debug, Clone)]
pub struct ConstrainedPrecision {
    pub q: SparseSymmetric,
    pub constraints: Arc<Constraints>,
    pub log_det: f64,
}

impl PriorStructure {
    pub fn new(spec: &ModelSpec, layout: &LatentLayout, graph: &AdjacencyGraph) -> Result<Self> {
        spec.validate()?;
        let (n, t_len) = (layout.n_areas(), layout.n_times());
        if graph.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: graph.len(),
            });
        }
        let spatial_main = spec.blocks.spatial_structured || spec.blocks.spatial_iid;
        let temporal_main = spec.blocks.temporal_rw1 || spec.blocks.temporal_iid;

        let mut blocks = Vec::new();
        let mut all = Constraints::none(layout.len());
        for block in spec.active_blocks() {
            let range = layout
                .range(LatentBlock::Random(block))
                .expect("layout built from the same spec");
            let (structure, local) = match block {
                RandomBlock::SpatialStructured => {
                    let mut c = Constraints::none(n);
                    for comp in graph.connected_components() {
                        c.push(Constraints::sum_to_zero(comp));
                    }
                    (StructureMatrix::icar(graph), c)
                }
                RandomBlock::SpatialIid => (StructureMatrix::identity(n), sum_all(n)),
                RandomBlock::TemporalRw1 => (StructureMatrix::rw1(t_len)?, sum_all(t_len)),
                RandomBlock::TemporalIid => (StructureMatrix::identity(t_len), sum_all(t_len)),
                RandomBlock::Interaction => (
                    StructureMatrix::identity(n * t_len),
                    interaction_constraints(n, t_len, spatial_main, temporal_main),
                ),
            };
            let log_det_structure = constrained_log_det(structure.matrix(), &local)?;
            all.extend_shifted(&local, range.start);
            blocks.push(BlockPrior {
                block,
                offset: range.start,
                rank: structure.dim() - local.count(),
                structure,
                constraints: local,
                hyperprior: spec.hyperprior(block),
                log_det_structure,
            });
        }
        // Rejects linearly dependent constraint sets early.
        log_det_gram(&all)?;
        Ok(Self {
            layout: layout.clone(),
            fixed_precision: spec.fixed_precision,
            blocks,
            constraints: Arc::new(all),
        })
    }

    pub fn layout(&self) -> &LatentLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    pub fn fixed_precision(&self) -> f64 {
        self.fixed_precision
    }

    pub fn blocks(&self) -> &[BlockPrior] {
        &self.blocks
    }

    pub fn active_blocks(&self) -> Vec<RandomBlock> {
        self.blocks.iter().map(|b| b.block).collect()
    }

    pub fn constraints(&self) -> &Arc<Constraints> {
        &self.constraints
    }

    fn check(&self, theta: &Hyperparameters) -> Result<()> {
        if theta.blocks() != self.active_blocks().as_slice() {
            return Err(Error::InvalidInput(format!(
                "hyperparameters {:?} do not match active blocks {:?}",
                theta.blocks(),
                self.active_blocks()
            )));
        }
        Ok(())
    }

    /// Lower-triangle triplets of `Q(θ)`; the pattern does not depend on θ.
    pub fn precision_triplets(&self, theta: &Hyperparameters, out: &mut Vec<(usize, usize, f64)>) -> Result<()> {
        self.check(theta)?;
        for j in self.layout.fixed_indices() {
            out.push((j, j, self.fixed_precision));
        }
        for (b, &z) in self.blocks.iter().zip(theta.log_precisions()) {
            let tau = z.exp();
            for (r, c, v) in b.structure.matrix().lower_triplets() {
                out.push((r + b.offset, c + b.offset, tau * v));
            }
        }
        Ok(())
    }

    pub fn precision(&self, theta: &Hyperparameters) -> Result<SparseSymmetric> {
        let mut t = Vec::new();
        self.precision_triplets(theta, &mut t)?;
        SparseSymmetric::from_triplets(self.dim(), t)
    }

    /// `log det(VᵀQ(θ)V)` with `V` an orthonormal basis of the constraint null space.
    pub fn log_det(&self, theta: &Hyperparameters) -> Result<f64> {
        self.check(theta)?;
        let fixed = self.layout.fixed_indices().len() as f64 * self.fixed_precision.ln();
        let random: f64 = self
            .blocks
            .iter()
            .zip(theta.log_precisions())
            .map(|(b, &z)| b.rank as f64 * z + b.log_det_structure)
            .sum();
        Ok(fixed + random)
    }

    /// Sum of the log hyperprior densities on `z = log τ`.
    pub fn log_hyperprior(&self, theta: &Hyperparameters) -> Result<f64> {
        self.check(theta)?;
        Ok(self
            .blocks
            .iter()
            .zip(theta.log_precisions())
            .map(|(b, &z)| b.hyperprior.log_density_log_scale(z))
            .sum())
    }

    pub fn constrained_precision(&self, theta: &Hyperparameters) -> Result<ConstrainedPrecision> {
        Ok(ConstrainedPrecision {
            q: self.precision(theta)?,
            constraints: Arc::clone(&self.constraints),
            log_det: self.log_det(theta)?,
        })
    }
}

/// `Q(θ)`, constraints and generalized log-determinant for a model.
pub fn prior_precision(
    spec: &ModelSpec,
    theta: &Hyperparameters,
    graph: &AdjacencyGraph,
    n_times: usize,
    n_covariates: usize,
) -> Result<ConstrainedPrecision> {
    let layout = LatentLayout::new(spec, graph.len(), n_times, n_covariates)?;
    PriorStructure::new(spec, &layout, graph)?.constrained_precision(theta)
}

fn sum_all(n: usize) -> Constraints {
    let mut c = Constraints::none(n);
    c.push(Constraints::sum_to_zero(0..n));
    c
}

/// Row sums per area when a spatial main effect is present, column sums per time
/// when a temporal one is (the last column is implied by the rows), otherwise a
/// single total.
fn interaction_constraints(n: usize, t_len: usize, spatial: bool, temporal: bool) -> Constraints {
    let mut c = Constraints::none(n * t_len);
    if spatial {
        for i in 0..n {
            c.push(Constraints::sum_to_zero((0..t_len).map(|t| i * t_len + t)));
        }
    }
    if temporal {
        let cols = if spatial { t_len - 1 } else { t_len };
        for t in 0..cols {
            c.push(Constraints::sum_to_zero((0..n).map(|i| i * t_len + t)));
        }
    }
    if !spatial && !temporal {
        c.push(Constraints::sum_to_zero(0..n * t_len));
    }
    c
}

/// `log det(VᵀFV)` through `log det(F + CᵀC) + log det(C(F + CᵀC)⁻¹Cᵀ) − log det(CCᵀ)`.
pub(crate) fn constrained_log_det(f: &SparseSymmetric, c: &Constraints) -> Result<f64> {
    let mut t: Vec<_> = f.lower_triplets().collect();
    t.extend(c.gram_transpose_triplets());
    let h = SparseSymmetric::from_triplets(f.dim(), t)?;
    let factor = CholeskyFactor::factorize(&h)?;
    let kriging = Kriging::new(&factor, Arc::new(c.clone()))?;
    Ok(factor.log_det() + kriging.log_det_schur() - log_det_gram(c)?)
}
