use std::sync::Arc;

use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::latent::{AssemblySlot, LatentModel};
use crate::error::{Error, Result};
use crate::gmrf::{
    draw_constrained, marginal_variances_with, CholeskyFactor, Constraints, Kriging, Ordering, SparseSymmetric,
    SymbolicCholesky,
};
use crate::model::Hyperparameters;

/// Newton iteration controls for the inner Gaussian approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    pub max_iterations: usize,
    /// Projected-gradient tolerance, relative to `1 + ‖x‖`.
    pub tolerance: f64,
    pub max_halvings: usize,
    /// Consecutive gradient-norm increases treated as divergence.
    pub divergence_steps: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-8,
            max_halvings: 20,
            divergence_steps: 5,
        }
    }
}

/// Gaussian approximation of `x | θ, y` around the constrained mode.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub theta: Hyperparameters,
    pub mode: Vec<f64>,
    /// `Q(θ) + AᵀWA` at the mode.
    pub precision: SparseSymmetric,
    pub constraints: Arc<Constraints>,
    pub converged: bool,
    pub iterations: usize,
    /// `log π(y | x*)`, constants included.
    pub log_likelihood: f64,
    /// `x*ᵀ Q(θ) x*`.
    pub prior_quadratic: f64,
    /// Projected gradient norm at the mode.
    pub gradient_norm: f64,
    factor: CholeskyFactor,
    kriging: Kriging,
    log_det_gram: f64,
}

impl GaussianApprox {
    /// Factor of `Q* + CᵀC`, which agrees with `Q*` on the constraint subspace.
    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn kriging(&self) -> &Kriging {
        &self.kriging
    }

    /// `log det(VᵀQ*V)` over an orthonormal basis of the constraint null space.
    pub fn log_det_constrained(&self) -> f64 {
        self.factor.log_det() + self.kriging.log_det_schur() - self.log_det_gram
    }

    /// Marginal variances under the constrained Gaussian.
    pub fn marginal_variances(&self) -> Vec<f64> {
        marginal_variances_with(&self.factor, &self.kriging)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        draw_constrained(&self.factor, &self.kriging, &self.mode, rng)
    }

    /// Constrained draw with the same covariance centred at `mean`.
    pub fn sample_at<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        draw_constrained(&self.factor, &self.kriging, mean, rng)
    }

    /// First-order skewness correction of the mean, `½ Σ Aᵀ(ℓ‴ ⊙ diag(AΣAᵀ))`.
    ///
    /// `Σ` is the constrained covariance, so the shift respects the constraints.
    /// It vanishes for a Gaussian likelihood.
    pub fn mean_correction(&self, model: &LatentModel) -> Result<Vec<f64>> {
        let map = model.map();
        let lik = model.likelihood();
        let eta = map.eta(&self.mode);
        let dim = self.mode.len();
        let mut weights = Vec::with_capacity(eta.len());
        for (row, &e) in map.rows().iter().zip(&eta) {
            let third = lik.third_derivative(e);
            if third == 0.0 {
                weights.push(0.0);
                continue;
            }
            let mut a = vec![0.0; dim];
            for &(j, v) in row {
                a[j] += v;
            }
            let mut w = self.factor.solve(&a)?;
            self.kriging.correct(&mut w);
            let var: f64 = row.iter().map(|&(j, v)| v * w[j]).sum();
            weights.push(0.5 * third * var);
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Ok(vec![0.0; dim]);
        }
        let b = map.transpose_mul(&weights);
        let mut shift = self.factor.solve(&b)?;
        self.kriging.correct(&mut shift);
        Ok(shift)
    }
}

struct Evaluation {
    eta: Vec<f64>,
    objective: f64,
    log_likelihood: f64,
    quadratic: f64,
}

fn evaluate(model: &LatentModel, q: &SparseSymmetric, x: &[f64]) -> Evaluation {
    let eta = model.map().eta(x);
    let log_likelihood = model.log_likelihood(&eta);
    let quadratic = q.quad_form(x);
    let objective = log_likelihood - 0.5 * quadratic;
    Evaluation {
        eta,
        objective: if objective.is_finite() { objective } else { f64::NEG_INFINITY },
        log_likelihood,
        quadratic,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Laplace approximation at θ by constrained Newton with step halving.
///
/// `start` warm-starts the iteration; it is projected onto the constraint set first.
pub fn gaussian_approx(
    model: &LatentModel,
    theta: &Hyperparameters,
    start: Option<&[f64]>,
    config: &NewtonConfig,
) -> Result<GaussianApprox> {
    let m = model.dim();
    let prior = model.prior();
    let mut base = Vec::new();
    prior.precision_triplets(theta, &mut base)?;
    let q = model.assemble(AssemblySlot::Prior, &base)?;
    base.extend(model.constraints().gram_transpose_triplets());

    let mut x = match start {
        Some(s) if s.len() == m => model.projector().project(s),
        Some(s) => {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: s.len(),
            })
        }
        None => vec![0.0; m],
    };
    let failed = |reason: String| Error::ApproximationFailed {
        theta: theta.log_precisions().iter().map(|z| z.exp()).collect(),
        reason,
    };

    let lik = model.likelihood();
    let mut current = evaluate(model, &q, &x);
    if !current.objective.is_finite() {
        return Err(failed("log posterior is not finite at the starting point".into()));
    }
    let mut last_norm = f64::INFINITY;
    let mut growth = 0;
    let mut triplets = Vec::with_capacity(base.len() + 32 * model.map().n_rows());
    for iteration in 0..=config.max_iterations {
        let (grad_eta, weights): (Vec<f64>, Vec<f64>) = model
            .y()
            .iter()
            .zip(&current.eta)
            .map(|(&y, &e)| lik.derivatives(y, e))
            .unzip();
        let mut g = model.map().transpose_mul(&grad_eta);
        for (gi, qi) in g.iter_mut().zip(q.mul_vec(&x)) {
            *gi -= qi;
        }

        triplets.clear();
        triplets.extend_from_slice(&base);
        model.map().weighted_gram_triplets(&weights, &mut triplets);
        let h = model.assemble(AssemblySlot::Newton, &triplets)?;
        let symbolic = match model.symbolic() {
            Some(s) => s,
            None => {
                let s = Arc::new(SymbolicCholesky::analyze(&h, &Ordering::MinimumDegree)?);
                model.store_symbolic(&s);
                s
            }
        };
        let factor = CholeskyFactor::factorize_symbolic(symbolic, &h)?;
        let kriging = Kriging::new(&factor, Arc::clone(model.constraints()))?;

        let pg = model.projector().project(&g);
        let gnorm = norm(&pg);
        let tol = config.tolerance * (1.0 + norm(&x));
        let finish = |converged: bool, factor: CholeskyFactor, kriging: Kriging, cur: &Evaluation| {
            let mut precision_t: Vec<_> = q.lower_triplets().collect();
            model.map().weighted_gram_triplets(&weights, &mut precision_t);
            Ok(GaussianApprox {
                theta: theta.clone(),
                mode: x.clone(),
                precision: model.assemble(AssemblySlot::Posterior, &precision_t)?,
                constraints: Arc::clone(model.constraints()),
                converged,
                iterations: iteration,
                log_likelihood: cur.log_likelihood,
                prior_quadratic: cur.quadratic,
                gradient_norm: gnorm,
                factor,
                kriging,
                log_det_gram: model.log_det_gram(),
            })
        };
        if gnorm <= tol {
            return finish(true, factor, kriging, &current);
        }
        if iteration == config.max_iterations {
            return Err(failed(format!(
                "no convergence in {} Newton iterations (projected gradient {gnorm:.3e})",
                config.max_iterations
            )));
        }
        if gnorm > last_norm {
            growth += 1;
            if growth >= config.divergence_steps {
                return Err(failed(format!(
                    "gradient norm grew for {growth} consecutive steps (now {gnorm:.3e})"
                )));
            }
        } else {
            growth = 0;
        }
        last_norm = gnorm;

        let mut step = factor.solve(&g)?;
        kriging.correct(&mut step);
        let slack = 1e-12 * (1.0 + current.objective.abs());
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, d)| a + scale * d).collect();
            let ev = evaluate(model, &q, &trial);
            if ev.objective >= current.objective - slack {
                accepted = Some((trial, ev));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((trial, ev)) => {
                x = trial;
                current = ev;
            }
            None => {
                // No ascent left at machine precision: accept a mode whose gradient sits at the round-off floor.
                if gnorm <= 1e-5 * (1.0 + norm(&x)) {
                    debug!("Newton stopped at round-off floor, projected gradient {gnorm:.3e}");
                    return finish(true, factor, kriging, &current);
                }
                return Err(failed(format!(
                    "step halving failed after {} halvings (projected gradient {gnorm:.3e})",
                    config.max_halvings
                )));
            }
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// Laplace log posterior of θ from an approximation already computed at θ:
/// `log π(y|x*) + log π(x*|θ) + log π(θ) − log π_G(x*|θ,y)`.
pub fn laplace_log_posterior(model: &LatentModel, approx: &GaussianApprox) -> Result<f64> {
    let prior = model.prior();
    let theta = &approx.theta;
    Ok(approx.log_likelihood - 0.5 * approx.prior_quadratic + 0.5 * prior.log_det(theta)?
        - 0.5 * approx.log_det_constrained()
        + prior.log_hyperprior(theta)?)
}

/// Log of the unnormalized hyperparameter posterior at θ.
pub fn log_hyper_posterior(model: &LatentModel, theta: &Hyperparameters) -> Result<f64> {
    let approx = gaussian_approx(model, theta, None, &NewtonConfig::default())?;
    laplace_log_posterior(model, &approx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AdjacencyGraph;
    use crate::inference::Likelihood;
    use crate::model::{BlockSet, ExpectedPolicy, LatentLayout, ModelSpec, ObservationMap, PanelData, PriorStructure};

    fn scalar_model(y: f64, fixed_precision: f64) -> LatentModel {
        let spec = ModelSpec {
            blocks: BlockSet::none(),
            fixed_precision,
            expected: ExpectedPolicy::Supplied,
            ..ModelSpec::default()
        };
        let panel = PanelData::new(
            AdjacencyGraph::path(1),
            vec![2000],
            vec![Some(y as u64)],
            vec![1.0],
            Some(vec![1.0]),
            vec![],
        )
        .unwrap();
        LatentModel::new(&spec, &panel).unwrap()
    }

    fn scalar_root(y: f64, k: f64) -> f64 {
        // Scalar Newton on y − e^a − k a = 0.
        let mut a = 0.0f64;
        for _ in 0..100 {
            a -= (y - a.exp() - k * a) / (-a.exp() - k);
        }
        a
    }

    #[test]
    fn single_cell_vague_prior() {
        let model = scalar_model(3.0, 0.001);
        let theta = model.uniform_hyperparameters(1.0).unwrap();
        let a = gaussian_approx(&model, &theta, None, &NewtonConfig::default()).unwrap();
        let root = scalar_root(3.0, 0.001);
        assert!((a.mode[0] - root).abs() < 1e-10);
        assert!((a.mode[0] - 1.098).abs() < 1e-3);
        let curvature = a.precision.get(0, 0);
        assert!((curvature - (root.exp() + 0.001)).abs() < 1e-8);
    }

    #[test]
    fn single_cell_unit_prior() {
        let model = scalar_model(3.0, 1.0);
        let theta = model.uniform_hyperparameters(1.0).unwrap();
        let a = gaussian_approx(&model, &theta, None, &NewtonConfig::default()).unwrap();
        assert!((a.mode[0] - 0.7921).abs() < 1e-4);
        assert!((a.precision.get(0, 0) - 1.0 - a.mode[0].exp()).abs() < 1e-12);
        // e^α* + 0.001 at this root reproduces the quoted 2.209.
        assert!((a.mode[0].exp() + 0.001 - 2.209).abs() < 1e-3);
    }

    #[test]
    fn mean_correction_of_single_rate() {
        let model = scalar_model(50.0, 0.001);
        let theta = model.uniform_hyperparameters(1.0).unwrap();
        let a = gaussian_approx(&model, &theta, None, &NewtonConfig::default()).unwrap();
        let e = a.mode[0].exp();
        let shift = a.mean_correction(&model).unwrap()[0];
        assert!((shift + 0.5 * e / (e + 0.001).powi(2)).abs() < 1e-10);
        assert!((shift + 0.01).abs() < 1e-4);
    }

    #[test]
    fn zero_count_mode_is_negative_and_finite() {
        let model = scalar_model(0.0, 0.001);
        let theta = model.uniform_hyperparameters(1.0).unwrap();
        let a = gaussian_approx(&model, &theta, None, &NewtonConfig::default()).unwrap();
        assert!(a.mode[0] < 0.0 && a.mode[0].is_finite());
        assert!((a.mode[0] - scalar_root(0.0, 0.001)).abs() < 1e-8);
    }

    fn gaussian_model() -> LatentModel {
        let spec = ModelSpec::default();
        let g = AdjacencyGraph::lattice(2, 2);
        let layout = LatentLayout::new(&spec, 4, 3, 0).unwrap();
        let prior = PriorStructure::new(&spec, &layout, &g).unwrap();
        let panel = PanelData::new(g, vec![1, 2, 3], vec![Some(1); 12], vec![1.0; 12], None, vec![]).unwrap();
        let map = ObservationMap::observed(&panel, &layout, &[], &vec![2.0; 12]).unwrap();
        let y: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.2).collect();
        LatentModel::from_parts(prior, map, y, Likelihood::Gaussian { variance: 0.5 }).unwrap()
    }

    #[test]
    fn gaussian_hook_converges_in_one_step() {
        let model = gaussian_model();
        let theta = model.uniform_hyperparameters(2.0).unwrap();
        let a = gaussian_approx(&model, &theta, None, &NewtonConfig::default()).unwrap();
        assert!(a.converged);
        assert!(a.iterations <= 2, "{}", a.iterations);
        let cx = model.constraints().apply(&a.mode);
        assert!(cx.iter().all(|v| v.abs() < 1e-10));
        // A second solve from the mode does not move.
        let b = gaussian_approx(&model, &theta, Some(&a.mode), &NewtonConfig::default()).unwrap();
        let shift = a.mode.iter().zip(&b.mode).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(shift < 1e-12);
        assert_eq!(b.iterations, 0);
    }

    #[test]
    fn curvature_matches_finite_difference_hessian() {
        let model = scalar_model(5.0, 0.001);
        let theta = model.uniform_hyperparameters(1.0).unwrap();
        let a = gaussian_approx(&model, &theta, None, &NewtonConfig::default()).unwrap();
        let f = |v: f64| model.log_likelihood(&model.map().eta(&[v]));
        let (x, h) = (a.mode[0], 1e-4);
        let fd = -(f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
        let analytic = a.precision.get(0, 0) - 0.001;
        assert!((fd - analytic).abs() / analytic < 1e-6);
    }

    #[test]
    fn offset_shift_keeps_grid_argmax() {
        let model = gaussian_model();
        let shifted = {
            let y: Vec<f64> = model.y().iter().map(|v| v + 0.0).collect();
            let spec = ModelSpec::default();
            let g = AdjacencyGraph::lattice(2, 2);
            let layout = LatentLayout::new(&spec, 4, 3, 0).unwrap();
            let prior = PriorStructure::new(&spec, &layout, &g).unwrap();
            let panel = PanelData::new(g, vec![1, 2, 3], vec![Some(1); 12], vec![1.0; 12], None, vec![]).unwrap();
            let map = ObservationMap::observed(&panel, &layout, &[], &vec![2.0 * 1.5f64.exp(); 12]).unwrap();
            LatentModel::from_parts(prior, map, y, Likelihood::Gaussian { variance: 0.5 }).unwrap()
        };
        let grid = [0.5, 2.0, 8.0];
        let argmax = |m: &LatentModel| {
            grid.iter()
                .map(|&t| log_hyper_posterior(m, &m.uniform_hyperparameters(t).unwrap()).unwrap())
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
        };
        let (ia, va) = argmax(&model);
        let (ib, vb) = argmax(&shifted);
        assert_eq!(ia, ib);
        assert!((va - vb).abs() > 1e-6);
    }
}
