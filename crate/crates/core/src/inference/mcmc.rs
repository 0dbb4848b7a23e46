//! Metropolis-within-Gibbs sampler used as an independent check on the Laplace grid.
//!
//! The chain runs on an unconstrained `x ∈ ℝᵐ` with target
//! `π(Px | y) · exp(−½‖Cx‖²)`, where `P` projects onto `null(C)`. The factor in
//! the constrained directions is a standard normal independent of everything
//! else, so `u = Px` has exactly the constrained posterior. Reported draws are `u`.

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::latent::LatentModel;
use super::posterior::PosteriorDraws;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    /// Total sweeps, burn-in included.
    pub iterations: usize,
    pub burnin: usize,
    /// Approximate number of post-burn-in draws kept.
    pub kept: usize,
    pub seed: u64,
    pub latent_step: f64,
    pub hyper_step: f64,
    /// Sweeps per adaptation batch during burn-in.
    pub batch: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            burnin: 10_000,
            kept: 2_000,
            seed: 1,
            latent_step: 0.1,
            hyper_step: 0.3,
            batch: 50,
        }
    }
}

/// Sampler output with acceptance diagnostics.
#[derive(Debug, Clone)]
pub struct McmcRun {
    pub draws: PosteriorDraws,
    /// Mean post-burn-in acceptance of the single-site latent updates.
    pub latent_acceptance: f64,
    /// Post-burn-in acceptance of each precision update.
    pub hyper_acceptance: Vec<f64>,
    pub poor_mixing: bool,
}

struct Block {
    range: std::ops::Range<usize>,
    /// `P F P` restricted to the block.
    pfp: DMatrix<f64>,
    /// Constraint rows restricted to the block (dense `k × n`).
    c: DMatrix<f64>,
    projector: DMatrix<f64>,
    rank: f64,
    prior: crate::model::GammaPrior,
    count: f64,
}

struct Sampler<'a> {
    model: &'a LatentModel,
    /// Per coordinate, nonzero rows of `A P` column.
    columns: Vec<Vec<(usize, f64)>>,
    blocks: Vec<Block>,
    owner: Vec<Option<usize>>,
    fixed_precision: f64,
    x: Vec<f64>,
    z: Vec<f64>,
    eta: Vec<f64>,
    /// `(P F P) x` per block, stacked in latent order.
    fx: Vec<f64>,
    /// `C_b x_b` per block.
    cx: Vec<Vec<f64>>,
}

fn projector(c: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    if c.nrows() == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    let gram = c * c.transpose();
    let inv = gram.try_inverse().ok_or(Error::RankDeficientConstraints)?;
    Ok(DMatrix::identity(n, n) - c.transpose() * inv * c)
}

impl<'a> Sampler<'a> {
    fn new(model: &'a LatentModel) -> Result<Self> {
        let m = model.dim();
        let prior = model.prior();
        let mut owner = vec![None; m];
        let mut blocks = Vec::new();
        for (bi, b) in prior.blocks().iter().enumerate() {
            let n = b.len();
            let c = b.constraints.to_dense();
            let p = projector(&c, n)?;
            let f = b.structure.to_dense();
            let pfp = &p * f * &p;
            for j in b.range() {
                owner[j] = Some(bi);
            }
            blocks.push(Block {
                range: b.range(),
                pfp,
                c,
                projector: p,
                rank: b.rank as f64,
                prior: b.hyperprior,
                count: n as f64,
            });
        }
        // Columns of A P.
        let mut columns = vec![Vec::new(); m];
        for (r, row) in model.map().rows().iter().enumerate() {
            let mut dense: std::collections::BTreeMap<usize, f64> = Default::default();
            for &(l, a) in row {
                match owner[l] {
                    None => *dense.entry(l).or_default() += a,
                    Some(bi) => {
                        let b = &blocks[bi];
                        let local = l - b.range.start;
                        for (k, j) in b.range.clone().enumerate() {
                            let v = b.projector[(local, k)];
                            if v.abs() > 1e-15 {
                                *dense.entry(j).or_default() += a * v;
                            }
                        }
                    }
                }
            }
            for (j, v) in dense {
                columns[j].push((r, v));
            }
        }
        Ok(Self {
            model,
            columns,
            fx: vec![0.0; m],
            cx: blocks.iter().map(|b| vec![0.0; b.c.nrows()]).collect(),
            blocks,
            owner,
            fixed_precision: prior.fixed_precision(),
            x: vec![0.0; m],
            z: Vec::new(),
            eta: model.map().offset().to_vec(),
        })
    }

    fn refresh(&mut self) {
        let x = &self.x;
        let mut eta = self.model.map().offset().to_vec();
        for (j, col) in self.columns.iter().enumerate() {
            if x[j] != 0.0 {
                for &(r, v) in col {
                    eta[r] += v * x[j];
                }
            }
        }
        self.eta = eta;
        for (bi, b) in self.blocks.iter().enumerate() {
            let xb = nalgebra::DVector::from_column_slice(&x[b.range.clone()]);
            let f = &b.pfp * &xb;
            self.fx[b.range.clone()].copy_from_slice(f.as_slice());
            let cx = &b.c * &xb;
            self.cx[bi].copy_from_slice(cx.as_slice());
        }
    }

    fn block_quadratic(&self, bi: usize) -> f64 {
        let r = self.blocks[bi].range.clone();
        self.x[r.clone()].iter().zip(&self.fx[r]).map(|(a, b)| a * b).sum()
    }

    fn lik_delta(&self, j: usize, eps: f64) -> f64 {
        let lik = self.model.likelihood();
        let y = self.model.y();
        self.columns[j]
            .iter()
            .map(|&(r, a)| lik.kernel(y[r], self.eta[r] + eps * a) - lik.kernel(y[r], self.eta[r]))
            .sum()
    }

    fn update_site<R: Rng>(&mut self, j: usize, step: f64, rng: &mut R) -> bool {
        let eps = step * rng.sample::<f64, _>(StandardNormal);
        let mut delta = self.lik_delta(j, eps);
        match self.owner[j] {
            None => {
                let x = self.x[j];
                delta -= 0.5 * self.fixed_precision * ((x + eps).powi(2) - x * x);
            }
            Some(bi) => {
                let b = &self.blocks[bi];
                let local = j - b.range.start;
                let tau = self.z[bi].exp();
                delta -= 0.5 * tau * (2.0 * eps * self.fx[j] + eps * eps * b.pfp[(local, local)]);
                let cj = b.c.column(local);
                let dot: f64 = cj.iter().zip(&self.cx[bi]).map(|(a, c)| a * c).sum();
                delta -= 0.5 * (2.0 * eps * dot + eps * eps * cj.norm_squared());
            }
        }
        if !(delta.is_finite() && rng.random::<f64>().ln() < delta) {
            return false;
        }
        self.x[j] += eps;
        for &(r, a) in &self.columns[j] {
            self.eta[r] += eps * a;
        }
        if let Some(bi) = self.owner[j] {
            let b = &self.blocks[bi];
            let local = j - b.range.start;
            for (k, jj) in b.range.clone().enumerate() {
                self.fx[jj] += eps * b.pfp[(k, local)];
            }
            for (k, c) in self.cx[bi].iter_mut().enumerate() {
                *c += eps * b.c[(k, local)];
            }
        }
        true
    }

    fn update_precision<R: Rng>(&mut self, bi: usize, step: f64, rng: &mut R) -> bool {
        let b = &self.blocks[bi];
        let z = self.z[bi];
        let z_new = z + step * rng.sample::<f64, _>(StandardNormal);
        let s = self.block_quadratic(bi);
        let delta = 0.5 * b.rank * (z_new - z) - 0.5 * (z_new.exp() - z.exp()) * s
            + b.prior.log_density_log_scale(z_new)
            - b.prior.log_density_log_scale(z);
        if delta.is_finite() && rng.random::<f64>().ln() < delta {
            self.z[bi] = z_new;
            true
        } else {
            false
        }
    }

    /// Moves `z_b` and rescales `x_b` so that `τ_b x_bᵀFx_b` is unchanged.
    fn update_rescale<R: Rng>(&mut self, bi: usize, step: f64, rng: &mut R) -> bool {
        let eps = step * rng.sample::<f64, _>(StandardNormal);
        let c = (-0.5 * eps).exp();
        let b = &self.blocks[bi];
        let z = self.z[bi];
        let mut contribution = vec![0.0; self.eta.len()];
        for j in b.range.clone() {
            if self.x[j] != 0.0 {
                for &(r, a) in &self.columns[j] {
                    contribution[r] += a * self.x[j];
                }
            }
        }
        let lik = self.model.likelihood();
        let y = self.model.y();
        let mut delta = 0.0;
        for (r, &d) in contribution.iter().enumerate() {
            if d != 0.0 {
                let e = self.eta[r];
                delta += lik.kernel(y[r], e + (c - 1.0) * d) - lik.kernel(y[r], e);
            }
        }
        let penalty: f64 = self.cx[bi].iter().map(|v| v * v).sum();
        delta += 0.5 * b.rank * eps - 0.5 * (c * c - 1.0) * penalty + b.count * c.ln()
            + b.prior.log_density_log_scale(z + eps)
            - b.prior.log_density_log_scale(z);
        if !(delta.is_finite() && rng.random::<f64>().ln() < delta) {
            return false;
        }
        self.z[bi] = z + eps;
        for j in b.range.clone() {
            self.x[j] *= c;
            self.fx[j] *= c;
        }
        self.cx[bi].iter_mut().for_each(|v| *v *= c);
        for (r, d) in contribution.into_iter().enumerate() {
            self.eta[r] += (c - 1.0) * d;
        }
        true
    }

    fn projected(&self) -> Vec<f64> {
        let mut u = self.x.clone();
        for b in &self.blocks {
            let xb = nalgebra::DVector::from_column_slice(&self.x[b.range.clone()]);
            let ub = &b.projector * xb;
            u[b.range.clone()].copy_from_slice(ub.as_slice());
        }
        u
    }
}

fn adapt(step: &mut f64, accepted: usize, tried: usize) {
    if tried == 0 {
        return;
    }
    let rate = accepted as f64 / tried as f64;
    if rate < 0.2 {
        *step *= 0.75;
    } else if rate > 0.5 {
        *step *= 1.33;
    }
}

/// Metropolis-within-Gibbs on the latent field and log precisions.
///
/// Latent coordinates get single-site random-walk updates, each precision a
/// random-walk update on `log τ` plus a joint move that rescales its block.
/// Step sizes adapt in batches during burn-in and are frozen afterwards.
pub fn mcmc_oracle(model: &LatentModel, config: &McmcConfig) -> Result<McmcRun> {
    if config.iterations <= config.burnin {
        return Err(Error::InvalidInput(format!(
            "iterations ({}) must exceed burn-in ({})",
            config.iterations, config.burnin
        )));
    }
    let mut s = Sampler::new(model)?;
    let m = model.dim();
    let nb = s.blocks.len();
    s.z = vec![0.0; nb];
    s.refresh();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut latent_step = vec![config.latent_step; m];
    let mut hyper_step = vec![config.hyper_step; nb];
    let mut rescale_step = vec![config.hyper_step; nb];
    let mut acc_latent = vec![0usize; m];
    let mut acc_hyper = vec![0usize; nb];
    let mut acc_rescale = vec![0usize; nb];
    let mut batch_sweeps = 0usize;
    let mut post_latent = 0usize;
    let mut post_hyper = vec![0usize; nb];

    let sampling = config.iterations - config.burnin;
    let thin = (sampling / config.kept.max(1)).max(1);
    let lik = model.likelihood();
    let mut draws = PosteriorDraws {
        blocks: model.blocks(),
        log_precision: Vec::new(),
        latent: Vec::new(),
        lambda: Vec::new(),
        grid_index: Vec::new(),
        seed: config.seed,
    };

    for sweep in 0..config.iterations {
        let burning = sweep < config.burnin;
        for j in 0..m {
            if s.update_site(j, latent_step[j], &mut rng) {
                acc_latent[j] += 1;
                if !burning {
                    post_latent += 1;
                }
            }
        }
        for bi in 0..nb {
            if s.update_precision(bi, hyper_step[bi], &mut rng) {
                acc_hyper[bi] += 1;
                if !burning {
                    post_hyper[bi] += 1;
                }
            }
            if s.update_rescale(bi, rescale_step[bi], &mut rng) {
                acc_rescale[bi] += 1;
            }
        }
        batch_sweeps += 1;
        if batch_sweeps == config.batch {
            if burning {
                for j in 0..m {
                    adapt(&mut latent_step[j], acc_latent[j], batch_sweeps);
                }
                for bi in 0..nb {
                    adapt(&mut hyper_step[bi], acc_hyper[bi], batch_sweeps);
                    adapt(&mut rescale_step[bi], acc_rescale[bi], batch_sweeps);
                }
            }
            acc_latent.iter_mut().for_each(|v| *v = 0);
            acc_hyper.iter_mut().for_each(|v| *v = 0);
            acc_rescale.iter_mut().for_each(|v| *v = 0);
            batch_sweeps = 0;
            // Clear accumulated round-off in the running sums.
            s.refresh();
        }
        if !burning && (sweep - config.burnin) % thin == thin - 1 {
            let u = s.projected();
            draws
                .lambda
                .push(model.map().eta(&u).into_iter().map(|e| lik.mean(e)).collect());
            draws.latent.push(u);
            draws.log_precision.push(s.z.clone());
        }
    }

    let latent_acceptance = post_latent as f64 / (sampling * m.max(1)) as f64;
    let hyper_acceptance: Vec<f64> = post_hyper.iter().map(|&a| a as f64 / sampling as f64).collect();
    let poor_mixing = (m > 0 && latent_acceptance < 0.01) || hyper_acceptance.iter().any(|&a| a < 0.01);
    if poor_mixing {
        warn!(
            "poor mixing: latent acceptance {latent_acceptance:.4}, precision acceptance {hyper_acceptance:?}"
        );
    }
    Ok(McmcRun {
        draws,
        latent_acceptance,
        hyper_acceptance,
        poor_mixing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AdjacencyGraph;
    use crate::inference::Likelihood;
    use crate::model::{BlockSet, LatentLayout, ModelSpec, ObservationMap, PanelData, PriorStructure};

    fn conjugate_model() -> LatentModel {
        // y_i = α + ν_i + ε_i with fixed τ_ν is conjugate; here τ_ν is learned but
        // the test only checks draws satisfy constraints and seeds repeat.
        let spec = ModelSpec {
            blocks: BlockSet {
                spatial_iid: true,
                ..BlockSet::none()
            },
            ..ModelSpec::default()
        };
        let g = AdjacencyGraph::path(6);
        let layout = LatentLayout::new(&spec, 6, 1, 0).unwrap();
        let prior = PriorStructure::new(&spec, &layout, &g).unwrap();
        let panel = PanelData::new(g, vec![1], vec![Some(1); 6], vec![1.0; 6], None, vec![]).unwrap();
        let map = ObservationMap::observed(&panel, &layout, &[], &[1.0; 6]).unwrap();
        let y = vec![0.3, -0.2, 0.5, 1.1, -0.4, 0.2];
        LatentModel::from_parts(prior, map, y, Likelihood::Gaussian { variance: 0.25 }).unwrap()
    }

    fn quick() -> McmcConfig {
        McmcConfig {
            iterations: 3_000,
            burnin: 1_000,
            kept: 500,
            seed: 4,
            ..McmcConfig::default()
        }
    }

    #[test]
    fn same_seed_same_chain() {
        let model = conjugate_model();
        let a = mcmc_oracle(&model, &quick()).unwrap();
        let b = mcmc_oracle(&model, &quick()).unwrap();
        assert_eq!(a.draws, b.draws);
        assert_eq!(a.draws.len(), 500);
    }

    #[test]
    fn draws_honour_constraints() {
        let model = conjugate_model();
        let run = mcmc_oracle(&model, &quick()).unwrap();
        for x in &run.draws.latent {
            for v in model.constraints().apply(x) {
                assert!(v.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn burnin_must_leave_iterations() {
        let model = conjugate_model();
        let cfg = McmcConfig {
            iterations: 10,
            burnin: 10,
            ..McmcConfig::default()
        };
        assert!(mcmc_oracle(&model, &cfg).is_err());
    }
}
