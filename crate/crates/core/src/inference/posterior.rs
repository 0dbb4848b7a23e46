use rand::distr::weighted::WeightedIndex;
use rand::prelude::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::HyperGrid;
use super::latent::LatentModel;
use crate::error::{Error, Result};
use crate::model::RandomBlock;

/// Posterior mean and standard deviation of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentSummary {
    pub mean: f64,
    pub sd: f64,
}

/// Gaussian-mixture marginals of the latent field over the grid.
#[derive(Debug, Clone)]
pub struct LatentMarginals {
    pub weights: Vec<f64>,
    /// Per grid point, the corrected conditional mean.
    pub means: Vec<Vec<f64>>,
    /// Per grid point, constrained marginal variances.
    pub variances: Vec<Vec<f64>>,
}

impl LatentMarginals {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn summary(&self, j: usize) -> LatentSummary {
        let mut mean = 0.0;
        let mut second = 0.0;
        for ((w, mu), var) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            mean += w * mu[j];
            second += w * (var[j] + mu[j] * mu[j]);
        }
        LatentSummary {
            mean,
            sd: (second - mean * mean).max(0.0).sqrt(),
        }
    }

    pub fn summaries(&self) -> Vec<LatentSummary> {
        (0..self.dim()).map(|j| self.summary(j)).collect()
    }

    /// Mixture components `(weight, mean, sd)` of coordinate `j`.
    pub fn components(&self, j: usize) -> Vec<(f64, f64, f64)> {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, mu), var)| (*w, mu[j], var[j].sqrt()))
            .collect()
    }
}

/// Mixture moments of every latent coordinate over the grid.
pub fn latent_summaries(grid: &HyperGrid) -> LatentMarginals {
    let variances = grid.points.par_iter().map(|p| p.approx.marginal_variances()).collect();
    LatentMarginals {
        weights: grid.points.iter().map(|p| p.weight).collect(),
        means: grid.points.iter().map(|p| p.mean.clone()).collect(),
        variances,
    }
}

/// Joint posterior draws of hyperparameters and the latent field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub blocks: Vec<RandomBlock>,
    /// Per draw, log precisions in block order.
    pub log_precision: Vec<Vec<f64>>,
    pub latent: Vec<Vec<f64>>,
    /// Per draw, the mean `λ` (Poisson) or `η` (Gaussian) of each observed row.
    pub lambda: Vec<Vec<f64>>,
    /// Grid index of each draw; empty for MCMC output.
    pub grid_index: Vec<usize>,
    pub seed: u64,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latent.is_empty()
    }

    /// Draws of latent coordinate `j`.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.latent.iter().map(|x| x[j]).collect()
    }

    /// Draws of the precision of `block`.
    pub fn precision(&self, block: RandomBlock) -> Option<Vec<f64>> {
        let i = self.blocks.iter().position(|&b| b == block)?;
        Some(self.log_precision.iter().map(|z| z[i].exp()).collect())
    }
}

/// `S` joint draws: a grid point by weight, then the constrained Gaussian at it.
pub fn sample_joint(model: &LatentModel, grid: &HyperGrid, count: usize, seed: u64) -> Result<PosteriorDraws> {
    if count == 0 {
        return Err(Error::InvalidInput("draw count must be at least 1".into()));
    }
    let weights: Vec<f64> = grid.points.iter().map(|p| p.weight).collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::InvalidInput(format!("grid weights: {e}")))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let lik = model.likelihood();
    let mut out = PosteriorDraws {
        blocks: grid.blocks.clone(),
        log_precision: Vec::with_capacity(count),
        latent: Vec::with_capacity(count),
        lambda: Vec::with_capacity(count),
        grid_index: Vec::with_capacity(count),
        seed,
    };
    for _ in 0..count {
        let k = pick.sample(&mut rng);
        let point = &grid.points[k];
        let x = point.approx.sample_at(&point.mean, &mut rng)?;
        out.lambda.push(model.map().eta(&x).into_iter().map(|e| lik.mean(e)).collect());
        out.log_precision.push(point.z.clone());
        out.latent.push(x);
        out.grid_index.push(k);
    }
    Ok(out)
}
