use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Gamma};

use super::summary::mixture_quantile;
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::inference::{explore_hyperparameters, latent_summaries, sample_joint, GridConfig, LatentModel};
use crate::model::{simulate, Covariate, ExpectedPolicy, Hyperparameters, ModelSpec, SimulationTruth};

/// Settings of a simulation-based calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbcConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Posterior draws per replicate; ranks take `draws + 1` values.
    pub draws: usize,
    pub bins: usize,
    /// Expected count of every cell.
    pub expected: f64,
    /// Number of standard-normal covariates, named `x1`, `x2`, ...
    pub covariates: usize,
    /// Prior precision of the fixed effects, used both to draw truths and to fit.
    pub fixed_precision: f64,
    /// Precision truths are drawn from the hyperprior truncated to this range.
    pub precision_bounds: (f64, f64),
    pub grid: GridConfig,
}

impl Default for SbcConfig {
    fn default() -> Self {
        Self {
            replicates: 200,
            seed: 1,
            draws: 99,
            bins: 10,
            expected: 20.0,
            covariates: 2,
            fixed_precision: 1.0,
            precision_bounds: (0.1, 1000.0),
            grid: GridConfig::default(),
        }
    }
}

/// Calibration of one fixed effect across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcParameter {
    pub name: String,
    pub ranks: Vec<usize>,
    pub histogram: Vec<usize>,
    pub covered: usize,
    pub coverage: f64,
    pub chi_square: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcFailure {
    pub replicate: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcReport {
    pub replicates: usize,
    pub completed: usize,
    pub failures: Vec<SbcFailure>,
    pub failure_rate: f64,
    pub parameters: Vec<SbcParameter>,
}

struct Replicate {
    ranks: Vec<usize>,
    covered: Vec<bool>,
}

/// Independent seed of replicate `r`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    let mut z = seed ^ (r as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn truncated_precision(rng: &mut ChaCha20Rng, prior: &Gamma, (lo, hi): (f64, f64)) -> f64 {
    let a = prior.cdf(lo);
    let b = prior.cdf(hi);
    let u = a + (b - a) * rng.random::<f64>();
    prior.inverse_cdf(u).clamp(lo, hi)
}

fn run_replicate(
    spec: &ModelSpec,
    graph: &AdjacencyGraph,
    years: &[i32],
    config: &SbcConfig,
    seed: u64,
) -> Result<Replicate> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let kappa_sd = config.fixed_precision.sqrt().recip();
    let cells = graph.len() * years.len();
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let covariates: Vec<Covariate> = spec
        .covariates
        .iter()
        .map(|name| Covariate {
            name: name.clone(),
            values: (0..cells).map(|_| normal()).collect(),
        })
        .collect();
    let intercept = kappa_sd * normal();
    let coefficients: Vec<f64> = (0..spec.covariates.len()).map(|_| kappa_sd * normal()).collect();
    let trend = kappa_sd * normal();
    let blocks = spec.active_blocks();
    let mut pairs = Vec::with_capacity(blocks.len());
    for &b in &blocks {
        let h = spec.hyperprior(b);
        let prior = Gamma::new(h.shape, h.rate).map_err(|e| Error::Config(format!("hyperprior for {b}: {e}")))?;
        pairs.push((b, truncated_precision(&mut rng, &prior, config.precision_bounds)));
    }
    let truth = SimulationTruth {
        intercept,
        coefficients,
        trend,
        hyperparameters: Hyperparameters::from_precisions(&pairs)?,
    };
    let sim_seed = rng.random::<u64>();
    let fit_seed = rng.random::<u64>();
    let sim = simulate(spec, &truth, graph, years, &vec![config.expected; cells], covariates, sim_seed)?;

    let model = LatentModel::new(spec, &sim.panel)?;
    let grid = explore_hyperparameters(&model, &config.grid)?;
    let draws = sample_joint(&model, &grid, config.draws, fit_seed)?;
    let marginals = latent_summaries(&grid);
    let fixed = model.layout().fixed_indices();
    let mut ranks = Vec::with_capacity(fixed.len());
    let mut covered = Vec::with_capacity(fixed.len());
    for &j in &fixed {
        let t = sim.latent[j];
        ranks.push(draws.latent.iter().filter(|x| x[j] < t).count());
        let comps = marginals.components(j);
        covered.push(mixture_quantile(&comps, 0.025) <= t && t <= mixture_quantile(&comps, 0.975));
    }
    Ok(Replicate { ranks, covered })
}

fn fixed_names(spec: &ModelSpec) -> Vec<String> {
    let mut names = vec!["(Intercept)".to_string()];
    names.extend(spec.covariates.iter().cloned());
    if spec.blocks.time_trend {
        names.push("time_trend".into());
    }
    names
}

/// Simulation-based calibration of the grid engine on the fixed effects.
///
/// Each replicate draws precisions from the truncated hyperpriors and fixed
/// effects from their Gaussian prior, simulates a panel with constant `E` and
/// standard-normal covariates, fits it and records the rank of each truth among
/// the posterior draws and whether the 95% interval covers it. The spec's
/// covariates, expected-count policy and standardization are overridden.
pub fn sbc(spec: &ModelSpec, graph: &AdjacencyGraph, years: &[i32], config: &SbcConfig) -> Result<SbcReport> {
    if config.bins == 0 || config.draws == 0 {
        return Err(Error::InvalidInput("SBC needs at least one bin and one draw".into()));
    }
    let mut spec = spec.clone();
    spec.covariates = (1..=config.covariates).map(|k| format!("x{k}")).collect();
    spec.expected = ExpectedPolicy::Supplied;
    spec.standardize = false;
    spec.fixed_precision = config.fixed_precision;
    spec.validate()?;

    let results: Vec<(usize, u64, Result<Replicate>)> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(config.seed, r);
            (r, seed, run_replicate(&spec, graph, years, config, seed))
        })
        .collect();

    let names = fixed_names(&spec);
    let mut failures = Vec::new();
    let mut done = Vec::new();
    for (replicate, seed, res) in results {
        match res {
            Ok(rep) => done.push(rep),
            Err(e) => {
                log::warn!("SBC replicate {replicate} failed: {e}");
                failures.push(SbcFailure {
                    replicate,
                    seed,
                    error: e.to_string(),
                })
            }
        }
    }
    let completed = done.len();
    let parameters = names
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let ranks: Vec<usize> = done.iter().map(|d| d.ranks[k]).collect();
            let covered = done.iter().filter(|d| d.covered[k]).count();
            let histogram = rank_histogram(&ranks, config.draws + 1, config.bins);
            let (chi_square, p_value) = chi_square_uniform(&histogram);
            SbcParameter {
                name,
                ranks,
                histogram,
                covered,
                coverage: if completed > 0 {
                    covered as f64 / completed as f64
                } else {
                    f64::NAN
                },
                chi_square,
                p_value,
            }
        })
        .collect();
    Ok(SbcReport {
        replicates: config.replicates,
        completed,
        failure_rate: if config.replicates > 0 {
            failures.len() as f64 / config.replicates as f64
        } else {
            0.0
        },
        failures,
        parameters,
    })
}

/// Counts of ranks in `0..levels` grouped into `bins` equal bins.
pub fn rank_histogram(ranks: &[usize], levels: usize, bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins];
    for &r in ranks {
        h[(r * bins / levels).min(bins - 1)] += 1;
    }
    h
}

/// Pearson statistic against uniform bins and its upper-tail p-value.
pub fn chi_square_uniform(histogram: &[usize]) -> (f64, f64) {
    let total: usize = histogram.iter().sum();
    if total == 0 || histogram.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let e = total as f64 / histogram.len() as f64;
    let stat: f64 = histogram.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    let dist = ChiSquared::new((histogram.len() - 1) as f64).expect("positive degrees of freedom");
    (stat, 1.0 - dist.cdf(stat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_replicates_gives_empty_report() {
        let cfg = SbcConfig {
            replicates: 0,
            ..SbcConfig::default()
        };
        let r = sbc(&ModelSpec::default(), &AdjacencyGraph::path(3), &[1, 2], &cfg).unwrap();
        assert_eq!(r.completed, 0);
        assert!(r.failures.is_empty());
        assert!(r.parameters.iter().all(|p| p.ranks.is_empty()));
    }

    #[test]
    fn uniform_ranks_pass_chi_square() {
        let ranks: Vec<usize> = (0..1000).map(|i| i % 100).collect();
        let h = rank_histogram(&ranks, 100, 10);
        assert_eq!(h, vec![100; 10]);
        let (stat, p) = chi_square_uniform(&h);
        assert_eq!(stat, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        let (_, p) = chi_square_uniform(&[50, 0, 0, 0, 0, 0, 0, 0, 0, 50]);
        assert!(p < 1e-6);
    }

    #[test]
    fn chi_square_matches_table_value() {
        // The 0.99 quantile with 9 degrees of freedom is 21.666.
        let h = [30, 10, 10, 10, 10, 10, 10, 10, 10, 10];
        let (stat, p) = chi_square_uniform(&h);
        assert!((stat - 30.0).abs() < 1e-12);
        let dist = ChiSquared::new(9.0).unwrap();
        assert!((dist.inverse_cdf(0.99) - 21.666).abs() < 1e-3);
        assert!(p < 0.01);
    }

    #[test]
    fn truncated_draws_stay_in_bounds() {
        let prior = Gamma::new(1.0, 0.0005).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let t = truncated_precision(&mut rng, &prior, (0.1, 1000.0));
            assert!((0.1..=1000.0).contains(&t));
        }
    }

    #[test]
    fn replicate_seeds_distinct() {
        let s: std::collections::BTreeSet<u64> = (0..1000).map(|r| replicate_seed(7, r)).collect();
        assert_eq!(s.len(), 1000);
    }
}
