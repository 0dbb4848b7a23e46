use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{LatentModel, Likelihood, PosteriorDraws};

/// Pointwise WAIC terms of one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaicContribution {
    pub lppd: f64,
    pub p_waic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaicReport {
    pub waic: f64,
    pub lppd: f64,
    pub p_waic: f64,
    pub pointwise: Vec<WaicContribution>,
}

/// WAIC from per-draw observation means (`λ` for Poisson, `η` for Gaussian).
///
/// `lppd = Σ log mean_s p(y | λˢ)`, `p_waic = Σ var_s log p(y | λˢ)` with an
/// `S − 1` denominator, `waic = −2 (lppd − p_waic)`.
pub fn waic_from_means(means: &[Vec<f64>], y: &[f64], likelihood: Likelihood) -> Result<WaicReport> {
    let s = means.len();
    if s < 2 {
        return Err(Error::InvalidInput(format!("WAIC needs at least 2 draws, got {s}")));
    }
    let mut pointwise = Vec::with_capacity(y.len());
    let mut logp = vec![0.0; s];
    for (i, &yi) in y.iter().enumerate() {
        for (lp, draw) in logp.iter_mut().zip(means) {
            let mu = *draw
                .get(i)
                .ok_or(Error::DimensionMismatch {
                    expected: y.len(),
                    found: draw.len(),
                })?;
            *lp = match likelihood {
                Likelihood::Poisson => {
                    if !(mu > 0.0) || !mu.is_finite() {
                        return Err(Error::InvalidInput(format!(
                            "non-positive Poisson mean {mu} in a posterior draw (observation {i})"
                        )));
                    }
                    likelihood.log_density(yi, mu.ln())
                }
                Likelihood::Gaussian { .. } => likelihood.log_density(yi, mu),
            };
        }
        let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lppd = max + (logp.iter().map(|v| (v - max).exp()).sum::<f64>() / s as f64).ln();
        let mean = logp.iter().sum::<f64>() / s as f64;
        let p_waic = logp.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1) as f64;
        pointwise.push(WaicContribution { lppd, p_waic });
    }
    let lppd: f64 = pointwise.iter().map(|c| c.lppd).sum();
    let p_waic: f64 = pointwise.iter().map(|c| c.p_waic).sum();
    Ok(WaicReport {
        waic: -2.0 * (lppd - p_waic),
        lppd,
        p_waic,
        pointwise,
    })
}

/// WAIC of posterior draws on the model's observed cells.
pub fn waic(draws: &PosteriorDraws, model: &LatentModel) -> Result<WaicReport> {
    waic_from_means(&draws.lambda, model.y(), model.likelihood())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let r = waic_from_means(&[vec![1.0], vec![2.0]], &[1.0], Likelihood::Poisson).unwrap();
        assert!((r.lppd - -1.1417).abs() < 1e-4);
        assert!((r.p_waic - 0.0471).abs() < 1e-4);
        assert!((r.waic - 2.3776).abs() < 1e-4);
        assert_eq!(r.waic, -2.0 * (r.lppd - r.p_waic));
    }

    #[test]
    fn identical_draws_have_no_penalty() {
        let r = waic_from_means(&vec![vec![3.0, 1.0]; 5], &[2.0, 0.0], Likelihood::Poisson).unwrap();
        assert!(r.p_waic.abs() < 1e-24);
        assert!((r.waic + 2.0 * r.lppd).abs() < 1e-12);
        assert_eq!(r.pointwise.len(), 2);
    }

    #[test]
    fn duplicated_draws_rescale_variance_only() {
        let draws = vec![vec![1.0, 4.0], vec![2.0, 3.0], vec![0.5, 6.0]];
        let y = [1.0, 5.0];
        let a = waic_from_means(&draws, &y, Likelihood::Poisson).unwrap();
        let doubled: Vec<_> = draws.iter().chain(&draws).cloned().collect();
        let b = waic_from_means(&doubled, &y, Likelihood::Poisson).unwrap();
        let s = draws.len() as f64;
        assert!((a.lppd - b.lppd).abs() < 1e-12);
        // Sum of squares doubles while the denominator goes from S−1 to 2S−1.
        assert!((b.p_waic - a.p_waic * 2.0 * (s - 1.0) / (2.0 * s - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(waic_from_means(&[vec![1.0]], &[1.0], Likelihood::Poisson).is_err());
        assert!(waic_from_means(&[vec![1.0], vec![0.0]], &[1.0], Likelihood::Poisson).is_err());
    }
}
