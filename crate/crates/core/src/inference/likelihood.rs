use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Observation model for `y` given the linear predictor `η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Likelihood {
    /// `y ~ Poisson(exp(η))`.
    Poisson,
    /// `y ~ N(η, variance)`; a test hook under which the nested scheme is exact.
    Gaussian { variance: f64 },
}

impl Likelihood {
    pub fn validate(&self, y: &[f64]) -> Result<()> {
        match *self {
            Likelihood::Poisson => {
                if let Some(v) = y.iter().find(|v| !(**v >= 0.0 && v.fract() == 0.0)) {
                    return Err(Error::InvalidInput(format!("Poisson counts must be non-negative integers, got {v}")));
                }
            }
            Likelihood::Gaussian { variance } => {
                if !(variance > 0.0 && variance.is_finite()) {
                    return Err(Error::InvalidInput(format!("Gaussian variance must be positive, got {variance}")));
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("Gaussian observations must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Full log density of one observation, constants included.
    pub fn log_density(&self, y: f64, eta: f64) -> f64 {
        self.kernel(y, eta) + self.constant(y)
    }

    /// Part of the log density that depends on `η`.
    pub fn kernel(&self, y: f64, eta: f64) -> f64 {
        match *self {
            Likelihood::Poisson => y * eta - eta.exp(),
            Likelihood::Gaussian { variance } => -0.5 * (y - eta).powi(2) / variance,
        }
    }

    /// Part of the log density that does not depend on `η`.
    pub fn constant(&self, y: f64) -> f64 {
        match *self {
            Likelihood::Poisson => -ln_gamma(y + 1.0),
            Likelihood::Gaussian { variance } => -0.5 * (2.0 * std::f64::consts::PI * variance).ln(),
        }
    }

    /// First derivative and negative second derivative of the log density in `η`.
    pub fn derivatives(&self, y: f64, eta: f64) -> (f64, f64) {
        match *self {
            Likelihood::Poisson => {
                let mu = eta.exp();
                (y - mu, mu)
            }
            Likelihood::Gaussian { variance } => ((y - eta) / variance, 1.0 / variance),
        }
    }

    /// Third derivative of the log density in `η`.
    pub fn third_derivative(&self, eta: f64) -> f64 {
        match self {
            Likelihood::Poisson => -eta.exp(),
            Likelihood::Gaussian { .. } => 0.0,
        }
    }

    /// Mean of `y` given `η`.
    pub fn mean(&self, eta: f64) -> f64 {
        match self {
            Likelihood::Poisson => eta.exp(),
            Likelihood::Gaussian { .. } => eta,
        }
    }
}
