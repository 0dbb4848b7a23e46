use log::warn;
use serde::{Deserialize, Serialize};

use super::spec::ExpectedPolicy;
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;

/// Floor applied to expected counts when every observed count is zero.
pub const EXPECTED_FLOOR: f64 = 1e-6;

/// One named covariate over all cells (area-major). `NaN` marks an absent value.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: Vec<f64>,
}

/// Area × year panel. Cell `(i, t)` lives at index `i * years.len() + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    pub graph: AdjacencyGraph,
    pub years: Vec<i32>,
    /// `None` marks a missing observation.
    pub counts: Vec<Option<u64>>,
    pub exposure: Vec<f64>,
    /// Optional user-supplied expected counts.
    pub expected: Option<Vec<f64>>,
    pub covariates: Vec<Covariate>,
}

/// Mean and population sd used to standardize one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

impl Scaling {
    /// Maps a coefficient on the standardized scale back to raw units.
    pub fn to_raw(&self, coefficient: f64) -> f64 {
        coefficient / self.sd
    }
}

impl PanelData {
    pub fn new(
        graph: AdjacencyGraph,
        years: Vec<i32>,
        counts: Vec<Option<u64>>,
        exposure: Vec<f64>,
        expected: Option<Vec<f64>>,
        covariates: Vec<Covariate>,
    ) -> Result<Self> {
        let panel = Self {
            graph,
            years,
            counts,
            exposure,
            expected,
            covariates,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.n_cells();
        if self.graph.is_empty() || self.years.is_empty() {
            return Err(Error::InvalidDimension("panel needs at least one area and one year".into()));
        }
        if self.years.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("years must be strictly ascending".into()));
        }
        for (what, len) in [("counts", self.counts.len()), ("exposure", self.exposure.len())] {
            if len != cells {
                return Err(Error::InvalidInput(format!("{what} has {len} cells, expected {cells}")));
            }
        }
        if let Some((c, e)) = self.exposure.iter().enumerate().find(|(_, e)| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidInput(format!("exposure must be positive (cell {c}: {e})")));
        }
        if let Some(expected) = &self.expected {
            if expected.len() != cells {
                return Err(Error::InvalidInput(format!(
                    "expected counts have {} cells, expected {cells}",
                    expected.len()
                )));
            }
        }
        for cov in &self.covariates {
            if cov.values.len() != cells {
                return Err(Error::InvalidInput(format!(
                    "covariate `{}` has {} cells, expected {cells}",
                    cov.name,
                    cov.values.len()
                )));
            }
        }
        Ok(())
    }

    pub fn n_areas(&self) -> usize {
        self.graph.len()
    }

    pub fn n_times(&self) -> usize {
        self.years.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n_areas() * self.n_times()
    }

    pub fn cell(&self, area: usize, time: usize) -> usize {
        area * self.n_times() + time
    }

    /// `(area, time)` of a cell index.
    pub fn position(&self, cell: usize) -> (usize, usize) {
        (cell / self.n_times(), cell % self.n_times())
    }

    pub fn observed_cells(&self) -> Vec<usize> {
        (0..self.n_cells()).filter(|&c| self.counts[c].is_some()).collect()
    }

    pub fn covariate(&self, name: &str) -> Option<&Covariate> {
        self.covariates.iter().find(|c| c.name == name)
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }
}

/// Expected counts per cell under the chosen policy.
pub fn expected_counts(panel: &PanelData, policy: ExpectedPolicy) -> Result<Vec<f64>> {
    match policy {
        ExpectedPolicy::Supplied => {
            let e = panel
                .expected
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("expected-count policy `supplied` needs an E column".into()))?;
            if let Some((c, v)) = e.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidInput(format!("expected count must be positive (cell {c}: {v})")));
            }
            Ok(e.clone())
        }
        ExpectedPolicy::InternalStandardization => {
            let observed = panel.observed_cells();
            if observed.is_empty() {
                return Err(Error::InvalidInput("all counts are missing".into()));
            }
            let total: f64 = observed.iter().map(|&c| panel.counts[c].unwrap_or(0) as f64).sum();
            let exposure: f64 = observed.iter().map(|&c| panel.exposure[c]).sum();
            if !(exposure > 0.0) {
                return Err(Error::InvalidInput("total exposure over observed cells is zero".into()));
            }
            if total == 0.0 {
                warn!("every observed count is zero; expected counts floored at {EXPECTED_FLOOR}");
                return Ok(vec![EXPECTED_FLOOR; panel.n_cells()]);
            }
            let rate = total / exposure;
            Ok(panel.exposure.iter().map(|e| e * rate).collect())
        }
    }
}

/// Standardizes every covariate to mean 0 and population sd 1 over observed cells.
pub fn standardize_covariates(panel: &PanelData) -> Result<(PanelData, Vec<Scaling>)> {
    let observed = panel.observed_cells();
    let mut out = panel.clone();
    let mut scalings = Vec::with_capacity(panel.covariates.len());
    for cov in &mut out.covariates {
        let vals: Vec<f64> = observed.iter().map(|&c| cov.values[c]).filter(|v| v.is_finite()).collect();
        if vals.is_empty() {
            return Err(Error::ZeroVariance(cov.name.clone()));
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::ZeroVariance(cov.name.clone()));
        }
        cov.values.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        scalings.push(Scaling {
            name: cov.name.clone(),
            mean,
            sd,
        });
    }
    Ok((out, scalings))
}
