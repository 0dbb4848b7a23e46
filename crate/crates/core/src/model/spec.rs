use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Random-effect blocks carrying a precision hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomBlock {
    /// ICAR spatial effect υ.
    SpatialStructured,
    /// Unstructured spatial effect ν.
    SpatialIid,
    /// First-order random walk over time γ.
    TemporalRw1,
    /// Unstructured temporal effect φ.
    TemporalIid,
    /// Type-I space-time interaction δ.
    Interaction,
}

impl RandomBlock {
    pub const ALL: [RandomBlock; 5] = [
        RandomBlock::SpatialStructured,
        RandomBlock::SpatialIid,
        RandomBlock::TemporalRw1,
        RandomBlock::TemporalIid,
        RandomBlock::Interaction,
    ];

    /// Row label in hyperparameter summary tables.
    pub fn label(self) -> &'static str {
        match self {
            RandomBlock::SpatialStructured => "Precision for AREA_ID",
            RandomBlock::SpatialIid => "Precision for AREA_ID.iid",
            RandomBlock::TemporalRw1 => "Precision for Year",
            RandomBlock::TemporalIid => "Precision for Year.iid",
            RandomBlock::Interaction => "Precision for AREA_ID.YEAR",
        }
    }

    /// Short key used in configuration files and coordinate names.
    pub fn key(self) -> &'static str {
        match self {
            RandomBlock::SpatialStructured => "spatial_structured",
            RandomBlock::SpatialIid => "spatial_iid",
            RandomBlock::TemporalRw1 => "temporal_rw1",
            RandomBlock::TemporalIid => "temporal_iid",
            RandomBlock::Interaction => "interaction",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.key() == key)
    }

    pub fn is_spatial(self) -> bool {
        matches!(self, RandomBlock::SpatialStructured | RandomBlock::SpatialIid)
    }

    pub fn is_temporal(self) -> bool {
        matches!(self, RandomBlock::TemporalRw1 | RandomBlock::TemporalIid)
    }
}

impl fmt::Display for RandomBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// `Gamma(shape, rate)` prior on a precision τ, evaluated on `z = log τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self {
            shape: 1.0,
            rate: 0.0005,
        }
    }
}

impl GammaPrior {
    /// Log density of `z = log τ`, Jacobian included:
    /// `a log b − lnΓ(a) + a z − b e^z`.
    pub fn log_density_log_scale(&self, z: f64) -> f64 {
        let (a, b) = (self.shape, self.rate);
        a * b.ln() - ln_gamma(a) + a * z - b * z.exp()
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape > 0.0 && self.rate > 0.0 && self.shape.is_finite() && self.rate.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "gamma prior needs positive shape and rate, got ({}, {})",
                self.shape, self.rate
            )))
        }
    }
}

/// Which latent blocks are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockSet {
    pub spatial_structured: bool,
    pub spatial_iid: bool,
    pub temporal_rw1: bool,
    pub temporal_iid: bool,
    pub interaction: bool,
    /// Linear time trend β_t on the centred time index.
    pub time_trend: bool,
}

impl Default for BlockSet {
    fn default() -> Self {
        Self {
            spatial_structured: true,
            spatial_iid: true,
            temporal_rw1: true,
            temporal_iid: true,
            interaction: true,
            time_trend: false,
        }
    }
}

impl BlockSet {
    pub fn none() -> Self {
        Self {
            spatial_structured: false,
            spatial_iid: false,
            temporal_rw1: false,
            temporal_iid: false,
            interaction: false,
            time_trend: false,
        }
    }

    pub fn is_on(&self, block: RandomBlock) -> bool {
        match block {
            RandomBlock::SpatialStructured => self.spatial_structured,
            RandomBlock::SpatialIid => self.spatial_iid,
            RandomBlock::TemporalRw1 => self.temporal_rw1,
            RandomBlock::TemporalIid => self.temporal_iid,
            RandomBlock::Interaction => self.interaction,
        }
    }

    pub fn set(&mut self, block: RandomBlock, on: bool) {
        match block {
            RandomBlock::SpatialStructured => self.spatial_structured = on,
            RandomBlock::SpatialIid => self.spatial_iid = on,
            RandomBlock::TemporalRw1 => self.temporal_rw1 = on,
            RandomBlock::TemporalIid => self.temporal_iid = on,
            RandomBlock::Interaction => self.interaction = on,
        }
    }
}

/// How expected counts `E_it` are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedPolicy {
    /// Use the panel's `E` column as given.
    Supplied,
    /// `E_it = exposure_it · Σy / Σexposure` over observed cells.
    #[default]
    InternalStandardization,
}

/// Full model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub blocks: BlockSet,
    /// Covariates entering the linear predictor, in coefficient order.
    pub covariates: Vec<String>,
    /// Per-block precision priors; missing blocks use `Gamma(1, 0.0005)`.
    pub hyperpriors: BTreeMap<RandomBlock, GammaPrior>,
    pub standardize: bool,
    pub expected: ExpectedPolicy,
    /// Gaussian prior precision on the intercept, covariate and trend coefficients.
    pub fixed_precision: f64,
}

pub const DEFAULT_FIXED_PRECISION: f64 = 0.001;

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            blocks: BlockSet::default(),
            covariates: Vec::new(),
            hyperpriors: BTreeMap::new(),
            standardize: true,
            expected: ExpectedPolicy::default(),
            fixed_precision: DEFAULT_FIXED_PRECISION,
        }
    }
}

impl ModelSpec {
    /// Enabled random blocks in canonical order υ, ν, γ, φ, δ.
    pub fn active_blocks(&self) -> Vec<RandomBlock> {
        RandomBlock::ALL.into_iter().filter(|&b| self.blocks.is_on(b)).collect()
    }

    pub fn hyperprior(&self, block: RandomBlock) -> GammaPrior {
        self.hyperpriors.get(&block).copied().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fixed_precision > 0.0 && self.fixed_precision.is_finite()) {
            return Err(Error::Config(format!(
                "fixed_precision must be positive, got {}",
                self.fixed_precision
            )));
        }
        for prior in self.hyperpriors.values() {
            prior.validate()?;
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.covariates {
            if !seen.insert(c) {
                return Err(Error::Config(format!("covariate `{c}` listed twice")));
            }
        }
        Ok(())
    }
}

/// Precisions of the enabled random blocks, held on the log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    blocks: Vec<RandomBlock>,
    log_precision: Vec<f64>,
}

impl Hyperparameters {
    pub fn from_log(blocks: Vec<RandomBlock>, log_precision: Vec<f64>) -> Result<Self> {
        if blocks.len() != log_precision.len() {
            return Err(Error::DimensionMismatch {
                expected: blocks.len(),
                found: log_precision.len(),
            });
        }
        if log_precision.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "log-precisions must be finite: {log_precision:?}"
            )));
        }
        Ok(Self { blocks, log_precision })
    }

    /// From precisions on the natural scale; every τ must be strictly positive.
    pub fn from_precisions(pairs: &[(RandomBlock, f64)]) -> Result<Self> {
        if let Some((b, t)) = pairs.iter().find(|(_, t)| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidInput(format!("precision for {b} must be positive, got {t}")));
        }
        Ok(Self {
            blocks: pairs.iter().map(|p| p.0).collect(),
            log_precision: pairs.iter().map(|p| p.1.ln()).collect(),
        })
    }

    /// Same precision for every listed block.
    pub fn uniform(blocks: &[RandomBlock], precision: f64) -> Result<Self> {
        let pairs: Vec<_> = blocks.iter().map(|&b| (b, precision)).collect();
        Self::from_precisions(&pairs)
    }

    pub fn blocks(&self) -> &[RandomBlock] {
        &self.blocks
    }

    pub fn log_precisions(&self) -> &[f64] {
        &self.log_precision
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn precision(&self, block: RandomBlock) -> Option<f64> {
        self.blocks
            .iter()
            .position(|&b| b == block)
            .map(|i| self.log_precision[i].exp())
    }

    pub fn log_precision(&self, block: RandomBlock) -> Option<f64> {
        self.blocks.iter().position(|&b| b == block).map(|i| self.log_precision[i])
    }

    pub fn with_log(&self, log_precision: Vec<f64>) -> Result<Self> {
        Self::from_log(self.blocks.clone(), log_precision)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyperprior_at_unit_precision() {
        let v = GammaPrior::default().log_density_log_scale(0.0);
        assert!((v - (0.0005f64.ln() - 0.0005)).abs() < 1e-15);
        assert!((v - -7.6014).abs() < 1e-4);
    }

    #[test]
    fn non_positive_precision_rejected() {
        assert!(Hyperparameters::from_precisions(&[(RandomBlock::SpatialIid, 0.0)]).is_err());
        assert!(Hyperparameters::from_precisions(&[(RandomBlock::SpatialIid, -1.0)]).is_err());
    }

    #[test]
    fn labels_follow_table_style() {
        assert_eq!(RandomBlock::SpatialStructured.label(), "Precision for AREA_ID");
        assert_eq!(RandomBlock::TemporalRw1.label(), "Precision for Year");
        assert_eq!(RandomBlock::Interaction.label(), "Precision for AREA_ID.YEAR");
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let mut spec = ModelSpec::default();
        spec.covariates = vec!["wind".into()];
        spec.hyperpriors.insert(RandomBlock::Interaction, GammaPrior { shape: 2.0, rate: 0.1 });
        let text = toml::to_string(&spec).unwrap();
        let back: ModelSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
