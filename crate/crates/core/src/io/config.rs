use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::SbcConfig;
use crate::error::{Error, Result};
use crate::inference::{GridConfig, McmcConfig};
use crate::model::{ModelSpec, RandomBlock};

/// Version of the configuration and artifact schema.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    #[default]
    LaplaceGrid,
    Mcmc,
    Both,
}

/// Input and output locations. Relative paths are resolved against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub panel: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub output: PathBuf,
    /// GeoJSON regions merged with the per-cell table on export.
    pub regions: Option<PathBuf>,
}

impl Default for DataPaths {
    fn default() -> Self {
        Self {
            panel: None,
            adjacency: None,
            output: PathBuf::from("areal-out"),
            regions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub kind: EngineKind,
    /// Seed of every stochastic step; required for fits.
    pub seed: Option<u64>,
    /// Joint posterior draws taken from the grid approximation.
    pub draws: usize,
    pub grid: GridConfig,
    pub mcmc: McmcConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            kind: EngineKind::default(),
            seed: None,
            draws: 2000,
            grid: GridConfig::default(),
            mcmc: McmcConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub trend_svg: bool,
    pub join_table: bool,
    /// Relative-risk level `r₀` of the exceedance probabilities.
    pub exceedance_threshold: f64,
    /// Keep the posterior draws so `summarize` and `export` can reuse them.
    pub draws: bool,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            trend_svg: true,
            join_table: true,
            exceedance_threshold: 1.0,
            draws: true,
        }
    }
}

/// Generative settings of the `simulate` workflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub seed: Option<u64>,
    /// Lattice shape used when no adjacency file is given.
    pub rows: usize,
    pub cols: usize,
    pub first_year: i32,
    pub years: usize,
    /// Expected count of every cell.
    pub expected: f64,
    pub intercept: f64,
    /// One coefficient per model covariate; covariates are standard normal.
    pub coefficients: Vec<f64>,
    pub trend: f64,
    /// Precision of each active block; absent blocks get 10.
    pub precisions: BTreeMap<RandomBlock, f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            seed: None,
            rows: 2,
            cols: 5,
            first_year: 2010,
            years: 5,
            expected: 20.0,
            intercept: 0.0,
            coefficients: Vec::new(),
            trend: 0.0,
            precisions: BTreeMap::new(),
        }
    }
}

impl SimulateConfig {
    pub const DEFAULT_PRECISION: f64 = 10.0;

    pub fn precision(&self, block: RandomBlock) -> f64 {
        self.precisions.get(&block).copied().unwrap_or(Self::DEFAULT_PRECISION)
    }
}

/// Everything a run needs, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub export: ExportConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub sbc: SbcConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            data: DataPaths::default(),
            model: ModelSpec::default(),
            engine: EngineConfig::default(),
            export: ExportConfig::default(),
            simulate: SimulateConfig::default(),
            sbc: SbcConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Reads `path` and resolves relative data paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let d = &mut cfg.data;
        for p in [&mut d.panel, &mut d.adjacency, &mut d.regions].into_iter().flatten() {
            resolve(base, p);
        }
        resolve(base, &mut d.output);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seed(&self) -> Result<u64> {
        self.engine
            .seed
            .ok_or_else(|| Error::Config("engine.seed is required for stochastic runs".into()))
    }

    fn existing(what: &str, p: &Option<PathBuf>) -> Result<PathBuf> {
        let p = p.as_ref().ok_or_else(|| Error::Config(format!("data.{what} is not set")))?;
        if !p.is_file() {
            return Err(Error::Config(format!("data.{what} `{}` does not exist", p.display())));
        }
        Ok(p.clone())
    }

    pub fn panel_path(&self) -> Result<PathBuf> {
        Self::existing("panel", &self.data.panel)
    }

    pub fn adjacency_path(&self) -> Result<PathBuf> {
        Self::existing("adjacency", &self.data.adjacency)
    }

    /// Checks done before a fit touches the output directory.
    pub fn validate_fit(&self) -> Result<()> {
        self.panel_path()?;
        self.adjacency_path()?;
        if self.data.regions.is_some() {
            Self::existing("regions", &self.data.regions)?;
        }
        self.seed()?;
        self.model.validate()?;
        if self.engine.draws < crate::diagnostics::MIN_QUANTILE_DRAWS {
            return Err(Error::Config(format!(
                "engine.draws must be at least {}",
                crate::diagnostics::MIN_QUANTILE_DRAWS
            )));
        }
        let r0 = self.export.exceedance_threshold;
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::Config(format!("export.exceedance_threshold must be positive, got {r0}")));
        }
        check_output_dir(&self.data.output)
    }

    /// SHA-256 of every field that affects results; the output location is excluded.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(data) = v.get_mut("data").and_then(|d| d.as_object_mut()) {
            data.remove("output");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Output directory exists or can be created below an existing directory, and is writable.
pub fn check_output_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::Config(format!("output `{}` is not a directory", dir.display())));
        }
        let md = std::fs::metadata(dir).map_err(|e| Error::io(dir, e))?;
        if md.permissions().readonly() {
            return Err(Error::Config(format!("output directory `{}` is read-only", dir.display())));
        }
        return Ok(());
    }
    let mut parent = dir.parent();
    while let Some(p) = parent {
        if p.as_os_str().is_empty() || p.is_dir() {
            return Ok(());
        }
        if p.exists() {
            return Err(Error::Config(format!("`{}` is not a directory", p.display())));
        }
        parent = p.parent();
    }
    Ok(())
}
