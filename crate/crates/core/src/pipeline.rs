//! End-to-end workflows behind the command-line tool: fit, simulate, export,
//! re-summarize and calibrate, each writing versioned artifacts atomically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    cell_summaries, precision_name, sbc, summarize_draws, summarize_grid, summarize_sample, table_names,
    temporal_trend, waic, CellSummary, SbcReport, SummaryTable, TrendPoint, WaicReport,
};
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::inference::{
    explore_hyperparameters, latent_summaries, mcmc_oracle, sample_joint, LatentModel, PosteriorDraws,
};
use crate::io::{
    adjacency_to_csv, check_output_dir, merge_regions, panel_to_csv, parse_panel, read_adjacency, to_csv,
    trend_svg, write_atomic, write_json, EngineKind, RunConfig, SCHEMA_VERSION,
};
use crate::model::{simulate, Covariate, Hyperparameters, PanelData, RandomBlock, SimulationTruth};

pub const MANIFEST: &str = "manifest.json";
pub const FIXED_EFFECTS: &str = "fixed_effects.csv";
pub const HYPERPARAMETERS: &str = "hyperparameters.csv";
pub const RANDOM_EFFECTS: &str = "random_effects.csv";
pub const CELLS: &str = "cells.csv";
pub const TREND_CSV: &str = "trend.csv";
pub const TREND_SVG: &str = "trend.svg";
pub const WAIC: &str = "waic.json";
pub const AGREEMENT: &str = "engine_agreement.json";
pub const DRAWS: &str = "draws.csv";
pub const REGIONS: &str = "regions.geojson";
pub const CONFIG_COPY: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RunStatus {
    Running,
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

/// Record of a run: enough to repeat it and to tell complete outputs from partial ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub status: RunStatus,
    pub error: Option<String>,
    pub package: String,
    pub version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputFile>,
    pub files: Vec<String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub grid_points: Option<usize>,
    pub grid_evaluations: Option<usize>,
}

impl Manifest {
    fn new(config: &RunConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            status: RunStatus::Running,
            error: None,
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config.config_hash(),
            config: config.clone(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            files: Vec::new(),
            timings: BTreeMap::new(),
            grid_points: None,
            grid_evaluations: None,
        }
    }
}

/// One parameter compared across the two engines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub parameter: String,
    pub grid_mean: f64,
    pub grid_sd: f64,
    pub mcmc_mean: f64,
    pub mcmc_sd: f64,
    /// `|Δmean| / grid sd`.
    pub mean_shift: f64,
    /// `|Δsd| / MCMC sd`.
    pub sd_relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineAgreement {
    pub schema_version: u32,
    /// Largest mean shift over the fixed effects.
    pub max_mean_shift: f64,
    pub max_sd_relative: f64,
    pub latent_acceptance: f64,
    pub hyper_acceptance: Vec<f64>,
    pub poor_mixing: bool,
    pub rows: Vec<AgreementRow>,
}

fn agreement(grid: &SummaryTable, mcmc: &SummaryTable) -> Vec<AgreementRow> {
    grid.rows
        .iter()
        .filter_map(|g| {
            let m = mcmc.get(&g.parameter)?;
            Some(AgreementRow {
                parameter: g.parameter.clone(),
                grid_mean: g.mean,
                grid_sd: g.sd,
                mcmc_mean: m.mean,
                mcmc_sd: m.sd,
                mean_shift: (g.mean - m.mean).abs() / g.sd,
                sd_relative: (g.sd - m.sd).abs() / m.sd,
            })
        })
        .collect()
}

/// Everything a fit produces, as written to the output directory.
#[derive(Debug, Clone)]
pub struct FitArtifacts {
    pub output: PathBuf,
    pub fixed_effects: SummaryTable,
    pub hyperparameters: SummaryTable,
    pub random_effects: SummaryTable,
    pub cells: Vec<CellSummary>,
    pub trend: Option<Vec<TrendPoint>>,
    pub waic: WaicReport,
    pub agreement: Option<EngineAgreement>,
    pub draws: PosteriorDraws,
    pub manifest: Manifest,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Reads the panel and adjacency named in `config`.
pub fn load_panel(config: &RunConfig) -> Result<PanelData> {
    let edges = read_adjacency(config.adjacency_path()?)?;
    parse_panel(config.panel_path()?, &edges)
}

struct Writer<'a> {
    dir: &'a Path,
    manifest: &'a mut Manifest,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(self.dir.join(name), bytes)?;
        if !self.manifest.files.iter().any(|f| f == name) {
            self.manifest.files.push(name.to_string());
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        write_json(self.dir.join(name), value)?;
        if !self.manifest.files.iter().any(|f| f == name) {
            self.manifest.files.push(name.to_string());
        }
        Ok(())
    }

    fn manifest(&mut self) -> Result<()> {
        write_json(self.dir.join(MANIFEST), &*self.manifest)
    }
}

fn random_effect_names(model: &LatentModel) -> Vec<String> {
    let fixed = model.layout().fixed_indices();
    model
        .coordinate_names()
        .into_iter()
        .enumerate()
        .filter(|(j, _)| !fixed.contains(j))
        .map(|(_, n)| n)
        .collect()
}

fn has_temporal(model: &LatentModel) -> bool {
    model.blocks().iter().any(|b| matches!(b, RandomBlock::TemporalRw1 | RandomBlock::TemporalIid))
        || model.layout().has(crate::model::LatentBlock::TimeTrend)
}

/// Posterior draws as CSV: one column per latent coordinate, then one per precision.
pub fn draws_to_csv(draws: &PosteriorDraws, model: &LatentModel) -> String {
    let mut head = model.coordinate_names();
    head.extend(draws.blocks.iter().map(|&b| precision_name(b)));
    let mut out = head.iter().map(|h| quote(h)).collect::<Vec<_>>().join(",");
    out.push('\n');
    for (x, z) in draws.latent.iter().zip(&draws.log_precision) {
        let row: Vec<String> = x.iter().map(|v| v.to_string()).chain(z.iter().map(|v| v.exp().to_string())).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn quote(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Columns of a draws file by name.
pub fn read_draws_table(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.display().to_string(),
            row: 1,
            message: format!("{other:?}"),
        },
    })?;
    let parse = |row: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        row,
        message,
    };
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| parse(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut columns = vec![Vec::new(); names.len()];
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse(k + 2, e.to_string()))?;
        for (c, f) in rec.iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| parse(k + 2, format!("non-numeric value `{f}`")))?;
            columns[c].push(v);
        }
    }
    Ok((names, columns))
}

/// Draws file read back against `model`, which must have the same layout.
pub fn read_draws(path: impl AsRef<Path>, model: &LatentModel) -> Result<PosteriorDraws> {
    let (names, columns) = read_draws_table(path)?;
    let coords = model.coordinate_names();
    let blocks = model.blocks();
    let mut want: Vec<String> = coords.clone();
    want.extend(blocks.iter().map(|&b| precision_name(b)));
    if names != want {
        return Err(Error::InvalidInput("draws file columns do not match the model layout".into()));
    }
    let s = columns.first().map_or(0, Vec::len);
    let m = coords.len();
    let latent = (0..s).map(|i| (0..m).map(|j| columns[j][i]).collect()).collect();
    let log_precision = (0..s)
        .map(|i| (0..blocks.len()).map(|b| columns[m + b][i].ln()).collect())
        .collect();
    Ok(PosteriorDraws {
        blocks,
        log_precision,
        latent,
        lambda: Vec::new(),
        grid_index: Vec::new(),
        seed: 0,
    })
}

/// Re-summarizes a saved draws file; every column when `names` is empty.
pub fn summarize_draws_file(path: impl AsRef<Path>, names: &[String]) -> Result<SummaryTable> {
    let (header, columns) = read_draws_table(path)?;
    let wanted: Vec<String> = if names.is_empty() { header.clone() } else { names.to_vec() };
    let rows = wanted
        .iter()
        .map(|n| {
            let c = header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::UnknownParameter(n.clone()))?;
            summarize_sample(n, &columns[c])
        })
        .collect::<Result<_>>()?;
    Ok(SummaryTable { rows })
}

/// Outputs of [`export_maps`].
#[derive(Debug, Clone)]
pub struct MapProducts {
    pub cells: Vec<CellSummary>,
    pub trend: Option<Vec<TrendPoint>>,
    pub missing_regions: Vec<String>,
}

fn write_maps(
    w: &mut Writer<'_>,
    config: &RunConfig,
    model: &LatentModel,
    draws: &PosteriorDraws,
) -> Result<MapProducts> {
    let cells = cell_summaries(draws, model, config.export.exceedance_threshold)?;
    if config.export.join_table {
        w.put(CELLS, to_csv(&cells)?.as_bytes())?;
    }
    let trend = if has_temporal(model) {
        let t = temporal_trend(draws, model)?;
        w.put(TREND_CSV, to_csv(&t)?.as_bytes())?;
        if config.export.trend_svg {
            w.put(TREND_SVG, trend_svg(&t, "Temporal trend").as_bytes())?;
        }
        Some(t)
    } else {
        None
    };
    let mut missing_regions = Vec::new();
    if let Some(path) = &config.data.regions {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let merged = merge_regions(&text, &cells)?;
        if !merged.missing_regions.is_empty() {
            warn!("regions file has no feature for {}", merged.missing_regions.join(", "));
        }
        if !merged.unmatched_features.is_empty() {
            warn!("region features without a fitted area: {}", merged.unmatched_features.join(", "));
        }
        w.json(REGIONS, &merged.geojson)?;
        missing_regions = merged.missing_regions;
    }
    Ok(MapProducts {
        cells,
        trend,
        missing_regions,
    })
}

/// Ingest, fit with the configured engine, score and export.
///
/// A manifest marked `RUNNING` is written before the engine starts and
/// rewritten as `OK` or `FAILED` at the end; artifacts written before a
/// failure are kept.
pub fn run_fit(config: &RunConfig) -> Result<FitArtifacts> {
    config.validate_fit()?;
    let seed = config.seed()?;
    let start = Instant::now();
    let panel = load_panel(config)?;
    let model = LatentModel::new(&config.model, &panel)?;
    let mut manifest = Manifest::new(config);
    for p in [config.panel_path()?, config.adjacency_path()?] {
        manifest.inputs.push(InputFile {
            sha256: sha256_file(&p)?,
            path: p.display().to_string(),
        });
    }
    manifest.timings.insert("ingest".into(), start.elapsed().as_secs_f64());
    let dir = config.data.output.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut w = Writer {
        dir: &dir,
        manifest: &mut manifest,
    };
    w.put(CONFIG_COPY, config.to_toml()?.as_bytes())?;
    w.manifest()?;

    match fit_stages(config, seed, &model, &mut w) {
        Ok(mut a) => {
            w.manifest.status = RunStatus::Ok;
            w.manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
            w.manifest()?;
            a.manifest = w.manifest.clone();
            a.output = dir.clone();
            info!("fit written to {}", dir.display());
            Ok(a)
        }
        Err(e) => {
            w.manifest.status = RunStatus::Failed;
            w.manifest.error = Some(e.to_string());
            w.manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
            if let Err(m) = w.manifest() {
                warn!("could not write failed manifest: {m}");
            }
            Err(e)
        }
    }
}

fn fit_stages(config: &RunConfig, seed: u64, model: &LatentModel, w: &mut Writer<'_>) -> Result<FitArtifacts> {
    let (fixed_names, hyper_names) = table_names(model);
    let random_names = random_effect_names(model);
    let kind = config.engine.kind;

    let mut grid_tables = None;
    let mut mcmc_out = None;
    if matches!(kind, EngineKind::LaplaceGrid | EngineKind::Both) {
        let t = Instant::now();
        let grid = explore_hyperparameters(model, &config.engine.grid)?;
        w.manifest.grid_points = Some(grid.points.len());
        w.manifest.grid_evaluations = Some(grid.evaluations);
        let marginals = latent_summaries(&grid);
        let tables = (
            summarize_grid(&grid, &marginals, model, &fixed_names)?,
            summarize_grid(&grid, &marginals, model, &hyper_names)?,
            summarize_grid(&grid, &marginals, model, &random_names)?,
        );
        w.manifest.seeds.insert("grid_draws".into(), seed);
        let draws = sample_joint(model, &grid, config.engine.draws, seed)?;
        w.manifest.timings.insert("laplace_grid".into(), t.elapsed().as_secs_f64());
        grid_tables = Some((tables, draws));
    }
    if matches!(kind, EngineKind::Mcmc | EngineKind::Both) {
        let t = Instant::now();
        let mut mc = config.engine.mcmc.clone();
        mc.seed = seed.wrapping_add(1);
        w.manifest.seeds.insert("mcmc".into(), mc.seed);
        let run = mcmc_oracle(model, &mc)?;
        if run.poor_mixing {
            warn!("MCMC acceptance outside the target range; treat its summaries with care");
        }
        w.manifest.timings.insert("mcmc".into(), t.elapsed().as_secs_f64());
        mcmc_out = Some(run);
    }

    let mcmc_tables = match &mcmc_out {
        Some(run) => Some((
            summarize_draws(&run.draws, model, &fixed_names)?,
            summarize_draws(&run.draws, model, &hyper_names)?,
            summarize_draws(&run.draws, model, &random_names)?,
        )),
        None => None,
    };
    let agreement_report = match (&grid_tables, &mcmc_tables, &mcmc_out) {
        (Some(((gf, gh, _), _)), Some((mf, mh, _)), Some(run)) => {
            let fixed = agreement(gf, mf);
            let mut rows = fixed.clone();
            rows.extend(agreement(gh, mh));
            let report = EngineAgreement {
                schema_version: SCHEMA_VERSION,
                max_mean_shift: fixed.iter().map(|r| r.mean_shift).fold(0.0, f64::max),
                max_sd_relative: fixed.iter().map(|r| r.sd_relative).fold(0.0, f64::max),
                latent_acceptance: run.latent_acceptance,
                hyper_acceptance: run.hyper_acceptance.clone(),
                poor_mixing: run.poor_mixing,
                rows,
            };
            info!(
                "engine agreement: max |Δmean|/sd {:.3}, max sd relative difference {:.3}",
                report.max_mean_shift, report.max_sd_relative
            );
            w.json(AGREEMENT, &report)?;
            Some(report)
        }
        _ => None,
    };

    let ((fixed, hyper, random), draws) = match (grid_tables, mcmc_tables, mcmc_out) {
        (Some((tables, draws)), _, _) => (tables, draws),
        (None, Some(tables), Some(run)) => (tables, run.draws),
        _ => unreachable!("at least one engine runs"),
    };
    w.put(FIXED_EFFECTS, fixed.to_csv().as_bytes())?;
    w.put(HYPERPARAMETERS, hyper.to_csv().as_bytes())?;
    w.put(RANDOM_EFFECTS, random.to_csv().as_bytes())?;
    let waic_report = waic(&draws, model)?;
    w.json(WAIC, &waic_report)?;
    if config.export.draws {
        w.put(DRAWS, draws_to_csv(&draws, model).as_bytes())?;
    }
    let maps = write_maps(w, config, model, &draws)?;
    Ok(FitArtifacts {
        output: PathBuf::new(),
        fixed_effects: fixed,
        hyperparameters: hyper,
        random_effects: random,
        cells: maps.cells,
        trend: maps.trend,
        waic: waic_report,
        agreement: agreement_report,
        draws,
        manifest: w.manifest.clone(),
    })
}

/// Rebuilds the map products of a finished fit from its saved draws.
///
/// `draws` defaults to the draws file in the configured output directory.
pub fn export_maps(config: &RunConfig, draws: Option<&Path>) -> Result<MapProducts> {
    let panel = load_panel(config)?;
    if let Some(r) = &config.data.regions {
        if !r.is_file() {
            return Err(Error::Config(format!("data.regions `{}` does not exist", r.display())));
        }
    }
    let model = LatentModel::new(&config.model, &panel)?;
    let dir = config.data.output.clone();
    let path = draws.map_or_else(|| dir.join(DRAWS), Path::to_path_buf);
    let draws = read_draws(&path, &model)?;
    let mut manifest = Manifest::new(config);
    let mut w = Writer {
        dir: &dir,
        manifest: &mut manifest,
    };
    write_maps(&mut w, config, &model, &draws)
}

/// True values behind a simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub schema_version: u32,
    pub seed: u64,
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
    pub trend: f64,
    pub precisions: BTreeMap<String, f64>,
    /// Latent coordinate name to value.
    pub latent: Vec<(String, f64)>,
    /// Linear predictor `log λ` per cell, area-major.
    pub eta: Vec<f64>,
}

/// Files written by [`run_simulate`].
#[derive(Debug, Clone)]
pub struct SimulatedFiles {
    pub panel: PathBuf,
    pub adjacency: PathBuf,
    pub truth: PathBuf,
    pub record: TruthRecord,
}

fn simulation_graph(config: &RunConfig) -> Result<AdjacencyGraph> {
    match &config.data.adjacency {
        Some(p) => {
            let edges = read_adjacency(p)?;
            let mut areas: Vec<String> = Vec::new();
            for (a, b) in &edges {
                for id in [a, b] {
                    if !areas.contains(id) {
                        areas.push(id.clone());
                    }
                }
            }
            AdjacencyGraph::from_edges(&areas, &edges)
        }
        None => {
            let s = &config.simulate;
            if s.rows == 0 || s.cols == 0 {
                return Err(Error::Config("simulate.rows and simulate.cols must be positive".into()));
            }
            let g = AdjacencyGraph::lattice(s.rows, s.cols);
            let width = (g.len() as f64).log10().floor() as usize + 1;
            let ids: Vec<String> = (0..g.len()).map(|i| format!("R{:0width$}", i + 1)).collect();
            let edges: Vec<(String, String)> = g.edges().into_iter().map(|(i, j)| (ids[i].clone(), ids[j].clone())).collect();
            AdjacencyGraph::from_edges(&ids, &edges)
        }
    }
}

fn simulation_years(config: &RunConfig) -> Result<Vec<i32>> {
    let s = &config.simulate;
    if s.years == 0 {
        return Err(Error::Config("simulate.years must be positive".into()));
    }
    Ok((0..s.years as i32).map(|k| s.first_year + k).collect())
}

/// Simulates a panel from the generative settings and writes panel, adjacency and truth files.
pub fn run_simulate(config: &RunConfig) -> Result<SimulatedFiles> {
    let s = &config.simulate;
    let seed = s
        .seed
        .or(config.engine.seed)
        .ok_or_else(|| Error::Config("simulate.seed is required".into()))?;
    let spec = &config.model;
    spec.validate()?;
    if s.coefficients.len() != spec.covariates.len() {
        return Err(Error::Config(format!(
            "simulate.coefficients has {} values for {} covariates",
            s.coefficients.len(),
            spec.covariates.len()
        )));
    }
    if !(s.expected > 0.0 && s.expected.is_finite()) {
        return Err(Error::Config(format!("simulate.expected must be positive, got {}", s.expected)));
    }
    let graph = simulation_graph(config)?;
    let years = simulation_years(config)?;
    check_output_dir(&config.data.output)?;

    let cells = graph.len() * years.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let covariates: Vec<Covariate> = spec
        .covariates
        .iter()
        .map(|name| Covariate {
            name: name.clone(),
            values: (0..cells).map(|_| StandardNormal.sample(&mut rng)).collect(),
        })
        .collect();
    let blocks = spec.active_blocks();
    let pairs: Vec<(RandomBlock, f64)> = blocks.iter().map(|&b| (b, s.precision(b))).collect();
    let truth = SimulationTruth {
        intercept: s.intercept,
        coefficients: s.coefficients.clone(),
        trend: s.trend,
        hyperparameters: Hyperparameters::from_precisions(&pairs)?,
    };
    let sim = simulate(spec, &truth, &graph, &years, &vec![s.expected; cells], covariates, seed)?;
    let names = {
        let mut named = spec.clone();
        named.expected = crate::model::ExpectedPolicy::Supplied;
        LatentModel::new(&named, &sim.panel)?.coordinate_names()
    };
    let record = TruthRecord {
        schema_version: SCHEMA_VERSION,
        seed,
        intercept: s.intercept,
        coefficients: spec.covariates.iter().cloned().zip(s.coefficients.iter().copied()).collect(),
        trend: s.trend,
        precisions: pairs.iter().map(|&(b, t)| (b.to_string(), t)).collect(),
        latent: names.into_iter().zip(sim.latent.iter().copied()).collect(),
        eta: sim.eta.clone(),
    };
    let dir = &config.data.output;
    let out = SimulatedFiles {
        panel: dir.join("panel.csv"),
        adjacency: dir.join("adjacency.csv"),
        truth: dir.join("truth.json"),
        record,
    };
    write_atomic(&out.panel, panel_to_csv(&sim.panel)?.as_bytes())?;
    write_atomic(&out.adjacency, adjacency_to_csv(&sim.panel.graph).as_bytes())?;
    write_json(&out.truth, &out.record)?;
    info!("simulated {} cells into {}", cells, dir.display());
    Ok(out)
}

/// Simulation-based calibration over the simulation design; writes `sbc.json`.
pub fn run_sbc(config: &RunConfig) -> Result<SbcReport> {
    config.model.validate()?;
    let graph = simulation_graph(config)?;
    let years = simulation_years(config)?;
    check_output_dir(&config.data.output)?;
    let report = sbc(&config.model, &graph, &years, &config.sbc)?;
    write_json(config.data.output.join("sbc.json"), &report)?;
    Ok(report)
}
