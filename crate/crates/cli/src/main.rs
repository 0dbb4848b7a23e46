use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use areal_core::io::{write_atomic, EngineKind, RunConfig};
use areal_core::pipeline::{export_maps, run_fit, run_sbc, run_simulate, summarize_draws_file};
use areal_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

#[derive(Parser)]
#[command(name = "areal", version, about = "Spatio-temporal Poisson disease mapping")]
struct Cli {
    /// Worker threads for grid points and replicates (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log filter, e.g. `debug` or `areal_core=debug`.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a panel and write summaries, maps, WAIC and a manifest.
    Fit(FitArgs),
    /// Simulate a panel with known truth.
    Simulate(SimulateArgs),
    /// Summarize columns of a saved draws file.
    Summarize(SummarizeArgs),
    /// Rebuild the per-cell table, trend chart and GeoJSON from saved draws.
    Export(ExportArgs),
    /// Simulation-based calibration of the fitting engine.
    Sbc(SbcArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Engine {
    LaplaceGrid,
    Mcmc,
    Both,
}

/// Flags shared by the config-driven commands; each one overrides the file.
#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    panel: Option<PathBuf>,
    #[arg(long)]
    adjacency: Option<PathBuf>,
    #[arg(long)]
    regions: Option<PathBuf>,
    #[arg(long, value_enum)]
    engine: Option<Engine>,
    /// Joint posterior draws from the grid engine.
    #[arg(long)]
    draws: Option<usize>,
    /// Relative-risk threshold of the exceedance probabilities.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    mcmc_iterations: Option<usize>,
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long)]
    grid_drop: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Adjacency to simulate on instead of the configured lattice.
    #[arg(long)]
    adjacency: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Draws file written by `fit`.
    #[arg(long)]
    draws: PathBuf,
    /// Columns to summarize (default: all).
    #[arg(long, value_delimiter = ',')]
    parameters: Vec<String>,
    /// Write the table here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    /// Draws file (default: the one in the output directory).
    #[arg(long)]
    draws: Option<PathBuf>,
    #[arg(long)]
    regions: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct SbcArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    replicates: Option<usize>,
}

fn init_logging(filter: &str) {
    env_logger::Builder::new()
        .parse_filters(filter)
        .format(|buf, record| {
            let msg = record.args().to_string().replace('\\', "\\\\").replace('"', "\\\"");
            writeln!(
                buf,
                "level={} target={} msg=\"{}\"",
                record.level().as_str().to_lowercase(),
                record.target(),
                msg
            )
        })
        .target(env_logger::Target::Stderr)
        .init();
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &common.output {
        cfg.data.output = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.engine.seed = Some(s);
        cfg.simulate.seed = Some(s);
        cfg.sbc.seed = s;
    }
    Ok(cfg)
}

fn fit(args: &FitArgs) -> Result<(), Error> {
    let mut cfg = load(&args.common)?;
    if let Some(p) = &args.panel {
        cfg.data.panel = Some(p.clone());
    }
    if let Some(p) = &args.adjacency {
        cfg.data.adjacency = Some(p.clone());
    }
    if let Some(p) = &args.regions {
        cfg.data.regions = Some(p.clone());
    }
    if let Some(e) = args.engine {
        cfg.engine.kind = match e {
            Engine::LaplaceGrid => EngineKind::LaplaceGrid,
            Engine::Mcmc => EngineKind::Mcmc,
            Engine::Both => EngineKind::Both,
        };
    }
    if let Some(d) = args.draws {
        cfg.engine.draws = d;
    }
    if let Some(t) = args.threshold {
        cfg.export.exceedance_threshold = t;
    }
    if let Some(n) = args.mcmc_iterations {
        cfg.engine.mcmc.iterations = n;
    }
    if let Some(s) = args.grid_step {
        cfg.engine.grid.step = Some(s);
    }
    if let Some(d) = args.grid_drop {
        cfg.engine.grid.drop = d;
    }
    let a = run_fit(&cfg)?;
    for row in &a.fixed_effects.rows {
        info!(
            "{}: mean {:.4} sd {:.4} [{:.4}, {:.4}]",
            row.parameter, row.mean, row.sd, row.q025, row.q975
        );
    }
    info!("waic {:.3} (p_waic {:.2})", a.waic.waic, a.waic.p_waic);
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<(), Error> {
    let mut cfg = load(&args.common)?;
    if let Some(p) = &args.adjacency {
        cfg.data.adjacency = Some(p.clone());
    }
    let out = run_simulate(&cfg)?;
    info!("wrote {}, {} and {}", out.panel.display(), out.adjacency.display(), out.truth.display());
    Ok(())
}

fn summarize(args: &SummarizeArgs) -> Result<(), Error> {
    let table = summarize_draws_file(&args.draws, &args.parameters)?;
    let text = table.to_csv();
    match &args.output {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn export(args: &ExportArgs) -> Result<(), Error> {
    let mut cfg = load(&args.common)?;
    if let Some(p) = &args.regions {
        cfg.data.regions = Some(p.clone());
    }
    if let Some(t) = args.threshold {
        cfg.export.exceedance_threshold = t;
    }
    let maps = export_maps(&cfg, args.draws.as_deref().map(Path::new))?;
    info!("exported {} cells to {}", maps.cells.len(), cfg.data.output.display());
    Ok(())
}

fn sbc(args: &SbcArgs) -> Result<(), Error> {
    let mut cfg = load(&args.common)?;
    if let Some(r) = args.replicates {
        cfg.sbc.replicates = r;
    }
    let report = run_sbc(&cfg)?;
    for p in &report.parameters {
        info!(
            "{}: coverage {:.3}, rank chi-square p {:.3}",
            p.name, p.coverage, p.p_value
        );
    }
    info!("{} of {} replicates completed", report.completed, report.replicates);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.log_level);
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Summarize(a) => summarize(a),
        Command::Export(a) => export(a),
        Command::Sbc(a) => sbc(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
