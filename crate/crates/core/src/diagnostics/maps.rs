use serde::{Deserialize, Serialize};

use super::summary::summarize_sample;
use crate::error::{Error, Result};
use crate::inference::{LatentModel, PosteriorDraws};
use crate::model::{LatentBlock, RandomBlock};

/// Posterior band of the temporal effect in one year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub year: i32,
    pub mean: f64,
    pub lower95: f64,
    pub upper95: f64,
}

/// Posterior of `γ_t + φ_t + β_t (t − t̄)` per year, from joint draws.
pub fn temporal_trend(draws: &PosteriorDraws, model: &LatentModel) -> Result<Vec<TrendPoint>> {
    let layout = model.layout();
    let rw = layout.range(LatentBlock::Random(RandomBlock::TemporalRw1));
    let iid = layout.range(LatentBlock::Random(RandomBlock::TemporalIid));
    let slope = layout.range(LatentBlock::TimeTrend);
    if rw.is_none() && iid.is_none() && slope.is_none() {
        return Err(Error::InvalidInput("temporal trend needs a temporal block".into()));
    }
    let n_times = layout.n_times();
    let centre = (n_times as f64 - 1.0) / 2.0;
    let years: Vec<i32> = match model.context() {
        Some(ctx) => ctx.panel.years.clone(),
        None => (0..n_times as i32).collect(),
    };
    (0..n_times)
        .map(|t| {
            let values: Vec<f64> = draws
                .latent
                .iter()
                .map(|x| {
                    let mut v = 0.0;
                    if let Some(r) = &rw {
                        v += x[r.start + t];
                    }
                    if let Some(r) = &iid {
                        v += x[r.start + t];
                    }
                    if let Some(r) = &slope {
                        v += x[r.start] * (t as f64 - centre);
                    }
                    v
                })
                .collect();
            let row = summarize_sample("trend", &values)?;
            Ok(TrendPoint {
                year: years[t],
                mean: row.mean,
                lower95: row.q025,
                upper95: row.q975,
            })
        })
        .collect()
}

/// Per-draw relative risk `ρ = exp(A x)` of every panel cell, observed or not.
pub fn relative_risk_draws(draws: &PosteriorDraws, model: &LatentModel) -> Result<Vec<Vec<f64>>> {
    let ctx = model
        .context()
        .ok_or_else(|| Error::InvalidInput("relative risks need a panel-backed model".into()))?;
    Ok(draws
        .latent
        .iter()
        .map(|x| ctx.prediction.linear_predictor(x).into_iter().map(f64::exp).collect())
        .collect())
}

/// Monte Carlo `P(ρ > r₀)` per cell from relative-risk draws.
pub fn exceedance(rho: &[Vec<f64>], threshold: f64) -> Vec<f64> {
    let cells = rho.first().map_or(0, Vec::len);
    let s = rho.len() as f64;
    (0..cells)
        .map(|c| rho.iter().filter(|r| r[c] > threshold).count() as f64 / s)
        .collect()
}

/// One row of the per-cell join table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub area_id: String,
    pub year: i32,
    pub rho_mean: f64,
    pub rho_sd: f64,
    pub rho_q025: f64,
    pub rho_q975: f64,
    pub lambda_mean: f64,
    pub exceed_prob: f64,
}

/// Posterior relative risk, expected count and exceedance for every panel cell.
pub fn cell_summaries(draws: &PosteriorDraws, model: &LatentModel, threshold: f64) -> Result<Vec<CellSummary>> {
    let ctx = model
        .context()
        .ok_or_else(|| Error::InvalidInput("cell summaries need a panel-backed model".into()))?;
    let rho = relative_risk_draws(draws, model)?;
    let exceed = exceedance(&rho, threshold);
    let areas = ctx.panel.graph.areas();
    ctx.prediction
        .cells()
        .iter()
        .enumerate()
        .map(|(k, &cell)| {
            let values: Vec<f64> = rho.iter().map(|r| r[k]).collect();
            let row = summarize_sample("rho", &values)?;
            let (area, t) = ctx.panel.position(cell);
            Ok(CellSummary {
                area_id: areas[area].clone(),
                year: ctx.panel.years[t],
                rho_mean: row.mean,
                rho_sd: row.sd,
                rho_q025: row.q025,
                rho_q975: row.q975,
                lambda_mean: row.mean * ctx.expected[cell],
                exceed_prob: exceed[k],
            })
        })
        .collect()
}
