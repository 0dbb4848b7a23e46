//! Scoring and reporting: WAIC, summary tables, temporal trends, exceedance
//! probabilities and simulation-based calibration.

mod maps;
mod sbc;
mod summary;
mod waic;

pub use maps::{cell_summaries, exceedance, relative_risk_draws, temporal_trend, CellSummary, TrendPoint};
pub use sbc::{chi_square_uniform, rank_histogram, replicate_seed, sbc, SbcConfig, SbcFailure, SbcParameter, SbcReport};
pub use summary::{
    log_precision_components, mixture_cdf, mixture_quantile, precision_name, sample_quantile, summarize_draws,
    summarize_grid, summarize_mixture, summarize_precision_mixture, summarize_sample, table_names, SummaryRow,
    SummaryTable, MIN_QUANTILE_DRAWS, SUMMARY_HEADER,
};
pub use waic::{waic, waic_from_means, WaicContribution, WaicReport};
