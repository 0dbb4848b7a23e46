use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::inference::{HyperGrid, LatentMarginals, LatentModel, PosteriorDraws};
use crate::model::RandomBlock;

pub const SUMMARY_HEADER: [&str; 5] = ["parameter", "mean", "sd", "0.025quant", "0.975quant"];

/// Fewest draws accepted for sample quantiles.
pub const MIN_QUANTILE_DRAWS: usize = 100;

const CDF_TOLERANCE: f64 = 1e-6;

// Grid spacing in standardized units, used for the kernel floor.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn get(&self, parameter: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.parameter == parameter)
    }

    pub fn to_csv(&self) -> String {
        let mut out = SUMMARY_HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            let name = if r.parameter.contains([',', '"']) {
                format!("\"{}\"", r.parameter.replace('"', "\"\""))
            } else {
                r.parameter.clone()
            };
            let _ = writeln!(out, "{name},{},{},{},{}", r.mean, r.sd, r.q025, r.q975);
        }
        out
    }

    /// Parses rows with or without the header line. Whitespace around fields is ignored.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 1;
            let record = record.map_err(|e| parse_error(line, e.to_string()))?;
            if record.iter().eq(SUMMARY_HEADER.iter().copied()) {
                continue;
            }
            if record.len() != SUMMARY_HEADER.len() {
                return Err(parse_error(
                    line,
                    format!("expected {} fields, found {}", SUMMARY_HEADER.len(), record.len()),
                ));
            }
            let num = |k: usize| -> Result<f64> {
                record[k]
                    .parse::<f64>()
                    .map_err(|_| parse_error(line, format!("`{}` is not a number", &record[k])))
            };
            rows.push(SummaryRow {
                parameter: record[0].to_string(),
                mean: num(1)?,
                sd: num(2)?,
                q025: num(3)?,
                q975: num(4)?,
            });
        }
        Ok(SummaryTable { rows })
    }
}

fn parse_error(row: usize, message: String) -> Error {
    Error::Parse {
        path: "<summary>".into(),
        row,
        message,
    }
}

/// Median-unbiased sample quantile (Hyndman and Fan type 8).
pub fn sample_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 + 1.0 / 3.0) * p + 1.0 / 3.0;
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= n as f64 {
        return sorted[n - 1];
    }
    let lo = h.floor();
    let i = lo as usize - 1;
    sorted[i] + (h - lo) * (sorted[i + 1] - sorted[i])
}

/// Summary of a sample; needs at least [`MIN_QUANTILE_DRAWS`] values.
pub fn summarize_sample(parameter: &str, values: &[f64]) -> Result<SummaryRow> {
    if values.len() < MIN_QUANTILE_DRAWS {
        return Err(Error::InvalidInput(format!(
            "{} draws for `{parameter}`, quantiles need at least {MIN_QUANTILE_DRAWS}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SummaryRow {
        parameter: parameter.to_string(),
        mean,
        sd: var.sqrt(),
        q025: sample_quantile(&sorted, 0.025),
        q975: sample_quantile(&sorted, 0.975),
    })
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// CDF of a mixture given as `(weight, mean, sd)`; zero sd components are point masses.
pub fn mixture_cdf(components: &[(f64, f64, f64)], x: f64) -> f64 {
    let total: f64 = components.iter().map(|c| c.0).sum();
    components
        .iter()
        .map(|&(w, mu, sd)| {
            let f = if sd > 0.0 {
                normal_cdf((x - mu) / sd)
            } else if x >= mu {
                1.0
            } else {
                0.0
            };
            w * f
        })
        .sum::<f64>()
        / total
}

/// Quantile of a Gaussian mixture by bisection of its CDF (to 1e-6 in x).
pub fn mixture_quantile(components: &[(f64, f64, f64)], p: f64) -> f64 {
    let live: Vec<_> = components.iter().copied().filter(|c| c.0 > 0.0).collect();
    let spread = live.iter().map(|c| c.2).fold(0.0, f64::max);
    let mut lo = live.iter().map(|c| c.1).fold(f64::INFINITY, f64::min) - 10.0 * spread - 1.0;
    let mut hi = live.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max) + 10.0 * spread + 1.0;
    while hi - lo > CDF_TOLERANCE * (1.0 + lo.abs().min(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(&live, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Summary of a Gaussian mixture marginal.
pub fn summarize_mixture(parameter: &str, components: &[(f64, f64, f64)]) -> SummaryRow {
    let total: f64 = components.iter().map(|c| c.0).sum();
    let mean = components.iter().map(|c| c.0 * c.1).sum::<f64>() / total;
    let second = components.iter().map(|c| c.0 * (c.2 * c.2 + c.1 * c.1)).sum::<f64>() / total;
    SummaryRow {
        parameter: parameter.to_string(),
        mean,
        sd: (second - mean * mean).max(0.0).sqrt(),
        q025: mixture_quantile(components, 0.025),
        q975: mixture_quantile(components, 0.975),
    }
}

/// Row name of the precision of `block`.
pub fn precision_name(block: RandomBlock) -> String {
    block.label().to_string()
}

fn block_for_name(blocks: &[RandomBlock], name: &str) -> Option<usize> {
    blocks.iter().position(|&b| precision_name(b) == name)
}

/// Smoothed marginal of log precision `i` over the grid: one Gaussian kernel per point.
///
/// The kernel variance restores the part of the Laplace variance the discrete
/// grid does not carry, with a floor of one grid cell's uniform variance.
pub fn log_precision_components(grid: &HyperGrid, i: usize) -> Vec<(f64, f64, f64)> {
    let total: f64 = grid.points.iter().map(|p| p.weight).sum();
    let mean = grid.points.iter().map(|p| p.weight * p.z[i]).sum::<f64>() / total;
    let grid_var = grid.points.iter().map(|p| p.weight * (p.z[i] - mean).powi(2)).sum::<f64>() / total;
    let sigma2 = grid.laplace_covariance()[(i, i)];
    let kernel = (sigma2 - grid_var).max(grid.step * grid.step * sigma2 / 12.0);
    grid.points.iter().map(|p| (p.weight, p.z[i], kernel.sqrt())).collect()
}

/// Precision summary from a log-precision mixture, via `τ = e^z`.
pub fn summarize_precision_mixture(parameter: &str, components: &[(f64, f64, f64)]) -> SummaryRow {
    let total: f64 = components.iter().map(|c| c.0).sum();
    let mean = components.iter().map(|&(w, mu, s)| w * (mu + 0.5 * s * s).exp()).sum::<f64>() / total;
    let second = components.iter().map(|&(w, mu, s)| w * (2.0 * mu + 2.0 * s * s).exp()).sum::<f64>() / total;
    SummaryRow {
        parameter: parameter.to_string(),
        mean,
        sd: (second - mean * mean).max(0.0).sqrt(),
        q025: mixture_quantile(components, 0.025).exp(),
        q975: mixture_quantile(components, 0.975).exp(),
    }
}

/// Summary rows from joint draws. Names are latent coordinate names or `Precision for <block>`.
pub fn summarize_draws(draws: &PosteriorDraws, model: &LatentModel, names: &[String]) -> Result<SummaryTable> {
    let coords = model.coordinate_names();
    let mut rows = Vec::with_capacity(names.len());
    for name in names {
        let values = if let Some(j) = coords.iter().position(|c| c == name) {
            draws.coordinate(j)
        } else if let Some(i) = block_for_name(&draws.blocks, name) {
            draws.log_precision.iter().map(|z| z[i].exp()).collect()
        } else {
            return Err(Error::UnknownParameter(name.clone()));
        };
        rows.push(summarize_sample(name, &values)?);
    }
    Ok(SummaryTable { rows })
}

/// Summary rows from the grid mixture.
pub fn summarize_grid(
    grid: &HyperGrid,
    marginals: &LatentMarginals,
    model: &LatentModel,
    names: &[String],
) -> Result<SummaryTable> {
    let coords = model.coordinate_names();
    let mut rows = Vec::with_capacity(names.len());
    for name in names {
        let row = if let Some(j) = coords.iter().position(|c| c == name) {
            summarize_mixture(name, &marginals.components(j))
        } else if let Some(i) = block_for_name(&grid.blocks, name) {
            summarize_precision_mixture(name, &log_precision_components(grid, i))
        } else {
            return Err(Error::UnknownParameter(name.clone()));
        };
        rows.push(row);
    }
    Ok(SummaryTable { rows })
}

/// Names of the fixed effects followed by one precision row per block.
pub fn table_names(model: &LatentModel) -> (Vec<String>, Vec<String>) {
    let fixed = model.fixed_names();
    let hyper = model.blocks().into_iter().map(precision_name).collect();
    (fixed, hyper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn standard_normal_draws() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = summarize_sample("x", &x).unwrap();
        assert!(r.mean.abs() < 0.01);
        assert!((r.q025 + 1.96).abs() < 0.03);
        assert!((r.q975 - 1.96).abs() < 0.03);
    }

    #[test]
    fn degenerate_draws() {
        let r = summarize_sample("x", &[3.0; 200]).unwrap();
        assert_eq!((r.mean, r.sd, r.q025, r.q975), (3.0, 0.0, 3.0, 3.0));
        assert!(summarize_sample("x", &[3.0; 99]).is_err());
    }

    #[test]
    fn type8_quantile_small_sample() {
        let s = [1.0, 2.0, 3.0, 4.0];
        // h = (4 + 1/3) 0.5 + 1/3 = 2.5
        assert!((sample_quantile(&s, 0.5) - 2.5).abs() < 1e-15);
        assert_eq!(sample_quantile(&s, 0.0), 1.0);
        assert_eq!(sample_quantile(&s, 1.0), 4.0);
    }

    #[test]
    fn quantiles_monotone_in_level() {
        let comps = [(0.3, -1.0, 0.5), (0.7, 2.0, 1.0)];
        let mut last = f64::NEG_INFINITY;
        for k in 1..40 {
            let q = mixture_quantile(&comps, k as f64 / 40.0);
            assert!(q > last);
            last = q;
        }
        let s = [0.1, 0.5, 0.2, 0.9, 0.3];
        let mut sorted = s.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut last = f64::NEG_INFINITY;
        for k in 0..=20 {
            let q = sample_quantile(&sorted, k as f64 / 20.0);
            assert!(q >= last);
            last = q;
        }
    }

    #[test]
    fn single_gaussian_mixture_quantiles() {
        let r = summarize_mixture("a", &[(1.0, 1.0, 2.0)]);
        assert!((r.q025 - (1.0 - 2.0 * 1.959963984540054)).abs() < 1e-5);
        assert!((r.q975 - (1.0 + 2.0 * 1.959963984540054)).abs() < 1e-5);
        assert!((r.sd - 2.0).abs() < 1e-12);
        let r = summarize_mixture("a", &[(1.0, 3.0, 0.0)]);
        assert!((r.q025 - 3.0).abs() < 1e-5 && r.sd == 0.0);
    }

    #[test]
    fn lognormal_precision_summary() {
        let r = summarize_precision_mixture("Precision for AREA_ID", &[(1.0, 0.0, 1.0)]);
        assert!((r.mean - 0.5f64.exp()).abs() < 1e-12);
        assert!((r.q975 - 1.959963984540054f64.exp()).abs() < 1e-4);
    }

    #[test]
    fn csv_round_trip_and_table_layout() {
        let t = SummaryTable::parse_csv("Woodland, 0.7649, 0.2249, 0.3331, 1.2172").unwrap();
        assert_eq!(
            t.rows[0],
            SummaryRow {
                parameter: "Woodland".into(),
                mean: 0.7649,
                sd: 0.2249,
                q025: 0.3331,
                q975: 1.2172
            }
        );
        let csv = t.to_csv();
        assert!(csv.starts_with("parameter,mean,sd,0.025quant,0.975quant\n"));
        assert_eq!(SummaryTable::parse_csv(&csv).unwrap(), t);
        assert!(SummaryTable::parse_csv("a,1,2,x,4").is_err());
    }

    #[test]
    fn precision_row_names() {
        assert_eq!(precision_name(RandomBlock::SpatialStructured), "Precision for AREA_ID");
        assert_eq!(precision_name(RandomBlock::TemporalRw1), "Precision for Year");
        assert_eq!(precision_name(RandomBlock::Interaction), "Precision for AREA_ID.YEAR");
    }

    #[test]
    fn unknown_parameter_rejected() {
        let model = crate::inference::grid_tests_model();
        let grid = crate::inference::explore_hyperparameters(&model, &Default::default()).unwrap();
        let marg = crate::inference::latent_summaries(&grid);
        let err = summarize_grid(&grid, &marg, &model, &["nope".to_string()]).unwrap_err();
        assert!(matches!(err, Error::UnknownParameter(_)));
        let names = vec![precision_name(RandomBlock::SpatialIid)];
        let t = summarize_grid(&grid, &marg, &model, &names).unwrap();
        let r = &t.rows[0];
        assert!(r.q025 < r.mean && r.mean < r.q975 && r.sd > 0.0);
    }
}
