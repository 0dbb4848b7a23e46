use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::model::{Covariate, PanelData};

const BASE_COLUMNS: [&str; 4] = ["area_id", "year", "count", "exposure"];

fn parse_error(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        row,
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_error(path, 1, format!("{other:?}")),
        })
}

fn header(path: &Path, rdr: &mut csv::Reader<std::fs::File>) -> Result<Vec<String>> {
    let h = rdr.headers().map_err(|e| parse_error(path, 1, e.to_string()))?;
    Ok(h.iter().map(str::to_string).collect())
}

/// Edge list from an `area_id,neighbor_id` file, one directed row per edge.
pub fn read_adjacency(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let h = header(path, &mut rdr)?;
    if h.len() < 2 || h[0] != "area_id" || h[1] != "neighbor_id" {
        return Err(parse_error(path, 1, "header must start with `area_id,neighbor_id`"));
    }
    let mut edges = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| parse_error(path, row, e.to_string()))?;
        let a = rec.get(0).unwrap_or("");
        let b = rec.get(1).unwrap_or("");
        if a.is_empty() || b.is_empty() {
            return Err(parse_error(path, row, "empty area id"));
        }
        if a == b {
            return Err(parse_error(path, row, format!("self-loop on `{a}`")));
        }
        edges.push((a.to_string(), b.to_string()));
    }
    Ok(edges)
}

fn parse_f64(path: &Path, row: usize, column: &str, field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_error(path, row, format!("non-numeric {column} `{field}`")))
}

struct Row {
    count: Option<u64>,
    exposure: f64,
    expected: Option<f64>,
    covariates: Vec<f64>,
}

/// Panel from an `area_id,year,count,exposure[,E][,covariates...]` file.
///
/// Areas keep their order of first appearance and years are sorted. Any
/// (area, year) pair without a row becomes a missing cell with unit exposure.
/// Every area named in `edges` must appear in the panel.
pub fn parse_panel(path: impl AsRef<Path>, edges: &[(String, String)]) -> Result<PanelData> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let h = header(path, &mut rdr)?;
    if h.len() < 4 || h[..4] != BASE_COLUMNS {
        return Err(parse_error(path, 1, "header must start with `area_id,year,count,exposure`"));
    }
    let has_e = h.get(4).is_some_and(|c| c == "E");
    let cov_start = if has_e { 5 } else { 4 };
    let cov_names: Vec<String> = h[cov_start..].to_vec();
    if let Some(dup) = cov_names.iter().enumerate().find(|(i, c)| cov_names[..*i].contains(c)) {
        return Err(parse_error(path, 1, format!("duplicate column `{}`", dup.1)));
    }

    let mut areas: Vec<String> = Vec::new();
    let mut area_index: HashMap<String, usize> = HashMap::new();
    let mut years = BTreeSet::new();
    let mut rows: HashMap<(usize, i32), (usize, Row)> = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| parse_error(path, row, e.to_string()))?;
        if rec.len() != h.len() {
            return Err(parse_error(path, row, format!("expected {} fields, found {}", h.len(), rec.len())));
        }
        let area = &rec[0];
        if area.is_empty() {
            return Err(parse_error(path, row, "empty area id"));
        }
        let year: i32 = rec[1]
            .parse()
            .map_err(|_| parse_error(path, row, format!("invalid year `{}`", &rec[1])))?;
        let count = match &rec[2] {
            "" => None,
            s => Some(s.parse::<u64>().map_err(|_| {
                if s.parse::<i64>().is_ok_and(|v| v < 0) {
                    parse_error(path, row, format!("negative count {s}"))
                } else {
                    parse_error(path, row, format!("invalid count `{s}`"))
                }
            })?),
        };
        let exposure = match &rec[3] {
            "" => 1.0,
            s => parse_f64(path, row, "exposure", s)?,
        };
        if exposure <= 0.0 {
            return Err(parse_error(path, row, format!("exposure must be positive, got {exposure}")));
        }
        let expected = if has_e {
            let e = parse_f64(path, row, "E", &rec[4])?;
            if e <= 0.0 {
                return Err(parse_error(path, row, format!("E must be positive, got {e}")));
            }
            Some(e)
        } else {
            None
        };
        let covariates = (cov_start..h.len())
            .map(|c| match &rec[c] {
                "" => Ok(f64::NAN),
                s => parse_f64(path, row, &h[c], s),
            })
            .collect::<Result<Vec<_>>>()?;
        let next = areas.len();
        let a = *area_index.entry(area.to_string()).or_insert_with(|| {
            areas.push(area.to_string());
            next
        });
        years.insert(year);
        let previous = rows.insert(
            (a, year),
            (
                row,
                Row {
                    count,
                    exposure,
                    expected,
                    covariates,
                },
            ),
        );
        if let Some((first, _)) = previous {
            return Err(parse_error(path, row, format!("duplicate row for ({area}, {year}), first at row {first}")));
        }
    }
    if rows.is_empty() {
        return Err(parse_error(path, 2, "panel has no rows"));
    }

    let graph = AdjacencyGraph::from_edges(&areas, edges)?;
    let years: Vec<i32> = years.into_iter().collect();
    let cells = areas.len() * years.len();
    // Missing rows borrow the supplied E rate so the column stays positive.
    let e_rate = if has_e {
        let (e, x) = rows
            .values()
            .fold((0.0, 0.0), |(e, x), (_, r)| (e + r.expected.unwrap_or(0.0), x + r.exposure));
        e / x
    } else {
        f64::NAN
    };
    let mut counts = Vec::with_capacity(cells);
    let mut exposure = Vec::with_capacity(cells);
    let mut expected = Vec::with_capacity(cells);
    let mut cov_values = vec![Vec::with_capacity(cells); cov_names.len()];
    let mut missing = Vec::new();
    for (a, id) in areas.iter().enumerate() {
        for &year in &years {
            match rows.get(&(a, year)) {
                Some((_, r)) => {
                    counts.push(r.count);
                    exposure.push(r.exposure);
                    expected.push(r.expected.unwrap_or(f64::NAN));
                    for (v, c) in cov_values.iter_mut().zip(&r.covariates) {
                        v.push(*c);
                    }
                }
                None => {
                    missing.push(format!("({id}, {year})"));
                    counts.push(None);
                    exposure.push(1.0);
                    expected.push(e_rate);
                    for v in &mut cov_values {
                        v.push(f64::NAN);
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        warn!("{}: no row for {}; treated as missing", path.display(), missing.join(", "));
    }
    let covariates = cov_names
        .into_iter()
        .zip(cov_values)
        .map(|(name, values)| Covariate { name, values })
        .collect();
    PanelData::new(graph, years, counts, exposure, has_e.then_some(expected), covariates)
}

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

/// Panel as CSV text in the schema read by [`parse_panel`], one row per cell.
pub fn panel_to_csv(panel: &PanelData) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    if panel.expected.is_some() {
        head.push("E".into());
    }
    head.extend(panel.covariate_names());
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("CSV encoding failed: {e}"));
    w.write_record(&head).map_err(csv_err)?;
    for c in 0..panel.n_cells() {
        let (a, t) = panel.position(c);
        let mut rec = vec![
            panel.graph.areas()[a].clone(),
            panel.years[t].to_string(),
            panel.counts[c].map_or_else(String::new, |y| y.to_string()),
            fmt_f64(panel.exposure[c]),
        ];
        if let Some(e) = &panel.expected {
            rec.push(fmt_f64(e[c]));
        }
        rec.extend(panel.covariates.iter().map(|cov| fmt_f64(cov.values[c])));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("CSV encoding failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// Adjacency as `area_id,neighbor_id` text, both directions of every edge.
pub fn adjacency_to_csv(graph: &AdjacencyGraph) -> String {
    let mut out = String::from("area_id,neighbor_id\n");
    let areas = graph.areas();
    for (i, id) in areas.iter().enumerate() {
        for &j in graph.neighbors(i) {
            out.push_str(&format!("{id},{}\n", areas[j]));
        }
    }
    out
}
