use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Map, Value};

use crate::diagnostics::CellSummary;
use crate::error::{Error, Result};

/// Merged collection plus the ids found on only one side.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedRegions {
    pub geojson: Value,
    /// Fitted areas with no region feature.
    pub missing_regions: Vec<String>,
    /// Region features with no fitted area.
    pub unmatched_features: Vec<String>,
}

fn feature_id(f: &Value) -> Option<String> {
    let from = |v: &Value| match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    };
    f.get("properties")
        .and_then(|p| p.get("area_id"))
        .and_then(from)
        .or_else(|| f.get("id").and_then(from))
}

/// Copies every region feature once per year with the cell summaries as properties.
///
/// Features are matched on `properties.area_id`, falling back to the feature `id`.
pub fn merge_regions(regions: &str, cells: &[CellSummary]) -> Result<MergedRegions> {
    let doc: Value =
        serde_json::from_str(regions).map_err(|e| Error::InvalidInput(format!("invalid GeoJSON: {e}")))?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidInput("GeoJSON has no `features` array".into()))?;
    let mut by_area: BTreeMap<&str, Vec<&CellSummary>> = BTreeMap::new();
    for c in cells {
        by_area.entry(c.area_id.as_str()).or_default().push(c);
    }
    let mut seen = BTreeSet::new();
    let mut unmatched_features = Vec::new();
    let mut out = Vec::new();
    for f in features {
        let Some(id) = feature_id(f) else {
            unmatched_features.push("<no id>".to_string());
            continue;
        };
        let Some(rows) = by_area.get(id.as_str()) else {
            unmatched_features.push(id);
            continue;
        };
        seen.insert(id.clone());
        for c in rows {
            let mut props = f.get("properties").and_then(Value::as_object).cloned().unwrap_or_else(Map::new);
            if let Value::Object(extra) = serde_json::to_value(c).expect("cell summary serializes") {
                props.extend(extra);
            }
            let mut g = f.clone();
            g["properties"] = Value::Object(props);
            out.push(g);
        }
    }
    let missing_regions = by_area.keys().filter(|a| !seen.contains(**a)).map(|a| a.to_string()).collect();
    Ok(MergedRegions {
        geojson: json!({ "type": "FeatureCollection", "features": out }),
        missing_regions,
        unmatched_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(area: &str, year: i32) -> CellSummary {
        CellSummary {
            area_id: area.into(),
            year,
            rho_mean: 1.0,
            rho_sd: 0.1,
            rho_q025: 0.8,
            rho_q975: 1.2,
            lambda_mean: 5.0,
            exceed_prob: 0.5,
        }
    }

    #[test]
    fn merges_matching_ids_and_reports_the_rest() {
        let regions = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"area_id":"A","name":"Alpha"},"geometry":null},
            {"type":"Feature","id":"Z","properties":{},"geometry":null}]}"#;
        let cells = vec![cell("A", 1), cell("A", 2), cell("B", 1), cell("B", 2)];
        let m = merge_regions(regions, &cells).unwrap();
        let feats = m.geojson["features"].as_array().unwrap();
        assert_eq!(feats.len(), 2);
        assert_eq!(feats[1]["properties"]["year"], 2);
        assert_eq!(feats[0]["properties"]["name"], "Alpha");
        assert_eq!(m.missing_regions, vec!["B"]);
        assert_eq!(m.unmatched_features, vec!["Z"]);
    }

    #[test]
    fn rejects_non_collections() {
        assert!(merge_regions("{}", &[]).is_err());
        assert!(merge_regions("not json", &[]).is_err());
    }
}
