use super::layout::{LatentBlock, LatentLayout};
use super::panel::PanelData;
use super::spec::RandomBlock;
use crate::error::{Error, Result};

/// Sparse observation matrix `A` and offsets: `η = A x + offset` is `log λ` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMap {
    dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
    offset: Vec<f64>,
    cells: Vec<usize>,
}

impl ObservationMap {
    /// One row per observed cell.
    pub fn observed(panel: &PanelData, layout: &LatentLayout, covariates: &[String], expected: &[f64]) -> Result<Self> {
        let cells = panel.observed_cells();
        Self::build(panel, layout, covariates, expected, &cells, false)
    }

    /// One row per cell, missing ones included; absent covariate values are
    /// replaced by their mean over observed cells.
    pub fn all_cells(panel: &PanelData, layout: &LatentLayout, covariates: &[String], expected: &[f64]) -> Result<Self> {
        let cells: Vec<usize> = (0..panel.n_cells()).collect();
        Self::build(panel, layout, covariates, expected, &cells, true)
    }

    /// Builds directly from rows, for tests and custom designs.
    pub fn from_rows(dim: usize, rows: Vec<Vec<(usize, f64)>>, offset: Vec<f64>) -> Result<Self> {
        if rows.len() != offset.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: offset.len(),
            });
        }
        if rows.iter().flatten().any(|&(j, _)| j >= dim) {
            return Err(Error::InvalidDimension(format!("design column outside dimension {dim}")));
        }
        let cells = (0..rows.len()).collect();
        Ok(Self {
            dim,
            rows,
            offset,
            cells,
        })
    }

    fn build(
        panel: &PanelData,
        layout: &LatentLayout,
        covariates: &[String],
        expected: &[f64],
        cells: &[usize],
        impute: bool,
    ) -> Result<Self> {
        let (n, t_len) = (panel.n_areas(), panel.n_times());
        if layout.n_areas() != n || layout.n_times() != t_len {
            return Err(Error::DimensionMismatch {
                expected: layout.n_areas() * layout.n_times(),
                found: n * t_len,
            });
        }
        if layout.n_covariates() != covariates.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.n_covariates(),
                found: covariates.len(),
            });
        }
        if expected.len() != panel.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: panel.n_cells(),
                found: expected.len(),
            });
        }
        let mut columns = Vec::with_capacity(covariates.len());
        for name in covariates {
            let cov = panel
                .covariate(name)
                .ok_or_else(|| Error::InvalidInput(format!("covariate `{name}` not found in panel")))?;
            let observed: Vec<f64> = panel
                .observed_cells()
                .into_iter()
                .map(|c| cov.values[c])
                .filter(|v| v.is_finite())
                .collect();
            let fill = if observed.is_empty() {
                0.0
            } else {
                observed.iter().sum::<f64>() / observed.len() as f64
            };
            columns.push((name, &cov.values, fill));
        }

        let at = |kind| layout.range(kind).map(|r| r.start);
        let intercept = at(LatentBlock::Intercept);
        let beta = at(LatentBlock::Covariates);
        let trend = at(LatentBlock::TimeTrend);
        let ups = at(LatentBlock::Random(RandomBlock::SpatialStructured));
        let nu = at(LatentBlock::Random(RandomBlock::SpatialIid));
        let gam = at(LatentBlock::Random(RandomBlock::TemporalRw1));
        let phi = at(LatentBlock::Random(RandomBlock::TemporalIid));
        let delta = at(LatentBlock::Random(RandomBlock::Interaction));
        let centre = (t_len as f64 - 1.0) / 2.0;

        let mut rows = Vec::with_capacity(cells.len());
        let mut offset = Vec::with_capacity(cells.len());
        for &c in cells {
            let (i, t) = panel.position(c);
            let mut row = Vec::with_capacity(8 + columns.len());
            if let Some(o) = intercept {
                row.push((o, 1.0));
            }
            if let Some(o) = beta {
                for (k, (name, values, fill)) in columns.iter().enumerate() {
                    let mut v = values[c];
                    if !v.is_finite() {
                        if impute {
                            v = *fill;
                        } else {
                            return Err(Error::InvalidInput(format!(
                                "covariate `{name}` missing at observed cell ({}, {})",
                                panel.graph.areas()[i],
                                panel.years[t]
                            )));
                        }
                    }
                    row.push((o + k, v));
                }
            }
            if let Some(o) = trend {
                row.push((o, t as f64 - centre));
            }
            for o in [ups, nu].into_iter().flatten() {
                row.push((o + i, 1.0));
            }
            for o in [gam, phi].into_iter().flatten() {
                row.push((o + t, 1.0));
            }
            if let Some(o) = delta {
                row.push((o + i * t_len + t, 1.0));
            }
            rows.push(row);
            offset.push(expected[c].ln());
        }
        Ok(Self {
            dim: layout.len(),
            rows,
            offset,
            cells: cells.to_vec(),
        })
    }

    /// Latent dimension `m`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// Panel cell index of each row.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    /// `η = A x + offset`.
    pub fn eta(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.offset)
            .map(|(row, off)| off + row.iter().map(|&(j, v)| v * x[j]).sum::<f64>())
            .collect()
    }

    /// `A x` without the offset.
    pub fn linear_predictor(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, v)| v * x[j]).sum::<f64>())
            .collect()
    }

    /// `Aᵀ w`.
    pub fn transpose_mul(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (row, &wi) in self.rows.iter().zip(w) {
            for &(j, v) in row {
                out[j] += v * wi;
            }
        }
        out
    }

    /// Lower-triangle triplets of `Aᵀ diag(w) A`.
    pub fn weighted_gram_triplets(&self, w: &[f64], out: &mut Vec<(usize, usize, f64)>) {
        for (row, &wi) in self.rows.iter().zip(w) {
            for &(a, va) in row {
                for &(b, vb) in row {
                    if a >= b {
                        out.push((a, b, wi * va * vb));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AdjacencyGraph;
    use crate::model::panel::Covariate;
    use crate::model::spec::{BlockSet, ModelSpec};

    #[test]
    fn single_cell_intercept_only() {
        let panel = PanelData::new(AdjacencyGraph::path(1), vec![2000], vec![Some(3)], vec![1.0], None, vec![])
            .unwrap();
        let spec = ModelSpec {
            blocks: BlockSet::none(),
            ..ModelSpec::default()
        };
        let layout = LatentLayout::new(&spec, 1, 1, 0).unwrap();
        let a = ObservationMap::observed(&panel, &layout, &[], &[2.5]).unwrap();
        assert_eq!(a.rows(), &[vec![(0, 1.0)]]);
        assert_eq!(a.offset(), &[2.5f64.ln()]);
    }

    #[test]
    fn selector_picks_one_entry_per_block() {
        let g = AdjacencyGraph::path(3);
        let panel = PanelData::new(
            g,
            vec![2012, 2013],
            vec![Some(1); 6],
            vec![1.0; 6],
            None,
            vec![Covariate {
                name: "x".into(),
                values: vec![0.5; 6],
            }],
        )
        .unwrap();
        let spec = ModelSpec::default();
        let layout = LatentLayout::new(&spec, 3, 2, 1).unwrap();
        let a = ObservationMap::observed(&panel, &layout, &["x".into()], &[1.0; 6]).unwrap();
        // Row for area index 2, time index 1 (1-based (3, 2)).
        let row = &a.rows()[panel.cell(2, 1)];
        let ups = layout.range(LatentBlock::Random(RandomBlock::SpatialStructured)).unwrap().start;
        let nu = layout.range(LatentBlock::Random(RandomBlock::SpatialIid)).unwrap().start;
        let gam = layout.range(LatentBlock::Random(RandomBlock::TemporalRw1)).unwrap().start;
        let phi = layout.range(LatentBlock::Random(RandomBlock::TemporalIid)).unwrap().start;
        let del = layout.range(LatentBlock::Random(RandomBlock::Interaction)).unwrap().start;
        let expected = vec![
            (0, 1.0),
            (1, 0.5),
            (ups + 2, 1.0),
            (nu + 2, 1.0),
            (gam + 1, 1.0),
            (phi + 1, 1.0),
            (del + 2 * 2 + 1, 1.0),
        ];
        assert_eq!(row, &expected);
    }

    #[test]
    fn missing_cells_are_excluded() {
        let panel = PanelData::new(
            AdjacencyGraph::path(2),
            vec![1, 2],
            vec![Some(1), None, Some(2), Some(3)],
            vec![1.0; 4],
            None,
            vec![],
        )
        .unwrap();
        let layout = LatentLayout::new(&ModelSpec::default(), 2, 2, 0).unwrap();
        let a = ObservationMap::observed(&panel, &layout, &[], &[1.0; 4]).unwrap();
        assert_eq!(a.n_rows(), 3);
        assert_eq!(a.cells(), &[0, 2, 3]);
        let all = ObservationMap::all_cells(&panel, &layout, &[], &[1.0; 4]).unwrap();
        assert_eq!(all.n_rows(), 4);
    }
}
