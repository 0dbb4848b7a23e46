use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::spec::{ModelSpec, RandomBlock};
use crate::error::{Error, Result};

/// Kinds of contiguous blocks in the latent vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LatentBlock {
    Intercept,
    Covariates,
    TimeTrend,
    Random(RandomBlock),
}

impl LatentBlock {
    pub fn is_fixed(self) -> bool {
        !matches!(self, LatentBlock::Random(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRange {
    pub kind: LatentBlock,
    pub offset: usize,
    pub len: usize,
}

impl BlockRange {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Ordered layout α, β, [β_t], υ, ν, γ, φ, δ of the latent vector; δ is area-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentLayout {
    blocks: Vec<BlockRange>,
    n_areas: usize,
    n_times: usize,
    n_covariates: usize,
    len: usize,
}

impl LatentLayout {
    pub fn new(spec: &ModelSpec, n_areas: usize, n_times: usize, n_covariates: usize) -> Result<Self> {
        if n_areas == 0 || n_times == 0 {
            return Err(Error::InvalidDimension(format!(
                "need at least one area and one time, got {n_areas} x {n_times}"
            )));
        }
        if spec.blocks.temporal_rw1 && n_times < 2 {
            return Err(Error::InvalidDimension(format!(
                "random walk over time needs at least 2 times, got {n_times}"
            )));
        }
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |kind, len: usize| {
            if len > 0 {
                blocks.push(BlockRange { kind, offset, len });
                offset += len;
            }
        };
        push(LatentBlock::Intercept, 1);
        push(LatentBlock::Covariates, n_covariates);
        if spec.blocks.time_trend {
            push(LatentBlock::TimeTrend, 1);
        }
        for block in spec.active_blocks() {
            let len = match block {
                RandomBlock::SpatialStructured | RandomBlock::SpatialIid => n_areas,
                RandomBlock::TemporalRw1 | RandomBlock::TemporalIid => n_times,
                RandomBlock::Interaction => n_areas * n_times,
            };
            push(LatentBlock::Random(block), len);
        }
        Ok(Self {
            blocks,
            n_areas,
            n_times,
            n_covariates,
            len: offset,
        })
    }

    /// Total latent dimension `m`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[BlockRange] {
        &self.blocks
    }

    pub fn n_areas(&self) -> usize {
        self.n_areas
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn range(&self, kind: LatentBlock) -> Option<Range<usize>> {
        self.blocks.iter().find(|b| b.kind == kind).map(BlockRange::range)
    }

    pub fn has(&self, kind: LatentBlock) -> bool {
        self.blocks.iter().any(|b| b.kind == kind)
    }

    /// Indices of the intercept, covariate and trend coefficients.
    pub fn fixed_indices(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .filter(|b| b.kind.is_fixed())
            .flat_map(|b| b.range())
            .collect()
    }

    /// Block owning coordinate `j` and the position within it.
    pub fn locate(&self, j: usize) -> Option<(LatentBlock, usize)> {
        self.blocks
            .iter()
            .find(|b| b.range().contains(&j))
            .map(|b| (b.kind, j - b.offset))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::BlockSet;

    #[test]
    fn dimension_examples() {
        let spec = ModelSpec::default();
        assert_eq!(LatentLayout::new(&spec, 4, 3, 2).unwrap().len(), 29);

        let mut no_int = spec.clone();
        no_int.blocks.interaction = false;
        assert_eq!(LatentLayout::new(&no_int, 4, 3, 2).unwrap().len(), 17);

        let alpha_only = ModelSpec {
            blocks: BlockSet::none(),
            ..ModelSpec::default()
        };
        let l = LatentLayout::new(&alpha_only, 4, 3, 0).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l.range(LatentBlock::Intercept), Some(0..1));
    }

    #[test]
    fn rw1_needs_two_times() {
        assert!(LatentLayout::new(&ModelSpec::default(), 4, 1, 0).is_err());
    }

    #[test]
    fn offsets_are_contiguous() {
        let mut spec = ModelSpec::default();
        spec.blocks.time_trend = true;
        let l = LatentLayout::new(&spec, 3, 4, 2).unwrap();
        let mut next = 0;
        for b in l.blocks() {
            assert_eq!(b.offset, next);
            next += b.len;
        }
        assert_eq!(next, l.len());
        assert_eq!(l.range(LatentBlock::TimeTrend), Some(3..4));
        assert_eq!(l.locate(4), Some((LatentBlock::Random(RandomBlock::SpatialStructured), 0)));
    }
}
