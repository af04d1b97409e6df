use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How a partition was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockStrategy {
    Fixed,
    /// Greedy cuts at equal sums of per-parameter divergence.
    Adaptive,
    /// One block size chosen from the average divergence per parameter.
    AdaptiveAvg,
}

impl FromStr for BlockStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "fixed" => Ok(Self::Fixed),
            "adaptive" => Ok(Self::Adaptive),
            "adaptiveavg" => Ok(Self::AdaptiveAvg),
            _ => Err(Error::Config(format!("unknown block strategy `{s}`"))),
        }
    }
}

impl std::fmt::Display for BlockStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fixed => "fixed",
            Self::Adaptive => "adaptive",
            Self::AdaptiveAvg => "adaptive-avg",
        })
    }
}

/// Knobs for [`allocate_blocks`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AllocationSpec {
    /// Block length for `Fixed`.
    pub block_size: usize,
    /// Divergence per block in nats for the adaptive strategies.
    pub target_kl: f64,
    /// Largest block an adaptive strategy may produce.
    pub max_block: usize,
    pub deviation_factor: f64,
}

impl AllocationSpec {
    /// Block size 256, target `ln n_candidates`, cap 1024, factor 2.
    pub fn with_candidates(n_candidates: usize) -> Self {
        Self {
            block_size: 256,
            target_kl: (n_candidates as f64).ln(),
            max_block: 1024,
            deviation_factor: 2.0,
        }
    }
}

/// Contiguous disjoint ranges covering `0..d`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPartition {
    ranges: Vec<Range<usize>>,
    strategy: BlockStrategy,
    target_kl_per_block: f64,
}

impl BlockPartition {
    /// Blocks of `block_size`; the last block is shorter when the size does
    /// not divide `d`.
    pub fn fixed(d: usize, block_size: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument(
                "cannot partition zero parameters".into(),
            ));
        }
        if block_size == 0 {
            return Err(Error::InvalidArgument("block size must be positive".into()));
        }
        Ok(Self {
            ranges: equal_ranges(d, block_size),
            strategy: BlockStrategy::Fixed,
            target_kl_per_block: 0.0,
        })
    }

    /// Exactly `n_blocks` equal blocks; `n_blocks` must divide `d`.
    pub fn fixed_count(d: usize, n_blocks: usize) -> Result<Self> {
        if n_blocks == 0 || !d.is_multiple_of(n_blocks) {
            return Err(Error::InvalidArgument(format!(
                "{n_blocks} blocks do not divide d = {d}"
            )));
        }
        Self::fixed(d, d / n_blocks)
    }

    /// Builds a partition from explicit cut points, validating the cover.
    pub fn from_ranges(
        ranges: Vec<Range<usize>>,
        strategy: BlockStrategy,
        target_kl_per_block: f64,
    ) -> Result<Self> {
        let mut next = 0;
        for r in &ranges {
            if r.start != next || r.end <= r.start {
                return Err(Error::InvalidArgument(format!(
                    "range {r:?} breaks the cover at {next}"
                )));
            }
            next = r.end;
        }
        if ranges.is_empty() {
            return Err(Error::InvalidArgument("empty partition".into()));
        }
        Ok(Self {
            ranges,
            strategy,
            target_kl_per_block,
        })
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn num_blocks(&self) -> usize {
        self.ranges.len()
    }

    pub fn dim(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn strategy(&self) -> BlockStrategy {
        self.strategy
    }

    pub fn target_kl_per_block(&self) -> f64 {
        self.target_kl_per_block
    }

    pub fn max_len(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).max().unwrap_or(0)
    }
}

fn equal_ranges(d: usize, size: usize) -> Vec<Range<usize>> {
    (0..d)
        .step_by(size)
        .map(|start| start..(start + size).min(d))
        .collect()
}

/// Partitions `d` parameters according to `strategy`. `kl_per_param` is
/// ignored for `Fixed`.
pub fn allocate_blocks(
    strategy: BlockStrategy,
    d: usize,
    spec: &AllocationSpec,
    kl_per_param: &[f64],
) -> Result<BlockPartition> {
    if d == 0 {
        return Err(Error::InvalidArgument(
            "cannot partition zero parameters".into(),
        ));
    }
    if strategy == BlockStrategy::Fixed {
        return BlockPartition::fixed(d, spec.block_size);
    }
    crate::error::check_len(kl_per_param.len(), d)?;
    if kl_per_param.iter().any(|&k| !(k >= 0.0) || !k.is_finite()) {
        return Err(Error::InvalidArgument(
            "per-parameter divergences must be finite and non-negative".into(),
        ));
    }
    let max_block = spec.max_block.max(1);
    let target = spec.target_kl;
    let ranges = match strategy {
        BlockStrategy::Adaptive => {
            let mut ranges = Vec::new();
            let mut start = 0;
            let mut acc = 0.0;
            for (k, &kl) in kl_per_param.iter().enumerate() {
                acc += kl;
                if acc >= target || k + 1 - start >= max_block {
                    ranges.push(start..k + 1);
                    start = k + 1;
                    acc = 0.0;
                }
            }
            if start < d {
                ranges.push(start..d);
            }
            ranges
        }
        BlockStrategy::AdaptiveAvg => {
            equal_ranges(d, adaptive_avg_size(d, target, kl_per_param, max_block))
        }
        BlockStrategy::Fixed => unreachable!(),
    };
    BlockPartition::from_ranges(ranges, strategy, target)
}

fn adaptive_avg_size(d: usize, target: f64, kl_per_param: &[f64], max_block: usize) -> usize {
    let total: f64 = kl_per_param.iter().sum();
    if total <= 0.0 {
        return max_block;
    }
    let b = (d as f64 * target / total).round();
    b.clamp(1.0, max_block as f64) as usize
}

/// True when the average divergence per block under `partition` is off the
/// target by more than `deviation_factor` in either direction. Always false
/// for `Fixed` partitions.
pub fn needs_reallocation(
    partition: &BlockPartition,
    kl_per_param: &[f64],
    deviation_factor: f64,
) -> bool {
    if partition.strategy() == BlockStrategy::Fixed {
        return false;
    }
    let target = partition.target_kl_per_block();
    let avg = kl_per_param.iter().sum::<f64>() / partition.num_blocks() as f64;
    if target <= 0.0 {
        return avg > 0.0;
    }
    let ratio = avg / target;
    ratio > deviation_factor || ratio < 1.0 / deviation_factor
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(target: f64) -> AllocationSpec {
        AllocationSpec {
            block_size: 256,
            target_kl: target,
            max_block: 1024,
            deviation_factor: 2.0,
        }
    }

    #[test]
    fn fixed_quarters() {
        let p = allocate_blocks(
            BlockStrategy::Fixed,
            1024,
            &AllocationSpec {
                block_size: 256,
                ..spec(1.0)
            },
            &[],
        )
        .unwrap();
        assert_eq!(p.ranges(), &[0..256, 256..512, 512..768, 768..1024]);
        assert_eq!(BlockPartition::fixed_count(1024, 4).unwrap(), p);
        assert!(BlockPartition::fixed_count(1000, 3).is_err());
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(allocate_blocks(BlockStrategy::Adaptive, 0, &spec(1.0), &[]).is_err());
        assert!(BlockPartition::fixed(0, 4).is_err());
    }

    #[test]
    fn adaptive_uniform_is_equal() {
        let kl = vec![0.01; 1000];
        let p = allocate_blocks(BlockStrategy::Adaptive, 1000, &spec(1.0), &kl).unwrap();
        let lens: Vec<usize> = p.ranges().iter().map(|r| r.len()).collect();
        let (lo, hi) = (*lens.iter().min().unwrap(), *lens.iter().max().unwrap());
        // every full block has the same length; only the tail may be shorter
        assert!(
            lens[..lens.len() - 1].iter().all(|&l| l == lens[0]),
            "{lens:?}"
        );
        assert!(hi - lo <= lens[0]);
        assert!((99..=101).contains(&lens[0]));
    }

    #[test]
    fn adaptive_concentrated_front() {
        let mut kl = vec![0.1; 512];
        kl.extend(vec![0.005; 512]);
        let p = allocate_blocks(BlockStrategy::Adaptive, 1024, &spec(1.0), &kl).unwrap();
        let first = p.ranges().iter().find(|r| r.end <= 512).unwrap().len();
        let second = p.ranges().iter().find(|r| r.start >= 512).unwrap().len();
        assert!(first < second, "{first} vs {second}");
    }

    #[test]
    fn adaptive_avg_size_and_reallocation() {
        let kl = vec![0.02; 1000];
        // total 20, target 1 -> b = 50
        let p = allocate_blocks(BlockStrategy::AdaptiveAvg, 1000, &spec(1.0), &kl).unwrap();
        assert_eq!(p.num_blocks(), 20);
        assert!(p.ranges().iter().all(|r| r.len() == 50));
        assert!(!needs_reallocation(&p, &kl, 2.0));
        assert!(needs_reallocation(&p, &vec![0.05; 1000], 2.0));
        assert!(needs_reallocation(&p, &vec![0.005; 1000], 2.0));
        let zero = allocate_blocks(
            BlockStrategy::AdaptiveAvg,
            1000,
            &spec(1.0),
            &vec![0.0; 1000],
        )
        .unwrap();
        assert_eq!(zero.max_len(), 1000);
    }

    proptest! {
        #[test]
        fn partitions_cover(
            kl in proptest::collection::vec(0.0f64..0.5, 1..600),
            target in 0.01f64..5.0,
            max_block in 1usize..300,
            size in 1usize..300,
            which in 0usize..3,
        ) {
            let d = kl.len();
            let strategy = [BlockStrategy::Fixed, BlockStrategy::Adaptive, BlockStrategy::AdaptiveAvg][which];
            let s = AllocationSpec { block_size: size, target_kl: target, max_block, deviation_factor: 2.0 };
            let p = allocate_blocks(strategy, d, &s, &kl).unwrap();
            let mut next = 0;
            for r in p.ranges() {
                prop_assert_eq!(r.start, next);
                prop_assert!(r.end > r.start);
                next = r.end;
            }
            prop_assert_eq!(next, d);
            if strategy != BlockStrategy::Fixed {
                prop_assert!(p.max_len() <= max_block);
            }
        }
    }
}
