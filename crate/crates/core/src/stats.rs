//! Streaming ensemble statistics with block-jackknife errors.
//!
//! Samples are assigned to jackknife blocks by `sample_index % blocks`, so the
//! block a sample lands in never depends on how the ensemble was partitioned
//! across workers.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};

pub const DEFAULT_BLOCKS: usize = 20;

/// Samples per work chunk. Fixed so results do not depend on the worker count.
pub const CHUNK: u64 = 16;

/// Relative error floor used by [`z_score`]; below it a deviation is
/// indistinguishable from rounding.
pub const Z_ERROR_FLOOR: f64 = 1e-12;

/// Vector-valued running sums with per-block partials.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulator {
    len: usize,
    blocks: usize,
    count: u64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    block_sum: Vec<f64>,
    block_count: Vec<u64>,
}

impl Accumulator {
    pub fn new(len: usize, blocks: usize) -> Self {
        let blocks = blocks.max(1);
        Self {
            len,
            blocks,
            count: 0,
            sum: vec![0.0; len],
            sum_sq: vec![0.0; len],
            block_sum: vec![0.0; len * blocks],
            block_count: vec![0; blocks],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// `(len, blocks, count, sum, sum_sq, block_sum, block_count)`.
    #[allow(clippy::type_complexity)]
    pub fn raw_parts(&self) -> (usize, usize, u64, &[f64], &[f64], &[f64], &[u64]) {
        (
            self.len,
            self.blocks,
            self.count,
            &self.sum,
            &self.sum_sq,
            &self.block_sum,
            &self.block_count,
        )
    }

    pub fn from_raw_parts(
        len: usize,
        blocks: usize,
        count: u64,
        sum: Vec<f64>,
        sum_sq: Vec<f64>,
        block_sum: Vec<f64>,
        block_count: Vec<u64>,
    ) -> Result<Self> {
        if blocks == 0
            || sum.len() != len
            || sum_sq.len() != len
            || block_sum.len() != len * blocks
            || block_count.len() != blocks
            || block_count.iter().sum::<u64>() != count
        {
            return Err(Error::SchemaMismatch(
                "inconsistent raw accumulator parts".into(),
            ));
        }
        Ok(Self {
            len,
            blocks,
            count,
            sum,
            sum_sq,
            block_sum,
            block_count,
        })
    }

    pub fn push(&mut self, sample_index: u64, values: &[f64]) -> Result<()> {
        if values.len() != self.len {
            return Err(Error::DimensionMismatch {
                expected: self.len,
                actual: values.len(),
            });
        }
        let b = (sample_index % self.blocks as u64) as usize;
        let block = &mut self.block_sum[b * self.len..(b + 1) * self.len];
        for (k, &v) in values.iter().enumerate() {
            self.sum[k] += v;
            self.sum_sq[k] += v * v;
            block[k] += v;
        }
        self.block_count[b] += 1;
        self.count += 1;
        Ok(())
    }

    /// Adds the samples of `other`. The caller fixes the merge order.
    pub fn merge(&mut self, other: &Accumulator) -> Result<()> {
        if other.len != self.len || other.blocks != self.blocks {
            return Err(Error::SchemaMismatch(format!(
                "accumulator shape ({}, {} blocks) vs ({}, {} blocks)",
                self.len, self.blocks, other.len, other.blocks
            )));
        }
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
        for (a, b) in self.block_sum.iter_mut().zip(&other.block_sum) {
            *a += b;
        }
        for (a, b) in self.block_count.iter_mut().zip(&other.block_count) {
            *a += b;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn mean(&self) -> Vec<f64> {
        let c = self.count.max(1) as f64;
        self.sum.iter().map(|s| s / c).collect()
    }

    /// Unbiased per-component sample variance.
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![f64::NAN; self.len];
        }
        let c = self.count as f64;
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| ((q - s * s / c) / (c - 1.0)).max(0.0))
            .collect()
    }

    fn populated_blocks(&self) -> Vec<usize> {
        (0..self.blocks)
            .filter(|&b| self.block_count[b] > 0)
            .collect()
    }

    /// Block jackknife of `f` applied to the mean vector: returns `f(mean)` and
    /// its error. Needs samples in at least two blocks.
    pub fn jackknife<F>(&self, f: F) -> Result<(Vec<f64>, Vec<f64>)>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let blocks = self.populated_blocks();
        if blocks.len() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: self.count as usize,
            });
        }
        let value = f(&self.mean());
        let mut loo = Vec::with_capacity(blocks.len());
        let mut partial = vec![0.0; self.len];
        for &b in &blocks {
            let c = (self.count - self.block_count[b]) as f64;
            let block = &self.block_sum[b * self.len..(b + 1) * self.len];
            for k in 0..self.len {
                partial[k] = (self.sum[k] - block[k]) / c;
            }
            loo.push(f(&partial));
        }
        let nb = loo.len() as f64;
        let width = value.len();
        let mut error = vec![0.0; width];
        for k in 0..width {
            let avg = loo.iter().map(|v| v[k]).sum::<f64>() / nb;
            let ss: f64 = loo.iter().map(|v| (v[k] - avg).powi(2)).sum();
            error[k] = ((nb - 1.0) / nb * ss).sqrt();
        }
        Ok((value, error))
    }

    /// Jackknife of the plain mean.
    pub fn mean_with_error(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        self.jackknife(|m| m.to_vec())
    }
}

/// Measured values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub error: Vec<f64>,
    pub samples: usize,
}

impl Estimate {
    pub fn from_accumulator(grid: Vec<f64>, acc: &Accumulator) -> Result<Self> {
        let (mean, error) = acc.mean_with_error()?;
        Ok(Self {
            grid,
            mean,
            error,
            samples: acc.count() as usize,
        })
    }

    pub fn z_scores(&self, predicted: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.error)
            .zip(predicted)
            .map(|((m, e), p)| z_score(*m, *e, *p))
            .collect()
    }

    pub fn max_abs_z(&self, predicted: &[f64]) -> f64 {
        self.z_scores(predicted)
            .into_iter()
            .map(f64::abs)
            .fold(0.0, f64::max)
    }
}

/// `(measured - predicted) / error`, with the error floored at
/// [`Z_ERROR_FLOOR`] relative to the prediction.
pub fn z_score(measured: f64, error: f64, predicted: f64) -> f64 {
    let d = measured - predicted;
    if d == 0.0 {
        return 0.0;
    }
    d / error.max(Z_ERROR_FLOOR * predicted.abs().max(1.0))
}

/// Accumulators keyed by statistic name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnsembleAccumulator {
    stats: BTreeMap<String, Accumulator>,
}

impl EnsembleAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, acc: Accumulator) {
        self.stats.insert(name.into(), acc);
    }

    pub fn get(&self, name: &str) -> Option<&Accumulator> {
        self.stats.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Accumulator> {
        self.stats.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.stats.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    /// Sample count; all statistics see the same samples.
    pub fn count(&self) -> u64 {
        self.stats
            .values()
            .map(Accumulator::count)
            .max()
            .unwrap_or(0)
    }

    /// Union of two sample sets. An empty accumulator (no statistics) is the identity.
    pub fn merge(&mut self, other: &EnsembleAccumulator) -> Result<()> {
        if other.stats.is_empty() {
            return Ok(());
        }
        if self.stats.is_empty() {
            self.stats = other.stats.clone();
            return Ok(());
        }
        if !self.stats.keys().eq(other.stats.keys()) {
            let a: Vec<_> = self.stats.keys().collect();
            let b: Vec<_> = other.stats.keys().collect();
            return Err(Error::SchemaMismatch(format!("statistics {a:?} vs {b:?}")));
        }
        for (name, acc) in &other.stats {
            self.stats
                .get_mut(name)
                .expect("keys checked")
                .merge(acc)
                .map_err(|e| Error::SchemaMismatch(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}

/// Applies `f` to the fixed chunks `[0, chunk), [chunk, 2 chunk), ...` of
/// `0..samples` and returns the results in chunk order.
pub fn map_chunks<T, F>(samples: u64, chunk: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<u64>) -> T + Sync,
{
    let chunk = chunk.max(1);
    let n_chunks = samples.div_ceil(chunk);
    let range = move |c: u64| c * chunk..((c + 1) * chunk).min(samples);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n_chunks).into_par_iter().map(|c| f(range(c))).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_chunks).map(|c| f(range(c))).collect()
    }
}

/// Accumulates `f(i)` for `i in 0..samples`, chunked and merged in ascending
/// order so the result is independent of the thread count.
pub fn accumulate<F>(samples: u64, blocks: usize, len: usize, f: F) -> Result<Accumulator>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    let parts = map_chunks(samples, CHUNK, |range| -> Result<Accumulator> {
        let mut acc = Accumulator::new(len, blocks);
        for i in range {
            acc.push(i, &f(i)?)?;
        }
        Ok(acc)
    });
    let mut total = Accumulator::new(len, blocks);
    for part in parts {
        total.merge(&part?)?;
    }
    Ok(total)
}
