//! Monte-Carlo plumbing: estimates with standard errors, reproducible RNG
//! streams and an ordered block-parallel driver.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Path count, time resolution and seed for a Monte-Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    /// Steps over the whole horizon; sub-intervals use a proportional count.
    pub n_steps: usize,
    pub seed: u64,
    /// Paths per RNG stream.
    pub block_size: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            n_steps: 500,
            seed: 20_240_611,
            block_size: 1024,
        }
    }
}

impl McConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        Self {
            n_paths,
            n_steps,
            seed,
            ..Self::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 || self.n_steps == 0 || self.block_size == 0 {
            return domain(format!(
                "need n_paths >= 2, n_steps >= 1 and block_size >= 1, got {self:?}"
            ));
        }
        Ok(())
    }

    pub fn n_blocks(&self) -> usize {
        self.n_paths.div_ceil(self.block_size)
    }

    /// Number of paths in block `b`.
    pub fn block_len(&self, b: usize) -> usize {
        let start = b * self.block_size;
        self.block_size.min(self.n_paths - start)
    }
}

/// Monte-Carlo value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl McEstimate {
    /// A value known without sampling error.
    pub fn exact(value: f64, n_paths: usize) -> Self {
        Self {
            value,
            std_error: 0.0,
            n_paths,
        }
    }

    /// Whether `target` lies within `k` standard errors plus `slack`.
    pub fn within(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error + slack
    }
}

/// Streaming mean/variance accumulator (Welford, with Chan's merge).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAccumulator {
    n: usize,
    mean: f64,
    m2: f64,
}

impl MeanAccumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MeanAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> McEstimate {
        McEstimate {
            value: self.mean,
            std_error: if self.n == 0 {
                0.0
            } else {
                (self.variance() / self.n as f64).sqrt()
            },
            n_paths: self.n,
        }
    }
}

/// One accumulator per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeAccumulator(pub Vec<MeanAccumulator>);

impl NodeAccumulator {
    pub fn new(n: usize) -> Self {
        Self(vec![MeanAccumulator::default(); n])
    }

    pub fn merge(&mut self, other: &NodeAccumulator) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.merge(b);
        }
    }

    pub fn estimates(&self) -> Vec<McEstimate> {
        self.0.iter().map(|a| a.estimate()).collect()
    }
}

/// Reproducible random stream keyed by (seed, stream_id).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Run `work` on every path block in parallel and fold the results in block
/// order, so the outcome does not depend on thread scheduling. Blocks are
/// processed in waves to bound the memory held by unmerged results.
pub fn fold_blocks<A, F, M>(mc: &McConfig, init: A, work: F, mut merge: M) -> A
where
    A: Send,
    F: Fn(RngStream, usize) -> A + Sync,
    M: FnMut(&mut A, A),
{
    let n_blocks = mc.n_blocks();
    let wave = 4 * rayon::current_num_threads().max(1);
    let mut acc = init;
    let mut start = 0;
    while start < n_blocks {
        let end = (start + wave).min(n_blocks);
        let parts: Vec<A> = (start..end)
            .into_par_iter()
            .map(|b| work(RngStream::new(mc.seed, b as u64), mc.block_len(b)))
            .collect();
        for part in parts {
            merge(&mut acc, part);
        }
        start = end;
    }
    acc
}
