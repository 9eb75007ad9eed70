use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::engine::{check_grid, Method, MomentSample, MomentTrajectory};
use crate::error::{Error, Result};
use crate::model::NetworkModel;

use super::path::run_path;
use super::RngStream;

/// Replications per work unit. Units are fixed by replication number, not
/// by worker count, and merged in order, so results are bit-for-bit
/// independent of parallelism.
pub const BLOCK_SIZE: usize = 64;

/// Streaming mean and co-moment of vectors at a fixed set of sample times
/// (Welford updates, Chan et al. pairwise merge).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    count: u64,
    mean: Vec<DVector<f64>>,
    comoment: Vec<DMatrix<f64>>,
}

impl MomentAccumulator {
    pub fn new(times: usize, dim: usize) -> Self {
        MomentAccumulator {
            count: 0,
            mean: vec![DVector::zeros(dim); times],
            comoment: vec![DMatrix::zeros(dim, dim); times],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Adds one path: `path[k]` is the state at sample `k`.
    pub fn push(&mut self, path: &[Vec<i64>]) {
        self.count += 1;
        let n = self.count as f64;
        for ((mean, com), x) in self.mean.iter_mut().zip(self.comoment.iter_mut()).zip(path) {
            let x = DVector::from_iterator(x.len(), x.iter().map(|&v| v as f64));
            let delta = &x - &*mean;
            *mean += &delta / n;
            let delta2 = &x - &*mean;
            *com += &delta * delta2.transpose();
        }
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for k in 0..self.mean.len() {
            let delta = &other.mean[k] - &self.mean[k];
            self.comoment[k] += &other.comoment[k] + &delta * delta.transpose() * (na * nb / n);
            self.mean[k] += &delta * (nb / n);
        }
        self.count += other.count;
    }
}

/// Empirical moments of `n` replications at `times`. Covariances use the
/// unbiased `n - 1` divisor and are absent when `n < 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub n: usize,
    pub mean: Vec<DVector<f64>>,
    pub cov: Option<Vec<DMatrix<f64>>>,
}

impl EnsembleStats {
    fn from_accumulator(times: Vec<f64>, acc: MomentAccumulator) -> Self {
        let n = acc.count as usize;
        let cov = (n >= 2).then(|| {
            acc.comoment
                .iter()
                .map(|c| {
                    let c = c / (n as f64 - 1.0);
                    // exact symmetry; the rank-one updates are symmetric only up to rounding
                    (&c + c.transpose()) * 0.5
                })
                .collect()
        });
        EnsembleStats {
            times,
            n,
            mean: acc.mean,
            cov,
        }
    }

    /// Moment trajectory view; covariance entries are zero when absent.
    pub fn to_trajectory(&self) -> MomentTrajectory {
        let d = self.mean.first().map_or(0, |m| m.len());
        let samples = self
            .times
            .iter()
            .enumerate()
            .map(|(k, &t)| MomentSample {
                t,
                mean: self.mean[k].clone(),
                cov: self.cov.as_ref().map_or_else(|| DMatrix::zeros(d, d), |c| c[k].clone()),
            })
            .collect();
        MomentTrajectory {
            method: Method::Simulate,
            samples,
            warnings: Vec::new(),
        }
    }
}

/// Runs replications `0..n` on streams `(seed, r)` using `workers` threads.
pub fn simulate_ensemble(
    m: &NetworkModel,
    n: usize,
    seed: u64,
    sample_times: &[f64],
    workers: usize,
) -> Result<EnsembleStats> {
    if n == 0 {
        return Err(Error::Usage("at least one replication is required".into()));
    }
    m.ensure_valid()?;
    check_grid(sample_times, m.horizon)?;
    let breakpoints = m.breakpoints();
    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(BLOCK_SIZE)
        .map(|start| (start, (start + BLOCK_SIZE).min(n)))
        .collect();
    let run_block = |&(lo, hi): &(usize, usize)| -> Result<MomentAccumulator> {
        let mut acc = MomentAccumulator::new(sample_times.len(), m.dimension);
        for r in lo..hi {
            let mut rng = RngStream::new(seed, r as u64).rng();
            let path = run_path(m, &breakpoints, &mut rng, sample_times)?;
            acc.push(&path);
        }
        Ok(acc)
    };
    let parts: Vec<MomentAccumulator> = if workers <= 1 {
        blocks.iter().map(run_block).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
        pool.install(|| blocks.par_iter().map(run_block).collect::<Result<_>>())?
    };
    let mut total = MomentAccumulator::new(sample_times.len(), m.dimension);
    for part in &parts {
        total.merge(part);
    }
    Ok(EnsembleStats::from_accumulator(sample_times.to_vec(), total))
}
