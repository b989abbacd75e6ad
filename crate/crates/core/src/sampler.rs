//! Gibbs sampling for Ising models.
//!
//! Each chain owns a ChaCha8 generator seeded from the run seed with the chain
//! index as its stream id, so results are identical however many threads run
//! the chains. Sites are updated in fixed order `0..n` every sweep, and the
//! local fields `h_i + Σ_j J_ij x_j` are cached and patched on every flip.
//!
//! Moment statistics are accumulated as integer counts (failures per site and
//! co-failures per pair). Merging chains is then exact and order-independent.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{IsingParameters, MomentSet, ObservationSet, SpinConfiguration};

/// Starting state of every chain.
#[derive(Debug, Clone, PartialEq)]
pub enum ChainInit {
    AllSafe,
    RandomUniform,
    Given(SpinConfiguration),
}

/// MCMC run settings. `sweeps` counts every full pass, including burn-in.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_chains: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub init: ChainInit,
}

impl ChainConfig {
    /// Defaults: 10% burn-in, no thinning, `max(4, available parallelism)` chains.
    pub fn new(sweeps: usize, seed: u64) -> Self {
        let workers = std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1);
        Self { n_chains: workers.max(4), sweeps, burn_in: sweeps / 10, thinning: 1, seed, init: ChainInit::AllSafe }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.n_chains == 0 || self.sweeps == 0 || self.thinning == 0 {
            return Err(Error::InvalidInput("chains, sweeps and thinning must be positive".into()));
        }
        if self.sweeps <= self.burn_in {
            return Err(Error::InvalidInput(format!(
                "sweeps ({}) must exceed burn-in ({})",
                self.sweeps, self.burn_in
            )));
        }
        if let ChainInit::Given(x) = &self.init {
            if x.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: x.len() });
            }
        }
        Ok(())
    }

    /// Number of sweeps each chain records.
    pub fn recorded_per_chain(&self) -> usize {
        (self.sweeps - self.burn_in).div_ceil(self.thinning)
    }
}

#[inline]
fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// `P(x_i = +1 | x_{-i}) = logistic(2 (h_i + Σ_{j≠i} J_ij x_j))`.
pub fn conditional_failure_probability(i: usize, x: &SpinConfiguration, params: &IsingParameters) -> Result<f64> {
    let n = params.n();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: x.len() });
    }
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, n });
    }
    let field = params.h()[i] + (0..n).filter(|&j| j != i).map(|j| params.j(i, j) * x.spins()[j] as f64).sum::<f64>();
    Ok(logistic(2.0 * field))
}

/// Exact integer sufficient statistics of a stream of configurations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MomentAccumulator {
    n: usize,
    samples: u64,
    failures: Vec<u64>,
    co_failures: Vec<u64>,
    count_hist: Vec<u64>,
    row_offset: Vec<usize>,
}

impl MomentAccumulator {
    pub fn new(n: usize) -> Self {
        let row_offset = (0..n).map(|i| i * n - i * (i + 1) / 2).collect();
        Self {
            n,
            samples: 0,
            failures: vec![0; n],
            co_failures: vec![0; n * n.saturating_sub(1) / 2],
            count_hist: vec![0; n + 1],
            row_offset,
        }
    }

    pub fn push(&mut self, x: &[i8]) {
        debug_assert_eq!(x.len(), self.n);
        self.samples += 1;
        let failed: Vec<usize> = x.iter().enumerate().filter(|(_, &s)| s == 1).map(|(i, _)| i).collect();
        self.count_hist[failed.len()] += 1;
        for (a, &i) in failed.iter().enumerate() {
            self.failures[i] += 1;
            let base = self.row_offset[i];
            for &j in &failed[a + 1..] {
                self.co_failures[base + (j - i - 1)] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        assert_eq!(self.n, other.n);
        self.samples += other.samples;
        self.failures.iter_mut().zip(&other.failures).for_each(|(a, b)| *a += b);
        self.co_failures.iter_mut().zip(&other.co_failures).for_each(|(a, b)| *a += b);
        self.count_hist.iter_mut().zip(&other.count_hist).for_each(|(a, b)| *a += b);
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    /// Counts of samples with `k` failed components, `k = 0..=n`.
    pub fn count_hist(&self) -> &[u64] {
        &self.count_hist
    }

    pub fn m1(&self) -> Vec<f64> {
        let s = self.samples as f64;
        self.failures.iter().map(|&f| (2.0 * f as f64 - s) / s).collect()
    }

    pub fn m2(&self) -> DMatrix<f64> {
        let n = self.n;
        let s = self.samples as f64;
        let mut m2 = DMatrix::identity(n, n);
        let mut slot = 0;
        for i in 0..n {
            for j in i + 1..n {
                let sum = s - 2.0 * (self.failures[i] + self.failures[j]) as f64 + 4.0 * self.co_failures[slot] as f64;
                m2[(i, j)] = sum / s;
                m2[(j, i)] = sum / s;
                slot += 1;
            }
        }
        m2
    }

    pub fn moments(&self) -> Result<MomentSet> {
        if self.samples == 0 {
            return Err(Error::InvalidInput("no samples recorded".into()));
        }
        MomentSet::new(self.m1(), self.m2())
    }
}

/// One Gibbs chain with cached local fields.
#[derive(Debug, Clone)]
pub struct GibbsChain {
    x: Vec<i8>,
    fields: Vec<f64>,
    rng: ChaCha8Rng,
}

impl GibbsChain {
    pub fn new(params: &IsingParameters, couplings: &[f64], seed: u64, index: usize, init: &ChainInit) -> Self {
        let n = params.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let x = match init {
            ChainInit::AllSafe => vec![-1; n],
            ChainInit::RandomUniform => (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect(),
            ChainInit::Given(c) => c.spins().to_vec(),
        };
        let mut chain = Self { x, fields: vec![0.0; n], rng };
        chain.reset_fields(params, couplings);
        chain
    }

    /// Recomputes the cached fields, e.g. after the parameters changed.
    pub fn reset_fields(&mut self, params: &IsingParameters, couplings: &[f64]) {
        let n = self.x.len();
        for i in 0..n {
            let row = &couplings[i * n..(i + 1) * n];
            self.fields[i] = params.h()[i] + row.iter().zip(&self.x).map(|(j, &x)| j * x as f64).sum::<f64>();
        }
    }

    pub fn state(&self) -> &[i8] {
        &self.x
    }

    /// One systematic-scan sweep over sites `0..n`.
    pub fn sweep(&mut self, couplings: &[f64]) {
        let n = self.x.len();
        for i in 0..n {
            let p = logistic(2.0 * self.fields[i]);
            let new: i8 = if self.rng.random::<f64>() < p { 1 } else { -1 };
            if new != self.x[i] {
                let delta = (new - self.x[i]) as f64;
                self.x[i] = new;
                let row = &couplings[i * n..(i + 1) * n];
                for (f, j) in self.fields.iter_mut().zip(row) {
                    *f += j * delta;
                }
            }
        }
    }

    fn run<F: FnMut(&[i8])>(
        &mut self,
        couplings: &[f64],
        sweeps: usize,
        burn_in: usize,
        thinning: usize,
        mut record: F,
    ) {
        for s in 0..sweeps {
            self.sweep(couplings);
            if s >= burn_in && (s - burn_in).is_multiple_of(thinning) {
                record(&self.x);
            }
        }
    }
}

/// A set of chains that persists across parameter updates (warm starts).
#[derive(Debug, Clone)]
pub struct PersistentChains {
    chains: Vec<GibbsChain>,
    couplings: Vec<f64>,
    params: IsingParameters,
}

impl PersistentChains {
    pub fn new(params: &IsingParameters, n_chains: usize, seed: u64, init: &ChainInit) -> Self {
        let couplings = params.couplings().to_dense_rows();
        let chains = (0..n_chains).map(|c| GibbsChain::new(params, &couplings, seed, c, init)).collect();
        Self { chains, couplings, params: params.clone() }
    }

    pub fn set_params(&mut self, params: &IsingParameters) {
        self.couplings = params.couplings().to_dense_rows();
        self.params = params.clone();
        let (p, j) = (&self.params, &self.couplings);
        self.chains.iter_mut().for_each(|c| c.reset_fields(p, j));
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    /// Runs every chain and returns one accumulator per chain, in chain order.
    pub fn run(&mut self, sweeps: usize, burn_in: usize, thinning: usize) -> Vec<MomentAccumulator> {
        let n = self.params.n();
        let couplings = &self.couplings;
        self.chains
            .par_iter_mut()
            .map(|chain| {
                let mut acc = MomentAccumulator::new(n);
                chain.run(couplings, sweeps, burn_in, thinning, |x| acc.push(x));
                acc
            })
            .collect()
    }
}

/// Pooled moments with between-chain standard errors.
#[derive(Debug, Clone)]
pub struct MomentEstimate {
    pub moments: MomentSet,
    /// `None` when fewer than two chains ran.
    pub m1_se: Option<Vec<f64>>,
    pub m2_se: Option<DMatrix<f64>>,
    pub samples: u64,
    /// Counts of recorded samples with `k` failures.
    pub count_hist: Vec<u64>,
}

impl MomentEstimate {
    /// Combines per-chain accumulators in chain order.
    pub fn from_chains(per_chain: &[MomentAccumulator]) -> Result<Self> {
        let first = per_chain.first().ok_or_else(|| Error::InvalidInput("no chains".into()))?;
        let n = first.n;
        let mut pooled = MomentAccumulator::new(n);
        per_chain.iter().for_each(|a| pooled.merge(a));
        let moments = pooled.moments()?;
        let k = per_chain.len();
        let (m1_se, m2_se) = if k < 2 {
            (None, None)
        } else {
            let means: Vec<(Vec<f64>, DMatrix<f64>)> = per_chain.iter().map(|a| (a.m1(), a.m2())).collect();
            let kf = k as f64;
            let se = |vals: &mut dyn Iterator<Item = f64>| {
                let v: Vec<f64> = vals.collect();
                let mean = v.iter().sum::<f64>() / kf;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (kf - 1.0);
                (var / kf).sqrt()
            };
            let m1_se = (0..n).map(|i| se(&mut means.iter().map(|(m, _)| m[i]))).collect();
            let m2_se =
                DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { se(&mut means.iter().map(|(_, m)| m[(i, j)])) });
            (Some(m1_se), Some(m2_se))
        };
        Ok(Self { moments, m1_se, m2_se, samples: pooled.samples, count_hist: pooled.count_hist.clone() })
    }

    /// Largest standard error over all first and off-diagonal second moments.
    pub fn max_standard_error(&self) -> Option<f64> {
        let m1 = self.m1_se.as_ref()?;
        let m2 = self.m2_se.as_ref()?;
        Some(m1.iter().copied().chain(m2.iter().copied()).fold(0.0, f64::max))
    }
}

/// Draws samples from every chain; chain 0's samples come first.
pub fn run_chains(params: &IsingParameters, cfg: &ChainConfig) -> Result<ObservationSet> {
    cfg.validate(params.n())?;
    let couplings = params.couplings().to_dense_rows();
    let per_chain: Vec<Vec<SpinConfiguration>> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut chain = GibbsChain::new(params, &couplings, cfg.seed, c, &cfg.init);
            let mut out = Vec::with_capacity(cfg.recorded_per_chain());
            chain.run(&couplings, cfg.sweeps, cfg.burn_in, cfg.thinning, |x| {
                out.push(SpinConfiguration::new(x.to_vec()).expect("chain states are valid spins"))
            });
            out
        })
        .collect();
    ObservationSet::new(per_chain.into_iter().flatten().collect())
}

/// Streaming moment estimate; samples are never materialized.
pub fn estimate_moments(params: &IsingParameters, cfg: &ChainConfig) -> Result<MomentEstimate> {
    cfg.validate(params.n())?;
    let mut chains = PersistentChains::new(params, cfg.n_chains, cfg.seed, &cfg.init);
    MomentEstimate::from_chains(&chains.run(cfg.sweeps, cfg.burn_in, cfg.thinning))
}

/// Weighted distribution of the number of failed components, indexed `0..=n`.
pub fn failure_count_samples(samples: &ObservationSet) -> Vec<f64> {
    let mut hist = vec![0.0; samples.n() + 1];
    for (s, w) in samples.samples().iter().zip(samples.normalized_weights()) {
        hist[s.failures()] += w;
    }
    hist
}
