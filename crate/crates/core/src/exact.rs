//! Brute-force enumeration over all `2ⁿ` configurations.
//!
//! This is the ground-truth oracle for the rest of the crate, so it stays
//! deliberately plain: every configuration's exponent is evaluated directly.
//! Configuration `I` has spin `i` equal to `+1` iff bit `i` of `I` is set.
//!
//! The index range is cut into fixed-size chunks that are evaluated in
//! parallel and merged in chunk order, so results do not depend on the
//! number of worker threads.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{exponent_unchecked, IsingParameters, MomentSet, SpinConfiguration};

pub const DEFAULT_MAX_COMPONENTS: usize = 20;
pub const HARD_MAX_COMPONENTS: usize = 25;

const CHUNK_BITS: u32 = 12;

/// Normalizing constant and (optionally) the full probability table.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    pub log_z: f64,
    /// Probabilities in enumeration order, when materialized.
    pub probabilities: Option<Vec<f64>>,
}

/// Everything one enumeration pass yields.
#[derive(Debug, Clone)]
pub struct ExactSummary {
    pub log_z: f64,
    pub moments: MomentSet,
    /// `E[exponent]` under the model, used for the entropy.
    pub mean_exponent: f64,
}

/// Enumeration engine with a configurable size ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactEngine {
    max_components: usize,
}

impl Default for ExactEngine {
    fn default() -> Self {
        Self { max_components: DEFAULT_MAX_COMPONENTS }
    }
}

#[derive(Debug, Clone)]
struct Partial {
    max: f64,
    sum: f64,
    exp_sum: f64,
    m1: Vec<f64>,
    m2: Vec<f64>,
}

impl Partial {
    fn empty(n: usize, with_moments: bool) -> Self {
        let (a, b) = if with_moments { (n, n * n.saturating_sub(1) / 2) } else { (0, 0) };
        Self { max: f64::NEG_INFINITY, sum: 0.0, exp_sum: 0.0, m1: vec![0.0; a], m2: vec![0.0; b] }
    }

    fn rescale(&mut self, factor: f64) {
        self.sum *= factor;
        self.exp_sum *= factor;
        self.m1.iter_mut().for_each(|v| *v *= factor);
        self.m2.iter_mut().for_each(|v| *v *= factor);
    }

    fn merge(mut self, mut other: Partial) -> Partial {
        if other.max == f64::NEG_INFINITY {
            return self;
        }
        if self.max == f64::NEG_INFINITY {
            return other;
        }
        let max = self.max.max(other.max);
        self.rescale((self.max - max).exp());
        other.rescale((other.max - max).exp());
        self.max = max;
        self.sum += other.sum;
        self.exp_sum += other.exp_sum;
        self.m1.iter_mut().zip(&other.m1).for_each(|(a, b)| *a += b);
        self.m2.iter_mut().zip(&other.m2).for_each(|(a, b)| *a += b);
        self
    }
}

impl ExactEngine {
    /// Engine with a custom ceiling, at most [`HARD_MAX_COMPONENTS`].
    pub fn with_limit(max_components: usize) -> Result<Self> {
        if max_components > HARD_MAX_COMPONENTS {
            return Err(Error::TooManyComponents { n: max_components, limit: HARD_MAX_COMPONENTS });
        }
        Ok(Self { max_components })
    }

    pub fn max_components(&self) -> usize {
        self.max_components
    }

    fn check(&self, n: usize) -> Result<()> {
        if n > self.max_components {
            Err(Error::TooManyComponents { n, limit: self.max_components })
        } else {
            Ok(())
        }
    }

    fn chunks(n: usize) -> (u64, u64) {
        let total = 1u64 << n;
        let chunk = total.min(1u64 << CHUNK_BITS);
        (total / chunk, chunk)
    }

    fn accumulate(&self, params: &IsingParameters, with_moments: bool) -> Result<Partial> {
        let n = params.n();
        self.check(n)?;
        let (chunks, chunk) = Self::chunks(n);
        let parts: Vec<Partial> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let start = c * chunk;
                let mut exps = Vec::with_capacity(chunk as usize);
                let mut x = vec![0i8; n];
                for idx in start..start + chunk {
                    fill_spins(idx, &mut x);
                    exps.push(exponent_unchecked(&x, params));
                }
                let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut p = Partial::empty(n, with_moments);
                p.max = max;
                for (k, &e) in exps.iter().enumerate() {
                    let w = (e - max).exp();
                    p.sum += w;
                    p.exp_sum += w * e;
                    if with_moments {
                        fill_spins(start + k as u64, &mut x);
                        let mut slot = 0;
                        for i in 0..n {
                            let xi = x[i] as f64;
                            p.m1[i] += w * xi;
                            let wi = w * xi;
                            for &xj in &x[i + 1..] {
                                p.m2[slot] += wi * xj as f64;
                                slot += 1;
                            }
                        }
                    }
                }
                p
            })
            .collect();
        Ok(parts.into_iter().fold(Partial::empty(n, with_moments), Partial::merge))
    }

    /// `log Z`, computed with a max shift.
    pub fn log_partition(&self, params: &IsingParameters) -> Result<f64> {
        let p = self.accumulate(params, false)?;
        Ok(p.max + p.sum.ln())
    }

    /// Probability of one configuration under the model.
    pub fn config_probability(&self, x: &SpinConfiguration, params: &IsingParameters) -> Result<f64> {
        let e = crate::model::exponent(x, params)?;
        Ok((e - self.log_partition(params)?).exp())
    }

    /// `log Z`, moments and mean exponent in one enumeration pass.
    pub fn summary(&self, params: &IsingParameters) -> Result<ExactSummary> {
        let n = params.n();
        let p = self.accumulate(params, true)?;
        let log_z = p.max + p.sum.ln();
        let m1: Vec<f64> = p.m1.iter().map(|v| v / p.sum).collect();
        let mut m2 = DMatrix::identity(n, n);
        let mut slot = 0;
        for i in 0..n {
            for j in i + 1..n {
                let v = p.m2[slot] / p.sum;
                m2[(i, j)] = v;
                m2[(j, i)] = v;
                slot += 1;
            }
        }
        Ok(ExactSummary { log_z, moments: MomentSet::new(m1, m2)?, mean_exponent: p.exp_sum / p.sum })
    }

    /// Exact first and second moments.
    pub fn moments(&self, params: &IsingParameters) -> Result<MomentSet> {
        Ok(self.summary(params)?.moments)
    }

    /// Shannon entropy `-Σ P log P` (natural log).
    pub fn entropy(&self, params: &IsingParameters) -> Result<f64> {
        let p = self.accumulate(params, false)?;
        let log_z = p.max + p.sum.ln();
        Ok((log_z - p.exp_sum / p.sum).max(0.0))
    }

    /// Log-likelihood of `params` given target moments.
    pub fn log_likelihood(&self, params: &IsingParameters, target: &MomentSet) -> Result<f64> {
        if target.n() != params.n() {
            return Err(Error::DimensionMismatch { expected: params.n(), found: target.n() });
        }
        Ok(moment_dot(params, target) - self.log_partition(params)?)
    }

    /// `log Z` plus, optionally, the normalized probability table.
    pub fn distribution(&self, params: &IsingParameters, materialize: bool) -> Result<ExactDistribution> {
        let log_z = self.log_partition(params)?;
        let probabilities = materialize.then(|| {
            let n = params.n();
            let mut x = vec![0i8; n];
            (0..1u64 << n)
                .map(|idx| {
                    fill_spins(idx, &mut x);
                    (exponent_unchecked(&x, params) - log_z).exp()
                })
                .collect()
        });
        Ok(ExactDistribution { log_z, probabilities })
    }

    /// Exact distribution of the number of failed components, indexed `0..=n`.
    pub fn failure_count_distribution(&self, params: &IsingParameters) -> Result<Vec<f64>> {
        let n = params.n();
        let dist = self.distribution(params, true)?;
        let mut out = vec![0.0; n + 1];
        for (idx, p) in dist.probabilities.unwrap().into_iter().enumerate() {
            out[(idx as u64).count_ones() as usize] += p;
        }
        Ok(out)
    }
}

/// `Σ h_i M1_i + Σ_{i<j} J_ij M2_ij`.
pub(crate) fn moment_dot(params: &IsingParameters, target: &MomentSet) -> f64 {
    let field: f64 = params.h().iter().zip(target.m1()).map(|(h, m)| h * m).sum();
    let m2 = target.m2();
    let pair: f64 = params.couplings().pairs().map(|(i, j, v)| v * m2[(i, j)]).sum();
    field + pair
}

#[inline]
fn fill_spins(idx: u64, x: &mut [i8]) {
    for (i, s) in x.iter_mut().enumerate() {
        *s = if (idx >> i) & 1 == 1 { 1 } else { -1 };
    }
}

pub fn log_partition(params: &IsingParameters) -> Result<f64> {
    ExactEngine::default().log_partition(params)
}

pub fn config_probability(x: &SpinConfiguration, params: &IsingParameters) -> Result<f64> {
    ExactEngine::default().config_probability(x, params)
}

pub fn exact_moments(params: &IsingParameters) -> Result<MomentSet> {
    ExactEngine::default().moments(params)
}

pub fn entropy(params: &IsingParameters) -> Result<f64> {
    ExactEngine::default().entropy(params)
}

pub fn exact_log_likelihood(params: &IsingParameters, target: &MomentSet) -> Result<f64> {
    ExactEngine::default().log_likelihood(params, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Couplings;

    fn two_spin(h: [f64; 2], j: f64) -> IsingParameters {
        let mut c = Couplings::zeros(2);
        c.set(0, 1, j);
        IsingParameters::new(h.to_vec(), c).unwrap()
    }

    #[test]
    fn log_partition_examples() {
        assert!((log_partition(&IsingParameters::zeros(2)).unwrap() - 4f64.ln()).abs() < 1e-14);
        let single = IsingParameters::independent(vec![0.7]).unwrap();
        assert!((log_partition(&single).unwrap() - (2.0 * 0.7f64.cosh()).ln()).abs() < 1e-14);
        let expected = (2.0 * 0.5f64.exp() + 2.0 * (-0.5f64).exp()).ln();
        assert!((log_partition(&two_spin([0.0, 0.0], 0.5)).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn config_probability_examples() {
        let x = SpinConfiguration::new(vec![1, -1]).unwrap();
        assert!((config_probability(&x, &IsingParameters::zeros(2)).unwrap() - 0.25).abs() < 1e-15);

        let single = IsingParameters::independent(vec![0.7]).unwrap();
        let up = SpinConfiguration::new(vec![1]).unwrap();
        let logistic = 1.0 / (1.0 + (-1.4f64).exp());
        assert!((config_probability(&up, &single).unwrap() - logistic).abs() < 1e-14);

        let both = SpinConfiguration::new(vec![1, 1]).unwrap();
        let e = 0.5f64.exp();
        let expected = e / (2.0 * e + 2.0 / e);
        assert!((config_probability(&both, &two_spin([0.0, 0.0], 0.5)).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn moments_examples() {
        let m = exact_moments(&IsingParameters::zeros(3)).unwrap();
        assert!(m.m1().iter().all(|v| v.abs() < 1e-15));
        assert!((m.m2() - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-15);

        let m = exact_moments(&two_spin([0.0, 0.0], 0.5)).unwrap();
        assert!(m.m1().iter().all(|v| v.abs() < 1e-15));
        assert!((m.m2()[(0, 1)] - 0.5f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&IsingParameters::zeros(3)).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-14);
        assert!(entropy(&IsingParameters::independent(vec![30.0]).unwrap()).unwrap() <= 1e-10);

        let p = two_spin([0.0, 0.0], 0.5);
        let probs = ExactEngine::default().distribution(&p, true).unwrap().probabilities.unwrap();
        let direct: f64 = -probs.iter().map(|q| q * q.ln()).sum::<f64>();
        assert!((entropy(&p).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn log_likelihood_examples() {
        let target = exact_moments(&two_spin([0.1, 0.2], -0.3)).unwrap();
        let ll = exact_log_likelihood(&IsingParameters::zeros(2), &target).unwrap();
        assert!((ll + 2.0 * 2f64.ln()).abs() < 1e-14);

        // With a full target distribution, L = Σ_I P_target(I) log p(I).
        let truth = two_spin([0.3, -0.2], 0.4);
        let model = two_spin([-0.1, 0.25], 0.1);
        let target = exact_moments(&truth).unwrap();
        let pt = ExactEngine::default().distribution(&truth, true).unwrap().probabilities.unwrap();
        let pm = ExactEngine::default().distribution(&model, true).unwrap().probabilities.unwrap();
        let cross: f64 = pt.iter().zip(&pm).map(|(a, b)| a * b.ln()).sum();
        assert!((exact_log_likelihood(&model, &target).unwrap() - cross).abs() < 1e-13);
        assert!(exact_log_likelihood(&truth, &target).unwrap() >= exact_log_likelihood(&model, &target).unwrap());
    }

    #[test]
    fn limit_is_enforced() {
        let e = ExactEngine::with_limit(3).unwrap();
        assert_eq!(e.log_partition(&IsingParameters::zeros(4)), Err(Error::TooManyComponents { n: 4, limit: 3 }));
        assert!(ExactEngine::with_limit(26).is_err());
    }

    #[test]
    fn chunked_enumeration_matches_single_chunk() {
        // n = 14 spans several chunks; compare with a plain sequential sum.
        let n = 14;
        let c = Couplings::from_fn(n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 20.0 - 0.25);
        let p = IsingParameters::new((0..n).map(|i| (i as f64 - 7.0) / 10.0).collect(), c).unwrap();
        let mut direct = 0.0;
        for idx in 0..1u64 << n {
            let x = SpinConfiguration::from_index(idx, n);
            direct += crate::model::exponent(&x, &p).unwrap().exp();
        }
        assert!((log_partition(&p).unwrap() - direct.ln()).abs() < 1e-12);
    }

    #[test]
    fn failure_count_distribution_sums_to_one() {
        let d = ExactEngine::default().failure_count_distribution(&IsingParameters::zeros(4)).unwrap();
        let binom = [1.0, 4.0, 6.0, 4.0, 1.0].map(|c| c / 16.0);
        for (a, b) in d.iter().zip(binom) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
