//! Regional risk analytics over a fitted model and a sample summary.

use crate::error::{Error, Result};
use crate::meanfield::independence_reference;
use crate::model::{IsingParameters, ObservationSet, Portfolio};
use crate::sampler::{failure_count_samples, MomentEstimate};

/// Per-component failure probabilities and the failure-count distribution of
/// a sample set, whether materialized or streamed.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSummary {
    pub samples: u64,
    pub pf: Vec<f64>,
    /// Mass of `k` failures, `k = 0..=n`.
    pub count_hist: Vec<f64>,
}

impl SampleSummary {
    pub fn from_observations(obs: &ObservationSet) -> Self {
        Self { samples: obs.len() as u64, pf: per_component_pf(obs), count_hist: failure_count_samples(obs) }
    }

    pub fn from_estimate(est: &MomentEstimate) -> Self {
        let s = est.samples as f64;
        Self {
            samples: est.samples,
            pf: est.moments.m1().iter().map(|m| (m + 1.0) / 2.0).collect(),
            count_hist: est.count_hist.iter().map(|&c| c as f64 / s).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.pf.len()
    }
}

/// Weighted fraction of samples in which each component failed.
pub fn per_component_pf(samples: &ObservationSet) -> Vec<f64> {
    let mut pf = vec![0.0; samples.n()];
    for (s, w) in samples.samples().iter().zip(samples.normalized_weights()) {
        for (p, &x) in pf.iter_mut().zip(s.spins()) {
            if x == 1 {
                *p += w;
            }
        }
    }
    pf
}

/// `P[count > k]`.
pub fn exceedance_probability(hist: &[f64], k: usize) -> f64 {
    hist.iter().skip(k + 1).sum::<f64>().clamp(0.0, 1.0)
}

pub fn histogram_mean(hist: &[f64]) -> f64 {
    hist.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
}

/// Most probable count; ties go to the smaller count.
pub fn histogram_mode(hist: &[f64]) -> usize {
    hist.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (k, &p)| if p > acc.1 { (k, p) } else { acc }).0
}

/// `Σ_{j≠i} J_ij / (n - 1)` for each component.
pub fn avg_pairwise_interaction(params: &IsingParameters) -> Result<Vec<f64>> {
    let n = params.n();
    if n < 2 {
        return Err(Error::InvalidInput("average interaction needs at least two components".into()));
    }
    Ok((0..n).map(|i| (0..n).map(|j| params.j(i, j)).sum::<f64>() / (n - 1) as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialMeans {
    pub h_bar: f64,
    /// `Σ_{i≠j} J_ij / (n-1)²`; `None` for a single component.
    pub j_bar: Option<f64>,
}

pub fn spatial_means(params: &IsingParameters) -> SpatialMeans {
    let n = params.n();
    let h_bar = params.h().iter().sum::<f64>() / n as f64;
    let j_bar = (n >= 2).then(|| 2.0 * params.couplings().upper().iter().sum::<f64>() / ((n - 1) * (n - 1)) as f64);
    SpatialMeans { h_bar, j_bar }
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Euclidean distance in the `(pf, h)` plane from one point to the
/// independence curve `h = atanh(2·pf - 1)`.
pub fn gap_to_reference(pf: f64, h: f64) -> Result<f64> {
    let h_ref = independence_reference(pf)?;
    let vertical = (h - h_ref).abs();
    if vertical == 0.0 {
        return Ok(0.0);
    }
    // Curve points are (logistic(2t), t); the nearest one has |t - h| ≤ vertical.
    let dist2 = |t: f64| (logistic(2.0 * t) - pf).powi(2) + (t - h).powi(2);
    const GRID: usize = 4000;
    let (lo, hi) = (h - vertical, h + vertical);
    let dt = (hi - lo) / GRID as f64;
    let (best, _) =
        (0..=GRID)
            .map(|k| (k, dist2(lo + k as f64 * dt)))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo + best.saturating_sub(1) as f64 * dt, lo + (best + 1).min(GRID) as f64 * dt);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (dist2(x1), dist2(x2));
    while b - a > 1e-12 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = dist2(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = dist2(x2);
        }
    }
    let d2 = dist2(0.5 * (a + b)).min(f1).min(f2).min(vertical * vertical);
    Ok(d2.sqrt())
}

/// Per-component distance to the independence reference curve.
pub fn independence_gap(pf: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if pf.len() != h.len() {
        return Err(Error::DimensionMismatch { expected: pf.len(), found: h.len() });
    }
    pf.iter().zip(h).map(|(&p, &v)| gap_to_reference(p, v)).collect()
}

/// Component indices sorted by descending value; ties by ascending index.
pub fn ranking(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// `⌈n/4⌉, ⌈n/2⌉, ⌈3n/4⌉`.
pub fn default_thresholds(n: usize) -> Vec<usize> {
    let mut k = vec![n.div_ceil(4), n.div_ceil(2), (3 * n).div_ceil(4)];
    k.dedup();
    k
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub ids: Vec<String>,
    pub samples: u64,
    pub per_component_pf: Vec<f64>,
    pub failure_count_hist: Vec<f64>,
    pub expected_failures: f64,
    pub mode_failures: usize,
    /// `(k, P[count > k])`, ascending in `k`.
    pub exceedance: Vec<(usize, f64)>,
    pub h_bar: f64,
    pub j_bar: Option<f64>,
    pub avg_interaction: Option<Vec<f64>>,
    pub ranking_by_pf: Vec<usize>,
    pub ranking_by_h: Vec<usize>,
    /// `None` where the sampled pf is exactly 0 or 1 and the reference curve is undefined.
    pub independence_gap: Vec<Option<f64>>,
}

/// Assembles the full report. `extra_thresholds` are added to the default
/// exceedance thresholds.
pub fn build_report(
    params: &IsingParameters,
    samples: &SampleSummary,
    portfolio: Option<&Portfolio>,
    extra_thresholds: &[usize],
) -> Result<RiskReport> {
    let n = params.n();
    if samples.n() != n {
        return Err(Error::DimensionMismatch { expected: n, found: samples.n() });
    }
    let ids = match portfolio {
        Some(p) if p.len() != n => return Err(Error::DimensionMismatch { expected: n, found: p.len() }),
        Some(p) => p.ids(),
        None => (0..n).map(|i| i.to_string()).collect(),
    };
    let hist = &samples.count_hist;
    let mut ks = default_thresholds(n);
    ks.extend_from_slice(extra_thresholds);
    ks.sort_unstable();
    ks.dedup();
    let exceedance = ks.into_iter().map(|k| (k, exceedance_probability(hist, k))).collect();
    let means = spatial_means(params);
    let independence_gap = samples
        .pf
        .iter()
        .zip(params.h())
        .map(|(&p, &h)| if p > 0.0 && p < 1.0 { gap_to_reference(p, h).map(Some) } else { Ok(None) })
        .collect::<Result<_>>()?;
    Ok(RiskReport {
        ids,
        samples: samples.samples,
        per_component_pf: samples.pf.clone(),
        failure_count_hist: hist.clone(),
        expected_failures: histogram_mean(hist),
        mode_failures: histogram_mode(hist),
        exceedance,
        h_bar: means.h_bar,
        j_bar: means.j_bar,
        avg_interaction: avg_pairwise_interaction(params).ok(),
        ranking_by_pf: ranking(&samples.pf),
        ranking_by_h: ranking(params.h()),
        independence_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Couplings, SpinConfiguration};

    #[test]
    fn pf_examples() {
        let obs = ObservationSet::new(vec![SpinConfiguration::all_safe(3); 2]).unwrap();
        assert_eq!(per_component_pf(&obs), vec![0.0; 3]);
        let obs = ObservationSet::weighted(
            vec![SpinConfiguration::new(vec![1, -1]).unwrap(), SpinConfiguration::new(vec![1, 1]).unwrap()],
            vec![3.0, 1.0],
        )
        .unwrap();
        assert_eq!(per_component_pf(&obs), vec![1.0, 0.25]);
    }

    #[test]
    fn exceedance_examples() {
        assert_eq!(exceedance_probability(&[1.0, 0.0, 0.0], 0), 0.0);
        assert_eq!(exceedance_probability(&[0.5, 0.0, 0.5], 1), 0.5);
        assert_eq!(exceedance_probability(&[0.5, 0.0, 0.5], 5), 0.0);
    }

    #[test]
    fn interaction_averages() {
        let p = IsingParameters::new(vec![0.0; 3], Couplings::from_fn(3, |_, _| 0.2)).unwrap();
        for v in avg_pairwise_interaction(&p).unwrap() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        assert_eq!(avg_pairwise_interaction(&IsingParameters::zeros(3)).unwrap(), vec![0.0; 3]);
        assert!(avg_pairwise_interaction(&IsingParameters::zeros(1)).is_err());

        // Doubling row 0 doubles component 0's average; the others gain J_0k/(n-1).
        let base = Couplings::from_fn(4, |i, j| 0.1 * (i + j) as f64);
        let mut scaled = base.clone();
        for k in 1..4 {
            scaled.set(0, k, 2.0 * base.get(0, k));
        }
        let a = avg_pairwise_interaction(&IsingParameters::new(vec![0.0; 4], base.clone()).unwrap()).unwrap();
        let b = avg_pairwise_interaction(&IsingParameters::new(vec![0.0; 4], scaled).unwrap()).unwrap();
        assert!((b[0] - 2.0 * a[0]).abs() < 1e-15);
        for k in 1..4 {
            assert!((b[k] - a[k] - base.get(0, k) / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn spatial_mean_examples() {
        let p = IsingParameters::independent(vec![-0.017; 156]).unwrap();
        let m = spatial_means(&p);
        assert!((m.h_bar + 0.017).abs() < 1e-15);
        assert_eq!(m.j_bar, Some(0.0));

        let n = 5;
        let p = IsingParameters::new(vec![0.0; n], Couplings::from_fn(n, |_, _| 0.3)).unwrap();
        let j_bar = spatial_means(&p).j_bar.unwrap();
        assert!((j_bar - 0.3 * n as f64 / (n - 1) as f64).abs() < 1e-14);
        assert_eq!(spatial_means(&IsingParameters::zeros(1)).j_bar, None);
    }

    #[test]
    fn gap_examples() {
        let pf = 0.3;
        let h = independence_reference(pf).unwrap();
        assert_eq!(gap_to_reference(pf, h).unwrap(), 0.0);

        // Brute-force oracle over a fine curve discretization.
        let g = gap_to_reference(0.5, 1.0).unwrap();
        let brute = (0..=2_000_000)
            .map(|k| -1.0 + 3.0 * k as f64 / 2e6)
            .map(|t| ((logistic(2.0 * t) - 0.5).powi(2) + (t - 1.0).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(g <= 1.0);
        assert!((g - brute).abs() < 1e-8, "{g} vs {brute}");
        assert!(gap_to_reference(1.0, 0.0).is_err());
    }

    #[test]
    fn rankings_break_ties_by_index() {
        assert_eq!(ranking(&[0.1, 0.3, 0.3, 0.2]), vec![1, 2, 3, 0]);
        assert_eq!(default_thresholds(156), vec![39, 78, 117]);
        assert_eq!(default_thresholds(1), vec![1]);
    }

    #[test]
    fn uniform_two_component_report() {
        let obs = ObservationSet::new((0..4).map(|i| SpinConfiguration::from_index(i, 2)).collect()).unwrap();
        let r = build_report(&IsingParameters::zeros(2), &SampleSummary::from_observations(&obs), None, &[0]).unwrap();
        assert_eq!(r.per_component_pf, vec![0.5, 0.5]);
        assert_eq!(r.h_bar, 0.0);
        assert_eq!(r.independence_gap, vec![Some(0.0), Some(0.0)]);
        assert_eq!(r.exceedance[0], (0, 0.75));
        assert!(r.exceedance.windows(2).all(|w| w[1].1 <= w[0].1));
        assert_eq!(r.expected_failures, 1.0);
    }
}
