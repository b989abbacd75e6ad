//! Empirical moments, failure probabilities, geographic distances and the
//! distance-decay correlation model `ρ(d) = 1 / (1 + a·d)`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{MomentSet, ObservationSet, Portfolio, SpinConfiguration};

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Pairs a bin needs before it is reported.
pub const DEFAULT_MIN_PAIRS: usize = 30;

/// Weighted first and second moments of an observation set.
pub fn empirical_moments(obs: &ObservationSet) -> Result<MomentSet> {
    let n = obs.n();
    let weights = obs.normalized_weights();
    let mut m1 = vec![0.0; n];
    let mut m2 = DMatrix::<f64>::identity(n, n);
    for (s, w) in obs.samples().iter().zip(&weights) {
        let x = s.spins();
        for i in 0..n {
            let wi = w * x[i] as f64;
            m1[i] += wi;
            for j in i + 1..n {
                m2[(i, j)] += wi * x[j] as f64;
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            m2[(j, i)] = m2[(i, j)];
        }
    }
    MomentSet::new(m1, m2)
}

/// `P_f = (m + 1) / 2` elementwise.
pub fn failure_probabilities(m1: &[f64]) -> Result<Vec<f64>> {
    m1.iter()
        .enumerate()
        .map(|(i, &m)| {
            if !(-1.0..=1.0).contains(&m) {
                Err(Error::MeanOutOfRange { index: i, value: m })
            } else {
                Ok((m + 1.0) / 2.0)
            }
        })
        .collect()
}

/// Great-circle distance in kilometers between two (lat, lon) points in degrees.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Symmetric zero-diagonal haversine distance matrix (km).
pub fn pairwise_distances(portfolio: &Portfolio) -> Result<DMatrix<f64>> {
    let comps = portfolio.components();
    for c in comps {
        if !(-90.0..=90.0).contains(&c.latitude) || !(-180.0..=180.0).contains(&c.longitude) {
            return Err(Error::InvalidInput(format!(
                "coordinates out of range for {:?}: ({}, {})",
                c.id, c.latitude, c.longitude
            )));
        }
    }
    let n = comps.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = haversine_km(comps[i].latitude, comps[i].longitude, comps[j].latitude, comps[j].longitude);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceUnit {
    Kilometers,
    Meters,
}

impl DistanceUnit {
    fn per_km(self) -> f64 {
        match self {
            DistanceUnit::Kilometers => 1.0,
            DistanceUnit::Meters => 1000.0,
        }
    }
}

impl fmt::Display for DistanceUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceUnit::Kilometers => "km",
            DistanceUnit::Meters => "m",
        })
    }
}

impl std::str::FromStr for DistanceUnit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "km" => Ok(DistanceUnit::Kilometers),
            "m" => Ok(DistanceUnit::Meters),
            other => Err(Error::InvalidInput(format!("unknown distance unit {other:?}"))),
        }
    }
}

/// `ρ(d) = 1 / (1 + a·d)` with `a` in inverse `unit`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationDistanceModel {
    pub a: f64,
    pub unit: DistanceUnit,
}

impl CorrelationDistanceModel {
    pub fn new(a: f64, unit: DistanceUnit) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidInput(format!("decay coefficient must be positive, got {a}")));
        }
        Ok(Self { a, unit })
    }

    /// Correlation at distance `d` expressed in the model's unit.
    pub fn rho(&self, d: f64) -> f64 {
        1.0 / (1.0 + self.a * d)
    }

    pub fn rho_km(&self, d_km: f64) -> f64 {
        self.rho(d_km * self.unit.per_km())
    }

    /// Correlation matrix over a kilometer distance matrix (unit diagonal).
    pub fn correlation_matrix(&self, distances_km: &DMatrix<f64>) -> DMatrix<f64> {
        let n = distances_km.nrows();
        DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { self.rho_km(distances_km[(i, j)]) })
    }
}

/// Pooled-pair correlation in one distance bin.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationBin {
    pub d_lo: f64,
    pub d_hi: f64,
    pub mean_distance: f64,
    /// `None` when the pooled states have zero variance.
    pub rho: Option<f64>,
    pub pair_count: usize,
}

impl CorrelationBin {
    pub fn is_degenerate(&self) -> bool {
        self.rho.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedCorrelation {
    pub bins: Vec<CorrelationBin>,
}

/// Spatially ergodic correlation estimate from one snapshot.
pub fn ergodic_binned_correlation(
    snapshot: &SpinConfiguration,
    distances: &DMatrix<f64>,
    bin_width: f64,
    min_pairs: usize,
) -> Result<BinnedCorrelation> {
    ergodic_binned_correlation_pooled(std::slice::from_ref(snapshot), distances, bin_width, min_pairs)
}

#[derive(Default)]
struct BinStats {
    pairs: usize,
    dist: f64,
    sum: f64,
    cross: f64,
}

/// Pools every component pair with `d_lo ≤ d < d_hi` (across all snapshots)
/// and reports the Pearson correlation of the pooled, symmetrized pairs.
pub fn ergodic_binned_correlation_pooled(
    snapshots: &[SpinConfiguration],
    distances: &DMatrix<f64>,
    bin_width: f64,
    min_pairs: usize,
) -> Result<BinnedCorrelation> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::InvalidInput(format!("bin width must be positive, got {bin_width}")));
    }
    let n = distances.nrows();
    if distances.ncols() != n {
        return Err(Error::InvalidInput("distance matrix must be square".into()));
    }
    if snapshots.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    let mut bins: BTreeMap<u64, BinStats> = BTreeMap::new();
    for snap in snapshots {
        if snap.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: snap.len() });
        }
        let x = snap.spins();
        for i in 0..n {
            for j in i + 1..n {
                let d = distances[(i, j)];
                let b = bins.entry((d / bin_width).floor() as u64).or_default();
                b.pairs += 1;
                b.dist += d;
                b.sum += (x[i] + x[j]) as f64;
                b.cross += (x[i] * x[j]) as f64;
            }
        }
    }
    let out: Vec<CorrelationBin> = bins
        .into_iter()
        .filter(|(_, s)| s.pairs >= min_pairs && s.pairs > 0)
        .map(|(k, s)| {
            let p = s.pairs as f64;
            let mean = s.sum / (2.0 * p);
            let var = 1.0 - mean * mean;
            let rho = (var > 1e-14).then(|| ((s.cross / p - mean * mean) / var).clamp(-1.0, 1.0));
            CorrelationBin {
                d_lo: k as f64 * bin_width,
                d_hi: (k + 1) as f64 * bin_width,
                mean_distance: s.dist / p,
                rho,
                pair_count: s.pairs,
            }
        })
        .collect();
    if out.is_empty() {
        return Err(Error::InvalidInput(format!(
            "every distance bin has fewer than {min_pairs} pairs; use wider bins"
        )));
    }
    Ok(BinnedCorrelation { bins: out })
}

/// Outcome of the `ρ(d)` regression.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFit {
    pub model: CorrelationDistanceModel,
    /// Pair-count-weighted sum of squared residuals at the optimum.
    pub objective: f64,
    /// Best objective value after each minimization step.
    pub objective_trace: Vec<f64>,
    /// Every usable bin sits at distance zero, so `a` is not identified.
    pub degenerate: bool,
}

const LOG_A_MIN: f64 = -20.0;
const LOG_A_MAX: f64 = 25.0;
const GRID_STEP: f64 = 0.05;

/// Weighted least-squares fit of `ρ(d) = 1/(1 + a·d)` to the bins' mean distances
/// (assumed to be in `unit`).
pub fn fit_correlation_distance(binned: &BinnedCorrelation, unit: DistanceUnit) -> Result<CorrelationFit> {
    let data: Vec<(f64, f64, f64)> = binned
        .bins
        .iter()
        .filter_map(|b| b.rho.map(|r| (b.mean_distance, r, b.pair_count as f64)))
        .filter(|(_, _, w)| *w > 0.0)
        .collect();
    if !data.iter().any(|(_, r, _)| *r > 0.0) {
        return Err(Error::InvalidInput(
            "no bin has a positive correlation; 1/(1+a·d) cannot represent the data".into(),
        ));
    }
    let objective = |log_a: f64| {
        let a = log_a.exp();
        data.iter().map(|&(d, r, w)| w * (1.0 / (1.0 + a * d) - r).powi(2)).sum::<f64>()
    };
    if data.iter().all(|(d, _, _)| *d == 0.0) {
        log::warn!("all usable bins are at zero distance; the decay coefficient is not identified");
        let model = CorrelationDistanceModel::new(1.0, unit)?;
        let f = objective(0.0);
        return Ok(CorrelationFit { model, objective: f, objective_trace: vec![f], degenerate: true });
    }
    if data.len() < 2 {
        return Err(Error::InvalidInput("need at least two usable bins".into()));
    }

    let steps = ((LOG_A_MAX - LOG_A_MIN) / GRID_STEP).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| LOG_A_MIN + k as f64 * GRID_STEP).collect();
    let values: Vec<f64> = grid.iter().map(|&t| objective(t)).collect();
    let (best, _) =
        values.iter().enumerate().fold((0, f64::INFINITY), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
    let mut trace = vec![values[best]];

    // Golden-section refinement on the bracket around the best grid point.
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (grid[best.saturating_sub(1)], grid[(best + 1).min(steps)]);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (objective(x1), objective(x2));
    let (mut best_t, mut best_f) = (grid[best], values[best]);
    while hi - lo > 1e-10 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = objective(x2);
        }
        for (t, f) in [(x1, f1), (x2, f2)] {
            if f < best_f {
                best_f = f;
                best_t = t;
            }
        }
        trace.push(best_f);
    }
    Ok(CorrelationFit {
        model: CorrelationDistanceModel::new(best_t.exp(), unit)?,
        objective: best_f,
        objective_trace: trace,
        degenerate: false,
    })
}

/// Assembles moment targets from failure probabilities and a correlation matrix.
///
/// Fails with [`Error::Infeasible`] when a pair's implied joint cell
/// probabilities `(1 ± m_i ± m_j ± M2_ij)/4` go negative, i.e. the requested
/// correlation cannot be carried by ±1 variables with these marginals. This
/// includes every case with `|M2_ij| > 1`.
pub fn moments_from_pf_rho(pf: &[f64], rho: &DMatrix<f64>) -> Result<MomentSet> {
    let n = pf.len();
    if rho.nrows() != n || rho.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: rho.nrows() });
    }
    for &p in pf {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::ProbabilityOutOfRange(p));
        }
    }
    for i in 0..n {
        if (rho[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("correlation diagonal at {i} is {}", rho[(i, i)])));
        }
        for j in i + 1..n {
            let r = rho[(i, j)];
            if !r.is_finite() || (r - rho[(j, i)]).abs() > 1e-12 || r.abs() > 1.0 {
                return Err(Error::InvalidInput(format!("invalid correlation {r} at ({i},{j})")));
            }
        }
    }
    let m1: Vec<f64> = pf.iter().map(|p| 2.0 * p - 1.0).collect();
    let sd: Vec<f64> = m1.iter().map(|m| (1.0 - m * m).sqrt()).collect();
    let mut m2 = DMatrix::identity(n, n);
    let mut bad = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let v = rho[(i, j)] * sd[i] * sd[j] + m1[i] * m1[j];
            if !pair_feasible(m1[i], m1[j], v) {
                bad.push((i, j, v));
            }
            m2[(i, j)] = v;
            m2[(j, i)] = v;
        }
    }
    if !bad.is_empty() {
        return Err(Error::Infeasible { pairs: bad });
    }
    MomentSet::new(m1, m2)
}

/// Whether a ±1 pair with means `mi`, `mj` can have `E[x_i x_j] = m2`.
pub fn pair_feasible(mi: f64, mj: f64, m2: f64) -> bool {
    const SLACK: f64 = 1e-12;
    [1.0 + mi + mj + m2, 1.0 + mi - mj - m2, 1.0 - mi + mj - m2, 1.0 - mi - mj + m2].iter().all(|&cell| cell >= -SLACK)
}
