//! Domain types shared across the crate and the Ising exponent.
//!
//! Spins are always encoded as `-1` (safe) / `+1` (failure). Any `{0, 1}`
//! encoding is converted at the I/O boundary.

use std::collections::HashSet;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One outcome vector of binary component states.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfiguration(Vec<i8>);

impl SpinConfiguration {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if spins.is_empty() {
            return Err(Error::InvalidInput("configuration must have at least one spin".into()));
        }
        if let Some(&bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidSpin(bad as i64));
        }
        Ok(Self(spins))
    }

    /// Configuration for enumeration index `index`: bit `i` set means spin `i` is `+1`.
    pub fn from_index(index: u64, n: usize) -> Self {
        Self((0..n).map(|i| if (index >> i) & 1 == 1 { 1 } else { -1 }).collect())
    }

    pub fn all_safe(n: usize) -> Self {
        Self(vec![-1; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.0
    }

    pub fn failures(&self) -> usize {
        self.0.iter().filter(|&&s| s == 1).count()
    }

    pub fn flipped(&self) -> Self {
        Self(self.0.iter().map(|&s| -s).collect())
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(perm.iter().map(|&p| self.0[p]).collect())
    }
}

/// Symmetric, zero-diagonal interaction matrix stored as its strict upper triangle.
///
/// Symmetry is structural: `get(i, j)` and `get(j, i)` read the same slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Couplings {
    n: usize,
    upper: Vec<f64>,
}

impl Couplings {
    pub fn zeros(n: usize) -> Self {
        Self { n, upper: vec![0.0; n * n.saturating_sub(1) / 2] }
    }

    /// Builds couplings from `f(i, j)` evaluated for every `i < j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut upper = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                upper.push(f(i, j));
            }
        }
        Self { n, upper }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pair_count(&self) -> usize {
        self.upper.len()
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.n);
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.upper[self.slot(i, j)],
            std::cmp::Ordering::Greater => self.upper[self.slot(j, i)],
            std::cmp::Ordering::Equal => 0.0,
        }
    }

    /// Sets the pair `(i, j)`; the diagonal cannot be set.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(i != j, "couplings have a structural zero diagonal");
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let s = self.slot(a, b);
        self.upper[s] = value;
    }

    /// Upper-triangle values in row-major `(i < j)` order.
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn upper_mut(&mut self) -> &mut [f64] {
        &mut self.upper
    }

    /// Iterates `(i, j, J_ij)` for `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j))).zip(self.upper.iter()).map(|((i, j), &v)| (i, j, v))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Row-major dense copy, convenient for inner loops.
    pub fn to_dense_rows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for (i, j, v) in self.pairs() {
            out[i * self.n + j] = v;
            out[j * self.n + i] = v;
        }
        out
    }
}

/// Risk field `h` and pairwise interactions `J` of an Ising model.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingParameters {
    h: Vec<f64>,
    j: Couplings,
}

impl IsingParameters {
    pub fn new(h: Vec<f64>, j: Couplings) -> Result<Self> {
        if h.len() != j.n() {
            return Err(Error::DimensionMismatch { expected: h.len(), found: j.n() });
        }
        if h.is_empty() {
            return Err(Error::InvalidInput("parameters need at least one component".into()));
        }
        let p = Self { h, j };
        let violations = p.non_finite();
        if violations.is_empty() {
            Ok(p)
        } else {
            Err(Error::InvalidParameters(violations))
        }
    }

    /// Independent spins with the given fields.
    pub fn independent(h: Vec<f64>) -> Result<Self> {
        let n = h.len();
        Self::new(h, Couplings::zeros(n))
    }

    pub fn zeros(n: usize) -> Self {
        Self { h: vec![0.0; n], j: Couplings::zeros(n) }
    }

    /// Builds parameters from a dense `J`, rejecting anything that violates the invariants.
    pub fn from_dense(h: Vec<f64>, j: &DMatrix<f64>) -> Result<Self> {
        let violations = validate(&h, j);
        if !violations.is_empty() {
            return Err(Error::InvalidParameters(violations));
        }
        let n = h.len();
        Self::new(h, Couplings::from_fn(n, |a, b| j[(a, b)]))
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn h_mut(&mut self) -> &mut [f64] {
        &mut self.h
    }

    pub fn couplings(&self) -> &Couplings {
        &self.j
    }

    pub fn couplings_mut(&mut self) -> &mut Couplings {
        &mut self.j
    }

    #[inline]
    pub fn j(&self, i: usize, k: usize) -> f64 {
        self.j.get(i, k)
    }

    /// Relabels components so that new component `a` is old component `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let h = perm.iter().map(|&p| self.h[p]).collect();
        let j = Couplings::from_fn(self.n(), |a, b| self.j.get(perm[a], perm[b]));
        Self { h, j }
    }

    /// Same couplings with the field negated.
    pub fn with_negated_field(&self) -> Self {
        Self { h: self.h.iter().map(|v| -v).collect(), j: self.j.clone() }
    }

    fn non_finite(&self) -> Vec<Violation> {
        let mut out: Vec<Violation> = self
            .h
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_finite())
            .map(|(i, _)| Violation::NonFiniteField(i))
            .collect();
        out.extend(
            self.j.pairs().filter(|(_, _, v)| !v.is_finite()).map(|(i, j, _)| Violation::NonFiniteCoupling(i, j)),
        );
        out
    }
}

/// A single broken invariant of a candidate parameter set.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ShapeMismatch { h_len: usize, rows: usize, cols: usize },
    Asymmetric(usize, usize),
    NonzeroDiagonal(usize),
    NonFiniteField(usize),
    NonFiniteCoupling(usize, usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ShapeMismatch { h_len, rows, cols } => {
                write!(f, "shape mismatch: h has {h_len} entries, J is {rows}x{cols}")
            }
            Violation::Asymmetric(i, j) => write!(f, "asymmetric at ({i},{j})"),
            Violation::NonzeroDiagonal(i) => write!(f, "nonzero diagonal at {i}"),
            Violation::NonFiniteField(i) => write!(f, "non-finite field at {i}"),
            Violation::NonFiniteCoupling(i, j) => write!(f, "non-finite coupling at ({i},{j})"),
        }
    }
}

/// Reports every violated invariant of a dense candidate `(h, J)`. Nothing is repaired.
pub fn validate(h: &[f64], j: &DMatrix<f64>) -> Vec<Violation> {
    let n = h.len();
    if j.nrows() != n || j.ncols() != n {
        return vec![Violation::ShapeMismatch { h_len: n, rows: j.nrows(), cols: j.ncols() }];
    }
    let mut out = Vec::new();
    for (i, v) in h.iter().enumerate() {
        if !v.is_finite() {
            out.push(Violation::NonFiniteField(i));
        }
    }
    for a in 0..n {
        if j[(a, a)] != 0.0 {
            out.push(Violation::NonzeroDiagonal(a));
        }
        for b in 0..n {
            if !j[(a, b)].is_finite() {
                if a <= b {
                    out.push(Violation::NonFiniteCoupling(a, b));
                }
            } else if a < b && j[(a, b)] != j[(b, a)] {
                out.push(Violation::Asymmetric(a, b));
            }
        }
    }
    out
}

/// Unnormalized log-probability `hᵀx + Σ_{i<j} J_ij x_i x_j`.
pub fn exponent(x: &SpinConfiguration, params: &IsingParameters) -> Result<f64> {
    if x.len() != params.n() {
        return Err(Error::DimensionMismatch { expected: params.n(), found: x.len() });
    }
    Ok(exponent_unchecked(x.spins(), params))
}

#[inline]
pub(crate) fn exponent_unchecked(x: &[i8], params: &IsingParameters) -> f64 {
    let n = x.len();
    let mut field = 0.0;
    for (hi, &xi) in params.h.iter().zip(x) {
        field += hi * xi as f64;
    }
    let upper = params.j.upper();
    let mut pair = 0.0;
    let mut k = 0;
    for i in 0..n {
        let xi = x[i] as f64;
        let mut row = 0.0;
        for &xj in &x[i + 1..] {
            row += upper[k] * xj as f64;
            k += 1;
        }
        pair += xi * row;
    }
    field + pair
}

/// First moments, second cross-moments and the derived covariance/correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    m1: Vec<f64>,
    m2: DMatrix<f64>,
    cov: DMatrix<f64>,
    rho: DMatrix<Option<f64>>,
}

const MOMENT_SLACK: f64 = 1e-9;

impl MomentSet {
    /// Validates `m1`/`m2` and derives covariance and correlation. The diagonal of `m2`
    /// is forced to exactly one; values within a small slack of ±1 are clamped.
    pub fn new(m1: Vec<f64>, mut m2: DMatrix<f64>) -> Result<Self> {
        let n = m1.len();
        if n == 0 {
            return Err(Error::InvalidInput("moment set needs at least one component".into()));
        }
        if m2.nrows() != n || m2.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: m2.nrows() });
        }
        let mut m1 = m1;
        for (i, v) in m1.iter_mut().enumerate() {
            if !v.is_finite() || v.abs() > 1.0 + MOMENT_SLACK {
                return Err(Error::MeanOutOfRange { index: i, value: *v });
            }
            *v = v.clamp(-1.0, 1.0);
        }
        for i in 0..n {
            m2[(i, i)] = 1.0;
            for j in i + 1..n {
                let (a, b) = (m2[(i, j)], m2[(j, i)]);
                if !a.is_finite() || (a - b).abs() > MOMENT_SLACK {
                    return Err(Error::InvalidInput(format!("second moments asymmetric at ({i},{j})")));
                }
                if a.abs() > 1.0 + MOMENT_SLACK {
                    return Err(Error::Infeasible { pairs: vec![(i, j, a)] });
                }
                let v = a.clamp(-1.0, 1.0);
                m2[(i, j)] = v;
                m2[(j, i)] = v;
            }
        }
        let cov = DMatrix::from_fn(n, n, |i, j| m2[(i, j)] - m1[i] * m1[j]);
        let rho = correlation_from_covariance(&cov);
        Ok(Self { m1, m2, cov, rho })
    }

    /// Moments of `n` independent spins with the given means.
    pub fn independent(m1: Vec<f64>) -> Result<Self> {
        let n = m1.len();
        let m2 = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { m1[i] * m1[j] });
        Self::new(m1, m2)
    }

    pub fn n(&self) -> usize {
        self.m1.len()
    }

    pub fn m1(&self) -> &[f64] {
        &self.m1
    }

    pub fn m2(&self) -> &DMatrix<f64> {
        &self.m2
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Correlation matrix; `None` marks entries involving a zero-variance component.
    pub fn rho(&self) -> &DMatrix<Option<f64>> {
        &self.rho
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let m1 = perm.iter().map(|&p| self.m1[p]).collect();
        let m2 = DMatrix::from_fn(n, n, |a, b| self.m2[(perm[a], perm[b])]);
        Self::new(m1, m2).expect("permutation preserves validity")
    }
}

/// Pearson correlation from a covariance matrix; zero-variance rows are undefined.
pub fn correlation_from_covariance(cov: &DMatrix<f64>) -> DMatrix<Option<f64>> {
    let n = cov.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let (vi, vj) = (cov[(i, i)], cov[(j, j)]);
        if vi <= 0.0 || vj <= 0.0 {
            None
        } else if i == j {
            Some(1.0)
        } else {
            Some((cov[(i, j)] / (vi * vj).sqrt()).clamp(-1.0, 1.0))
        }
    })
}

/// One structure in a regional portfolio.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub attributes: Vec<(String, String)>,
}

/// Component identities and locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    components: Vec<Component>,
}

impl Portfolio {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput("portfolio is empty".into()));
        }
        let mut seen = HashSet::new();
        for c in &components {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate component id {:?}", c.id)));
            }
            if !c.latitude.is_finite() || !c.longitude.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite coordinates for {:?}", c.id)));
            }
        }
        Ok(Self { components })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn ids(&self) -> Vec<String> {
        self.components.iter().map(|c| c.id.clone()).collect()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { components: perm.iter().map(|&p| self.components[p].clone()).collect() }
    }
}

/// A set of observed (or sampled) configurations with optional weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    samples: Vec<SpinConfiguration>,
    weights: Option<Vec<f64>>,
}

impl ObservationSet {
    pub fn new(samples: Vec<SpinConfiguration>) -> Result<Self> {
        Self::check_shape(&samples)?;
        Ok(Self { samples, weights: None })
    }

    pub fn weighted(samples: Vec<SpinConfiguration>, weights: Vec<f64>) -> Result<Self> {
        Self::check_shape(&samples)?;
        if weights.len() != samples.len() {
            return Err(Error::DimensionMismatch { expected: samples.len(), found: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidInput("weights must have a positive sum".into()));
        }
        Ok(Self { samples, weights: Some(weights) })
    }

    fn check_shape(samples: &[SpinConfiguration]) -> Result<()> {
        let first = samples.first().ok_or_else(|| Error::InvalidInput("no samples".into()))?;
        for s in samples {
            if s.len() != first.len() {
                return Err(Error::DimensionMismatch { expected: first.len(), found: s.len() });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.samples[0].len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[SpinConfiguration] {
        &self.samples
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Weights normalized to sum to one (uniform when none were given).
    pub fn normalized_weights(&self) -> Vec<f64> {
        match &self.weights {
            Some(w) => {
                let total: f64 = w.iter().sum();
                w.iter().map(|v| v / total).collect()
            }
            None => vec![1.0 / self.samples.len() as f64; self.samples.len()],
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { samples: self.samples.iter().map(|s| s.permuted(perm)).collect(), weights: self.weights.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_params(h: Vec<f64>, j: &[(usize, usize, f64)]) -> IsingParameters {
        let mut c = Couplings::zeros(h.len());
        for &(a, b, v) in j {
            c.set(a, b, v);
        }
        IsingParameters::new(h, c).unwrap()
    }

    fn spins(v: &[i8]) -> SpinConfiguration {
        SpinConfiguration::new(v.to_vec()).unwrap()
    }

    #[test]
    fn exponent_examples() {
        let p = pair_params(vec![0.0, 0.0], &[]);
        assert_eq!(exponent(&spins(&[1, 1]), &p).unwrap(), 0.0);

        let p = pair_params(vec![0.3, -0.2], &[(0, 1, 0.5)]);
        let e = exponent(&spins(&[1, -1]), &p).unwrap();
        assert!((e - 0.0).abs() < 1e-15, "{e}");

        let p = pair_params(vec![0.0; 3], &[(0, 1, 0.2), (0, 2, 0.2), (1, 2, 0.2)]);
        let e = exponent(&spins(&[-1, -1, -1]), &p).unwrap();
        assert!((e - 0.6).abs() < 1e-15);
    }

    #[test]
    fn exponent_dimension_mismatch() {
        let p = IsingParameters::zeros(3);
        assert_eq!(exponent(&spins(&[1, 1]), &p), Err(Error::DimensionMismatch { expected: 3, found: 2 }));
    }

    #[test]
    fn validate_reports_each_violation() {
        let ok = DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.1, 0.0]);
        assert!(validate(&[0.0, 0.0], &ok).is_empty());

        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.2, 0.0]);
        let v = validate(&[0.0, 0.0], &asym);
        assert_eq!(v, vec![Violation::Asymmetric(0, 1)]);
        assert_eq!(v[0].to_string(), "asymmetric at (0,1)");

        let diag = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]);
        let v = validate(&[0.0, 0.0], &diag);
        assert_eq!(v, vec![Violation::NonzeroDiagonal(0)]);
        assert_eq!(v[0].to_string(), "nonzero diagonal at 0");

        let bad = DMatrix::from_row_slice(2, 2, &[0.5, f64::NAN, 0.2, 0.0]);
        let v = validate(&[f64::INFINITY, 0.0], &bad);
        assert_eq!(v.len(), 3);
        assert!(IsingParameters::from_dense(vec![0.0, 0.0], &asym).is_err());
    }

    #[test]
    fn couplings_are_structurally_symmetric() {
        let mut c = Couplings::zeros(4);
        c.set(3, 1, 0.7);
        assert_eq!(c.get(1, 3), 0.7);
        assert_eq!(c.get(3, 1), 0.7);
        assert_eq!(c.get(2, 2), 0.0);
        let d = c.to_dense();
        assert_eq!(d, d.transpose());
    }

    #[test]
    fn spin_validation() {
        assert_eq!(SpinConfiguration::new(vec![1, 0]), Err(Error::InvalidSpin(0)));
        assert!(SpinConfiguration::new(vec![]).is_err());
        assert_eq!(SpinConfiguration::from_index(0b101, 3).spins(), &[1, -1, 1]);
    }

    #[test]
    fn moment_set_undefined_correlation() {
        let m = MomentSet::new(vec![1.0, 0.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(m.rho()[(0, 1)], None);
        assert_eq!(m.rho()[(1, 1)], Some(1.0));
        assert!(MomentSet::new(vec![1.5], DMatrix::identity(1, 1)).is_err());
    }

    #[test]
    fn single_component_is_legal() {
        let p = IsingParameters::new(vec![0.4], Couplings::zeros(1)).unwrap();
        assert_eq!(p.couplings().pair_count(), 0);
        assert!((exponent(&spins(&[-1]), &p).unwrap() + 0.4).abs() < 1e-15);
    }
}
