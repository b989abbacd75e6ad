//! Forward and inverse mean-field approximations.
//!
//! These are exact only for independent components (`J = 0`); with coupling
//! they are meant for qualitative interpretation and as a starting point for
//! the likelihood fit.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Couplings, IsingParameters, MomentSet};

pub const DAMPING: f64 = 0.5;

/// Largest |m| accepted when the caller asks for clamping.
pub const MEAN_CLAMP: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldSolution {
    pub m: Vec<f64>,
    /// Linear-response covariance, when computed.
    pub c: Option<DMatrix<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

fn effective_fields(params: &IsingParameters, m: &[f64]) -> Vec<f64> {
    let n = params.n();
    (0..n).map(|i| params.h()[i] + (0..n).map(|j| params.j(i, j) * m[j]).sum::<f64>()).collect()
}

/// Damped fixed-point iteration of `m_i = tanh(h_i + Σ_{j≠i} J_ij m_j)` started at `tanh(h)`.
///
/// Reports the branch reached from that start; strong coupling can have
/// several fixed points and no search for the others is made.
pub fn mf_forward_means(params: &IsingParameters, tol: f64, max_iters: usize) -> MeanFieldSolution {
    let mut m: Vec<f64> = params.h().iter().map(|h| h.tanh()).collect();
    let mut iterations = 0;
    loop {
        let target: Vec<f64> = effective_fields(params, &m).into_iter().map(f64::tanh).collect();
        let residual = m.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if residual <= tol {
            return MeanFieldSolution { m, c: None, iterations, converged: true };
        }
        if iterations >= max_iters {
            return MeanFieldSolution { m, c: None, iterations, converged: false };
        }
        for (mi, ti) in m.iter_mut().zip(&target) {
            *mi = DAMPING * *mi + (1.0 - DAMPING) * ti;
        }
        iterations += 1;
    }
}

/// Solves `c_ij = (1 - m_i²)(δ_ij + Σ_{k≠i} J_ik c_kj)`, i.e. `(I - D·J) c = D`.
pub fn mf_forward_covariance(params: &IsingParameters, m: &[f64]) -> Result<DMatrix<f64>> {
    let n = params.n();
    if m.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: m.len() });
    }
    if let Some((i, &v)) = m.iter().enumerate().find(|(_, v)| !(v.abs() < 1.0)) {
        return Err(Error::MeanOutOfRange { index: i, value: v });
    }
    let d: Vec<f64> = m.iter().map(|v| 1.0 - v * v).collect();
    let j = params.couplings().to_dense();
    let a = DMatrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 } - d[r] * j[(r, c)]);
    let rhs = DMatrix::from_fn(n, n, |r, c| if r == c { d[r] } else { 0.0 });
    let c = a
        .lu()
        .solve(&rhs)
        .filter(|c| c.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("I - D·J is not invertible; coupling too strong for mean field".into()))?;
    Ok(c)
}

/// Forward means followed by the covariance at the converged means.
pub fn mf_forward(params: &IsingParameters, tol: f64, max_iters: usize) -> Result<MeanFieldSolution> {
    let mut sol = mf_forward_means(params, tol, max_iters);
    sol.c = Some(mf_forward_covariance(params, &sol.m)?);
    Ok(sol)
}

/// Inverse mean field: `J_ij = -(c⁻¹)_ij` off the diagonal and
/// `h_i = atanh m_i - Σ_{j≠i} J_ij m_j`.
///
/// With `clamp_means`, means are pulled into `[-MEAN_CLAMP, MEAN_CLAMP]`
/// first; otherwise `|m_i| = 1` is an error.
pub fn mf_inverse(moments: &MomentSet, clamp_means: bool) -> Result<IsingParameters> {
    let n = moments.n();
    let mut m = moments.m1().to_vec();
    for (i, v) in m.iter_mut().enumerate() {
        if v.abs() >= 1.0 {
            if clamp_means {
                *v = v.clamp(-MEAN_CLAMP, MEAN_CLAMP);
            } else {
                return Err(Error::MeanOutOfRange { index: i, value: *v });
            }
        }
    }
    let cov =
        DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - m[i] * m[i] } else { moments.m2()[(i, j)] - m[i] * m[j] });
    let inv = cov
        .try_inverse()
        .filter(|c| c.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("covariance matrix is not invertible".into()))?;
    let j = Couplings::from_fn(n, |a, b| -0.5 * (inv[(a, b)] + inv[(b, a)]));
    let h = (0..n).map(|i| m[i].atanh() - (0..n).map(|k| j.get(i, k) * m[k]).sum::<f64>()).collect();
    IsingParameters::new(h, j)
}

/// Field `h` of an isolated spin with failure probability `pf`: `atanh(2·pf - 1)`.
pub fn independence_reference(pf: f64) -> Result<f64> {
    if !(pf > 0.0 && pf < 1.0) {
        return Err(Error::ProbabilityOutOfRange(pf));
    }
    Ok((2.0 * pf - 1.0).atanh())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::exact_moments;

    fn two_spin(h: [f64; 2], j: f64) -> IsingParameters {
        let mut c = Couplings::zeros(2);
        c.set(0, 1, j);
        IsingParameters::new(h.to_vec(), c).unwrap()
    }

    #[test]
    fn independent_means_are_exact() {
        let p = IsingParameters::independent(vec![0.5, -0.3]).unwrap();
        let s = mf_forward_means(&p, 1e-12, 100);
        assert!(s.converged);
        assert_eq!(s.m, vec![0.5f64.tanh(), (-0.3f64).tanh()]);
    }

    #[test]
    fn zero_field_fixed_point() {
        let mut p = two_spin([0.0, 0.0], 0.9);
        p.couplings_mut().set(0, 1, 0.9);
        let s = mf_forward_means(&p, 1e-14, 10);
        assert!(s.converged && s.m.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn weak_coupling_close_to_exact() {
        let p = two_spin([0.2, 0.2], 0.3);
        let s = mf_forward_means(&p, 1e-12, 1000);
        let exact = exact_moments(&p).unwrap();
        for (a, b) in s.m.iter().zip(exact.m1()) {
            assert!((a - b).abs() < 0.05);
        }
        let c = mf_forward_covariance(&p, &s.m).unwrap();
        assert!(c[(0, 1)] > 0.0 && exact.cov()[(0, 1)] > 0.0);
        let neg = two_spin([0.2, 0.2], -0.3);
        let s = mf_forward_means(&neg, 1e-12, 1000);
        assert!(mf_forward_covariance(&neg, &s.m).unwrap()[(0, 1)] < 0.0);
    }

    #[test]
    fn covariance_without_coupling() {
        let p = IsingParameters::zeros(3);
        assert_eq!(mf_forward_covariance(&p, &[0.0; 3]).unwrap(), DMatrix::identity(3, 3));
        let c = mf_forward_covariance(&p, &[0.5, -0.2, 0.0]).unwrap();
        assert_eq!(c, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.75, 0.96, 1.0])));
        assert!(mf_forward_covariance(&p, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn singular_covariance_system() {
        // (I - J) is singular for J12 = 1 at m = 0.
        let p = two_spin([0.0, 0.0], 1.0);
        assert!(matches!(mf_forward_covariance(&p, &[0.0, 0.0]), Err(Error::Singular(_))));
    }

    #[test]
    fn inverse_examples() {
        let m = MomentSet::independent(vec![0.3, -0.6]).unwrap();
        let p = mf_inverse(&m, false).unwrap();
        assert!(p.j(0, 1).abs() < 1e-15);
        assert!((p.h()[0] - 0.3f64.atanh()).abs() < 1e-14);
        let fwd = mf_forward_means(&p, 1e-12, 100);
        assert!((fwd.m[1] + 0.6).abs() < 1e-6);

        let exact = exact_moments(&two_spin([0.0, 0.0], 0.05)).unwrap();
        let p = mf_inverse(&exact, false).unwrap();
        assert!((p.j(0, 1) - 0.05).abs() / 0.05 < 0.2, "{}", p.j(0, 1));

        let certain = MomentSet::independent(vec![1.0, 0.0]).unwrap();
        assert!(matches!(mf_inverse(&certain, false), Err(Error::MeanOutOfRange { .. })));

        let locked = MomentSet::new(vec![0.0, 0.0], DMatrix::from_element(2, 2, 1.0)).unwrap();
        assert!(matches!(mf_inverse(&locked, false), Err(Error::Singular(_))));
    }

    #[test]
    fn reference_curve() {
        assert_eq!(independence_reference(0.5).unwrap(), 0.0);
        let pf = 1.0 / (1.0 + (-1.4f64).exp());
        assert!((independence_reference(pf).unwrap() - 0.7).abs() < 1e-12);
        assert!(independence_reference(0.0).is_err());
        assert!(independence_reference(1.0).is_err());
    }
}
