//! Maximum-likelihood estimation of `(h, J)` from target moments.
//!
//! The log-likelihood depends on the data only through its first and second
//! moments, and its gradient is the moment residual
//!
//! ```text
//! ∂L/∂h_i  = M1_i(target) - M1_i(model)
//! ∂L/∂J_ij = M2_ij(target) - M2_ij(model)
//! ```
//!
//! [`fit`] performs plain gradient ascent on these residuals, starting from
//! `h_i = atanh M1_i`, `J = 0`. Model moments come either from exact
//! enumeration or from persistent Gibbs chains.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::exact::{moment_dot, ExactEngine};
use crate::meanfield::{mf_inverse, MEAN_CLAMP};
use crate::model::{Couplings, IsingParameters, MomentSet};
use crate::sampler::{estimate_moments, ChainConfig, MomentEstimate, PersistentChains};

/// How the risk field is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FieldTying {
    #[default]
    PerComponent,
    /// One shared `h`; its gradient is the mean of the per-component residuals.
    GlobalScalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InteractionTying {
    #[default]
    FreePairwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TyingScheme {
    pub field: FieldTying,
    pub interaction: InteractionTying,
}

impl TyingScheme {
    pub fn global_field() -> Self {
        Self { field: FieldTying::GlobalScalar, interaction: InteractionTying::FreePairwise }
    }
}

/// Source of model moments during fitting.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Exact(ExactEngine),
    /// Persistent chains: `burn_in` applies to the first iteration only; later
    /// iterations warm-start from the previous chain states and record
    /// `sweeps - burn_in` sweeps each.
    Gibbs(ChainConfig),
}

impl Estimator {
    pub fn exact() -> Self {
        Estimator::Exact(ExactEngine::default())
    }
}

/// Starting point of the ascent.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum FitInit {
    /// `h_i = atanh M1_i` (clamped), `J = 0`.
    #[default]
    Independent,
    /// Inverse mean-field estimate.
    MeanField,
    Given(IsingParameters),
}

pub const DEFAULT_TOL_EXACT: f64 = 1e-4;
pub const DEFAULT_TOL_GIBBS: f64 = 5e-3;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
pub const DEFAULT_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Threshold on the largest absolute moment residual.
    pub tol: f64,
    pub estimator: Estimator,
    pub init: FitInit,
    /// Gibbs only: iterations per averaging block.
    pub window: usize,
}

impl FitConfig {
    pub fn exact() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            max_iters: 10_000,
            tol: DEFAULT_TOL_EXACT,
            estimator: Estimator::exact(),
            init: FitInit::Independent,
            window: 1,
        }
    }

    pub fn gibbs(chains: ChainConfig) -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            max_iters: 1_000,
            tol: DEFAULT_TOL_GIBBS,
            estimator: Estimator::Gibbs(chains),
            init: FitInit::Independent,
            window: DEFAULT_WINDOW,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning rate must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::InvalidInput("averaging window must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput("tolerance must be positive".into()));
        }
        if let Estimator::Gibbs(c) = &self.estimator {
            c.validate(n)?;
        }
        Ok(())
    }
}

/// Log-likelihood gradient, i.e. the moment residuals `target - model`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub dh: Vec<f64>,
    pub dj: Couplings,
}

impl Gradient {
    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.dh.iter().chain(self.dj.upper()).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dm2_dense(&self) -> DMatrix<f64> {
        self.dj.to_dense()
    }
}

pub fn gradient(target: &MomentSet, model: &MomentSet) -> Result<Gradient> {
    let n = target.n();
    if model.n() != n {
        return Err(Error::DimensionMismatch { expected: n, found: model.n() });
    }
    let dh = target.m1().iter().zip(model.m1()).map(|(t, m)| t - m).collect();
    let dj = Couplings::from_fn(n, |i, j| target.m2()[(i, j)] - model.m2()[(i, j)]);
    Ok(Gradient { dh, dj })
}

/// Gradient restricted to the tied parameterization.
fn tied_gradient(g: &Gradient, tying: TyingScheme) -> Gradient {
    match tying.field {
        FieldTying::PerComponent => g.clone(),
        FieldTying::GlobalScalar => {
            let mean = g.dh.iter().sum::<f64>() / g.dh.len() as f64;
            Gradient { dh: vec![mean; g.dh.len()], dj: g.dj.clone() }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: IsingParameters,
    pub converged: bool,
    pub iters_used: usize,
    /// Largest absolute (tied) moment residual at each evaluated iterate.
    pub residual_trajectory: Vec<f64>,
    /// Largest block-mean residual at the end of each averaging block (Gibbs only).
    pub block_residual_trajectory: Vec<f64>,
    /// Log-likelihood at each accepted iterate (exact estimator only).
    pub log_likelihood_trajectory: Vec<f64>,
    /// Untied residuals `target - model` at the returned parameters; for Gibbs,
    /// their mean over the final block.
    pub final_residuals: Gradient,
    /// Largest moment standard error at the last evaluation (Gibbs with ≥ 2 chains).
    pub final_standard_error: Option<f64>,
    pub final_learning_rate: f64,
}

impl FitResult {
    /// The residual the convergence test saw last.
    pub fn final_residual(&self) -> f64 {
        self.block_residual_trajectory.last().or(self.residual_trajectory.last()).copied().unwrap_or(f64::INFINITY)
    }
}

fn initial_params(target: &MomentSet, tying: TyingScheme, init: &FitInit) -> Result<IsingParameters> {
    let n = target.n();
    let mut p = match init {
        FitInit::Independent => {
            let h = target.m1().iter().map(|m| m.clamp(-MEAN_CLAMP, MEAN_CLAMP).atanh()).collect();
            IsingParameters::independent(h)?
        }
        FitInit::MeanField => mf_inverse(target, true)?,
        FitInit::Given(p) => {
            if p.n() != n {
                return Err(Error::DimensionMismatch { expected: n, found: p.n() });
            }
            p.clone()
        }
    };
    if tying.field == FieldTying::GlobalScalar {
        let h0 = match init {
            FitInit::Independent => {
                let mean = target.m1().iter().sum::<f64>() / n as f64;
                mean.clamp(-MEAN_CLAMP, MEAN_CLAMP).atanh()
            }
            _ => p.h().iter().sum::<f64>() / n as f64,
        };
        p.h_mut().iter_mut().for_each(|h| *h = h0);
    }
    Ok(p)
}

fn step(params: &IsingParameters, g: &Gradient, alpha: f64) -> IsingParameters {
    let mut next = params.clone();
    next.h_mut().iter_mut().zip(&g.dh).for_each(|(h, d)| *h += alpha * d);
    next.couplings_mut().upper_mut().iter_mut().zip(g.dj.upper()).for_each(|(j, d)| *j += alpha * d);
    next
}

struct ExactEval {
    moments: MomentSet,
    log_likelihood: f64,
}

fn eval_exact(engine: &ExactEngine, params: &IsingParameters, target: &MomentSet) -> Result<ExactEval> {
    let s = engine.summary(params)?;
    Ok(ExactEval { log_likelihood: moment_dot(params, target) - s.log_z, moments: s.moments })
}

/// Fits Ising parameters to `target` by gradient ascent on the log-likelihood.
///
/// With the exact estimator every step is checked against the log-likelihood
/// and the learning rate is halved until the step does not decrease it. The
/// Gibbs estimator uses a fixed learning rate and averages iterates and
/// residuals over blocks of `window` iterations.
///
/// Targets that no binary distribution attains are not projected; the
/// ascent simply runs out of iterations and reports `converged = false`.
pub fn fit(target: &MomentSet, tying: TyingScheme, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate(target.n())?;
    let params = initial_params(target, tying, &cfg.init)?;
    match &cfg.estimator {
        Estimator::Exact(engine) => fit_exact(target, tying, cfg, engine, params),
        Estimator::Gibbs(chains) => fit_gibbs(target, tying, cfg, chains, params),
    }
}

const MIN_LEARNING_RATE: f64 = 1e-14;

fn fit_exact(
    target: &MomentSet,
    tying: TyingScheme,
    cfg: &FitConfig,
    engine: &ExactEngine,
    mut params: IsingParameters,
) -> Result<FitResult> {
    let mut alpha = cfg.learning_rate;
    let mut current = eval_exact(engine, &params, target)?;
    let mut residuals = Vec::new();
    let mut lls = vec![current.log_likelihood];
    let mut iters = 0;
    let mut converged = false;
    loop {
        let g = gradient(target, &current.moments)?;
        let tied = tied_gradient(&g, tying);
        let r = tied.max_abs();
        residuals.push(r);
        if r <= cfg.tol {
            converged = true;
        }
        if converged || iters >= cfg.max_iters || alpha < MIN_LEARNING_RATE {
            return Ok(FitResult {
                params,
                converged,
                iters_used: iters,
                residual_trajectory: residuals,
                block_residual_trajectory: Vec::new(),
                log_likelihood_trajectory: lls,
                final_residuals: g,
                final_standard_error: None,
                final_learning_rate: alpha,
            });
        }
        iters += 1;
        let slack = 4.0 * f64::EPSILON * current.log_likelihood.abs().max(1.0);
        loop {
            let candidate = step(&params, &tied, alpha);
            let eval = eval_exact(engine, &candidate, target)?;
            if eval.log_likelihood >= current.log_likelihood - slack {
                params = candidate;
                current = eval;
                lls.push(current.log_likelihood);
                break;
            }
            alpha *= 0.5;
            log::debug!("iteration {iters}: log-likelihood decreased, learning rate now {alpha}");
            if alpha < MIN_LEARNING_RATE {
                break;
            }
        }
    }
}

/// Running sums over one averaging block.
struct Block {
    iters: usize,
    h: Vec<f64>,
    j: Vec<f64>,
    dh: Vec<f64>,
    dj: Vec<f64>,
}

impl Block {
    fn new(n: usize, pairs: usize) -> Self {
        Self { iters: 0, h: vec![0.0; n], j: vec![0.0; pairs], dh: vec![0.0; n], dj: vec![0.0; pairs] }
    }

    fn add(&mut self, params: &IsingParameters, g: &Gradient) {
        fn acc(sum: &mut [f64], v: &[f64]) {
            sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        }
        self.iters += 1;
        acc(&mut self.h, params.h());
        acc(&mut self.j, params.couplings().upper());
        acc(&mut self.dh, &g.dh);
        acc(&mut self.dj, g.dj.upper());
    }

    fn mean(v: &[f64], k: usize) -> Vec<f64> {
        v.iter().map(|x| x / k as f64).collect()
    }

    fn params(&self, n: usize) -> IsingParameters {
        let mut j = Couplings::zeros(n);
        j.upper_mut().copy_from_slice(&Self::mean(&self.j, self.iters));
        IsingParameters::new(Self::mean(&self.h, self.iters), j).expect("averages of valid parameters")
    }

    fn residuals(&self, n: usize) -> Gradient {
        let mut dj = Couplings::zeros(n);
        dj.upper_mut().copy_from_slice(&Self::mean(&self.dj, self.iters));
        Gradient { dh: Self::mean(&self.dh, self.iters), dj }
    }
}

/// Stochastic ascent with a fixed learning rate.
///
/// Iterations are grouped into blocks of `cfg.window`. At the end of each
/// block the block-mean residual is tested against `tol`, and the returned
/// parameters are the block-mean iterate. With `window = 1` this is the plain
/// last-iterate rule.
fn fit_gibbs(
    target: &MomentSet,
    tying: TyingScheme,
    cfg: &FitConfig,
    chains_cfg: &ChainConfig,
    mut params: IsingParameters,
) -> Result<FitResult> {
    let n = params.n();
    let pairs = params.couplings().upper().len();
    let mut chains = PersistentChains::new(&params, chains_cfg.n_chains, chains_cfg.seed, &chains_cfg.init);
    let mut residuals = Vec::new();
    let mut block_residuals = Vec::new();
    let mut block = Block::new(n, pairs);
    let mut burn_in = chains_cfg.burn_in;
    let mut iters = 0;
    loop {
        chains.set_params(&params);
        let sweeps = chains_cfg.sweeps - chains_cfg.burn_in + burn_in;
        let est = MomentEstimate::from_chains(&chains.run(sweeps, burn_in, chains_cfg.thinning))?;
        burn_in = 0;
        let g = gradient(target, &est.moments)?;
        let tied = tied_gradient(&g, tying);
        residuals.push(tied.max_abs());
        block.add(&params, &g);
        let block_done = block.iters == cfg.window;
        if block_done || iters >= cfg.max_iters {
            let mean_g = block.residuals(n);
            let r = tied_gradient(&mean_g, tying).max_abs();
            let converged = block_done && r <= cfg.tol;
            block_residuals.push(r);
            log::info!("iteration {iters}: block-mean residual {r:.3e}");
            if converged || iters >= cfg.max_iters {
                return Ok(FitResult {
                    params: block.params(n),
                    converged,
                    iters_used: iters,
                    residual_trajectory: residuals,
                    block_residual_trajectory: block_residuals,
                    log_likelihood_trajectory: Vec::new(),
                    final_residuals: mean_g,
                    final_standard_error: est.max_standard_error(),
                    final_learning_rate: cfg.learning_rate,
                });
            }
            block = Block::new(n, pairs);
        }
        params = step(&params, &tied, cfg.learning_rate);
        iters += 1;
    }
}

/// How well a parameter set reproduces a target.
#[derive(Debug, Clone, PartialEq)]
pub struct ReproductionReport {
    pub residuals: Gradient,
    pub max_m1_residual: f64,
    pub max_m2_residual: f64,
    /// Pearson correlation between the flattened off-diagonal target and
    /// model correlation matrices; `None` when either side has no variance.
    pub fidelity: Option<f64>,
    pub degenerate: bool,
    pub model: MomentSet,
}

/// Pearson correlation of the strict upper triangles of two correlation
/// matrices, over entries defined in both.
pub fn flattened_correlation(a: &DMatrix<Option<f64>>, b: &DMatrix<Option<f64>>) -> Option<f64> {
    let n = a.nrows();
    let pairs: Vec<(f64, f64)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter_map(|(i, j)| Some((a[(i, j)]?, b[(i, j)]?)))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let k = pairs.len() as f64;
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |(x, y), (a, b)| (x + a / k, y + b / k));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma).powi(2);
        sbb += (b - mb).powi(2);
    }
    if saa <= 1e-300 || sbb <= 1e-300 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

pub fn reproduction_check(
    params: &IsingParameters,
    target: &MomentSet,
    estimator: &Estimator,
) -> Result<ReproductionReport> {
    if params.n() != target.n() {
        return Err(Error::DimensionMismatch { expected: target.n(), found: params.n() });
    }
    let model = match estimator {
        Estimator::Exact(engine) => engine.moments(params)?,
        Estimator::Gibbs(c) => estimate_moments(params, c)?.moments,
    };
    Ok(reproduction_from_moments(target, model))
}

/// Reproduction report for already-computed model moments.
pub fn reproduction_from_moments(target: &MomentSet, model: MomentSet) -> ReproductionReport {
    let residuals = gradient(target, &model).expect("dimensions checked by caller");
    let max_m1_residual = residuals.dh.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let max_m2_residual = residuals.dj.upper().iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let fidelity = flattened_correlation(target.rho(), model.rho());
    ReproductionReport { residuals, max_m1_residual, max_m2_residual, degenerate: fidelity.is_none(), fidelity, model }
}
