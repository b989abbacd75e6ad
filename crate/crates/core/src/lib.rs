//! Maximum-entropy (long-range Ising) joint distributions over the binary
//! damage states of a regional portfolio.
//!
//! * [`model`]: spins, parameters, moments and the Ising exponent
//! * [`exact`]: brute-force enumeration, the reference for everything else
//! * [`sampler`]: Gibbs chains with deterministic, parallel moment estimation
//! * [`inverse`]: likelihood gradient ascent (Boltzmann learning)
//! * [`meanfield`]: forward/inverse mean-field approximations
//! * [`stats`]: empirical moments, distances and the `ρ(d)` regression
//! * [`report`]: failure probabilities, count distributions and diagnostics

pub mod error;
pub mod exact;
pub mod inverse;
pub mod meanfield;
pub mod model;
pub mod report;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};
pub use exact::{ExactDistribution, ExactEngine};
pub use inverse::{fit, Estimator, FieldTying, FitConfig, FitInit, FitResult, TyingScheme};
pub use model::{
    exponent, validate, Component, Couplings, IsingParameters, MomentSet, ObservationSet, Portfolio, SpinConfiguration,
    Violation,
};
pub use report::{build_report, RiskReport, SampleSummary};
pub use sampler::{ChainConfig, ChainInit, MomentEstimate};
pub use stats::{BinnedCorrelation, CorrelationDistanceModel, DistanceUnit};
