//! Workload builders shared by the benchmarks.

use isingrisk::model::{Component, Couplings, IsingParameters, MomentSet, Portfolio};
use isingrisk::stats::{moments_from_pf_rho, pairwise_distances, CorrelationDistanceModel, DistanceUnit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_system(n: usize, seed: u64) -> IsingParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let j = Couplings::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    IsingParameters::new(h, j).unwrap()
}

/// Regular `rows × cols` grid of buildings `spacing_m` apart.
pub fn grid_portfolio(rows: usize, cols: usize, spacing_m: f64) -> Portfolio {
    let (lat0, lon0) = (36.2f64, 36.16f64);
    let deg = 111_195.0;
    let comps = (0..rows * cols)
        .map(|k| Component {
            id: format!("b{k}"),
            latitude: lat0 + (k / cols) as f64 * spacing_m / deg,
            longitude: lon0 + (k % cols) as f64 * spacing_m / (deg * lat0.to_radians().cos()),
            attributes: Vec::new(),
        })
        .collect();
    Portfolio::new(comps).unwrap()
}

/// Homogeneous targets on a grid with `ρ(d) = 1 / (1 + a d)`.
pub fn grid_targets(portfolio: &Portfolio, pf: f64, a_per_km: f64) -> MomentSet {
    let model = CorrelationDistanceModel::new(a_per_km, DistanceUnit::Kilometers).unwrap();
    let rho = model.correlation_matrix(&pairwise_distances(portfolio).unwrap());
    moments_from_pf_rho(&vec![pf; portfolio.len()], &rho).unwrap()
}
