//! Fixtures shared by the benchmarks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rompc::benchmarks::{heat_problem, HeatConfig};
use rompc::design::{synthesize, RompcDesign, SynthOptions};
use rompc::problem::ProblemSpec;

/// Random Schur-stable matrix with spectral radius `rho`.
pub fn stable_matrix(n: usize, rho: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let r = rompc::linalg::dense_spectral_radius(&a);
    a * (rho / r)
}

pub fn random_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// 20-state heat problem with a 4-state design; synthesizes in about a second.
pub fn small_heat() -> (ProblemSpec, RompcDesign) {
    let cfg = HeatConfig {
        nf: 20,
        rom_dim: 4,
        tau: 60,
        horizon: 10,
        ..HeatConfig::default()
    };
    let mut spec = heat_problem(&cfg).expect("heat problem");
    spec.bounds.eta_init = 1.0;
    let (design, _) = synthesize(
        &spec,
        &SynthOptions {
            jobs: 1,
            skip_delta1: false,
        },
    )
    .expect("synthesis");
    (spec, design)
}
