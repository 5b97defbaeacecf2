//! Shared fixtures for integration tests.
#![allow(dead_code)]

use micdt_core::linalg::{companion, spectral_radius};
use micdt_core::simulate::{simulate_svar, NoiseFamily, NoiseSpec};
use micdt_core::{MultichannelSeries, StructuralMatrix, SvarModel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn labels(c: usize) -> Vec<String> {
    (1..=c).map(|i| format!("b{i}")).collect()
}

/// Builds a model from `S0`, its causal order and corrected lag matrices, with
/// `uncorrected_lagged` derived from them.
pub fn model(s0: DMatrix<f64>, causal_order: Vec<usize>, lagged: Vec<DMatrix<f64>>) -> SvarModel {
    let c = s0.nrows();
    let mut m = SvarModel::zeros(labels(c), lagged.len());
    m.s0 = StructuralMatrix {
        s0,
        causal_order,
        pruned: true,
    };
    m.lagged = lagged;
    m.recompute_uncorrected().unwrap();
    m
}

/// Reduced-form companion spectral radius of an `S0`, `S1..SD` system.
pub fn reduced_radius(s0: &DMatrix<f64>, lagged: &[DMatrix<f64>]) -> f64 {
    let c = s0.nrows();
    let inv = (DMatrix::identity(c, c) - s0).try_inverse().unwrap();
    let m: Vec<DMatrix<f64>> = lagged.iter().map(|s| &inv * s).collect();
    spectral_radius(&companion(&m))
}

/// A random stable SVAR(1): `S0` strictly lower triangular in a random causal
/// order with every such entry of magnitude in [0.3, 0.8] and random sign; `S1`
/// with entries in [-0.5, 0.5], shrunk until the reduced-form radius is below 0.9.
pub fn random_stable_svar1(c: usize, seed: u64) -> SvarModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..c).collect();
    for i in (1..c).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut s0 = DMatrix::zeros(c, c);
    for i in 0..c {
        for j in 0..i {
            let mag = rng.random_range(0.3..=0.8);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            s0[(order[i], order[j])] = sign * mag;
        }
    }
    let mut s1 = DMatrix::from_fn(c, c, |_, _| rng.random_range(-0.5..=0.5));
    loop {
        let r = reduced_radius(&s0, std::slice::from_ref(&s1));
        if r < 0.9 {
            break;
        }
        s1 *= 0.85 / r;
    }
    model(s0, order, vec![s1])
}

pub fn simulate(m: &SvarModel, n: usize, family: NoiseFamily, seed: u64) -> MultichannelSeries {
    simulate_svar(m, n, &NoiseSpec::unit(family, m.n_channels(), seed), 1000).unwrap()
}

/// Independent sources, `C x T`.
pub fn sources(family: NoiseFamily, c: usize, t: usize, seed: u64) -> DMatrix<f64> {
    NoiseSpec::unit(family, c, seed).draw(t)
}

pub fn white_noise(c: usize, n: usize, seed: u64) -> MultichannelSeries {
    MultichannelSeries::from_matrix(labels(c), &sources(NoiseFamily::Gaussian, c, n, seed)).unwrap()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}
