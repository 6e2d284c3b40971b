//! Seeded random generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as pick;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rck_core::config::{load_config, LoadOptions, Model};
use rck_core::scm::CoefficientEntry;
use rck_core::{GaussianComponent, GaussianMixture, Intervention, LinearScm};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture(name: &str) -> Model {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name);
    load_config(path, LoadOptions::default()).expect("fixture loads")
}

pub fn chain3() -> LinearScm {
    LinearScm::standard(&["X1", "X2", "X3"], &[("X2", "X1", 2.0), ("X3", "X2", 3.0)]).unwrap()
}

fn nonzero(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    loop {
        let v: f64 = rng.random_range(-bound..=bound);
        if v.abs() > 0.05 {
            return v;
        }
    }
}

/// Random DAG in declared order with 1..=max_n variables.
pub fn random_scm(rng: &mut ChaCha8Rng, max_n: usize) -> LinearScm {
    let n = rng.random_range(1..=max_n);
    let names: Vec<String> = (0..n).map(|i| format!("V{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..i {
            if rng.random_bool(0.4) {
                edges.push((refs[i], refs[j], nonzero(rng, 1.5)));
            }
        }
    }
    let mean = (0..n).map(|_| rng.random_range(-2.0..=2.0)).collect();
    let var = (0..n).map(|_| rng.random_range(0.2..=3.0)).collect();
    LinearScm::from_edges(&refs, &edges, mean, var).unwrap()
}

pub fn edges_of(scm: &LinearScm) -> Vec<(String, String)> {
    scm.support()
        .iter()
        .map(|&(c, p)| (scm.variables()[c].clone(), scm.variables()[p].clone()))
        .collect()
}

/// Overwrites a random subset of the declared edges.
pub fn random_soft(rng: &mut ChaCha8Rng, scm: &LinearScm) -> Intervention {
    let mut coefficients = Vec::new();
    for (c, p) in edges_of(scm) {
        if rng.random_bool(0.6) {
            coefficients.push(CoefficientEntry::new(&c, &p, rng.random_range(-1.5..=1.5)));
        }
    }
    Intervention::Soft { coefficients }
}

pub fn random_hard(rng: &mut ChaCha8Rng, scm: &LinearScm) -> Intervention {
    let n = scm.dim();
    let k = rng.random_range(1..=n);
    let targets: BTreeMap<String, f64> = pick(rng, n, k)
        .into_iter()
        .map(|i| (scm.variables()[i].clone(), rng.random_range(-3.0..=3.0)))
        .collect();
    Intervention::Hard { targets }
}

/// `B Bᵀ` with `B` of random rank in `0..=dim`, so singular covariances
/// show up regularly.
pub fn random_psd(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let rank = rng.random_range(0..=dim);
    let b = DMatrix::from_fn(dim, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    &b * b.transpose()
}

pub fn random_pd(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    &b * b.transpose() + DMatrix::identity(dim, dim) * 0.1
}

pub fn random_component(rng: &mut ChaCha8Rng, dim: usize) -> GaussianComponent {
    let mean = DVector::from_fn(dim, |_, _| rng.random_range(-3.0..=3.0));
    GaussianComponent::new(mean, random_psd(rng, dim)).unwrap()
}

pub fn random_mixture(rng: &mut ChaCha8Rng, dim: usize, max_k: usize) -> GaussianMixture {
    let k = rng.random_range(1..=max_k);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..=1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let head: f64 = weights[..k - 1].iter().sum();
    weights[k - 1] = 1.0 - head;
    let components = (0..k).map(|_| random_component(rng, dim)).collect();
    GaussianMixture::new(weights, components).unwrap()
}

/// Full-row-rank block map: micro variables are split over the macro rows,
/// with some left irrelevant.
pub fn random_block_map(rng: &mut ChaCha8Rng, n_micro: usize, n_macro: usize) -> DMatrix<f64> {
    assert!(n_macro <= n_micro);
    let mut m = DMatrix::zeros(n_macro, n_micro);
    let order = pick(rng, n_micro, n_micro).into_vec();
    for (i, &j) in order.iter().enumerate() {
        if i < n_macro {
            m[(i, j)] = nonzero(rng, 2.0);
        } else if rng.random_bool(0.7) {
            let row = rng.random_range(0..n_macro);
            m[(row, j)] = nonzero(rng, 2.0);
        }
    }
    m
}

pub fn independent_scm(prefix: &str, n: usize) -> LinearScm {
    let names: Vec<String> = (0..n).map(|i| format!("{prefix}{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    LinearScm::standard(&refs, &[]).unwrap()
}
