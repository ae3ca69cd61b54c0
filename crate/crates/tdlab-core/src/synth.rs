//! Seeded random tabular instances: ergodic chains, full-support policies,
//! and well-conditioned unit-ball features. Used by the oracle-equivalence
//! and statistics suites, and available for external benchmarking.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::FeatureMap;
use crate::mdp::{Policy, TabularMdp};

/// Mixture weight toward the uniform distribution in every generated row;
/// keeps chains irreducible and policies fully supported.
const UNIFORM_MIX: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub mdp: TabularMdp,
    pub target: Policy,
    pub behavior: Policy,
    pub features: FeatureMap,
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_simplex_row(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    // exponential spacings give a flat Dirichlet; mix with uniform for a
    // strictly positive floor
    let mut row: Vec<f64> = (0..len)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let total: f64 = row.iter().sum();
    let floor = UNIFORM_MIX / len as f64;
    for x in row.iter_mut() {
        *x = (1.0 - UNIFORM_MIX) * (*x / total) + floor;
    }
    // pin the row sum to exactly one against accumulated rounding
    let sum: f64 = row.iter().sum();
    row[len - 1] += 1.0 - sum;
    row
}

pub fn random_mdp(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize, gamma: f64) -> TabularMdp {
    let mut kernel = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        kernel.extend(random_simplex_row(rng, n_states));
    }
    let reward: Vec<f64> = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    TabularMdp::new(n_states, n_actions, kernel, reward, gamma)
        .expect("generated tables are valid by construction")
}

pub fn random_policy(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize) -> Policy {
    let mut rows = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        rows.extend(random_simplex_row(rng, n_actions));
    }
    Policy::new(DMatrix::from_row_slice(n_states, n_actions, &rows))
        .expect("generated rows are valid by construction")
}

/// Features with unit-capped row norms and a well-separated smallest singular
/// value (redrawn until conditioning is acceptable).
pub fn random_features(rng: &mut ChaCha8Rng, n_states: usize, dim: usize) -> FeatureMap {
    assert!(dim <= n_states, "cannot draw {dim} independent columns from {n_states} rows");
    loop {
        let mut phi = DMatrix::from_fn(n_states, dim, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let max_norm = (0..n_states)
            .map(|s| phi.row(s).norm())
            .fold(0.0_f64, f64::max);
        phi /= max_norm.max(1e-12);
        let sv = phi.clone().svd(false, false).singular_values;
        let min_sv = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_sv > 1e-6 {
            return FeatureMap::new(phi).expect("conditioning was just checked");
        }
    }
}

/// A full random instance: ergodic kernel, two fully supported policies, and
/// features of dimension `dim`.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    n_states: usize,
    n_actions: usize,
    dim: usize,
    gamma: f64,
) -> RandomInstance {
    RandomInstance {
        mdp: random_mdp(rng, n_states, n_actions, gamma),
        target: random_policy(rng, n_states, n_actions),
        behavior: random_policy(rng, n_states, n_actions),
        features: random_features(rng, n_states, dim),
    }
}
