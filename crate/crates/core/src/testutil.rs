//! Shared helpers for unit tests.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Layer, MlpParams, PermSpec};
use crate::perm::Permutation;

pub fn random_mlp(dims: &[usize], seed: u64) -> MlpParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .map(|w| Layer {
            weight: Array2::from_shape_fn((w[1], w[0]), |_| rng.random::<f64>() * 2.0 - 1.0),
            bias: Array1::from_shape_fn(w[1], |_| rng.random::<f64>() * 2.0 - 1.0),
        })
        .collect();
    MlpParams::new(layers).unwrap()
}

pub fn random_perms(model: &MlpParams<f64>, seed: u64) -> Vec<Permutation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PermSpec::of(model)
        .hidden_sizes()
        .iter()
        .map(|&d| Permutation::random(d, &mut rng))
        .collect()
}
