//! Per-layer coordinate descent over hard permutations, the weight-matching
//! baseline. With the other layers fixed the objective is linear in one
//! permutation, so each layer update is a single LAP solve on the gradient.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{MlpParams, PermSpec};
use crate::perm::{lap_maximize, ProfitMatrix};
use crate::scalar::Scalar;

use super::{pairwise_gradient, pairwise_objective, MatchTrace, PairwiseMatch};

const MAX_SWEEPS: usize = 500;

/// Match model B onto model A by sweeping the hidden layers in seeded random
/// order (reshuffled every sweep) until a full sweep changes nothing.
/// Deterministic given the seed, but the result depends on it.
pub fn coordinate_descent_match<S: Scalar>(
    a: &MlpParams<S>,
    b: &MlpParams<S>,
    seed: u64,
) -> Result<PairwiseMatch> {
    if !a.same_architecture(b) {
        return Err(Error::ShapeMismatch("models have different architectures".into()));
    }
    let spec = PermSpec::of(a);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perms = spec.identity_perms();
    let mut trace = MatchTrace {
        objective_per_iter: vec![pairwise_objective(a, b, &perms, true)?],
        step_sizes: Vec::new(),
        converged: false,
        iterations: 0,
    };
    let mut order: Vec<usize> = (0..spec.num_hidden()).collect();
    for sweep in 1..=MAX_SWEEPS {
        order.shuffle(&mut rng);
        let mut changed = false;
        for &h in &order {
            let profit = pairwise_gradient(a, b, &perms, h, true)?;
            let best = lap_maximize(&ProfitMatrix::new(profit)?)?;
            if best != perms[h] {
                perms[h] = best;
                changed = true;
            }
        }
        trace.objective_per_iter.push(pairwise_objective(a, b, &perms, true)?);
        trace.iterations = sweep;
        if !changed {
            trace.converged = true;
            break;
        }
    }
    let objective = *trace.objective_per_iter.last().expect("trace is nonempty");
    Ok(PairwiseMatch { perms, trace, objective })
}
