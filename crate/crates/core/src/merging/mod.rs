//! Model aggregation: universe mapping, the cycle-consistent merge, naive
//! averaging, the MergeMany baseline, activation renormalization (REPAIR),
//! and subset merging.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matching::{coordinate_descent_match, fw_match_multi, MatchConfig, UniverseMatch};
use crate::model::{ActivationStats, Dataset, MlpParams, PermSpec};
use crate::perm::Permutation;
use crate::scalar::Scalar;

/// Rewrite a model in universe coordinates: `W_l <- (P_l)^T W_l P_{l-1}`,
/// `b_l <- (P_l)^T b_l` with identity at the chain boundaries. Exact entry
/// moves, and the result computes the same function.
pub fn map_to_universe<S: Scalar>(
    m: &MlpParams<S>,
    perms: &[Permutation],
) -> Result<MlpParams<S>> {
    let inverted: Vec<Permutation> = perms.iter().map(|p| p.invert()).collect();
    m.apply_permutations(&inverted)
}

/// Unweighted elementwise mean. Written as `x_0 + sum_i (x_i - x_0) / n` so
/// the mean of identical models reproduces them bitwise.
pub fn mean_params<S: Scalar>(models: &[MlpParams<S>]) -> Result<MlpParams<S>> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot average zero models".into()))?;
    let mut delta = first.zip_with(first, |_, _| S::zero())?;
    for m in &models[1..] {
        if !first.same_architecture(m) {
            return Err(Error::ShapeMismatch("models have different architectures".into()));
        }
        let diff = m.zip_with(first, |x, y| x - y)?;
        delta = delta.zip_with(&diff, |acc, d| acc + d)?;
    }
    let n = S::of_f64(models.len() as f64);
    first.zip_with(&delta, |x, d| x + d / n)
}

/// Plain averaging without any alignment.
pub fn naive_merge<S: Scalar>(models: &[MlpParams<S>]) -> Result<MlpParams<S>> {
    mean_params(models)
}

/// Match all models into a shared universe and average them there.
pub fn c2m3_merge<S: Scalar>(
    models: &[MlpParams<S>],
    config: &MatchConfig,
) -> Result<(MlpParams<S>, UniverseMatch)> {
    let matched = fw_match_multi(models, config)?;
    let mapped: Vec<MlpParams<S>> = models
        .iter()
        .zip(&matched.perms)
        .map(|(m, perms)| map_to_universe(m, perms))
        .collect::<Result<_>>()?;
    Ok((mean_params(&mapped)?, matched))
}

/// Average a subset of the models in universe coordinates, reusing the
/// permutations of a joint match. The full subset reproduces the joint
/// merge bitwise.
pub fn merge_subset<S: Scalar>(
    models: &[MlpParams<S>],
    matched: &UniverseMatch,
    subset: &[usize],
) -> Result<MlpParams<S>> {
    if subset.is_empty() {
        return Err(Error::InvalidInput("subset must be nonempty".into()));
    }
    if matched.num_models() != models.len() {
        return Err(Error::ShapeMismatch(format!(
            "match covers {} models, got {}",
            matched.num_models(),
            models.len()
        )));
    }
    let mapped: Vec<MlpParams<S>> = subset
        .iter()
        .map(|&i| {
            if i >= models.len() {
                return Err(Error::InvalidInput(format!(
                    "subset index {i} out of range for {} models",
                    models.len()
                )));
            }
            map_to_universe(&models[i], &matched.perms[i])
        })
        .collect::<Result<_>>()?;
    mean_params(&mapped)
}

/// MergeMany baseline: repeatedly align each model (in seeded random order)
/// to the mean of the others with coordinate descent, until a full pass
/// changes no permutation or `max_outer_iters` passes elapse; then average.
pub fn merge_many<S: Scalar>(
    models: &[MlpParams<S>],
    seed: u64,
    max_outer_iters: usize,
) -> Result<MlpParams<S>> {
    if models.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 models, got {}",
            models.len()
        )));
    }
    if max_outer_iters < 1 {
        return Err(Error::InvalidInput("max_outer_iters must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current: Vec<MlpParams<S>> = models.to_vec();
    let mut order: Vec<usize> = (0..models.len()).collect();
    for _ in 0..max_outer_iters {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut changed = false;
        for &i in &order {
            let others: Vec<MlpParams<S>> = current
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, m)| m.clone())
                .collect();
            let reference = mean_params(&others)?;
            let r = coordinate_descent_match(&reference, &current[i], rng.random::<u64>())?;
            if !r.perms.iter().all(|p| p.is_identity()) {
                current[i] = current[i].apply_permutations(&r.perms)?;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    mean_params(&current)
}

/// Per-hidden-neuron mean and population std of the pre-activations over a
/// dataset.
pub fn collect_stats<S: Scalar>(
    m: &MlpParams<S>,
    data: &Dataset<S>,
) -> Result<ActivationStats<S>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pass = m.forward(&data.features)?;
    let n = S::of_f64(data.len() as f64);
    let mut mean = Vec::with_capacity(pass.pre_activations.len());
    let mut std = Vec::with_capacity(pass.pre_activations.len());
    for pre in &pass.pre_activations {
        let mu: Array1<S> = pre.sum_axis(ndarray::Axis(0)) / n;
        let var: Array1<S> = pre
            .rows()
            .into_iter()
            .fold(Array1::zeros(mu.len()), |acc: Array1<S>, row| {
                let d = &row - &mu;
                acc + &d * &d
            })
            / n;
        mean.push(mu);
        std.push(var.mapv(|v| v.sqrt()));
    }
    Ok(ActivationStats { mean, std })
}

/// Result of [`repair`]: the corrected model plus the `(layer, neuron)`
/// pairs where the merged std collapsed and the gain was pinned to 1.
#[derive(Debug, Clone)]
pub struct RepairOutcome<S: Scalar> {
    pub model: MlpParams<S>,
    pub degenerate: Vec<(usize, usize)>,
}

const DEGENERATE_STD: f64 = 1e-12;

/// Renormalize a merged model's hidden pre-activations toward the uniform
/// mixture of its endpoints' statistics: per neuron,
/// `w_row <- g * w_row`, `b <- g * (b - mu_merged) + mu_target` with
/// `g = sigma_target / sigma_merged`. Layers are corrected input to output,
/// recomputing the merged statistics after each correction.
pub fn repair<S: Scalar>(
    merged: &MlpParams<S>,
    endpoints: &[MlpParams<S>],
    data: &Dataset<S>,
) -> Result<RepairOutcome<S>> {
    if endpoints.is_empty() {
        return Err(Error::InvalidInput("repair needs at least one endpoint".into()));
    }
    for e in endpoints {
        if !merged.same_architecture(e) {
            return Err(Error::ShapeMismatch("endpoint architecture differs from merged".into()));
        }
    }
    let spec = PermSpec::of(merged);
    let endpoint_stats: Vec<ActivationStats<S>> =
        endpoints.iter().map(|e| collect_stats(e, data)).collect::<Result<_>>()?;
    let inv_n = S::of_f64(1.0 / endpoints.len() as f64);
    let mut model = merged.clone();
    let mut degenerate = Vec::new();
    for h in 0..spec.num_hidden() {
        let d = spec.hidden_sizes()[h];
        let mut target_mean: Array1<S> = Array1::zeros(d);
        let mut target_std: Array1<S> = Array1::zeros(d);
        for stats in &endpoint_stats {
            target_mean += &stats.mean[h];
            target_std += &stats.std[h];
        }
        target_mean.mapv_inplace(|v| v * inv_n);
        target_std.mapv_inplace(|v| v * inv_n);
        let merged_stats = collect_stats(&model, data)?;
        let mut layers = model.into_layers();
        for i in 0..d {
            let sigma_m = merged_stats.std[h][i];
            let g = if sigma_m.as_f64() < DEGENERATE_STD {
                degenerate.push((h, i));
                S::one()
            } else {
                target_std[i] / sigma_m
            };
            layers[h].weight.row_mut(i).mapv_inplace(|w| g * w);
            layers[h].bias[i] =
                g * (layers[h].bias[i] - merged_stats.mean[h][i]) + target_mean[i];
        }
        model = MlpParams::new(layers)?;
    }
    Ok(RepairOutcome { model, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_mlp, random_perms};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn random_inputs(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn max_logit_diff(a: &MlpParams<f64>, b: &MlpParams<f64>, x: &Array2<f64>) -> f64 {
        let la = a.forward(x).unwrap().logits;
        let lb = b.forward(x).unwrap().logits;
        la.iter().zip(lb.iter()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
    }

    fn small_dataset(seed: u64) -> Dataset<f64> {
        let features = random_inputs(40, 3, seed);
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        Dataset::new(features, labels, 2, "toy").unwrap()
    }

    #[test]
    fn universe_map_identity_is_noop() {
        let m = random_mlp(&[3, 5, 4, 2], 1);
        let id = PermSpec::of(&m).identity_perms();
        assert_eq!(map_to_universe(&m, &id).unwrap(), m);
    }

    #[test]
    fn universe_map_preserves_function() {
        let m = random_mlp(&[3, 5, 4, 2], 2);
        let perms = random_perms(&m, 3);
        let mapped = map_to_universe(&m, &perms).unwrap();
        let x = random_inputs(100, 3, 4);
        assert!(max_logit_diff(&m, &mapped, &x) <= 1e-10);
    }

    #[test]
    fn universe_map_round_trips_exactly() {
        let m = random_mlp(&[3, 5, 4, 2], 5);
        let perms = random_perms(&m, 6);
        let mapped = map_to_universe(&m, &perms).unwrap();
        // mapping with P is applying P^{-1}; undo with the original apply
        assert_eq!(mapped.apply_permutations(&perms).unwrap(), m);
    }

    #[test]
    fn mean_of_identical_models_is_bitwise_equal() {
        let m = random_mlp(&[3, 5, 4, 2], 7);
        for n in 1..=4 {
            let models = vec![m.clone(); n];
            assert_eq!(naive_merge(&models).unwrap(), m);
        }
    }

    #[test]
    fn mean_of_model_and_negation_is_zero() {
        let m = random_mlp(&[3, 4, 2], 8);
        let neg = m.zip_with(&m, |x, _| -x).unwrap();
        let merged = naive_merge(&[m.clone(), neg]).unwrap();
        assert!(merged.flatten().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mean_matches_elementwise_oracle() {
        let a = random_mlp(&[3, 4, 2], 9);
        let b = random_mlp(&[3, 4, 2], 10);
        let merged = naive_merge(&[a.clone(), b.clone()]).unwrap();
        for ((x, y), z) in a.flatten().iter().zip(b.flatten().iter()).zip(merged.flatten()) {
            assert_abs_diff_eq!(z, (x + y) / 2.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn c2m3_merge_of_copies_returns_the_model() {
        let m = random_mlp(&[3, 5, 4, 2], 11);
        let (merged, matched) =
            c2m3_merge(&vec![m.clone(); 3], &MatchConfig::default()).unwrap();
        assert!(matched.perms.iter().flatten().all(|p| p.is_identity()));
        assert_eq!(merged, m);
    }

    #[test]
    fn c2m3_merge_recovers_planted_triple() {
        let base = random_mlp(&[3, 6, 5, 2], 12);
        let mut models = vec![base.clone()];
        for s in 0..2 {
            let pi = random_perms(&base, 13 + s);
            models.push(base.apply_permutations(&pi).unwrap());
        }
        let (merged, _) = c2m3_merge(&models, &MatchConfig::default()).unwrap();
        let x = random_inputs(100, 3, 15);
        assert!(max_logit_diff(&base, &merged, &x) <= 1e-9);
    }

    #[test]
    fn subset_full_equals_merge_and_singleton_equals_mapping() {
        let models: Vec<_> = (0..3).map(|s| random_mlp(&[3, 5, 4, 2], 20 + s)).collect();
        let (merged, matched) = c2m3_merge(&models, &MatchConfig::default()).unwrap();
        let full = merge_subset(&models, &matched, &[0, 1, 2]).unwrap();
        assert_eq!(full, merged);
        let single = merge_subset(&models, &matched, &[1]).unwrap();
        assert_eq!(single, map_to_universe(&models[1], &matched.perms[1]).unwrap());
        assert!(merge_subset(&models, &matched, &[]).is_err());
        assert!(merge_subset(&models, &matched, &[5]).is_err());
    }

    #[test]
    fn merge_many_identical_models() {
        let m = random_mlp(&[3, 5, 4, 2], 30);
        let merged = merge_many(&vec![m.clone(); 3], 0, 100).unwrap();
        assert_eq!(merged, m);
    }

    #[test]
    fn merge_many_recovers_planted_triple() {
        let base = random_mlp(&[3, 6, 5, 2], 31);
        let mut models = vec![base.clone()];
        for s in 0..2 {
            let pi = random_perms(&base, 32 + s);
            models.push(base.apply_permutations(&pi).unwrap());
        }
        let merged = merge_many(&models, 0, 100).unwrap();
        let x = random_inputs(100, 3, 34);
        assert!(max_logit_diff(&base, &merged, &x) <= 1e-9);
    }

    #[test]
    fn stats_of_zero_model_are_zero() {
        let m = random_mlp(&[3, 4, 2], 40);
        let zero = m.zip_with(&m, |_, _| 0.0).unwrap();
        let stats = collect_stats(&zero, &small_dataset(41)).unwrap();
        assert!(stats.mean[0].iter().all(|&x| x == 0.0));
        assert!(stats.std[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn stats_of_single_sample_have_zero_std() {
        let m = random_mlp(&[3, 4, 2], 42);
        let data = small_dataset(43).subset(&[0]).unwrap();
        let stats = collect_stats(&m, &data).unwrap();
        assert!(stats.std[0].iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn stats_match_manual_computation() {
        let m = random_mlp(&[3, 4, 2], 44);
        let data = small_dataset(45);
        let stats = collect_stats(&m, &data).unwrap();
        // second implementation: per-sample loop over explicit dot products
        let w = &m.layers()[0].weight;
        let b = &m.layers()[0].bias;
        for j in 0..4 {
            let pre: Vec<f64> = data
                .features
                .rows()
                .into_iter()
                .map(|x| x.iter().zip(w.row(j)).map(|(xi, wi)| xi * wi).sum::<f64>() + b[j])
                .collect();
            let mu = pre.iter().sum::<f64>() / pre.len() as f64;
            let var = pre.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / pre.len() as f64;
            assert_abs_diff_eq!(stats.mean[0][j], mu, epsilon = 1e-12);
            assert_abs_diff_eq!(stats.std[0][j], var.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn repair_with_matching_stats_is_noop() {
        let m = random_mlp(&[3, 5, 4, 2], 50);
        let data = small_dataset(51);
        let out = repair(&m, &[m.clone(), m.clone()], &data).unwrap();
        assert!(out.degenerate.is_empty());
        for (x, y) in m.flatten().iter().zip(out.model.flatten()) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn repair_pins_gain_on_degenerate_neurons() {
        let mut layers = random_mlp(&[3, 4, 2], 52).into_layers();
        // neuron 2 is constant: zero weights, so sigma_merged = 0
        layers[0].weight.row_mut(2).fill(0.0);
        let merged = MlpParams::new(layers).unwrap();
        let endpoint = random_mlp(&[3, 4, 2], 53);
        let data = small_dataset(54);
        let out = repair(&merged, &[endpoint.clone(), endpoint], &data).unwrap();
        assert!(out.degenerate.contains(&(0, 2)));
        // gain pinned to 1: the zero weight row is untouched, bias shifted
        assert!(out.model.layers()[0].weight.row(2).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn repair_moves_stats_toward_targets() {
        let models: Vec<_> = (0..2).map(|s| random_mlp(&[3, 6, 5, 2], 60 + s)).collect();
        let data = small_dataset(62);
        let (merged, matched) = c2m3_merge(&models, &MatchConfig::default()).unwrap();
        let mapped: Vec<_> = models
            .iter()
            .zip(&matched.perms)
            .map(|(m, p)| map_to_universe(m, p).unwrap())
            .collect();
        let out = repair(&merged, &mapped, &data).unwrap();
        let stats = collect_stats(&out.model, &data).unwrap();
        let e0 = collect_stats(&mapped[0], &data).unwrap();
        let e1 = collect_stats(&mapped[1], &data).unwrap();
        // first hidden layer is exactly corrected (later layers shift its
        // inputs, so only layer 0 admits a sharp check)
        for j in 0..6 {
            let mu_t = 0.5 * (e0.mean[0][j] + e1.mean[0][j]);
            let sd_t = 0.5 * (e0.std[0][j] + e1.std[0][j]);
            assert_abs_diff_eq!(stats.mean[0][j], mu_t, epsilon = 1e-9);
            assert_abs_diff_eq!(stats.std[0][j], sd_t, epsilon = 1e-9);
        }
    }
}
