//! The quantitative harness: parameter interpolation, loss barriers, cycle
//! error, CKA and weight similarity, and pairwise merge matrices.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matching::UniverseMatch;
use crate::merging::map_to_universe;
use crate::model::{Dataset, MlpParams};
use crate::perm::Permutation;
use crate::scalar::Scalar;

pub const DEFAULT_BARRIER_GRID: usize = 25;

/// Convex combination `(1-λ)·a + λ·b`, computed as `a + λ(b-a)` so that
/// identical endpoints interpolate to themselves bitwise; `λ ∈ {0, 1}`
/// returns the endpoint itself.
pub fn interpolate<S: Scalar>(
    a: &MlpParams<S>,
    b: &MlpParams<S>,
    lambda: f64,
) -> Result<MlpParams<S>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda {lambda} outside [0, 1]")));
    }
    if lambda == 0.0 {
        return Ok(a.clone());
    }
    if lambda == 1.0 {
        return Ok(b.clone());
    }
    let l = S::of_f64(lambda);
    a.zip_with(b, |x, y| x + l * (y - x))
}

/// Loss/accuracy along the interpolation path on one dataset, plus the
/// barrier `max_λ ℒ(interp) − ½(ℒ(a) + ℒ(b))`. The grid maximum is a lower
/// bound on the true maximum.
#[derive(Debug, Clone, Serialize)]
pub struct BarrierCurve {
    pub lambdas: Vec<f64>,
    pub losses: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub barrier: f64,
}

/// Barrier curves of one model pair on train and test data over a shared
/// uniform λ grid.
#[derive(Debug, Clone, Serialize)]
pub struct BarrierReport {
    pub lambdas: Vec<f64>,
    pub train: BarrierCurve,
    pub test: BarrierCurve,
    pub train_barrier: f64,
    pub test_barrier: f64,
}

pub fn loss_barrier<S: Scalar>(
    a: &MlpParams<S>,
    b: &MlpParams<S>,
    data: &Dataset<S>,
    grid_size: usize,
) -> Result<BarrierCurve> {
    if grid_size < 2 {
        return Err(Error::InvalidInput("grid_size must be at least 2".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let lambdas: Vec<f64> =
        (0..grid_size).map(|k| k as f64 / (grid_size - 1) as f64).collect();
    let mut losses = Vec::with_capacity(grid_size);
    let mut accuracies = Vec::with_capacity(grid_size);
    for &l in &lambdas {
        let metrics = interpolate(a, b, l)?.loss_and_accuracy(data)?;
        losses.push(metrics.loss);
        accuracies.push(metrics.accuracy);
    }
    let endpoints = 0.5 * (losses[0] + losses[grid_size - 1]);
    let barrier = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max) - endpoints;
    Ok(BarrierCurve { lambdas, losses, accuracies, barrier })
}

pub fn barrier_report<S: Scalar>(
    a: &MlpParams<S>,
    b: &MlpParams<S>,
    train: &Dataset<S>,
    test: &Dataset<S>,
    grid_size: usize,
) -> Result<BarrierReport> {
    let train_curve = loss_barrier(a, b, train, grid_size)?;
    let test_curve = loss_barrier(a, b, test, grid_size)?;
    Ok(BarrierReport {
        lambdas: train_curve.lambdas.clone(),
        train_barrier: train_curve.barrier,
        test_barrier: test_curve.barrier,
        train: train_curve,
        test: test_curve,
    })
}

/// Where the permutations along a cycle come from.
pub enum MatchSource<'a> {
    /// Factored universe match: steps are `P^{pq} = P^p (P^q)^T`.
    Universe(&'a UniverseMatch),
    /// Independently computed per-step stacks; `steps[k]` aligns model
    /// `cycle[k+1]` onto model `cycle[k]`.
    Pairwise(&'a [Vec<Permutation>]),
}

/// Compose the pairwise permutations along a cycle, apply them to the start
/// model, and return the ℓ₂ parameter distance to the original. Zero for
/// any cycle-consistent match.
pub fn cycle_error<S: Scalar>(
    models: &[MlpParams<S>],
    source: MatchSource<'_>,
    cycle: &[usize],
) -> Result<f64> {
    if cycle.is_empty() || cycle.first() != cycle.last() {
        return Err(Error::InvalidInput(format!(
            "cycle {cycle:?} must start and end at the same model"
        )));
    }
    for &i in cycle {
        if i >= models.len() {
            return Err(Error::InvalidInput(format!(
                "cycle index {i} out of range for {} models",
                models.len()
            )));
        }
    }
    let steps = cycle.len() - 1;
    let start = &models[cycle[0]];
    if steps == 0 {
        return Ok(0.0);
    }
    let step_perms = |k: usize| -> Result<Vec<Permutation>> {
        match &source {
            MatchSource::Universe(u) => u.pairwise(cycle[k], cycle[k + 1]),
            MatchSource::Pairwise(stacks) => {
                if stacks.len() != steps {
                    return Err(Error::InvalidInput(format!(
                        "{} permutation stacks for a {steps}-step cycle",
                        stacks.len()
                    )));
                }
                Ok(stacks[k].clone())
            }
        }
    };
    let mut composed = step_perms(0)?;
    for k in 1..steps {
        let next = step_perms(k)?;
        composed = composed
            .iter()
            .zip(&next)
            .map(|(p, q)| p.compose(q))
            .collect::<Result<_>>()?;
    }
    let permuted = start.apply_permutations(&composed)?;
    let dist = start
        .flatten()
        .iter()
        .zip(permuted.flatten())
        .map(|(x, y)| {
            let d = (*x - y).as_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt();
    Ok(dist)
}

/// Linear CKA between two representation matrices with shared row count,
/// using the biased HSIC normalization: after column-centering,
/// `CKA = ‖Xc^T Yc‖_F² / (‖Xc^T Xc‖_F · ‖Yc^T Yc‖_F)`.
pub fn cka<S: Scalar>(x: &Array2<S>, y: &Array2<S>) -> Result<f64> {
    let m = x.nrows();
    if m < 2 || y.nrows() != m {
        return Err(Error::ShapeMismatch(format!(
            "representations need matching row counts >= 2, got {} and {}",
            m,
            y.nrows()
        )));
    }
    let center = |a: &Array2<S>| -> Array2<f64> {
        let a = a.mapv(|v| v.as_f64());
        let mu = a.sum_axis(ndarray::Axis(0)) / m as f64;
        a - &mu
    };
    let xc = center(x);
    let yc = center(y);
    let frob = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let xx = frob(&xc.t().dot(&xc));
    let yy = frob(&yc.t().dot(&yc));
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::UndefinedSimilarity(
            "zero-variance representations have undefined CKA".into(),
        ));
    }
    let xy = xc.t().dot(&yc).iter().map(|v| v * v).sum::<f64>();
    Ok(xy / (xx * yy))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeightSimilarity {
    pub cosine: f64,
    pub euclidean: f64,
}

/// Cosine similarity and Euclidean distance of the flattened parameter
/// vectors.
pub fn weight_similarity<S: Scalar>(
    a: &MlpParams<S>,
    b: &MlpParams<S>,
) -> Result<WeightSimilarity> {
    if !a.same_architecture(b) {
        return Err(Error::ShapeMismatch("models have different architectures".into()));
    }
    let u: Vec<f64> = a.flatten().iter().map(|x| x.as_f64()).collect();
    let v: Vec<f64> = b.flatten().iter().map(|x| x.as_f64()).collect();
    let dot: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::UndefinedSimilarity(
            "zero-norm model has undefined cosine similarity".into(),
        ));
    }
    let euclidean = u.iter().zip(&v).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    Ok(WeightSimilarity { cosine: dot / (nu * nv), euclidean })
}

/// Weight and representation similarity of one model pair.
#[derive(Debug, Clone, Serialize)]
pub struct PairSimilarity {
    pub p: usize,
    pub q: usize,
    pub cosine: f64,
    pub euclidean: f64,
    /// Per-hidden-layer CKA of post-activation representations.
    pub cka: Vec<f64>,
}

/// All-pairs similarity before and after universe mapping.
#[derive(Debug, Clone, Serialize)]
pub struct SimilarityReport {
    pub before: Vec<PairSimilarity>,
    pub after: Vec<PairSimilarity>,
}

fn pair_similarities<S: Scalar>(
    models: &[MlpParams<S>],
    probe: &Array2<S>,
) -> Result<Vec<PairSimilarity>> {
    let reps: Vec<Vec<Array2<S>>> =
        models.iter().map(|m| m.hidden_representations(probe)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for p in 0..models.len() {
        for q in (p + 1)..models.len() {
            let ws = weight_similarity(&models[p], &models[q])?;
            let cka_per_layer = reps[p]
                .iter()
                .zip(&reps[q])
                .map(|(x, y)| cka(x, y))
                .collect::<Result<_>>()?;
            out.push(PairSimilarity {
                p,
                q,
                cosine: ws.cosine,
                euclidean: ws.euclidean,
                cka: cka_per_layer,
            });
        }
    }
    Ok(out)
}

pub fn similarity_report<S: Scalar>(
    models: &[MlpParams<S>],
    matched: &UniverseMatch,
    probe: &Array2<S>,
) -> Result<SimilarityReport> {
    if matched.num_models() != models.len() {
        return Err(Error::ShapeMismatch(format!(
            "match covers {} models, got {}",
            matched.num_models(),
            models.len()
        )));
    }
    let mapped: Vec<MlpParams<S>> = models
        .iter()
        .zip(&matched.perms)
        .map(|(m, perms)| map_to_universe(m, perms))
        .collect::<Result<_>>()?;
    Ok(SimilarityReport {
        before: pair_similarities(models, probe)?,
        after: pair_similarities(&mapped, probe)?,
    })
}

/// Accuracy of every pairwise λ=0.5 midpoint, before and after universe
/// mapping; the diagonal holds each model's own accuracy.
#[derive(Debug, Clone, Serialize)]
pub struct MergeMatrix {
    pub before: Vec<Vec<f64>>,
    pub after: Vec<Vec<f64>>,
}

pub fn pairwise_merge_matrix<S: Scalar>(
    models: &[MlpParams<S>],
    matched: &UniverseMatch,
    data: &Dataset<S>,
) -> Result<MergeMatrix> {
    if models.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 models, got {}",
            models.len()
        )));
    }
    if matched.num_models() != models.len() {
        return Err(Error::ShapeMismatch(format!(
            "match covers {} models, got {}",
            matched.num_models(),
            models.len()
        )));
    }
    let mapped: Vec<MlpParams<S>> = models
        .iter()
        .zip(&matched.perms)
        .map(|(m, perms)| map_to_universe(m, perms))
        .collect::<Result<_>>()?;
    let table = |ms: &[MlpParams<S>]| -> Result<Vec<Vec<f64>>> {
        let n = ms.len();
        let mut t = vec![vec![0.0; n]; n];
        for p in 0..n {
            for q in 0..n {
                let acc = if p == q {
                    ms[p].loss_and_accuracy(data)?.accuracy
                } else {
                    interpolate(&ms[p], &ms[q], 0.5)?.loss_and_accuracy(data)?.accuracy
                };
                t[p][q] = acc;
            }
        }
        Ok(t)
    };
    Ok(MergeMatrix { before: table(models)?, after: table(&mapped)? })
}

/// Barrier curve CSV with columns `lambda,loss,accuracy`.
pub fn barrier_curve_csv(curve: &BarrierCurve) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lambda", "loss", "accuracy"])?;
    for ((l, loss), acc) in curve.lambdas.iter().zip(&curve.losses).zip(&curve.accuracies) {
        w.write_record([l.to_string(), loss.to_string(), acc.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

/// Similarity CSV with columns `row,col,metric,stage,value`; CKA rows are
/// per layer (`cka0`, `cka1`, ...).
pub fn similarity_csv(report: &SimilarityReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "col", "metric", "stage", "value"])?;
    for (stage, pairs) in [("before", &report.before), ("after", &report.after)] {
        for pair in pairs {
            let (r, c) = (pair.p.to_string(), pair.q.to_string());
            w.write_record([&r, &c, "cosine", stage, &pair.cosine.to_string()])?;
            w.write_record([&r, &c, "euclidean", stage, &pair.euclidean.to_string()])?;
            for (l, v) in pair.cka.iter().enumerate() {
                w.write_record([&r, &c, &format!("cka{l}"), stage, &v.to_string()])?;
            }
        }
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{coordinate_descent_match, fw_match_multi, fw_match_pair, MatchConfig};
    use crate::testutil::{random_mlp, random_perms};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn toy_data(seed: u64) -> Dataset<f64> {
        let features = random_inputs(60, 3, seed);
        let labels: Vec<usize> = (0..60).map(|i| i % 2).collect();
        Dataset::new(features, labels, 2, "toy").unwrap()
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let a = random_mlp(&[3, 4, 2], 1);
        let b = random_mlp(&[3, 4, 2], 2);
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
        let neg = a.zip_with(&a, |x, _| -x).unwrap();
        let mid = interpolate(&a, &neg, 0.5).unwrap();
        assert!(mid.flatten().iter().all(|&x| x == 0.0));
        assert!(interpolate(&a, &b, 1.5).is_err());
    }

    #[test]
    fn self_barrier_is_exactly_zero() {
        let a = random_mlp(&[3, 4, 2], 3);
        let curve = loss_barrier(&a, &a, &toy_data(4), 25).unwrap();
        assert_eq!(curve.barrier, 0.0);
        assert_eq!(curve.lambdas.len(), 25);
        assert_eq!(curve.lambdas[0], 0.0);
        assert_eq!(*curve.lambdas.last().unwrap(), 1.0);
    }

    #[test]
    fn barrier_is_symmetric_on_symmetric_grid() {
        let a = random_mlp(&[3, 5, 2], 5);
        let b = random_mlp(&[3, 5, 2], 6);
        let data = toy_data(7);
        let ab = loss_barrier(&a, &b, &data, 25).unwrap();
        let ba = loss_barrier(&b, &a, &data, 25).unwrap();
        assert_relative_eq!(ab.barrier, ba.barrier, max_relative = 1e-9, epsilon = 1e-12);
    }

    #[test]
    fn aligned_planted_pair_has_no_barrier() {
        let a = random_mlp(&[3, 6, 5, 2], 8);
        let pi = random_perms(&a, 9);
        let b = a.apply_permutations(&pi).unwrap();
        let m = fw_match_pair(&a, &b, &MatchConfig::default()).unwrap();
        let aligned = b.apply_permutations(&m.perms).unwrap();
        let curve = loss_barrier(&a, &aligned, &toy_data(10), 25).unwrap();
        assert!(curve.barrier.abs() <= 1e-9);
    }

    #[test]
    fn universe_cycles_have_exactly_zero_error() {
        let models: Vec<_> = (0..4).map(|s| random_mlp(&[3, 5, 4, 2], 20 + s)).collect();
        let u = fw_match_multi(&models, &MatchConfig::default()).unwrap();
        for cycle in [vec![0, 1, 0], vec![0, 1, 2, 0], vec![3, 2, 1, 0, 3]] {
            let e = cycle_error(&models, MatchSource::Universe(&u), &cycle).unwrap();
            assert_eq!(e, 0.0);
        }
        assert_eq!(
            cycle_error(&models, MatchSource::Universe(&u), &[2, 2]).unwrap(),
            0.0
        );
        assert_eq!(cycle_error(&models, MatchSource::Universe(&u), &[1]).unwrap(), 0.0);
        assert!(cycle_error(&models, MatchSource::Universe(&u), &[0, 1]).is_err());
    }

    #[test]
    fn independent_pairwise_cycles_accumulate_error() {
        let models: Vec<_> = (0..3).map(|s| random_mlp(&[4, 8, 8, 3], 30 + s)).collect();
        let steps: Vec<Vec<Permutation>> = [(0, 1), (1, 2), (2, 0)]
            .iter()
            .map(|&(p, q)| {
                coordinate_descent_match(&models[p], &models[q], 0).unwrap().perms
            })
            .collect();
        let e =
            cycle_error(&models, MatchSource::Pairwise(&steps), &[0, 1, 2, 0]).unwrap();
        assert!(e >= 0.0);
        // random nets have no consistent alignment, so some error accrues
        assert!(e > 0.0);
    }

    #[test]
    fn cka_basic_invariances() {
        let x = random_inputs(50, 6, 40);
        assert_relative_eq!(cka(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
        // column permutation
        let perm = Permutation::new(vec![3, 0, 5, 1, 4, 2]).unwrap();
        let xp = x.dot(&perm.matrix::<f64>());
        assert_abs_diff_eq!(cka(&x, &xp).unwrap(), 1.0, epsilon = 1e-10);
        // isotropic scaling
        let y = random_inputs(50, 4, 41);
        let y3 = y.mapv(|v| 3.0 * v);
        assert_abs_diff_eq!(cka(&x, &y3).unwrap(), cka(&x, &y).unwrap(), epsilon = 1e-10);
        // zero variance is undefined
        let z = Array2::from_elem((50, 3), 2.5);
        assert!(matches!(cka(&x, &z), Err(Error::UndefinedSimilarity(_))));
    }

    #[test]
    fn cka_unchanged_by_universe_mapping() {
        let models: Vec<_> = (0..2).map(|s| random_mlp(&[3, 6, 5, 2], 50 + s)).collect();
        let u = fw_match_multi(&models, &MatchConfig::default()).unwrap();
        let probe = random_inputs(64, 3, 52);
        let report = similarity_report(&models, &u, &probe).unwrap();
        for (b, a) in report.before.iter().zip(&report.after) {
            for (x, y) in b.cka.iter().zip(&a.cka) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn weight_similarity_trivials_and_oracle() {
        let a = random_mlp(&[3, 4, 2], 60);
        let same = weight_similarity(&a, &a).unwrap();
        assert_relative_eq!(same.cosine, 1.0, epsilon = 1e-12);
        assert_eq!(same.euclidean, 0.0);
        let neg = a.zip_with(&a, |x, _| -x).unwrap();
        assert_relative_eq!(weight_similarity(&a, &neg).unwrap().cosine, -1.0, epsilon = 1e-12);
        let b = random_mlp(&[3, 4, 2], 61);
        let got = weight_similarity(&a, &b).unwrap();
        let (u, v) = (a.flatten(), b.flatten());
        let dot: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert_relative_eq!(got.cosine, dot / (nu * nv), max_relative = 1e-12);
        let dist = u.iter().zip(&v).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        assert_relative_eq!(got.euclidean, dist, max_relative = 1e-12);
        let zero = a.zip_with(&a, |_, _| 0.0).unwrap();
        assert!(matches!(
            weight_similarity(&a, &zero),
            Err(Error::UndefinedSimilarity(_))
        ));
    }

    #[test]
    fn cosine_after_mapping_does_not_drop() {
        let models: Vec<_> = (0..3).map(|s| random_mlp(&[4, 8, 8, 3], 70 + s)).collect();
        let u = fw_match_multi(&models, &MatchConfig::default()).unwrap();
        let probe = random_inputs(64, 4, 73);
        let report = similarity_report(&models, &u, &probe).unwrap();
        let mean = |pairs: &[PairSimilarity]| {
            pairs.iter().map(|p| p.cosine).sum::<f64>() / pairs.len() as f64
        };
        assert!(mean(&report.after) >= mean(&report.before) - 1e-9);
    }

    #[test]
    fn merge_matrix_diagonal_and_identical_models() {
        let m = random_mlp(&[3, 5, 4, 2], 80);
        let data = toy_data(81);
        let models = vec![m.clone(); 3];
        let u = fw_match_multi(&models, &MatchConfig::default()).unwrap();
        let table = pairwise_merge_matrix(&models, &u, &data).unwrap();
        let own = m.loss_and_accuracy(&data).unwrap().accuracy;
        for row in &table.before {
            for &v in row {
                assert_eq!(v, own);
            }
        }
        assert_eq!(table.before, table.after);
    }

    #[test]
    fn merge_matrix_matches_manual_midpoints() {
        let models: Vec<_> = (0..3).map(|s| random_mlp(&[3, 5, 4, 2], 90 + s)).collect();
        let data = toy_data(93);
        let u = fw_match_multi(&models, &MatchConfig::default()).unwrap();
        let table = pairwise_merge_matrix(&models, &u, &data).unwrap();
        let mapped: Vec<_> = models
            .iter()
            .zip(&u.perms)
            .map(|(m, p)| map_to_universe(m, p).unwrap())
            .collect();
        for p in 0..3 {
            for q in 0..3 {
                let want = if p == q {
                    mapped[p].loss_and_accuracy(&data).unwrap().accuracy
                } else {
                    interpolate(&mapped[p], &mapped[q], 0.5)
                        .unwrap()
                        .loss_and_accuracy(&data)
                        .unwrap()
                        .accuracy
                };
                assert_eq!(table.after[p][q], want);
            }
        }
    }

    #[test]
    fn csv_outputs_have_expected_shape() {
        let a = random_mlp(&[3, 4, 2], 100);
        let b = random_mlp(&[3, 4, 2], 101);
        let data = toy_data(102);
        let curve = loss_barrier(&a, &b, &data, 5).unwrap();
        let text = String::from_utf8(barrier_curve_csv(&curve).unwrap()).unwrap();
        assert!(text.starts_with("lambda,loss,accuracy\n"));
        assert_eq!(text.trim_end().lines().count(), 6);
        let models = [a, b];
        let u = fw_match_multi(&models, &MatchConfig::default()).unwrap();
        let probe = random_inputs(32, 3, 103);
        let report = similarity_report(&models, &u, &probe).unwrap();
        let text = String::from_utf8(similarity_csv(&report).unwrap()).unwrap();
        assert!(text.starts_with("row,col,metric,stage,value\n"));
        // 1 pair x 2 stages x (cosine + euclidean + 1 cka layer)
        assert_eq!(text.trim_end().lines().count(), 7);
    }
}
