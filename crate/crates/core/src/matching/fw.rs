//! Frank-Wolfe loops over the Birkhoff polytope with an exact polynomial
//! line search.
//!
//! Along the segment `(1-α)P + αD` the pairwise objective is a quadratic in
//! `α` and the factorized multi objective a quartic; both are fit exactly
//! from `degree + 1` equally spaced samples and maximized on `[0, 1]` by
//! derivative root-finding, with the true objective deciding among the
//! candidate points (ties go to the smallest `α`).

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{MlpParams, PermSpec};
use crate::perm::{ds_deviation, lap_maximize, Permutation, ProfitMatrix, DEFAULT_DS_TOL};
use crate::scalar::Scalar;

use super::{
    init_permutations, multi_gradient_soft, multi_objective, multi_objective_soft,
    pairwise_gradient_soft, pairwise_objective, pairwise_objective_soft, MatchConfig,
    MatchTrace, PairwiseMatch, SoftStack, UniverseMatch,
};

const MIN_STEP: f64 = 1e-12;
const REPROJECT_EVERY: usize = 10;

/// Monomial coefficients of the interpolating polynomial through
/// `(xs[i], ys[i])`, via Newton divided differences.
fn fit_poly(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut dd = ys.to_vec();
    for level in 1..n {
        for i in (level..n).rev() {
            dd[i] = (dd[i] - dd[i - 1]) / (xs[i] - xs[i - level]);
        }
    }
    // expand the Newton form sum_i dd[i] * prod_{j<i} (x - xs[j])
    let mut coeffs = vec![0.0; n];
    let mut basis = vec![0.0; n];
    basis[0] = 1.0;
    let mut basis_len = 1;
    for (i, &c) in dd.iter().enumerate() {
        for j in 0..basis_len {
            coeffs[j] += c * basis[j];
        }
        if i + 1 < n {
            // basis *= (x - xs[i])
            for j in (0..basis_len).rev() {
                basis[j + 1] += basis[j];
                basis[j] *= -xs[i];
            }
            basis_len += 1;
        }
    }
    coeffs
}

fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Real roots of the derivative inside (0, 1), by sign-scan plus bisection.
fn derivative_roots(coeffs: &[f64]) -> Vec<f64> {
    let deriv: Vec<f64> =
        coeffs.iter().enumerate().skip(1).map(|(k, &c)| c * k as f64).collect();
    if deriv.iter().all(|&c| c == 0.0) {
        return Vec::new();
    }
    let g = |x: f64| poly_eval(&deriv, x);
    let mut roots = Vec::new();
    let steps = 512;
    let mut x0 = 0.0;
    let mut f0 = g(x0);
    for k in 1..=steps {
        let x1 = k as f64 / steps as f64;
        let f1 = g(x1);
        if f0 == 0.0 {
            roots.push(x0);
        } else if f0 * f1 < 0.0 {
            let (mut lo, mut hi) = (x0, x1);
            let (mut flo, _) = (f0, f1);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let fm = g(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if flo * fm < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        x0 = x1;
        f0 = f1;
    }
    roots.retain(|&r| r > 0.0 && r < 1.0);
    roots
}

/// Maximize `objective(α)` on `[0, 1]` where it is a polynomial of the given
/// degree. Ties go to the smallest `α`, so a stalled search returns 0.
fn line_search(degree: usize, grid: usize, objective: &mut dyn FnMut(f64) -> f64) -> (f64, f64) {
    let samples: Vec<f64> = (0..=degree).map(|k| k as f64 / degree as f64).collect();
    let values: Vec<f64> = samples.iter().map(|&x| objective(x)).collect();
    let coeffs = fit_poly(&samples, &values);
    let mut candidates = vec![0.0, 1.0];
    if coeffs.iter().all(|c| c.is_finite()) {
        candidates.extend(derivative_roots(&coeffs));
    } else {
        candidates.extend((1..grid).map(|k| k as f64 / grid as f64));
    }
    candidates.sort_by(f64::total_cmp);
    let mut best = (0.0, objective(0.0));
    for &alpha in &candidates {
        let v = objective(alpha);
        if v > best.1 {
            best = (alpha, v);
        }
    }
    best
}

/// Pull a drifted iterate back to the doubly stochastic set: clamp negatives,
/// then alternate row/column normalization.
fn reproject<S: Scalar>(m: &mut Array2<S>) {
    for x in m.iter_mut() {
        if *x < S::zero() {
            *x = S::zero();
        }
    }
    for _ in 0..100 {
        if ds_deviation(m) <= DEFAULT_DS_TOL {
            return;
        }
        for mut row in m.rows_mut() {
            let s = row.sum();
            if s > S::zero() {
                row.mapv_inplace(|x| x / s);
            }
        }
        for mut col in m.columns_mut() {
            let s = col.sum();
            if s > S::zero() {
                col.mapv_inplace(|x| x / s);
            }
        }
    }
}

fn blend<S: Scalar>(ps: &[Array2<S>], ds: &[Array2<S>], alpha: f64) -> Vec<Array2<S>> {
    let a = S::of_f64(alpha);
    let one = S::one();
    ps.iter()
        .zip(ds)
        .map(|(p, d)| {
            let mut out = p.mapv(|x| (one - a) * x);
            out.zip_mut_with(d, |o, &dv| *o += a * dv);
            out
        })
        .collect()
}

fn lap_direction<S: Scalar>(grad: Array2<S>) -> Result<Array2<S>> {
    Ok(lap_maximize(&ProfitMatrix::new(grad)?)?.matrix())
}

fn check_finite(value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteObjective)
    }
}

/// Match model B onto model A with Frank-Wolfe over per-layer doubly
/// stochastic matrices. Deterministic for identity/barycenter init.
pub fn fw_match_pair<S: Scalar>(
    a: &MlpParams<S>,
    b: &MlpParams<S>,
    config: &MatchConfig,
) -> Result<PairwiseMatch> {
    config.validate()?;
    if !a.same_architecture(b) {
        return Err(Error::ShapeMismatch("models have different architectures".into()));
    }
    let spec = PermSpec::of(a);
    let mut ps: SoftStack<S> = init_permutations::<S>(config.init, &spec)?
        .into_iter()
        .map(|d| d.into_entries())
        .collect();
    let bias = config.include_bias;
    let mut objective = check_finite(pairwise_objective_soft(a, b, &ps, bias)?)?;
    let mut trace = MatchTrace {
        objective_per_iter: vec![objective],
        step_sizes: Vec::new(),
        converged: false,
        iterations: 0,
    };
    for iter in 1..=config.max_iters {
        let dirs: Vec<Array2<S>> = (0..spec.num_hidden())
            .map(|h| lap_direction(pairwise_gradient_soft(a, b, &ps, h, bias)?))
            .collect::<Result<_>>()?;
        let (alpha, _) = line_search(2, config.line_search_grid, &mut |al| {
            pairwise_objective_soft(a, b, &blend(&ps, &dirs, al), bias).unwrap_or(f64::NAN)
        });
        if alpha < MIN_STEP {
            trace.converged = true;
            break;
        }
        ps = blend(&ps, &dirs, alpha);
        if iter % REPROJECT_EVERY == 0 {
            for p in &mut ps {
                reproject(p);
            }
        }
        let next = check_finite(pairwise_objective_soft(a, b, &ps, bias)?)?;
        trace.step_sizes.push(alpha);
        trace.objective_per_iter.push(next);
        trace.iterations = iter;
        let gain = (next - objective) / objective.abs().max(1.0);
        objective = next;
        if gain < config.rel_tol {
            trace.converged = true;
            break;
        }
    }
    let perms: Vec<Permutation> = ps
        .iter()
        .map(|p| lap_maximize(&ProfitMatrix::new(p.clone())?))
        .collect::<Result<_>>()?;
    let objective = pairwise_objective(a, b, &perms, bias)?;
    Ok(PairwiseMatch { perms, trace, objective })
}

/// Match n models into a shared universe: one Frank-Wolfe loop over all
/// per-model permutation stacks with a single shared step size per
/// iteration. The projected hard permutations factor every pairwise map, so
/// cycles compose to the identity exactly.
pub fn fw_match_multi<S: Scalar>(
    models: &[MlpParams<S>],
    config: &MatchConfig,
) -> Result<UniverseMatch> {
    config.validate()?;
    if models.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 models, got {}",
            models.len()
        )));
    }
    for m in &models[1..] {
        if !models[0].same_architecture(m) {
            return Err(Error::ShapeMismatch("models have different architectures".into()));
        }
    }
    let spec = PermSpec::of(&models[0]);
    let n = models.len();
    let mut stacks: Vec<SoftStack<S>> = (0..n)
        .map(|p| {
            let strategy = match config.init {
                // distinct gaussian draws per model
                super::InitStrategy::Sinkhorn { seed } => super::InitStrategy::Sinkhorn {
                    seed: seed.wrapping_add((p as u64) << 32),
                },
                other => other,
            };
            Ok(init_permutations::<S>(strategy, &spec)?
                .into_iter()
                .map(|d| d.into_entries())
                .collect())
        })
        .collect::<Result<_>>()?;
    let bias = config.include_bias;
    let mut objective = check_finite(multi_objective_soft(models, &stacks, bias)?)?;
    let mut trace = MatchTrace {
        objective_per_iter: vec![objective],
        step_sizes: Vec::new(),
        converged: false,
        iterations: 0,
    };
    for iter in 1..=config.max_iters {
        let dirs: Vec<SoftStack<S>> = (0..n)
            .map(|p| {
                (0..spec.num_hidden())
                    .map(|h| lap_direction(multi_gradient_soft(models, &stacks, p, h, bias)?))
                    .collect::<Result<_>>()
            })
            .collect::<Result<_>>()?;
        let (alpha, _) = line_search(4, config.line_search_grid, &mut |al| {
            let moved: Vec<SoftStack<S>> =
                stacks.iter().zip(&dirs).map(|(ps, ds)| blend(ps, ds, al)).collect();
            multi_objective_soft(models, &moved, bias).unwrap_or(f64::NAN)
        });
        if alpha < MIN_STEP {
            trace.converged = true;
            break;
        }
        stacks = stacks.iter().zip(&dirs).map(|(ps, ds)| blend(ps, ds, alpha)).collect();
        if iter % REPROJECT_EVERY == 0 {
            for ps in &mut stacks {
                for p in ps.iter_mut() {
                    reproject(p);
                }
            }
        }
        let next = check_finite(multi_objective_soft(models, &stacks, bias)?)?;
        trace.step_sizes.push(alpha);
        trace.objective_per_iter.push(next);
        trace.iterations = iter;
        let gain = (next - objective) / objective.abs().max(1.0);
        objective = next;
        if gain < config.rel_tol {
            trace.converged = true;
            break;
        }
    }
    let perms: Vec<Vec<Permutation>> = stacks
        .iter()
        .map(|ps| {
            ps.iter()
                .map(|p| lap_maximize(&ProfitMatrix::new(p.clone())?))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let objective = multi_objective(models, &perms, bias)?;
    Ok(UniverseMatch { perms, trace, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::InitStrategy;
    use crate::testutil::{random_mlp, random_perms};
    use approx::assert_relative_eq;

    fn self_product(m: &MlpParams<f64>) -> f64 {
        m.layers()
            .iter()
            .map(|l| {
                l.weight.iter().map(|x| x * x).sum::<f64>()
                    + l.bias.iter().map(|x| x * x).sum::<f64>()
            })
            .sum()
    }

    fn assert_monotone(trace: &MatchTrace) {
        for w in trace.objective_per_iter.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                "objective decreased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn fit_poly_recovers_quartic() {
        let coeffs = [1.0, -2.0, 0.5, 3.0, -1.25];
        let xs: Vec<f64> = (0..=4).map(|k| k as f64 / 4.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| poly_eval(&coeffs, x)).collect();
        let got = fit_poly(&xs, &ys);
        for (g, w) in got.iter().zip(&coeffs) {
            assert_relative_eq!(g, w, max_relative = 1e-9);
        }
    }

    #[test]
    fn line_search_finds_interior_maximum() {
        // -(x - 0.3)^2 peaks at 0.3
        let (alpha, v) = line_search(2, 65, &mut |x| -(x - 0.3) * (x - 0.3));
        assert_relative_eq!(alpha, 0.3, epsilon = 1e-9);
        assert_relative_eq!(v, 0.0, epsilon = 1e-12);
        // monotone decreasing picks 0
        let (alpha, _) = line_search(2, 65, &mut |x| -x);
        assert_eq!(alpha, 0.0);
        // monotone increasing picks 1
        let (alpha, _) = line_search(2, 65, &mut |x| x);
        assert_eq!(alpha, 1.0);
    }

    #[test]
    fn pair_self_match_is_immediate() {
        let m = random_mlp(&[3, 5, 4, 2], 1);
        let r = fw_match_pair(&m, &m, &MatchConfig::default()).unwrap();
        assert!(r.perms.iter().all(|p| p.is_identity()));
        assert_relative_eq!(r.objective, self_product(&m), max_relative = 1e-12);
        assert!(r.trace.converged);
    }

    #[test]
    fn pair_recovers_planted_permutation() {
        for seed in 0..5 {
            let a = random_mlp(&[3, 6, 5, 2], 10 + seed);
            let pi = random_perms(&a, 20 + seed);
            // b = pi(a); matching b onto a must undo pi
            let b = a.apply_permutations(&pi).unwrap();
            let r = fw_match_pair(&a, &b, &MatchConfig::default()).unwrap();
            assert_relative_eq!(r.objective, self_product(&a), max_relative = 1e-9);
            let aligned = b.apply_permutations(&r.perms).unwrap();
            let x = ndarray::Array2::from_shape_fn((7, 3), |(i, j)| {
                ((i * 3 + j) as f64).sin()
            });
            let la = a.forward(&x).unwrap().logits;
            let lb = aligned.forward(&x).unwrap().logits;
            let diff = la.iter().zip(lb.iter()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-9, "logit diff {diff}");
            assert_monotone(&r.trace);
        }
    }

    #[test]
    fn pair_beats_identity_on_random_models() {
        let a = random_mlp(&[4, 8, 8, 3], 30);
        let b = random_mlp(&[4, 8, 8, 3], 31);
        let id = PermSpec::of(&a).identity_perms();
        let base = pairwise_objective(&a, &b, &id, true).unwrap();
        let r = fw_match_pair(&a, &b, &MatchConfig::default()).unwrap();
        assert!(r.objective >= base - 1e-9);
        assert_monotone(&r.trace);
    }

    #[test]
    fn pair_is_deterministic_under_seed_changes() {
        let a = random_mlp(&[4, 7, 6, 3], 40);
        let b = random_mlp(&[4, 7, 6, 3], 41);
        for init in [InitStrategy::Identity, InitStrategy::Barycenter] {
            let runs: Vec<PairwiseMatch> = (0..3)
                .map(|seed| {
                    let config = MatchConfig { init, seed, ..MatchConfig::default() };
                    fw_match_pair(&a, &b, &config).unwrap()
                })
                .collect();
            for r in &runs[1..] {
                assert_eq!(r.perms, runs[0].perms);
                assert_eq!(r.trace.objective_per_iter, runs[0].trace.objective_per_iter);
                assert_eq!(r.trace.step_sizes, runs[0].trace.step_sizes);
            }
        }
    }

    #[test]
    fn multi_identical_models_stay_identity() {
        let m = random_mlp(&[3, 5, 4, 2], 50);
        let models = vec![m.clone(); 3];
        let r = fw_match_multi(&models, &MatchConfig::default()).unwrap();
        assert!(r.perms.iter().flatten().all(|p| p.is_identity()));
        assert_relative_eq!(r.objective, 6.0 * self_product(&m), max_relative = 1e-12);
    }

    #[test]
    fn multi_planted_triple_is_cycle_consistent_and_exact() {
        let base = random_mlp(&[3, 6, 5, 2], 60);
        let mut models = vec![base.clone()];
        for s in 0..2 {
            let pi = random_perms(&base, 61 + s);
            models.push(base.apply_permutations(&pi).unwrap());
        }
        let r = fw_match_multi(&models, &MatchConfig::default()).unwrap();
        assert_monotone(&r.trace);
        // every 3-cycle of factored pairwise maps composes to identity
        let pab = r.pairwise(0, 1).unwrap();
        let pbc = r.pairwise(1, 2).unwrap();
        let pca = r.pairwise(2, 0).unwrap();
        // chain a <- b <- c <- a telescopes through the universe factors
        for ((x, y), z) in pab.iter().zip(&pbc).zip(&pca) {
            let cycle = x.compose(y).unwrap().compose(z).unwrap();
            assert!(cycle.is_identity());
        }
        // matching must reach the planted optimum
        assert_relative_eq!(r.objective, 6.0 * self_product(&base), max_relative = 1e-9);
    }

    #[test]
    fn multi_is_deterministic_under_seed_changes() {
        let models: Vec<_> = (0..3).map(|s| random_mlp(&[3, 6, 5, 2], 70 + s)).collect();
        let runs: Vec<UniverseMatch> = (0..3)
            .map(|seed| {
                let config = MatchConfig { seed, ..MatchConfig::default() };
                fw_match_multi(&models, &config).unwrap()
            })
            .collect();
        for r in &runs[1..] {
            assert_eq!(r.perms, runs[0].perms);
            assert_eq!(r.trace.objective_per_iter, runs[0].trace.objective_per_iter);
        }
    }

    #[test]
    fn multi_reduces_pairwise_distance() {
        let models: Vec<_> = (0..3).map(|s| random_mlp(&[4, 8, 8, 3], 80 + s)).collect();
        let r = fw_match_multi(&models, &MatchConfig::default()).unwrap();
        let dist = |ms: &[MlpParams<f64>]| -> f64 {
            let mut d = 0.0;
            for p in 0..ms.len() {
                for q in 0..ms.len() {
                    if p != q {
                        for (lp, lq) in ms[p].layers().iter().zip(ms[q].layers()) {
                            d += lp
                                .weight
                                .iter()
                                .zip(lq.weight.iter())
                                .map(|(x, y)| (x - y) * (x - y))
                                .sum::<f64>();
                        }
                    }
                }
            }
            d
        };
        let mapped: Vec<MlpParams<f64>> = models
            .iter()
            .zip(&r.perms)
            .map(|(m, ps)| {
                let inv: Vec<Permutation> = ps.iter().map(|p| p.invert()).collect();
                m.apply_permutations(&inv).unwrap()
            })
            .collect();
        assert!(dist(&mapped) <= dist(&models) + 1e-9);
    }

    #[test]
    fn sinkhorn_init_runs_and_is_monotone() {
        let a = random_mlp(&[3, 6, 5, 2], 90);
        let b = random_mlp(&[3, 6, 5, 2], 91);
        let config = MatchConfig {
            init: InitStrategy::Sinkhorn { seed: 4 },
            ..MatchConfig::default()
        };
        let r = fw_match_pair(&a, &b, &config).unwrap();
        assert_monotone(&r.trace);
        let models = [a, b];
        let r = fw_match_multi(&models, &config).unwrap();
        assert_monotone(&r.trace);
    }
}
