//! Permutation matching: the relaxed objectives and their gradients, the
//! Frank-Wolfe matchers (pairwise and n-way through a shared universe), the
//! coordinate-descent baseline, and iterate initialization.
//!
//! Soft permutations are plain `Array2` matrices here; the matchers keep
//! them (approximately) doubly stochastic and round to hard [`Permutation`]s
//! only at the end.

mod coord;
mod fw;
mod io;

pub use coord::coordinate_descent_match;
pub use fw::{fw_match_multi, fw_match_pair};
pub use io::{load_match, save_match, MatchDocument, MatchMode, PERMS_FORMAT_VERSION};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::{MlpParams, PermSpec};
use crate::perm::{sinkhorn_knopp, DoublyStochastic, Permutation, DEFAULT_DS_TOL};
use crate::scalar::Scalar;

/// Starting point for the Frank-Wolfe iterates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Identity matrices (a vertex of the Birkhoff polytope).
    Identity,
    /// All entries `1/N` (the barycenter of doubly stochastic matrices).
    Barycenter,
    /// Sinkhorn normalization of `exp(G)` for a seeded standard Gaussian `G`.
    Sinkhorn { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct MatchConfig {
    pub init: InitStrategy,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Fallback sample count when the polynomial line search degenerates.
    pub line_search_grid: usize,
    /// Used only by the sinkhorn init and the coordinate-descent layer order.
    pub seed: u64,
    /// Include bias terms in objective and gradient (off = weights only).
    pub include_bias: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            init: InitStrategy::Identity,
            max_iters: 100,
            rel_tol: 1e-6,
            line_search_grid: 65,
            seed: 0,
            include_bias: true,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(Error::InvalidInput("rel_tol must be positive".into()));
        }
        if self.line_search_grid < 2 {
            return Err(Error::InvalidInput("line_search_grid must be at least 2".into()));
        }
        Ok(())
    }
}

/// Per-iteration record of a matcher run.
#[derive(Debug, Clone)]
pub struct MatchTrace {
    pub objective_per_iter: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Result of matching model B onto model A: one hard permutation per hidden
/// layer, so `apply_permutations(b, &perms)` aligns B with A.
#[derive(Debug, Clone)]
pub struct PairwiseMatch {
    pub perms: Vec<Permutation>,
    pub trace: MatchTrace,
    /// Objective of the final hard permutations.
    pub objective: f64,
}

/// Result of matching n models into a shared universe: `perms[p][l]` is
/// `P_l^p` mapping universe coordinates to model p's. The pairwise map from
/// model q onto model p factors as `P^p ∘ (P^q)^T`, which makes every cycle
/// of pairwise maps the identity exactly.
#[derive(Debug, Clone)]
pub struct UniverseMatch {
    pub perms: Vec<Vec<Permutation>>,
    pub trace: MatchTrace,
    /// Objective of the final hard permutations.
    pub objective: f64,
}

impl UniverseMatch {
    pub fn num_models(&self) -> usize {
        self.perms.len()
    }

    /// Hard pairwise maps `P^{pq} = P^p ∘ (P^q)^T` aligning model q onto
    /// model p, one per hidden layer. Exact integer composition.
    pub fn pairwise(&self, p: usize, q: usize) -> Result<Vec<Permutation>> {
        let n = self.perms.len();
        if p >= n || q >= n {
            return Err(Error::InvalidInput(format!(
                "model indices ({p}, {q}) out of range for {n} models"
            )));
        }
        self.perms[p]
            .iter()
            .zip(&self.perms[q])
            .map(|(pp, pq)| pp.compose(&pq.invert()))
            .collect()
    }
}

/// Soft per-hidden-layer permutation stack for one model.
pub(crate) type SoftStack<S> = Vec<Array2<S>>;

pub(crate) fn perms_to_soft<S: Scalar>(perms: &[Permutation]) -> SoftStack<S> {
    perms.iter().map(|p| p.matrix()).collect()
}

fn frob_inner<S: Scalar>(a: &Array2<S>, b: &Array2<S>) -> S {
    a.iter().zip(b.iter()).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

fn check_soft_shapes<S: Scalar>(spec: &PermSpec, ps: &[Array2<S>]) -> Result<()> {
    if ps.len() != spec.num_hidden() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} permutations, got {}",
            spec.num_hidden(),
            ps.len()
        )));
    }
    for (p, &d) in ps.iter().zip(spec.hidden_sizes()) {
        if p.nrows() != d || p.ncols() != d {
            return Err(Error::ShapeMismatch(format!(
                "permutation is {}x{}, expected {d}x{d}",
                p.nrows(),
                p.ncols()
            )));
        }
    }
    Ok(())
}

/// Pairwise weight-matching objective
/// `Σ_l <W_l^A, P_l W_l^B P_{l-1}^T> + Σ_l <b_l^A, P_l b_l^B>`
/// with `P_0 = P_L = I`, evaluated at soft (or hard 0/1) matrices.
pub fn pairwise_objective_soft<S: Scalar>(
    a: &MlpParams<S>,
    b: &MlpParams<S>,
    ps: &[Array2<S>],
    include_bias: bool,
) -> Result<f64> {
    if !a.same_architecture(b) {
        return Err(Error::ShapeMismatch("models have different architectures".into()));
    }
    let spec = PermSpec::of(a);
    check_soft_shapes(&spec, ps)?;
    let nl = a.num_layers();
    let mut total = S::zero();
    for (i, (la, lb)) in a.layers().iter().zip(b.layers()).enumerate() {
        // row permutation of layer i is P_i (identity on the output layer),
        // column permutation is P_{i-1} (identity on the input layer)
        let permuted = match (i + 1 < nl, i > 0) {
            (true, true) => ps[i].dot(&lb.weight).dot(&ps[i - 1].t().to_owned()),
            (true, false) => ps[i].dot(&lb.weight),
            (false, true) => lb.weight.dot(&ps[i - 1].t().to_owned()),
            (false, false) => lb.weight.clone(),
        };
        total += frob_inner(&la.weight, &permuted);
        if include_bias {
            let pb: Array1<S> =
                if i + 1 < nl { ps[i].dot(&lb.bias) } else { lb.bias.clone() };
            total += la.bias.iter().zip(pb.iter()).fold(S::zero(), |s, (&x, &y)| s + x * y);
        }
    }
    Ok(total.as_f64())
}

/// [`pairwise_objective_soft`] at hard permutations.
pub fn pairwise_objective<S: Scalar>(
    a: &MlpParams<S>,
    b: &MlpParams<S>,
    perms: &[Permutation],
    include_bias: bool,
) -> Result<f64> {
    PermSpec::of(a).check(perms)?;
    pairwise_objective_soft(a, b, &perms_to_soft(perms), include_bias)
}

/// Gradient of the pairwise objective with respect to the soft `P_h`
/// (`h` is the 0-based hidden-layer index):
/// `W_{h+1}^A P_h' (W_{h+1}^B)^T + (W_{h+2}^A)^T P_{h+1} W_{h+2}^B + b^A b^{B,T}`
/// in 1-based layer terms, with identity at the chain boundaries.
pub fn pairwise_gradient_soft<S: Scalar>(
    a: &MlpParams<S>,
    b: &MlpParams<S>,
    ps: &[Array2<S>],
    h: usize,
    include_bias: bool,
) -> Result<Array2<S>> {
    if !a.same_architecture(b) {
        return Err(Error::ShapeMismatch("models have different architectures".into()));
    }
    let spec = PermSpec::of(a);
    check_soft_shapes(&spec, ps)?;
    if h >= spec.num_hidden() {
        return Err(Error::InvalidInput(format!(
            "hidden layer index {h} out of range for {} hidden layers",
            spec.num_hidden()
        )));
    }
    let (la, lb) = (&a.layers()[h], &b.layers()[h]);
    // incoming term W^A P_{h-1} (W^B)^T
    let mut grad = if h > 0 {
        la.weight.dot(&ps[h - 1]).dot(&lb.weight.t().to_owned())
    } else {
        la.weight.dot(&lb.weight.t().to_owned())
    };
    // outgoing term (W^A)^T P_{h+1} W^B for the next layer
    let (na, nb) = (&a.layers()[h + 1], &b.layers()[h + 1]);
    let at = na.weight.t().to_owned();
    grad = grad
        + if h + 1 < spec.num_hidden() {
            at.dot(&ps[h + 1]).dot(&nb.weight)
        } else {
            at.dot(&nb.weight)
        };
    if include_bias {
        for ((i, j), g) in grad.indexed_iter_mut() {
            *g += la.bias[i] * lb.bias[j];
        }
    }
    Ok(grad)
}

/// [`pairwise_gradient_soft`] at hard permutations.
pub fn pairwise_gradient<S: Scalar>(
    a: &MlpParams<S>,
    b: &MlpParams<S>,
    perms: &[Permutation],
    h: usize,
    include_bias: bool,
) -> Result<Array2<S>> {
    PermSpec::of(a).check(perms)?;
    pairwise_gradient_soft(a, b, &perms_to_soft(perms), h, include_bias)
}

/// Universe-mapped layer weight `(P_l^p)^T W_l^p P_{l-1}^p` (identity at the
/// chain boundaries) for soft stacks.
fn universe_weight<S: Scalar>(
    m: &MlpParams<S>,
    ps: &SoftStack<S>,
    i: usize,
) -> Array2<S> {
    let nl = m.num_layers();
    let w = &m.layers()[i].weight;
    match (i + 1 < nl, i > 0) {
        (true, true) => ps[i].t().dot(w).dot(&ps[i - 1]),
        (true, false) => ps[i].t().dot(w),
        (false, true) => w.dot(&ps[i - 1]),
        (false, false) => w.clone(),
    }
}

fn universe_bias<S: Scalar>(m: &MlpParams<S>, ps: &SoftStack<S>, i: usize) -> Array1<S> {
    if i + 1 < m.num_layers() {
        ps[i].t().dot(&m.layers()[i].bias)
    } else {
        m.layers()[i].bias.clone()
    }
}

fn check_multi<S: Scalar>(models: &[MlpParams<S>], stacks: &[SoftStack<S>]) -> Result<PermSpec> {
    if models.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 models, got {}",
            models.len()
        )));
    }
    if stacks.len() != models.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} permutation stacks for {} models",
            stacks.len(),
            models.len()
        )));
    }
    let spec = PermSpec::of(&models[0]);
    for m in &models[1..] {
        if !models[0].same_architecture(m) {
            return Err(Error::ShapeMismatch("models have different architectures".into()));
        }
    }
    for ps in stacks {
        check_soft_shapes(&spec, ps)?;
    }
    Ok(spec)
}

/// Cycle-consistent multi-model objective over ordered pairs `p != q`:
/// `Σ_{p≠q} Σ_l <(P_l^p)^T W_l^p P_{l-1}^p, (P_l^q)^T W_l^q P_{l-1}^q>`
/// plus the analogous bias terms.
pub fn multi_objective_soft<S: Scalar>(
    models: &[MlpParams<S>],
    stacks: &[SoftStack<S>],
    include_bias: bool,
) -> Result<f64> {
    check_multi(models, stacks)?;
    let nl = models[0].num_layers();
    let mut total = S::zero();
    for i in 0..nl {
        let ws: Vec<Array2<S>> =
            models.iter().zip(stacks).map(|(m, ps)| universe_weight(m, ps, i)).collect();
        let bs: Vec<Array1<S>> =
            models.iter().zip(stacks).map(|(m, ps)| universe_bias(m, ps, i)).collect();
        for p in 0..models.len() {
            for q in (p + 1)..models.len() {
                let two = S::of_f64(2.0);
                total += two * frob_inner(&ws[p], &ws[q]);
                if include_bias {
                    let dot =
                        bs[p].iter().zip(bs[q].iter()).fold(S::zero(), |s, (&x, &y)| s + x * y);
                    total += two * dot;
                }
            }
        }
    }
    Ok(total.as_f64())
}

/// [`multi_objective_soft`] at hard permutations.
pub fn multi_objective<S: Scalar>(
    models: &[MlpParams<S>],
    perms: &[Vec<Permutation>],
    include_bias: bool,
) -> Result<f64> {
    let stacks: Vec<SoftStack<S>> = perms.iter().map(|p| perms_to_soft(p)).collect();
    multi_objective_soft(models, &stacks, include_bias)
}

/// Gradient of [`multi_objective_soft`] with respect to `P_h^p` (`h` is the
/// 0-based hidden-layer index). Each unordered pair contributes twice, once
/// per orientation, hence the factor 2 on every term.
pub fn multi_gradient_soft<S: Scalar>(
    models: &[MlpParams<S>],
    stacks: &[SoftStack<S>],
    p: usize,
    h: usize,
    include_bias: bool,
) -> Result<Array2<S>> {
    let spec = check_multi(models, stacks)?;
    if p >= models.len() {
        return Err(Error::InvalidInput(format!(
            "model index {p} out of range for {} models",
            models.len()
        )));
    }
    if h >= spec.num_hidden() {
        return Err(Error::InvalidInput(format!(
            "hidden layer index {h} out of range for {} hidden layers",
            spec.num_hidden()
        )));
    }
    let d = spec.hidden_sizes()[h];
    let mut grad: Array2<S> = Array2::zeros((d, d));
    let two = S::of_f64(2.0);
    let mp = &models[p];
    // W_l^p P_{l-1}^p for the incoming layer (l = h+1 one-based)
    let win = if h > 0 {
        mp.layers()[h].weight.dot(&stacks[p][h - 1])
    } else {
        mp.layers()[h].weight.clone()
    };
    // (W_{l+1}^p)^T P_{l+1}^p for the outgoing layer
    let wout = {
        let at = mp.layers()[h + 1].weight.t().to_owned();
        if h + 1 < spec.num_hidden() {
            at.dot(&stacks[p][h + 1])
        } else {
            at
        }
    };
    for q in 0..models.len() {
        if q == p {
            continue;
        }
        let mq = &models[q];
        // rows: W^p P_{l-1}^p (P_{l-1}^q)^T (W^q)^T P_l^q
        let winq = if h > 0 {
            mq.layers()[h].weight.dot(&stacks[q][h - 1])
        } else {
            mq.layers()[h].weight.clone()
        };
        grad = grad + win.dot(&winq.t().to_owned()).dot(&stacks[q][h]).mapv(|x| x * two);
        // cols: (W_{l+1}^p)^T P_{l+1}^p (P_{l+1}^q)^T W_{l+1}^q P_l^q
        let woutq = {
            let at = mq.layers()[h + 1].weight.t().to_owned();
            if h + 1 < spec.num_hidden() {
                at.dot(&stacks[q][h + 1])
            } else {
                at
            }
        };
        grad = grad + wout.dot(&woutq.t().to_owned()).dot(&stacks[q][h]).mapv(|x| x * two);
        if include_bias {
            // bias: b^p (b^q)^T P_l^q
            let bq = stacks[q][h].t().dot(&mq.layers()[h].bias);
            for ((i, j), g) in grad.indexed_iter_mut() {
                *g += two * mp.layers()[h].bias[i] * bq[j];
            }
        }
    }
    Ok(grad)
}

/// Initial soft permutation stack for one model.
pub fn init_permutations<S: Scalar>(
    strategy: InitStrategy,
    spec: &PermSpec,
) -> Result<Vec<DoublyStochastic<S>>> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    spec.hidden_sizes()
        .iter()
        .enumerate()
        .map(|(l, &d)| match strategy {
            InitStrategy::Identity => {
                Ok(DoublyStochastic::from_permutation(&Permutation::identity(d)))
            }
            InitStrategy::Barycenter => Ok(DoublyStochastic::barycenter(d)),
            InitStrategy::Sinkhorn { seed } => {
                // one stream per layer so stacks do not alias across layers
                let mut rng =
                    rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(l as u64));
                let g = Array2::from_shape_fn((d, d), |_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    S::of_f64(x.exp())
                });
                Ok(sinkhorn_knopp(&g, 1000, DEFAULT_DS_TOL)?.matrix)
            }
        })
        .collect()
}
