//! Linear assignment solver: shortest augmenting path (Jonker-Volgenant
//! style) on the negated profit, followed by a lexicographic tie-break so
//! that equal-profit optima resolve deterministically.

use ndarray::Array2;

use super::{Permutation, ProfitMatrix};
use crate::error::Result;
use crate::scalar::Scalar;

/// Permutation maximizing `sum_i profit[i, P(i)]`.
///
/// Ties between optimal assignments are broken by the lexicographically
/// smallest assignment vector, so the result never depends on a seed.
pub fn lap_maximize<S: Scalar>(profit: &ProfitMatrix<S>) -> Result<Permutation> {
    let n = profit.size();
    if n == 0 {
        return Ok(Permutation::identity(0));
    }
    let cost = profit.entries().mapv(|x| -x);
    let (assign, u, v) = shortest_augmenting_path(&cost);

    // Edges tight against the duals carry every optimal assignment; restrict
    // to them and take the lexicographically smallest perfect matching.
    let scale = cost.iter().fold(0.0f64, |m, x| m.max(x.abs().as_f64()));
    let eps = S::of_f64(1e-9 * (1.0 + scale));
    let mut adj: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: Vec<usize> = (0..n)
            .filter(|&j| cost[(i, j)] - u[i] - v[j] <= eps)
            .collect();
        if !row.contains(&assign[i]) {
            row.push(assign[i]);
            row.sort_unstable();
        }
        adj.push(row);
    }

    if adj.iter().all(|r| r.len() == 1) {
        return Permutation::new(assign);
    }

    let lex = lex_smallest_matching(&adj, &assign);
    let sum = |a: &[usize]| -> S {
        a.iter()
            .enumerate()
            .fold(S::zero(), |acc, (i, &j)| acc + profit.entries()[(i, j)])
    };
    if sum(&lex) >= sum(&assign) {
        Permutation::new(lex)
    } else {
        Permutation::new(assign)
    }
}

/// Solves the square min-cost assignment, returning the assignment vector
/// and the dual variables. Deterministic scan order throughout.
fn shortest_augmenting_path<S: Scalar>(cost: &Array2<S>) -> (Vec<usize>, Vec<S>, Vec<S>) {
    let n = cost.nrows();
    let none = usize::MAX;
    let mut u = vec![S::zero(); n];
    let mut v = vec![S::zero(); n];
    let mut col4row = vec![none; n];
    let mut row4col = vec![none; n];

    for cur_row in 0..n {
        let mut min_val = S::zero();
        let mut i = cur_row;
        let mut remaining: Vec<usize> = (0..n).collect();
        let mut in_sr = vec![false; n];
        let mut in_sc = vec![false; n];
        let mut shortest = vec![S::infinity(); n];
        let mut path = vec![none; n];
        let mut sink = none;

        while sink == none {
            in_sr[i] = true;
            let mut lowest = S::infinity();
            let mut index = none;
            for &j in &remaining {
                let r = min_val + cost[(i, j)] - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                // Prefer an unassigned column on ties so augmenting stops early.
                if shortest[j] < lowest
                    || (shortest[j] == lowest
                        && row4col[j] == none
                        && (index == none || row4col[index] != none))
                {
                    lowest = shortest[j];
                    index = j;
                }
            }
            min_val = lowest;
            let j = index;
            debug_assert!(min_val.is_finite(), "finite costs make the LAP feasible");
            if row4col[j] == none {
                sink = j;
            } else {
                i = row4col[j];
            }
            in_sc[j] = true;
            remaining.retain(|&c| c != j);
        }

        u[cur_row] += min_val;
        for i2 in 0..n {
            if in_sr[i2] && i2 != cur_row {
                u[i2] += min_val - shortest[col4row[i2]];
            }
        }
        for j in 0..n {
            if in_sc[j] {
                v[j] -= min_val - shortest[j];
            }
        }

        let mut j = sink;
        loop {
            let i2 = path[j];
            row4col[j] = i2;
            std::mem::swap(&mut col4row[i2], &mut j);
            if i2 == cur_row {
                break;
            }
        }
    }
    (col4row, u, v)
}

/// Lexicographically smallest perfect matching in the tight-edge graph,
/// starting from a known perfect matching. Row columns are fixed in order;
/// each smaller candidate column is kept only if the remaining rows can
/// still be perfectly matched.
fn lex_smallest_matching(adj: &[Vec<usize>], initial: &[usize]) -> Vec<usize> {
    let n = adj.len();
    let mut current = initial.to_vec();
    let mut col_fixed = vec![false; n];
    for i in 0..n {
        for idx in 0..adj[i].len() {
            let j = adj[i][idx];
            if col_fixed[j] {
                continue;
            }
            if j >= current[i] {
                break;
            }
            if let Some(suffix) = rematch_rows(adj, &col_fixed, i, j, n) {
                current[i] = j;
                for (k, c) in suffix {
                    current[k] = c;
                }
                break;
            }
        }
        col_fixed[current[i]] = true;
    }
    current
}

/// Tries to fix row `i` to column `j` and perfectly match rows `i+1..n`
/// onto the columns still free. Returns the suffix assignments on success.
fn rematch_rows(
    adj: &[Vec<usize>],
    col_fixed: &[bool],
    i: usize,
    j: usize,
    n: usize,
) -> Option<Vec<(usize, usize)>> {
    let none = usize::MAX;
    let mut banned = col_fixed.to_vec();
    banned[j] = true;
    let mut col2row = vec![none; n];
    for row in i + 1..n {
        let mut visited = vec![false; n];
        if !augment(adj, &banned, row, &mut visited, &mut col2row) {
            return None;
        }
    }
    let out = col2row
        .iter()
        .enumerate()
        .filter(|&(_, &r)| r != none)
        .map(|(c, &r)| (r, c))
        .collect();
    Some(out)
}

fn augment(
    adj: &[Vec<usize>],
    banned: &[bool],
    row: usize,
    visited: &mut [bool],
    col2row: &mut [usize],
) -> bool {
    let none = usize::MAX;
    for &c in &adj[row] {
        if banned[c] || visited[c] {
            continue;
        }
        visited[c] = true;
        if col2row[c] == none || augment(adj, banned, col2row[c], visited, col2row) {
            col2row[c] = row;
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn maximize(entries: Array2<f64>) -> Permutation {
        lap_maximize(&ProfitMatrix::new(entries).unwrap()).unwrap()
    }

    /// Exhaustive search over all permutations; ties resolved to the
    /// lexicographically smallest assignment vector.
    pub(crate) fn brute_force(profit: &Array2<f64>) -> (Vec<usize>, f64) {
        let n = profit.nrows();
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut cur = Vec::with_capacity(n);
        let mut used = vec![false; n];
        permute(n, &mut cur, &mut used, &mut |p| {
            let s: f64 = p.iter().enumerate().map(|(i, &j)| profit[(i, j)]).sum();
            let better = match &best {
                None => true,
                Some((bp, bs)) => s > *bs || (s == *bs && p < bp.as_slice()),
            };
            if better {
                best = Some((p.to_vec(), s));
            }
        });
        best.unwrap()
    }

    fn permute(n: usize, cur: &mut Vec<usize>, used: &mut [bool], f: &mut impl FnMut(&[usize])) {
        if cur.len() == n {
            f(cur);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                permute(n, cur, used, f);
                cur.pop();
                used[j] = false;
            }
        }
    }

    #[test]
    fn identity_profit() {
        let p = maximize(Array2::eye(3));
        assert_eq!(p.map(), &[0, 1, 2]);
    }

    #[test]
    fn anti_diagonal_profit() {
        let p = maximize(array![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(p.map(), &[1, 0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ProfitMatrix::new(array![[0.0, 1.0]]).is_err());
        assert!(ProfitMatrix::new(array![[f64::NAN, 1.0], [1.0, 0.0]]).is_err());
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for n in 2..=6 {
            for _ in 0..40 {
                let m = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() * 2.0 - 1.0);
                let p = maximize(m.clone());
                let (bmap, bsum) = brute_force(&m);
                let got: f64 = p.map().iter().enumerate().map(|(i, &j)| m[(i, j)]).sum();
                assert_eq!(got, bsum, "objective mismatch at n={n}");
                assert_eq!(p.map(), bmap.as_slice(), "tie-break mismatch at n={n}");
            }
        }
    }

    #[test]
    fn lexicographic_tie_break_on_integer_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 2..=5 {
            for _ in 0..60 {
                // small integer profits force many exact ties
                let m = Array2::from_shape_fn((n, n), |_| rng.random_range(0..3) as f64);
                let p = maximize(m.clone());
                let (bmap, bsum) = brute_force(&m);
                let got: f64 = p.map().iter().enumerate().map(|(i, &j)| m[(i, j)]).sum();
                assert_eq!(got, bsum);
                assert_eq!(p.map(), bmap.as_slice());
            }
        }
    }
}
