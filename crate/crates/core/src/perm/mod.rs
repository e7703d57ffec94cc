//! Permutations, doubly stochastic matrices, the LAP solver and Sinkhorn
//! normalization.

mod lap;
mod sinkhorn;

pub use lap::lap_maximize;
pub use sinkhorn::{sinkhorn_knopp, SinkhornResult};

use ndarray::Array2;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A permutation of `{0..n-1}`, stored as an assignment vector: index `i`
/// maps to `map[i]`. Its matrix has a one at `(i, map[i])`, so applying it
/// to a vector gives `(Pv)[i] = v[map[i]]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &j in &map {
            if j >= n || seen[j] {
                return Err(Error::InvalidInput(format!(
                    "assignment vector {map:?} is not a bijection on 0..{n}"
                )));
            }
            seen[j] = true;
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self { map: (0..n).collect() }
    }

    /// Uniformly random permutation via Fisher-Yates.
    pub fn random<R: rand::Rng>(n: usize, rng: &mut R) -> Self {
        use rand::seq::SliceRandom;
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Self { map }
    }

    pub fn size(&self) -> usize {
        self.map.len()
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    /// Image of index `i`.
    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// The inverse permutation (transpose of the matrix).
    pub fn invert(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &j) in self.map.iter().enumerate() {
            inv[j] = i;
        }
        Self { map: inv }
    }

    /// Composition whose matrix is `P * Q`.
    pub fn compose(&self, other: &Permutation) -> Result<Permutation> {
        if self.size() != other.size() {
            return Err(Error::ShapeMismatch(format!(
                "cannot compose permutations of sizes {} and {}",
                self.size(),
                other.size()
            )));
        }
        let map = self.map.iter().map(|&k| other.map[k]).collect();
        Ok(Permutation { map })
    }

    /// Dense 0/1 matrix with a one at `(i, map[i])`.
    pub fn matrix<S: Scalar>(&self) -> Array2<S> {
        let n = self.size();
        let mut m = Array2::zeros((n, n));
        for (i, &j) in self.map.iter().enumerate() {
            m[(i, j)] = S::one();
        }
        m
    }
}

impl Serialize for Permutation {
    fn serialize<Z: Serializer>(&self, serializer: Z) -> std::result::Result<Z::Ok, Z::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            n: usize,
            map: &'a [usize],
        }
        Repr { n: self.size(), map: &self.map }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Permutation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            n: usize,
            map: Vec<usize>,
        }
        let repr = Repr::deserialize(deserializer)?;
        if repr.map.len() != repr.n {
            return Err(D::Error::custom(format!(
                "permutation declares n={} but has {} entries",
                repr.n,
                repr.map.len()
            )));
        }
        Permutation::new(repr.map).map_err(D::Error::custom)
    }
}

/// A relaxed permutation: nonnegative square matrix whose rows and columns
/// sum to one, up to `tol`.
#[derive(Debug, Clone)]
pub struct DoublyStochastic<S: Scalar> {
    entries: Array2<S>,
    tol: f64,
}

pub const DEFAULT_DS_TOL: f64 = 1e-8;

impl<S: Scalar> DoublyStochastic<S> {
    pub fn new(entries: Array2<S>, tol: f64) -> Result<Self> {
        if tol < 0.0 {
            return Err(Error::InvalidInput("tolerance must be nonnegative".into()));
        }
        let n = entries.nrows();
        if entries.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "doubly stochastic matrix must be square, got {}x{}",
                n,
                entries.ncols()
            )));
        }
        let dev = ds_deviation(&entries);
        if dev > tol {
            return Err(Error::InvalidInput(format!(
                "matrix violates doubly stochastic constraints by {dev:.3e} (tol {tol:.3e})"
            )));
        }
        Ok(Self { entries, tol })
    }

    pub fn from_permutation(p: &Permutation) -> Self {
        Self { entries: p.matrix(), tol: DEFAULT_DS_TOL }
    }

    pub fn barycenter(n: usize) -> Self {
        let v = S::of_f64(1.0 / n as f64);
        Self { entries: Array2::from_elem((n, n), v), tol: DEFAULT_DS_TOL }
    }

    pub fn entries(&self) -> &Array2<S> {
        &self.entries
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn into_entries(self) -> Array2<S> {
        self.entries
    }
}

/// Largest violation of the doubly stochastic constraints: negative entries
/// and row/column sums away from one.
pub fn ds_deviation<S: Scalar>(m: &Array2<S>) -> f64 {
    let one = S::one();
    let mut dev: f64 = 0.0;
    for &x in m.iter() {
        if x < S::zero() {
            dev = dev.max((-x).as_f64());
        }
    }
    for row in m.rows() {
        dev = dev.max((row.sum() - one).abs().as_f64());
    }
    for col in m.columns() {
        dev = dev.max((col.sum() - one).abs().as_f64());
    }
    dev
}

/// Matrix of per-assignment objective contributions fed to the LAP solver.
#[derive(Debug, Clone)]
pub struct ProfitMatrix<S: Scalar> {
    entries: Array2<S>,
}

impl<S: Scalar> ProfitMatrix<S> {
    pub fn new(entries: Array2<S>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::InvalidInput(format!(
                "profit matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("profit matrix has non-finite entries".into()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &Array2<S> {
        &self.entries
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }
}

/// Round a soft permutation to the nearest hard one in the LAP sense, i.e.
/// maximize `<soft, P>` over permutation matrices.
pub fn project_to_permutation<S: Scalar>(soft: &DoublyStochastic<S>) -> Result<Permutation> {
    lap_maximize(&ProfitMatrix::new(soft.entries().clone())?)
}
