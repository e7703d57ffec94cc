//! Sinkhorn-Knopp normalization of positive matrices.

use ndarray::{Array2, Axis};

use super::{ds_deviation, DoublyStochastic};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct SinkhornResult<S: Scalar> {
    pub matrix: DoublyStochastic<S>,
    /// Whether the requested tolerance was reached within `max_iters`.
    pub converged: bool,
    pub sweeps: usize,
}

/// Alternating row/column normalization until every row and column sum is
/// within `tol` of one, or `max_iters` sweeps elapse. Non-convergence is
/// reported through the flag, not as an error.
pub fn sinkhorn_knopp<S: Scalar>(
    m: &Array2<S>,
    max_iters: usize,
    tol: f64,
) -> Result<SinkhornResult<S>> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::InvalidInput(format!(
            "sinkhorn input must be square and nonempty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if max_iters < 1 {
        return Err(Error::InvalidInput("max_iters must be at least 1".into()));
    }
    if m.iter().any(|&x| !x.is_finite() || x <= S::zero()) {
        return Err(Error::InvalidInput(
            "sinkhorn input must have strictly positive finite entries".into(),
        ));
    }

    let mut a = m.clone();
    let mut dev = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < max_iters {
        sweeps += 1;
        for mut row in a.axis_iter_mut(Axis(0)) {
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        for mut col in a.axis_iter_mut(Axis(1)) {
            let s = col.sum();
            col.mapv_inplace(|x| x / s);
        }
        // absorb rounding: no negative entries survive a sweep
        a.mapv_inplace(|x| if x < S::zero() { S::zero() } else { x });
        dev = ds_deviation(&a);
        if dev < tol {
            return Ok(SinkhornResult {
                matrix: DoublyStochastic::new(a, tol)?,
                converged: true,
                sweeps,
            });
        }
    }
    let matrix = DoublyStochastic::new(a, dev.max(tol) * (1.0 + 1e-12))?;
    Ok(SinkhornResult { matrix, converged: false, sweeps })
}
