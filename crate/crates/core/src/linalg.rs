//! Cholesky factorization with an escalating diagonal jitter.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Multipliers of `trace/n` tried in order after the requested jitter.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// A successful factorization and the jitter that made it succeed.
pub struct Factorization {
    pub cholesky: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

/// Factors `matrix + (base + f·trace/n)·I` for the first `f` in the ladder
/// that yields a positive definite matrix.
pub fn factor_with_jitter(matrix: &DMatrix<f64>, base: f64) -> Result<Factorization> {
    let n = matrix.nrows();
    if n == 0 {
        return Err(Error::invalid("cannot factor an empty matrix"));
    }
    let mean_diag = matrix.trace() / n as f64;
    let mut last = base;
    for f in JITTER_LADDER {
        let jitter = base + f * mean_diag;
        last = jitter;
        let mut m = matrix.clone();
        if jitter != 0.0 {
            for k in 0..n {
                m[(k, k)] += jitter;
            }
        }
        if let Some(cholesky) = Cholesky::new(m) {
            return Ok(Factorization { cholesky, jitter });
        }
    }
    Err(Error::Numerical {
        message: format!("Cholesky factorization of a {n}×{n} covariance failed"),
        jitter: last,
    })
}
