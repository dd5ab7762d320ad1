//! Dense Cholesky with the shared diagonal-jitter ladder.
//!
//! Spherical covariance matrices on dense or near-duplicate location sets
//! are routinely semi-definite to rounding; every factorization in the
//! crate retries with a small diagonal boost before giving up.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Jitter multipliers applied to sigma2, in the order tried.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    chol: Cholesky<f64, Dyn>,
    /// Diagonal boost that made the factorization succeed (absolute units).
    pub jitter: f64,
}

/// Factors sigma (+ jitter*I), climbing the ladder scaled by `sigma2`.
pub fn cholesky_with_jitter(sigma: &DMatrix<f64>, sigma2: f64) -> Result<CholeskyFactor> {
    debug_assert_eq!(sigma.nrows(), sigma.ncols());
    for (i, mult) in JITTER_LADDER.iter().enumerate() {
        let jitter = mult * sigma2;
        let attempt = if i == 0 {
            sigma.clone()
        } else {
            let mut m = sigma.clone();
            for d in 0..m.nrows() {
                m[(d, d)] += jitter;
            }
            m
        };
        if let Some(chol) = Cholesky::new(attempt) {
            return Ok(CholeskyFactor { chol, jitter });
        }
    }
    Err(Error::Factorization {
        max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * sigma2,
    })
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// x = L^-1 b (forward substitution).
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    /// X = L^-1 B columnwise.
    pub fn solve_lower_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    /// sum of log L_ii = (1/2) log det Sigma.
    pub fn half_log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        (0..l.nrows()).map(|i| l[(i, i)].ln()).sum()
    }

    /// y = L x.
    pub fn multiply_lower(&self, x: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let n = l.nrows();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += l[(i, j)] * x[j];
            }
            y[i] = acc;
        }
        y
    }
}

/// Lower Cholesky factor as a plain matrix, computed with a blocked
/// right-looking algorithm so the gemm-sized updates dominate. Used for the
/// large simulation grids where the unblocked factorization is too slow.
/// Same jitter ladder; returns (L, jitter).
pub fn blocked_cholesky(sigma: &DMatrix<f64>, sigma2: f64) -> Result<(DMatrix<f64>, f64)> {
    debug_assert_eq!(sigma.nrows(), sigma.ncols());
    for mult in JITTER_LADDER.iter() {
        let jitter = mult * sigma2;
        let mut a = sigma.clone();
        if jitter > 0.0 {
            for d in 0..a.nrows() {
                a[(d, d)] += jitter;
            }
        }
        if blocked_cholesky_in_place(&mut a) {
            return Ok((a, jitter));
        }
    }
    Err(Error::Factorization {
        max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * sigma2,
    })
}

fn blocked_cholesky_in_place(a: &mut DMatrix<f64>) -> bool {
    const BLOCK: usize = 192;
    let n = a.nrows();
    let mut k = 0;
    while k < n {
        let kb = BLOCK.min(n - k);
        // unblocked factorization of the diagonal block
        for j in k..k + kb {
            let mut d = a[(j, j)];
            for t in k..j {
                d -= a[(j, t)] * a[(j, t)];
            }
            if d <= 0.0 || !d.is_finite() {
                return false;
            }
            let dj = d.sqrt();
            a[(j, j)] = dj;
            for i in (j + 1)..(k + kb) {
                let mut s = a[(i, j)];
                for t in k..j {
                    s -= a[(i, t)] * a[(j, t)];
                }
                a[(i, j)] = s / dj;
            }
        }
        let rest = n - k - kb;
        if rest > 0 {
            // panel solve: L21 = A21 * L11^-T
            let l11 = a.view((k, k), (kb, kb)).into_owned();
            let mut panel_t = a.view((k + kb, k), (rest, kb)).transpose();
            l11.solve_lower_triangular_mut(&mut panel_t);
            a.view_mut((k + kb, k), (rest, kb)).copy_from(&panel_t.transpose());
            // trailing update: A22 -= L21 L21^T
            let l21 = a.view((k + kb, k), (rest, kb)).into_owned();
            let mut a22 = a.view_mut((k + kb, k + kb), (rest, rest));
            a22.gemm(-1.0, &l21, &l21.transpose(), 1.0);
        }
        k += kb;
    }
    // zero the strict upper triangle so the result is a clean L
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    true
}
