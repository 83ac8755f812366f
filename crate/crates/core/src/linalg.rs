//! Dense SVD shared by the low-rank steps.
//!
//! nalgebra's SVD loses orthogonality of its singular vectors on matrices
//! with several exactly zero singular values, which is the common case for
//! noiseless measurement matrices, so the decomposition is delegated to faer.

use nalgebra::{DMatrix, DVector};

/// Thin SVD `m = u · diag(s) · v_t` with `s` sorted largest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn svd(m: &DMatrix<f64>) -> Svd {
    let (rows, cols) = m.shape();
    let q = rows.min(cols);
    if q == 0 {
        return Svd {
            u: DMatrix::zeros(rows, 0),
            singular_values: DVector::zeros(0),
            v_t: DMatrix::zeros(0, cols),
        };
    }
    let mat = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let dec = mat.thin_svd().expect("SVD of a finite matrix converges");
    let (u, s, v) = (dec.U(), dec.S().column_vector(), dec.V());
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    Svd {
        u: DMatrix::from_fn(rows, q, |i, c| u[(i, order[c])]),
        singular_values: DVector::from_fn(q, |c, _| s[order[c]]),
        v_t: DMatrix::from_fn(q, cols, |c, j| v[(j, order[c])]),
    }
}

impl Svd {
    /// Minimum-norm least-squares solution of `m x = b`, treating singular
    /// values below `rel_tol · s_max` as zero.
    pub fn solve(&self, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
        let cutoff = rel_tol * self.singular_values.iter().copied().fold(0.0, f64::max);
        let mut coeffs = self.u.tr_mul(b);
        for (c, &s) in coeffs.iter_mut().zip(self.singular_values.iter()) {
            *c = if s > cutoff { *c / s } else { 0.0 };
        }
        self.v_t.tr_mul(&coeffs)
    }
}

/// Singular values only, largest first.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    svd(m).singular_values.iter().copied().collect()
}
