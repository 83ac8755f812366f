//! Objective terms of the decoupled problem
//!
//! ```text
//! ¼‖W − YYᵀ‖²_F + (λ/2) Σ_i ‖C_i X_i − Z_i‖²_F + (ρ/2)‖X − Y‖²_F
//! ```
//!
//! `W` is sparse, so the cycle term is expanded as
//! `‖W‖² − 2⟨Y, WY⟩ + ‖YᵀY‖²` and costs `O(nnz(W)·k + m·k²)`.

use nalgebra::DMatrix;
use nalgebra_sparse::CsrMatrix;
use serde::{Deserialize, Serialize};

use crate::model::SelectionLabeling;

/// Cached products of one `Y` used by both the objective and the gradient.
#[derive(Debug, Clone)]
pub(crate) struct CycleTerms {
    pub wy: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub value: f64,
}

impl CycleTerms {
    pub fn new(w: &CsrMatrix<f64>, w_sq_norm: f64, y: &DMatrix<f64>) -> Self {
        let wy = w * y;
        let gram = y.tr_mul(y);
        let value = 0.25 * (w_sq_norm - 2.0 * y.dot(&wy) + gram.norm_squared());
        Self {
            wy,
            gram,
            value: value.max(0.0),
        }
    }

    /// `YYᵀY − WY + ρ(Y − X)`.
    pub fn gradient(&self, y: &DMatrix<f64>, x: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
        let mut g = y * &self.gram - &self.wy;
        if rho != 0.0 {
            g += (y - x) * rho;
        }
        g
    }
}

/// `¼‖W − YYᵀ‖²_F`.
pub fn objective_cycle(w: &CsrMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let w_sq: f64 = w.values().iter().map(|v| v * v).sum();
    CycleTerms::new(w, w_sq, y).value
}

/// `½ Σ_i ‖C_i X_i − Z_i‖²_F`.
pub fn objective_geo(x: &SelectionLabeling, z: &DMatrix<f64>, coords: &[DMatrix<f64>]) -> f64 {
    0.5 * (x.measurement_matrix(coords) - z).norm_squared()
}

/// Gradient of the smooth part in `Y`: `YYᵀY − WY + ρ(Y − X)`.
pub fn y_gradient(w: &CsrMatrix<f64>, y: &DMatrix<f64>, x: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let wy = w * y;
    let gram = y.tr_mul(y);
    let mut g = y * gram - wy;
    if rho != 0.0 {
        g += (y - x) * rho;
    }
    g
}

/// Weighted components of the decoupled objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    /// `¼‖W − YYᵀ‖²`.
    pub cycle: f64,
    /// `(λ/2) Σ‖C_i X_i − Z_i‖²`.
    pub geo: f64,
    /// `(ρ/2)‖X − Y‖²`.
    pub coupling: f64,
    pub total: f64,
}

impl ObjectiveParts {
    pub(crate) fn new(cycle: f64, geo: f64, coupling: f64) -> Self {
        Self {
            cycle,
            geo,
            coupling,
            total: cycle + geo + coupling,
        }
    }
}

/// Full decoupled objective. `x` is given both as labeling and in stacked
/// `m×k` form is derived from it.
pub fn objective_total(
    w: &CsrMatrix<f64>,
    y: &DMatrix<f64>,
    x: &SelectionLabeling,
    z: &DMatrix<f64>,
    coords: &[DMatrix<f64>],
    lambda: f64,
    rho: f64,
) -> ObjectiveParts {
    let sizes: Vec<usize> = coords.iter().map(|c| c.ncols()).collect();
    let xs = x.stacked(&sizes);
    let cycle = objective_cycle(w, y);
    let geo = if lambda == 0.0 {
        0.0
    } else {
        lambda * objective_geo(x, z, coords)
    };
    ObjectiveParts::new(cycle, geo, 0.5 * rho * (&xs - y).norm_squared())
}
