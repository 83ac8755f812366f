use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step-size control for the projected gradient `Y` update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepControl {
    /// Fixed initial step. When `None` each iteration starts from
    /// `1 / (‖YᵀY‖₂ + ‖W‖_∞ + ρ)`.
    pub initial: Option<f64>,
    /// Backtracking shrink factor.
    pub backtrack: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    /// Steps below this are treated as a stall.
    pub min_step: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            initial: None,
            backtrack: 0.5,
            armijo: 1e-4,
            min_step: 1e-12,
        }
    }
}

/// Stopping rule for the alternating projection onto the relaxed set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionControl {
    /// Relative Frobenius change between cycles.
    pub tol: f64,
    /// Largest tolerated row-sum excess of the returned point.
    pub feasibility_tol: f64,
    pub max_cycles: usize,
}

impl Default for ProjectionControl {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            feasibility_tol: 1e-9,
            max_cycles: 500,
        }
    }
}

/// Solver parameters. Defaults follow `λ = 1`, `r = 4`, `ρ ∈ (1, 10, 100)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Number of selected features per image.
    pub k: usize,
    /// Rank bound on the measurement estimate.
    pub rank: usize,
    /// Weight of the geometric term.
    pub lambda: f64,
    /// Increasing coupling weights between the relaxed and discrete labelings.
    pub rho_schedule: Vec<f64>,
    pub step: StepControl,
    /// Relative objective decrease that ends the inner `Y` loop.
    pub inner_tol: f64,
    pub max_inner: usize,
    /// Relative decrease per sweep below which a ρ stage ends.
    pub outer_tol: f64,
    pub max_sweeps: usize,
    pub projection: ProjectionControl,
    /// Center and rescale each image's coordinates before the geometric term.
    pub normalize_coordinates: bool,
    /// Relative amplitude of the seeded perturbation of the uniform start.
    pub init_perturbation: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            k: 10,
            rank: 4,
            lambda: 1.0,
            rho_schedule: vec![1.0, 10.0, 100.0],
            step: StepControl::default(),
            inner_tol: 1e-6,
            max_inner: 500,
            outer_tol: 1e-7,
            max_sweeps: 100,
            projection: ProjectionControl::default(),
            normalize_coordinates: true,
            init_perturbation: 0.1,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.k == 0 {
            return bad("k must be positive");
        }
        if self.rank == 0 {
            return bad("rank bound must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if self.rho_schedule.is_empty() {
            return bad("rho schedule is empty");
        }
        if self.rho_schedule.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return bad("rho values must be positive and finite");
        }
        if self.rho_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return bad("rho schedule must be strictly increasing");
        }
        let positive = [
            self.inner_tol,
            self.outer_tol,
            self.step.armijo,
            self.step.min_step,
            self.projection.tol,
            self.projection.feasibility_tol,
        ];
        if positive.iter().any(|t| t.is_nan() || *t <= 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.step.backtrack > 0.0 && self.step.backtrack < 1.0) {
            return bad("backtracking factor must lie in (0, 1)");
        }
        if let Some(eta) = self.step.initial {
            if !(eta > 0.0 && eta.is_finite()) {
                return bad("initial step must be positive");
            }
        }
        if self.max_inner == 0 || self.max_sweeps == 0 || self.projection.max_cycles == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.init_perturbation >= 0.0 && self.init_perturbation.is_finite()) {
            return bad("initial perturbation must be non-negative");
        }
        Ok(())
    }
}
