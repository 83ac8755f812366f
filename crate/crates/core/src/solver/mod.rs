//! Joint selection and labeling by block coordinate descent.
//!
//! The discrete problem
//!
//! ```text
//! min_{X, Z}  ¼‖W − XXᵀ‖²_F + (λ/2) Σ_i ‖C_i X_i − Z_i‖²_F
//! s.t.        X_i partial permutations with unit column sums, rank(Z) ≤ r
//! ```
//!
//! is decoupled with a relaxed copy `Y ∈ C` of `X` tied by `(ρ/2)‖X − Y‖²`.
//! Each sweep updates `Y` by projected gradient descent, each `X_i` by a
//! linear assignment, and `Z` by truncated SVD; every step is a descent step
//! so the objective never increases for a fixed `ρ`. `ρ` follows an
//! increasing schedule, warm-starting each stage from the previous one.

mod geometry;
mod objective;
mod updates;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::discretize;
use crate::config::SolverConfig;
use crate::error::Result;
use crate::model::{ProblemInstance, SelectionLabeling};
use crate::projection::{project_onto_c, RelaxedLabeling};

pub use geometry::CoordinateFrame;
pub use objective::{objective_cycle, objective_geo, objective_total, y_gradient, ObjectiveParts};
pub use updates::{
    projected_step, squared_distances, truncate_rank, update_x, update_y, update_z, YUpdateReport,
};

/// Selected coordinates and their low-rank fit, both in the solver frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEstimate {
    /// `2n×k` stack of `C_i X_i`.
    pub m_tilde: DMatrix<f64>,
    /// Rank-`r` approximation of `m_tilde`.
    pub z: DMatrix<f64>,
}

impl MeasurementEstimate {
    pub fn new(x: &SelectionLabeling, frame: &CoordinateFrame, rank: usize) -> Self {
        let m_tilde = x.measurement_matrix(&frame.coords);
        let z = truncate_rank(&m_tilde, rank);
        Self { m_tilde, z }
    }
}

/// Objective after one sweep (or at the start of a stage, `sweep = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based index into the ρ schedule.
    pub stage: usize,
    pub rho: f64,
    pub sweep: usize,
    pub parts: ObjectiveParts,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub y: RelaxedLabeling,
    pub x: SelectionLabeling,
    pub estimate: MeasurementEstimate,
    pub frame: CoordinateFrame,
    pub rho: f64,
    pub trace: Vec<TraceRecord>,
    /// Some ρ stage ran out of sweeps before its objective settled.
    pub max_sweeps_hit: bool,
    /// Some inner projection hit its cycle cap.
    pub projection_warning: bool,
}

impl SolverState {
    /// Low-rank measurement estimate mapped back to pixel coordinates.
    pub fn z_pixels(&self) -> DMatrix<f64> {
        self.frame.to_pixels(&self.estimate.z)
    }

    pub fn final_parts(&self) -> Option<ObjectiveParts> {
        self.trace.last().map(|t| t.parts)
    }
}

fn raw_coords(instance: &ProblemInstance) -> Vec<DMatrix<f64>> {
    instance.features().iter().map(|f| f.coordinates.clone()).collect()
}

/// Coordinate frame the solver uses for `instance` under `config`.
pub fn coordinate_frame(instance: &ProblemInstance, config: &SolverConfig) -> CoordinateFrame {
    CoordinateFrame::new(&raw_coords(instance), config.normalize_coordinates)
}

/// Discrete objective `¼‖W − XXᵀ‖² + (λ/2)‖M̃ − Z*‖²` with `Z*` the best
/// rank-`r` fit of `M̃`, evaluated in the solver's coordinate frame.
pub fn discrete_objective(instance: &ProblemInstance, x: &SelectionLabeling, config: &SolverConfig) -> f64 {
    let frame = coordinate_frame(instance, config);
    discrete_objective_in(instance, x, &frame, config)
}

pub(crate) fn discrete_objective_in(
    instance: &ProblemInstance,
    x: &SelectionLabeling,
    frame: &CoordinateFrame,
    config: &SolverConfig,
) -> f64 {
    let xs = x.stacked(&instance.sizes());
    let cycle = objective::CycleTerms::new(instance.w(), instance.w_sq_norm(), &xs).value;
    if config.lambda == 0.0 {
        return cycle;
    }
    let est = MeasurementEstimate::new(x, frame, config.rank);
    cycle + 0.5 * config.lambda * (&est.m_tilde - &est.z).norm_squared()
}

fn parts(
    instance: &ProblemInstance,
    y: &RelaxedLabeling,
    x: &SelectionLabeling,
    est: &MeasurementEstimate,
    lambda: f64,
    rho: f64,
) -> ObjectiveParts {
    let cycle = objective::CycleTerms::new(instance.w(), instance.w_sq_norm(), &y.y).value;
    let geo = if lambda == 0.0 {
        0.0
    } else {
        0.5 * lambda * (&est.m_tilde - &est.z).norm_squared()
    };
    let coupling = 0.5 * rho * (x.stacked(y.sizes()) - &y.y).norm_squared();
    ObjectiveParts::new(cycle, geo, coupling)
}

/// Seeded start near the uniform point `1/p_i`, projected into `C`.
///
/// The exactly uniform matrix has identical columns, which the gradient flow
/// preserves, so a small perturbation separates the labels.
pub fn initial_relaxed(instance: &ProblemInstance, config: &SolverConfig) -> RelaxedLabeling {
    let sizes = instance.sizes();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut y = DMatrix::zeros(instance.m(), config.k);
    for (i, &off) in instance.offsets().iter().enumerate() {
        let base = 1.0 / sizes[i] as f64;
        for c in 0..config.k {
            for a in 0..sizes[i] {
                let jitter = config.init_perturbation * rng.random_range(-1.0..1.0);
                y[(off + a, c)] = base * (1.0 + jitter);
            }
        }
    }
    project_onto_c(&y, &sizes, &config.projection).0
}

/// Initialization: relaxed cycle-consistency problem with `ρ = 0`, then
/// per-image discretization.
pub fn initialize(
    instance: &ProblemInstance,
    config: &SolverConfig,
) -> Result<(RelaxedLabeling, SelectionLabeling)> {
    config.validate()?;
    instance.check_k(config.k)?;
    let y0 = initial_relaxed(instance, config);
    let zeros = DMatrix::zeros(instance.m(), config.k);
    let (y, _) = update_y(instance, y0, &zeros, 0.0, config);
    let x = discretize_all(&y, config.k)?;
    Ok((y, x))
}

fn discretize_all(y: &RelaxedLabeling, k: usize) -> Result<SelectionLabeling> {
    let labels = (0..y.sizes().len())
        .map(|i| {
            let xi = discretize(&y.block(i))?;
            Ok((0..k)
                .map(|c| {
                    (0..xi.nrows())
                        .find(|&a| xi[(a, c)] == 1.0)
                        .expect("every column is assigned")
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<usize>>>>()?;
    SelectionLabeling::new(k, labels, y.sizes())
}

/// Runs initialization and the full ρ continuation.
pub fn solve(instance: &ProblemInstance, config: &SolverConfig) -> Result<SolverState> {
    let (y, x) = initialize(instance, config)?;
    let frame = coordinate_frame(instance, config);
    let estimate = MeasurementEstimate::new(&x, &frame, config.rank);
    let mut state = SolverState {
        y,
        x,
        estimate,
        frame,
        rho: config.rho_schedule[0],
        trace: Vec::new(),
        max_sweeps_hit: false,
        projection_warning: false,
    };

    for (s, &rho) in config.rho_schedule.iter().enumerate() {
        state.rho = rho;
        let stage = s + 1;
        let mut current = parts(instance, &state.y, &state.x, &state.estimate, config.lambda, rho);
        state.trace.push(TraceRecord {
            stage,
            rho,
            sweep: 0,
            parts: current,
        });
        let mut settled = false;
        for sweep in 1..=config.max_sweeps {
            sweep_once(instance, config, &mut state)?;
            let next = parts(instance, &state.y, &state.x, &state.estimate, config.lambda, rho);
            state.trace.push(TraceRecord {
                stage,
                rho,
                sweep,
                parts: next,
            });
            let decrease = (current.total - next.total) / current.total.abs().max(f64::MIN_POSITIVE);
            current = next;
            if decrease < config.outer_tol {
                settled = true;
                break;
            }
        }
        if !settled {
            log::warn!("stage {stage} (rho = {rho}) hit {} sweeps", config.max_sweeps);
            state.max_sweeps_hit = true;
        }
    }
    Ok(state)
}

fn sweep_once(instance: &ProblemInstance, config: &SolverConfig, state: &mut SolverState) -> Result<()> {
    let sizes = instance.sizes();
    let xs = state.x.stacked(&sizes);
    let y = std::mem::replace(&mut state.y, RelaxedLabeling::new(DMatrix::zeros(0, 0), Vec::new()));
    let (y, report) = update_y(instance, y, &xs, state.rho, config);
    state.projection_warning |= report.projection_warning;
    state.y = y;
    state.x = update_x(&state.y, &state.estimate.z, &state.frame.coords, config.lambda, state.rho)?;
    state.estimate = MeasurementEstimate::new(&state.x, &state.frame, config.rank);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureSet, PairwiseScores};

    fn planted(n: usize, p: usize, k: usize, seed: u64) -> (ProblemInstance, SelectionLabeling) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = vec![p; n];
        let labels: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let mut rows: Vec<usize> = (0..p).collect();
                for i in (1..p).rev() {
                    rows.swap(i, rng.random_range(0..=i));
                }
                rows.truncate(k);
                rows
            })
            .collect();
        let truth = SelectionLabeling::new(k, labels, &sizes).unwrap();
        let mut scores = PairwiseScores::new(sizes.clone());
        for i in 0..n {
            for j in i + 1..n {
                scores.insert(i, j, truth.induced_block(i, j, &sizes)).unwrap();
            }
        }
        let feats = (0..n)
            .map(|i| {
                FeatureSet::new(
                    format!("{i}"),
                    DMatrix::from_fn(2, p, |_, _| rng.random_range(0.0..1.0)),
                    None,
                )
                .unwrap()
            })
            .collect();
        (ProblemInstance::new(feats, scores).unwrap(), truth)
    }

    /// Equal up to a relabeling of the k labels.
    fn same_up_to_labels(a: &SelectionLabeling, b: &SelectionLabeling) -> bool {
        let perm: Vec<usize> = a
            .labels(0)
            .iter()
            .map(|&r| match b.label_of(0, r) {
                Some(l) => l,
                None => usize::MAX,
            })
            .collect();
        if perm.contains(&usize::MAX) {
            return false;
        }
        a.permute_labels(&perm) == *b
    }

    #[test]
    fn initialization_recovers_planted_labeling() {
        for seed in 0..20 {
            let (inst, truth) = planted(5, 6, 6, 100 + seed);
            let cfg = SolverConfig {
                seed,
                ..SolverConfig::with_k(6)
            };
            let (y, x) = initialize(&inst, &cfg).unwrap();
            assert!(y.max_violation() <= 1e-6);
            assert!(same_up_to_labels(&x, &truth), "seed {seed}");
        }
    }

    #[test]
    fn single_image_stays_feasible() {
        let feats = vec![FeatureSet::new("a", DMatrix::from_fn(2, 4, |r, c| (r * 4 + c) as f64), None).unwrap()];
        let inst = ProblemInstance::new(feats, PairwiseScores::new(vec![4])).unwrap();
        let (y, x) = initialize(&inst, &SolverConfig::with_k(3)).unwrap();
        assert!(y.max_violation() <= 1e-6);
        assert_eq!(x.k(), 3);
        // the diagonal block of YYᵀ moves toward the identity on the selected rows
        let yyt = &y.y * y.y.transpose();
        let diag: f64 = (0..4).map(|a| yyt[(a, a)]).sum();
        assert!(diag > 2.5, "{yyt}");
    }

    #[test]
    fn all_ones_blocks_monotone_and_feasible() {
        let sizes = vec![3, 3, 3];
        let mut scores = PairwiseScores::new(sizes.clone());
        for i in 0..3 {
            for j in i + 1..3 {
                scores.insert(i, j, DMatrix::from_element(3, 3, 1.0)).unwrap();
            }
        }
        let feats = (0..3)
            .map(|i| FeatureSet::new(format!("{i}"), DMatrix::from_fn(2, 3, |r, c| (r + 2 * c + i) as f64), None).unwrap())
            .collect();
        let inst = ProblemInstance::new(feats, scores).unwrap();
        let cfg = SolverConfig::with_k(2);
        let state = solve(&inst, &cfg).unwrap();
        assert!(state.y.max_violation() <= 1e-6);
        for pair in state.trace.windows(2) {
            if pair[0].stage == pair[1].stage {
                assert!(pair[1].parts.total <= pair[0].parts.total + 1e-9);
            }
        }
    }

    #[test]
    fn large_rho_without_geometry_keeps_initial_labels() {
        let (inst, _) = planted(4, 5, 3, 9);
        let cfg = SolverConfig {
            lambda: 0.0,
            rho_schedule: vec![1e8],
            ..SolverConfig::with_k(3)
        };
        let (_, x0) = initialize(&inst, &cfg).unwrap();
        let state = solve(&inst, &cfg).unwrap();
        assert_eq!(state.x, x0);
        assert!(state.trace.iter().all(|t| t.parts.geo == 0.0));
    }

    #[test]
    fn planted_solve_reaches_zero_cycle_residual() {
        let (inst, truth) = planted(6, 5, 5, 77);
        let state = solve(&inst, &SolverConfig::with_k(5)).unwrap();
        assert!(same_up_to_labels(&state.x, &truth));
        assert!(!state.max_sweeps_hit);
    }
}
