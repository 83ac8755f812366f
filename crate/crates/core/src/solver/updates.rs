//! Block updates of the alternating scheme.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::assignment::solve_lap;
use crate::config::SolverConfig;
use crate::error::Result;
use crate::linalg::svd;
use crate::model::{ProblemInstance, SelectionLabeling};
use crate::projection::{project_onto_c, RelaxedLabeling};
use crate::solver::objective::CycleTerms;

/// Images with at least this many candidates in total update `X` in parallel.
const PARALLEL_CANDIDATES: usize = 256;

/// Outcome of one inner `Y` loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YUpdateReport {
    pub iterations: usize,
    /// Relaxed sub-objective `¼‖W − YYᵀ‖² + (ρ/2)‖X − Y‖²` at exit.
    pub value: f64,
    /// Backtracking shrank the step below the minimum.
    pub stalled: bool,
    /// Some projection hit its cycle cap.
    pub projection_warning: bool,
}

fn sub_objective(terms: &CycleTerms, y: &DMatrix<f64>, x: &DMatrix<f64>, rho: f64) -> f64 {
    if rho == 0.0 {
        terms.value
    } else {
        terms.value + 0.5 * rho * (x - y).norm_squared()
    }
}

/// Largest eigenvalue of a small symmetric PSD matrix by power iteration.
fn spectral_estimate(gram: &DMatrix<f64>) -> f64 {
    let k = gram.nrows();
    let mut v = DMatrix::from_element(k, 1, 1.0 / (k as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..20 {
        let next = gram * &v;
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        est = norm;
        v = next / norm;
    }
    est
}

/// One projected gradient step `Π_C[Y − η∇]` with a fixed step size.
pub fn projected_step(
    instance: &ProblemInstance,
    y: &RelaxedLabeling,
    x: &DMatrix<f64>,
    rho: f64,
    eta: f64,
    config: &SolverConfig,
) -> RelaxedLabeling {
    let terms = CycleTerms::new(instance.w(), instance.w_sq_norm(), &y.y);
    let grad = terms.gradient(&y.y, x, rho);
    project_onto_c(&(&y.y - grad * eta), y.sizes(), &config.projection).0
}

/// Projected gradient descent on the relaxed sub-problem in `Y` with
/// backtracking line search, run until the relative decrease per step drops
/// below `config.inner_tol` or `config.max_inner` steps are taken.
pub fn update_y(
    instance: &ProblemInstance,
    y: RelaxedLabeling,
    x: &DMatrix<f64>,
    rho: f64,
    config: &SolverConfig,
) -> (RelaxedLabeling, YUpdateReport) {
    let w = instance.w();
    let sizes = y.sizes().to_vec();
    let mut y = y.y;
    let mut terms = CycleTerms::new(w, instance.w_sq_norm(), &y);
    let mut value = sub_objective(&terms, &y, x, rho);
    let mut report = YUpdateReport {
        iterations: 0,
        value,
        stalled: false,
        projection_warning: false,
    };

    for iter in 0..config.max_inner {
        let grad = terms.gradient(&y, x, rho);
        let mut eta = config
            .step
            .initial
            .unwrap_or_else(|| 1.0 / (spectral_estimate(&terms.gram) + instance.w_inf_norm() + rho));
        let accepted = loop {
            let (cand, proj) = project_onto_c(&(&y - &grad * eta), &sizes, &config.projection);
            report.projection_warning |= !proj.converged;
            let step_sq = (&cand.y - &y).norm_squared();
            if step_sq <= 1e-24 * y.norm_squared().max(1.0) {
                break None;
            }
            let cand_terms = CycleTerms::new(w, instance.w_sq_norm(), &cand.y);
            let cand_value = sub_objective(&cand_terms, &cand.y, x, rho);
            if cand_value <= value - config.step.armijo / eta * step_sq {
                break Some((cand.y, cand_terms, cand_value));
            }
            eta *= config.step.backtrack;
            if eta < config.step.min_step {
                report.stalled = true;
                break None;
            }
        };
        let Some((next, next_terms, next_value)) = accepted else {
            break;
        };
        report.iterations = iter + 1;
        let decrease = (value - next_value) / value.abs().max(f64::MIN_POSITIVE);
        y = next;
        terms = next_terms;
        value = next_value;
        if decrease < config.inner_tol {
            break;
        }
    }
    report.value = value;
    (RelaxedLabeling::new(y, sizes), report)
}

/// Squared distances between candidate coordinates (2×p) and targets (2×k).
pub fn squared_distances(coords: &DMatrix<f64>, targets: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(coords.ncols(), targets.ncols(), |a, b| {
        (coords.column(a) - targets.column(b)).norm_squared()
    })
}

/// Exact minimizer over partial permutations of
/// `(λ/2)Σ‖C_i X_i − Z_i‖² + (ρ/2)‖X − Y‖²`, one assignment per image with
/// cost `λ D(C_i, Z_i) − 2ρ Y_i`.
pub fn update_x(
    y: &RelaxedLabeling,
    z: &DMatrix<f64>,
    coords: &[DMatrix<f64>],
    lambda: f64,
    rho: f64,
) -> Result<SelectionLabeling> {
    let sizes = y.sizes().to_vec();
    let k = y.y.ncols();
    let solve_image = |i: usize| -> Result<Vec<usize>> {
        let mut cost = y.block(i) * (-2.0 * rho);
        if lambda != 0.0 {
            let zi = z.rows(2 * i, 2).into_owned();
            cost += squared_distances(&coords[i], &zi) * lambda;
        }
        Ok(solve_lap(&cost)?.column_to_row)
    };
    let labels: Result<Vec<Vec<usize>>> = if y.y.nrows() >= PARALLEL_CANDIDATES {
        (0..sizes.len()).into_par_iter().map(solve_image).collect()
    } else {
        (0..sizes.len()).map(solve_image).collect()
    };
    SelectionLabeling::new(k, labels?, &sizes)
}

/// Best rank-`r` approximation by truncated SVD.
pub fn truncate_rank(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let d = svd(m);
    let mut z = DMatrix::zeros(m.nrows(), m.ncols());
    for (idx, &s) in d.singular_values.iter().enumerate().take(r) {
        if s == 0.0 {
            continue;
        }
        z += d.u.column(idx) * d.v_t.row(idx) * s;
    }
    z
}

/// `Z` update: rank-`r` truncation of the measurement matrix of `x`.
pub fn update_z(x: &SelectionLabeling, coords: &[DMatrix<f64>], r: usize) -> DMatrix<f64> {
    truncate_rank(&x.measurement_matrix(coords), r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::discretize;
    use crate::assignment::tests::brute_force_lap;
    use crate::model::{FeatureSet, PairwiseScores};
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(sizes: &[usize], blocks: &[((usize, usize), DMatrix<f64>)]) -> ProblemInstance {
        let feats = sizes
            .iter()
            .enumerate()
            .map(|(i, &p)| FeatureSet::new(format!("{i}"), DMatrix::zeros(2, p), None).unwrap())
            .collect();
        let mut s = PairwiseScores::new(sizes.to_vec());
        for ((i, j), b) in blocks {
            s.insert(*i, *j, b.clone()).unwrap();
        }
        ProblemInstance::new(feats, s).unwrap()
    }

    #[test]
    fn stationary_point_is_kept() {
        // W = YYᵀ with Y a partial permutation in C: gradient vanishes at ρ = 0
        let inst = instance(&[2, 2], &[((0, 1), DMatrix::identity(2, 2))]);
        let y = RelaxedLabeling::new(DMatrix::from_row_slice(4, 2, &[1., 0., 0., 1., 1., 0., 0., 1.]), vec![2, 2]);
        let cfg = SolverConfig::with_k(2);
        let (out, rep) = update_y(&inst, y.clone(), &DMatrix::zeros(4, 2), 0.0, &cfg);
        assert_eq!(out, y);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn interior_step_moves_by_gradient() {
        // W = I, Y = ½ everywhere: the cycle gradient vanishes and the coupling
        // gradient has zero column sums inside each block
        let inst = instance(&[2, 2], &[]);
        let y = RelaxedLabeling::new(DMatrix::from_element(4, 1, 0.5), vec![2, 2]);
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 1.0]);
        let eta = 0.1;
        let cfg = SolverConfig::with_k(1);
        let out = projected_step(&inst, &y, &x, 1.0, eta, &cfg);
        let grad = crate::solver::objective::y_gradient(inst.w(), &y.y, &x, 1.0);
        let expected = &y.y - grad * eta;
        assert!((&out.y - &expected).amax() < 1e-15);
        assert!((out.y - DMatrix::from_column_slice(4, 1, &[0.55, 0.45, 0.45, 0.55])).amax() < 1e-15);
    }

    #[test]
    fn converges_to_grid_minimizer() {
        // n = 2, p = (2, 2), k = 1: each block is (t, 1 − t)
        let b = DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.3, 0.0]);
        let inst = instance(&[2, 2], &[((0, 1), b)]);
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 1.0, 0.0]);
        let rho = 0.5;
        let dense = crate::model::assemble_block(inst.scores());
        let f = |s: f64, t: f64| {
            let y = DMatrix::from_column_slice(4, 1, &[s, 1.0 - s, t, 1.0 - t]);
            0.25 * (&dense - &y * y.transpose()).norm_squared() + 0.5 * rho * (&x - &y).norm_squared()
        };
        // coarse grid at 1e-2 then a 1e-5 grid around the coarse winner
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for a in 0..=100 {
            for b in 0..=100 {
                let (s, t) = (a as f64 / 100.0, b as f64 / 100.0);
                let v = f(s, t);
                if v < best.0 {
                    best = (v, s, t);
                }
            }
        }
        let (_, s0, t0) = best;
        for a in -1000..=1000 {
            for b in -1000..=1000 {
                let (s, t) = (s0 + a as f64 * 1e-5, t0 + b as f64 * 1e-5);
                if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) {
                    continue;
                }
                let v = f(s, t);
                if v < best.0 {
                    best = (v, s, t);
                }
            }
        }
        let (_, s, t) = best;
        let cfg = SolverConfig {
            inner_tol: 1e-12,
            max_inner: 5000,
            ..SolverConfig::with_k(1)
        };
        let y0 = RelaxedLabeling::new(DMatrix::from_element(4, 1, 0.5), vec![2, 2]);
        let (out, _) = update_y(&inst, y0, &x, rho, &cfg);
        let grid = DMatrix::from_column_slice(4, 1, &[s, 1.0 - s, t, 1.0 - t]);
        assert!((&out.y - &grid).amax() < 1e-3, "{} vs {}", out.y, grid);
    }

    #[test]
    fn accepted_steps_never_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b01 = DMatrix::from_fn(3, 4, |_, _| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
        let b12 = DMatrix::from_fn(4, 3, |_, _| rng.random_range(0.0..1.0));
        let inst = instance(&[3, 4, 3], &[((0, 1), b01), ((1, 2), b12)]);
        let sizes = vec![3, 4, 3];
        let y0 = DMatrix::from_fn(10, 2, |_, _| rng.random_range(0.0..1.0));
        let cfg = SolverConfig::with_k(2);
        let (mut y, _) = project_onto_c(&y0, &sizes, &cfg.projection);
        let x = DMatrix::zeros(10, 2);
        let single = SolverConfig {
            max_inner: 1,
            ..cfg.clone()
        };
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let (next, rep) = update_y(&inst, y, &x, 0.0, &single);
            assert!(rep.value <= prev);
            assert!(next.max_violation() <= 1e-6);
            prev = rep.value;
            y = next;
        }
    }

    #[test]
    fn x_update_without_geometry_discretizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sizes = vec![4, 3];
        let (y, _) = project_onto_c(
            &DMatrix::from_fn(7, 3, |_, _| rng.random_range(0.0..1.0)),
            &sizes,
            &Default::default(),
        );
        let coords = vec![DMatrix::zeros(2, 4), DMatrix::zeros(2, 3)];
        let x = update_x(&y, &DMatrix::zeros(4, 3), &coords, 0.0, 2.0).unwrap();
        for (i, &p) in sizes.iter().enumerate() {
            assert_eq!(x.block_matrix(i, p), discretize(&y.block(i)).unwrap());
        }
    }

    #[test]
    fn x_update_snaps_to_exact_targets() {
        let coords = vec![DMatrix::from_column_slice(2, 4, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 2.0, 2.0])];
        let z = DMatrix::from_column_slice(2, 2, &[2.0, 2.0, 1.0, 0.0]);
        let y = RelaxedLabeling::new(DMatrix::from_element(4, 2, 0.25), vec![4]);
        let x = update_x(&y, &z, &coords, 1.0, 0.0).unwrap();
        assert_eq!(x.labels(0), &[3, 1]);
        assert_eq!(x.measurement_matrix(&coords), z);
    }

    #[test]
    fn x_update_matches_enumeration() {
        let coords = vec![DMatrix::from_column_slice(2, 3, &[0.0, 0.0, 1.0, 0.5, -0.5, 1.0])];
        let z = DMatrix::from_column_slice(2, 2, &[0.9, 0.4, -0.2, 0.8]);
        let yb = DMatrix::from_row_slice(3, 2, &[0.2, 0.5, 0.7, 0.1, 0.1, 0.4]);
        let y = RelaxedLabeling::new(yb.clone(), vec![3]);
        let x = update_x(&y, &z, &coords, 1.0, 1.0).unwrap();
        let h = squared_distances(&coords[0], &z) - yb * 2.0;
        let (rows, _) = brute_force_lap(&h);
        assert_eq!(x.labels(0), rows.as_slice());
    }

    #[test]
    fn truncation_identities() {
        let low = DMatrix::from_fn(6, 3, |r, c| (r + 1) as f64 * (c as f64 - 1.0));
        assert!((truncate_rank(&low, 4) - &low).amax() < 1e-9);
        assert_eq!(truncate_rank(&DMatrix::zeros(4, 3), 2), DMatrix::zeros(4, 3));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DMatrix::from_fn(8, 5, |_, _| rng.random_range(-1.0..1.0));
        let z = truncate_rank(&m, 4);
        let eig = SymmetricEigen::new(m.tr_mul(&m));
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        let tail: f64 = ev[4..].iter().sum();
        assert!(((&m - &z).norm_squared() - tail).abs() < 1e-10);
        let sv = crate::linalg::singular_values(&z);
        assert!(sv[4] <= 1e-8 * sv[0]);
    }
}
