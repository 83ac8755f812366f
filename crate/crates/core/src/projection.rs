//! Euclidean projection onto the relaxed labeling set
//!
//! ```text
//! C = { Y : 0 ≤ Y ≤ 1,  Y_i 1 ≤ 1,  Y_iᵀ 1 = 1  for every image block i }
//! ```
//!
//! `C` is a product over image blocks, so each `p_i×k` block is projected on
//! its own. Within a block, `C_i` is the intersection of
//!
//! * `A`: every row lies in `{y ≥ 0, Σy ≤ 1}`,
//! * `B`: every column lies on the probability simplex,
//!
//! (the upper bound `Y ≤ 1` follows from the other constraints), and the
//! exact projection is reached with Dykstra's alternating projections. Both
//! sub-projections are sort-and-threshold operations.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::config::ProjectionControl;
use crate::model::offsets;

/// Blocks with at least this many entries in total are projected in parallel.
const PARALLEL_ENTRIES: usize = 1 << 14;

/// A relaxed labeling `Y` partitioned into per-image row blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedLabeling {
    pub y: DMatrix<f64>,
    sizes: Vec<usize>,
}

impl RelaxedLabeling {
    pub fn new(y: DMatrix<f64>, sizes: Vec<usize>) -> Self {
        assert_eq!(y.nrows(), sizes.iter().sum::<usize>(), "block sizes do not cover Y");
        Self { y, sizes }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Copy of block `Y_i`.
    pub fn block(&self, i: usize) -> DMatrix<f64> {
        let off: usize = self.sizes[..i].iter().sum();
        self.y.rows(off, self.sizes[i]).into_owned()
    }

    /// Largest violation of any constraint of `C`.
    pub fn max_violation(&self) -> f64 {
        max_violation(&self.y, &self.sizes)
    }
}

/// Outcome of one projection call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectionReport {
    /// Dykstra cycles used by the slowest block.
    pub cycles: usize,
    /// False when some block hit the cycle cap before meeting the tolerances.
    pub converged: bool,
}

/// Largest violation of the constraints of `C` by `y`.
pub fn max_violation(y: &DMatrix<f64>, sizes: &[usize]) -> f64 {
    let mut worst = 0.0_f64;
    for v in y.iter() {
        worst = worst.max(-v).max(v - 1.0);
    }
    for r in 0..y.nrows() {
        worst = worst.max(y.row(r).sum() - 1.0);
    }
    for (i, off) in offsets(sizes).into_iter().enumerate() {
        for c in 0..y.ncols() {
            let s: f64 = y.view((off, c), (sizes[i], 1)).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    worst
}

/// Projection onto `{y ≥ 0, Σy ≤ 1}`.
pub fn project_row_capped(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    let mut scratch = Vec::with_capacity(v.len());
    row_capped_in_place(&mut out, &mut scratch);
    out
}

/// Projection onto the probability simplex `{y ≥ 0, Σy = 1}`.
pub fn project_col_simplex(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    let mut scratch = Vec::with_capacity(v.len());
    simplex_in_place(&mut out, &mut scratch);
    out
}

/// Threshold `θ` such that `Σ max(v − θ, 0) = 1`.
fn simplex_threshold(v: &[f64], scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend_from_slice(v);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in scratch.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    theta
}

fn simplex_in_place(v: &mut [f64], scratch: &mut Vec<f64>) {
    let theta = simplex_threshold(v, scratch);
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

fn row_capped_in_place(v: &mut [f64], scratch: &mut Vec<f64>) {
    let positive: f64 = v.iter().map(|x| x.max(0.0)).sum();
    if positive <= 1.0 {
        for x in v.iter_mut() {
            *x = x.max(0.0);
        }
    } else {
        simplex_in_place(v, scratch);
    }
}

/// Projects `y` onto `C`. Points already in `C` are returned unchanged.
pub fn project_onto_c(
    y: &DMatrix<f64>,
    sizes: &[usize],
    ctl: &ProjectionControl,
) -> (RelaxedLabeling, ProjectionReport) {
    assert!(y.iter().all(|v| v.is_finite()), "projection input must be finite");
    let k = y.ncols();
    let offs = offsets(sizes);
    let blocks: Vec<(usize, usize)> = offs.iter().copied().zip(sizes.iter().copied()).collect();

    let project = |&(off, p): &(usize, usize)| {
        let mut block = Vec::with_capacity(p * k);
        for c in 0..k {
            block.extend_from_slice(&y.as_slice()[c * y.nrows() + off..c * y.nrows() + off + p]);
        }
        let report = project_block(&mut block, p, k, ctl);
        (block, report)
    };
    let results: Vec<(Vec<f64>, ProjectionReport)> = if y.len() >= PARALLEL_ENTRIES {
        blocks.par_iter().map(project).collect()
    } else {
        blocks.iter().map(project).collect()
    };

    let mut out = y.clone();
    let mut report = ProjectionReport {
        cycles: 0,
        converged: true,
    };
    let m = y.nrows();
    for ((off, p), (block, r)) in blocks.iter().zip(results) {
        let dst = out.as_mut_slice();
        for c in 0..k {
            dst[c * m + off..c * m + off + p].copy_from_slice(&block[c * p..(c + 1) * p]);
        }
        report.cycles = report.cycles.max(r.cycles);
        report.converged &= r.converged;
    }
    if !report.converged {
        log::warn!(
            "projection stopped after {} cycles without meeting its tolerance",
            report.cycles
        );
    }
    (RelaxedLabeling::new(out, sizes.to_vec()), report)
}

fn block_feasible(x: &[f64], p: usize, k: usize, tol: f64) -> bool {
    if x.iter().any(|&v| v < 0.0) {
        return false;
    }
    for c in 0..k {
        let s: f64 = x[c * p..(c + 1) * p].iter().sum();
        if (s - 1.0).abs() > tol {
            return false;
        }
    }
    (0..p).all(|r| (0..k).map(|c| x[c * p + r]).sum::<f64>() <= 1.0 + tol)
}

/// Dykstra iterations on one column-major `p×k` block, in place.
fn project_block(x: &mut [f64], p: usize, k: usize, ctl: &ProjectionControl) -> ProjectionReport {
    if block_feasible(x, p, k, ctl.feasibility_tol) {
        return ProjectionReport {
            cycles: 0,
            converged: true,
        };
    }
    let n = p * k;
    let mut row_corr = vec![0.0; n];
    let mut col_corr = vec![0.0; n];
    let mut a_iter = vec![0.0; n];
    let mut row_buf = vec![0.0; k];
    let mut scratch = Vec::with_capacity(p.max(k));

    for cycle in 1..=ctl.max_cycles {
        // An unchanged iterate alone is not enough: the correction terms can
        // still be moving, so their change enters the stopping test too.
        let mut corr_change = 0.0;

        // rows onto the capped simplex
        for i in 0..n {
            a_iter[i] = x[i] + row_corr[i];
        }
        for r in 0..p {
            for (c, b) in row_buf.iter_mut().enumerate() {
                *b = a_iter[c * p + r];
            }
            row_capped_in_place(&mut row_buf, &mut scratch);
            for (c, &b) in row_buf.iter().enumerate() {
                let idx = c * p + r;
                let next = a_iter[idx] - b;
                corr_change += (next - row_corr[idx]) * (next - row_corr[idx]);
                row_corr[idx] = next;
                a_iter[idx] = b;
            }
        }

        // columns onto the simplex
        let mut change = 0.0;
        let mut norm = 0.0;
        for c in 0..k {
            let col = &mut a_iter[c * p..(c + 1) * p];
            let corr = &mut col_corr[c * p..(c + 1) * p];
            for (v, q) in col.iter_mut().zip(corr.iter()) {
                *v += q;
            }
            let theta = simplex_threshold(col, &mut scratch);
            for ((v, q), xi) in col.iter().zip(corr.iter_mut()).zip(&mut x[c * p..(c + 1) * p]) {
                let next = (v - theta).max(0.0);
                corr_change += (v - next - *q) * (v - next - *q);
                *q = v - next;
                change += (next - *xi) * (next - *xi);
                norm += next * next;
                *xi = next;
            }
        }

        let excess = (0..p)
            .map(|r| (0..k).map(|c| x[c * p + r]).sum::<f64>() - 1.0)
            .fold(f64::NEG_INFINITY, f64::max);
        let scale = ctl.tol * norm.sqrt().max(1e-12);
        if change.sqrt() <= scale && corr_change.sqrt() <= scale && excess <= ctl.feasibility_tol {
            return ProjectionReport {
                cycles: cycle,
                converged: true,
            };
        }
    }
    ProjectionReport {
        cycles: ctl.max_cycles,
        converged: false,
    }
}
