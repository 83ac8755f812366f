//! Rectangular linear assignment.
//!
//! [`solve_lap`] picks, for each of the `k` columns of a `p×k` cost matrix, a
//! distinct row so that the total cost is minimal. The labels (columns) are
//! augmented one at a time with Dijkstra-style shortest paths over reduced
//! costs, `O(k²p)` overall, so no square padding is needed.
//!
//! Ties are broken deterministically: among all optimal assignments the one
//! whose row vector `(row of column 0, row of column 1, ...)` is
//! lexicographically smallest is returned. Optimal assignments are exactly
//! the matchings on zero-reduced-cost edges that cover every label and every
//! row with a negative potential, so the lexicographic choice is made by a
//! greedy walk over that graph with a bipartite feasibility check per step.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Output of [`solve_lap`].
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    /// Chosen row for each column.
    pub column_to_row: Vec<usize>,
    pub total_cost: f64,
}

impl AssignmentResult {
    /// Binary `p×k` matrix with a single 1 per column.
    pub fn to_matrix(&self, rows: usize) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(rows, self.column_to_row.len());
        for (c, &r) in self.column_to_row.iter().enumerate() {
            x[(r, c)] = 1.0;
        }
        x
    }
}

/// Minimum-cost selection of one distinct row per column of a `p×k` cost.
pub fn solve_lap(cost: &DMatrix<f64>) -> Result<AssignmentResult> {
    let (p, k) = cost.shape();
    if p < k {
        return Err(Error::InfeasibleAssignment { rows: p, cols: k });
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("assignment cost"));
    }
    if k == 0 {
        return Ok(AssignmentResult {
            column_to_row: Vec::new(),
            total_cost: 0.0,
        });
    }

    let duals = shortest_augmenting_paths(cost);
    let mut column_to_row = duals.column_to_row.clone();

    let scale = cost.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-10 * scale;
    let tight = TightGraph::new(cost, &duals, tol);
    if tight.edge_count > k {
        if let Some(lex) = tight.lexicographic_matching() {
            column_to_row = lex;
        }
    }

    let total_cost = column_to_row
        .iter()
        .enumerate()
        .map(|(c, &r)| cost[(r, c)])
        .sum();
    Ok(AssignmentResult {
        column_to_row,
        total_cost,
    })
}

/// Turns a relaxed block `Y_i` into the partial permutation maximizing
/// `⟨X_i, Y_i⟩`.
pub fn discretize(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let res = solve_lap(&(-y))?;
    Ok(res.to_matrix(y.nrows()))
}

struct Duals {
    /// Potential per column (label).
    u: Vec<f64>,
    /// Potential per row (candidate), always `≤ 0`.
    v: Vec<f64>,
    column_to_row: Vec<usize>,
}

fn shortest_augmenting_paths(cost: &DMatrix<f64>) -> Duals {
    let (p, k) = cost.shape();
    // 1-based with index 0 as the virtual source, rows are the "columns" of
    // the classical formulation
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; p + 1];
    let mut owner = vec![0usize; p + 1];
    let mut way = vec![0usize; p + 1];
    let mut minv = vec![0.0; p + 1];
    let mut used = vec![false; p + 1];

    for label in 1..=k {
        owner[0] = label;
        let mut r0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[r0] = true;
            let l0 = owner[r0];
            let mut delta = f64::INFINITY;
            let mut r1 = 0usize;
            for r in 1..=p {
                if used[r] {
                    continue;
                }
                let cur = cost[(r - 1, l0 - 1)] - u[l0] - v[r];
                if cur < minv[r] {
                    minv[r] = cur;
                    way[r] = r0;
                }
                if minv[r] < delta {
                    delta = minv[r];
                    r1 = r;
                }
            }
            for r in 0..=p {
                if used[r] {
                    u[owner[r]] += delta;
                    v[r] -= delta;
                } else {
                    minv[r] -= delta;
                }
            }
            r0 = r1;
            if owner[r0] == 0 {
                break;
            }
        }
        loop {
            let r1 = way[r0];
            owner[r0] = owner[r1];
            r0 = r1;
            if r0 == 0 {
                break;
            }
        }
    }

    let mut column_to_row = vec![0usize; k];
    for r in 1..=p {
        if owner[r] != 0 {
            column_to_row[owner[r] - 1] = r - 1;
        }
    }
    Duals {
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
        column_to_row,
    }
}

/// Zero-reduced-cost edges under an optimal dual solution.
struct TightGraph {
    /// Tight rows per column, ascending.
    adj: Vec<Vec<usize>>,
    /// Rows that every optimal assignment must use.
    required: Vec<bool>,
    rows: usize,
    edge_count: usize,
}

impl TightGraph {
    fn new(cost: &DMatrix<f64>, duals: &Duals, tol: f64) -> Self {
        let (p, k) = cost.shape();
        let mut adj = vec![Vec::new(); k];
        let mut edge_count = 0;
        for (c, list) in adj.iter_mut().enumerate() {
            for r in 0..p {
                if cost[(r, c)] - duals.u[c] - duals.v[r] <= tol {
                    list.push(r);
                    edge_count += 1;
                }
            }
        }
        let required = duals.v.iter().map(|&v| v < -tol).collect();
        Self {
            adj,
            required,
            rows: p,
            edge_count,
        }
    }

    fn lexicographic_matching(&self) -> Option<Vec<usize>> {
        let k = self.adj.len();
        let mut taken = vec![false; self.rows];
        let mut chosen = Vec::with_capacity(k);
        for c in 0..k {
            let mut picked = None;
            for &r in &self.adj[c] {
                if taken[r] {
                    continue;
                }
                taken[r] = true;
                if self.completable(c + 1, &taken) {
                    picked = Some(r);
                    break;
                }
                taken[r] = false;
            }
            chosen.push(picked?);
        }
        Some(chosen)
    }

    /// Whether columns `from..k` can be matched to free rows so that every
    /// free required row is used. A matching covering both sides exists iff
    /// each side can be covered separately (Mendelsohn–Dulmage).
    fn completable(&self, from: usize, taken: &[bool]) -> bool {
        let cols: Vec<usize> = (from..self.adj.len()).collect();
        let mut row_owner: Vec<Option<usize>> = vec![None; self.rows];
        for &c in &cols {
            let mut seen = vec![false; self.rows];
            if !self.augment_col(c, taken, &mut seen, &mut row_owner) {
                return false;
            }
        }

        // reverse direction: cover every free required row with some column
        let mut col_owner: Vec<Option<usize>> = vec![None; self.adj.len()];
        let mut row_adj = vec![Vec::new(); self.rows];
        for &c in &cols {
            for &r in &self.adj[c] {
                row_adj[r].push(c);
            }
        }
        for (r, &t) in taken.iter().enumerate() {
            if t || !self.required[r] {
                continue;
            }
            let mut seen = vec![false; self.adj.len()];
            if !augment_row(r, &row_adj, &mut seen, &mut col_owner) {
                return false;
            }
        }
        true
    }

    fn augment_col(
        &self,
        c: usize,
        taken: &[bool],
        seen: &mut [bool],
        row_owner: &mut [Option<usize>],
    ) -> bool {
        for &r in &self.adj[c] {
            if taken[r] || seen[r] {
                continue;
            }
            seen[r] = true;
            let free = match row_owner[r] {
                None => true,
                Some(other) => self.augment_col(other, taken, seen, row_owner),
            };
            if free {
                row_owner[r] = Some(c);
                return true;
            }
        }
        false
    }
}

fn augment_row(
    r: usize,
    row_adj: &[Vec<usize>],
    seen: &mut [bool],
    col_owner: &mut [Option<usize>],
) -> bool {
    for &c in &row_adj[r] {
        if seen[c] {
            continue;
        }
        seen[c] = true;
        let free = match col_owner[c] {
            None => true,
            Some(other) => augment_row(other, row_adj, seen, col_owner),
        };
        if free {
            col_owner[c] = Some(r);
            return true;
        }
    }
    false
}
