//! Matching metrics and consistency diagnostics.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::singular_values;
use crate::model::{PairwiseScores, SelectionLabeling};

/// Ground-truth universe label per candidate, `-1` for candidates that
/// belong to no universe point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: Vec<Vec<i64>>,
}

impl GroundTruth {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.labels.iter().map(Vec::len).collect()
    }

    fn is_match(&self, i: usize, a: usize, j: usize, b: usize) -> bool {
        let la = self.labels[i][a];
        la >= 0 && la == self.labels[j][b]
    }

    /// Number of true correspondences over all image pairs `i < j`.
    pub fn pair_count(&self) -> usize {
        let sets: Vec<HashSet<i64>> = self
            .labels
            .iter()
            .map(|l| l.iter().copied().filter(|&v| v >= 0).collect())
            .collect();
        let mut total = 0;
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                total += sets[i].intersection(&sets[j]).count();
            }
        }
        total
    }

    /// Whether candidate `a` of image `i` belongs to the universe.
    pub fn is_inlier(&self, i: usize, a: usize) -> bool {
        self.labels[i][a] >= 0
    }
}

/// A correspondence between candidate `a` of image `i` and `b` of image `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Correspondence {
    pub i: usize,
    pub a: usize,
    pub j: usize,
    pub b: usize,
}

/// Metric value with a flag for zero-denominator conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    /// The denominator was zero and `value` is the conventional 1.0.
    pub vacuous: bool,
}

impl MetricValue {
    fn ratio(num: usize, den: usize) -> Self {
        if den == 0 {
            Self {
                value: 1.0,
                vacuous: true,
            }
        } else {
            Self {
                value: num as f64 / den as f64,
                vacuous: false,
            }
        }
    }
}

/// Correspondences `X_i X_jᵀ` induced by a labeling, `i < j`.
pub fn induced_correspondences(x: &SelectionLabeling) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for i in 0..x.n() {
        for j in i + 1..x.n() {
            for (&a, &b) in x.labels(i).iter().zip(x.labels(j)) {
                out.push(Correspondence { i, a, j, b });
            }
        }
    }
    out
}

/// Off-diagonal score entries above `threshold`, `i < j`.
pub fn score_correspondences(scores: &PairwiseScores, threshold: f64) -> Vec<Correspondence> {
    scores
        .upper_entries()
        .into_iter()
        .filter(|e| e.4 > threshold)
        .map(|(i, j, a, b, _)| Correspondence { i, a, j, b })
        .collect()
}

fn count_true(pairs: &[Correspondence], truth: &GroundTruth) -> usize {
    pairs
        .iter()
        .filter(|c| truth.is_match(c.i, c.a, c.j, c.b))
        .count()
}

/// True correspondences found over the number of ground-truth ones.
pub fn recall(predicted: &SelectionLabeling, truth: &GroundTruth) -> MetricValue {
    pair_recall(&induced_correspondences(predicted), truth)
}

/// True correspondences found over the number of correspondences found.
pub fn precision(predicted: &SelectionLabeling, truth: &GroundTruth) -> MetricValue {
    pair_precision(&induced_correspondences(predicted), truth)
}

pub fn pair_recall(pairs: &[Correspondence], truth: &GroundTruth) -> MetricValue {
    MetricValue::ratio(count_true(pairs, truth), truth.pair_count())
}

pub fn pair_precision(pairs: &[Correspondence], truth: &GroundTruth) -> MetricValue {
    MetricValue::ratio(count_true(pairs, truth), pairs.len())
}

/// Fraction of selected candidates that are universe points.
pub fn inlier_fraction(predicted: &SelectionLabeling, truth: &GroundTruth) -> f64 {
    let total = predicted.n() * predicted.k();
    if total == 0 {
        return 1.0;
    }
    let inliers: usize = (0..predicted.n())
        .map(|i| predicted.labels(i).iter().filter(|&&a| truth.is_inlier(i, a)).count())
        .sum();
    inliers as f64 / total as f64
}

/// Percentage of correct keypoints: points within `alpha·max(h, w)` of the
/// truth, boundary included.
pub fn pck(
    predicted: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    height: f64,
    width: f64,
    alpha: f64,
) -> MetricValue {
    assert_eq!(predicted.shape(), truth.shape(), "point sets differ in shape");
    let radius = alpha * height.max(width);
    let hits = predicted
        .column_iter()
        .zip(truth.column_iter())
        .filter(|(p, t)| (p - t).norm() <= radius)
        .count();
    MetricValue::ratio(hits, predicted.ncols())
}

/// Largest `‖P_ij − P_iz P_zj‖_∞` over the given triplets.
pub fn cycle_check(
    blocks: &PairwiseScores,
    triplets: impl IntoIterator<Item = (usize, usize, usize)>,
) -> f64 {
    triplets
        .into_iter()
        .map(|(i, z, j)| {
            let direct = blocks.block(i, j);
            let via = blocks.block(i, z) * blocks.block(z, j);
            (direct - via).amax()
        })
        .fold(0.0, f64::max)
}

/// Every ordered triplet of distinct images.
pub fn all_triplets(n: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..n).flat_map(move |i| {
        (0..n).flat_map(move |z| {
            (0..n)
                .filter(move |&j| i != z && z != j && i != j)
                .map(move |j| (i, z, j))
        })
    })
}

/// Pairwise blocks `X_i X_jᵀ` of a labeling.
pub fn labeling_blocks(x: &SelectionLabeling, sizes: &[usize]) -> PairwiseScores {
    let mut out = PairwiseScores::new(sizes.to_vec());
    for i in 0..x.n() {
        for j in i + 1..x.n() {
            out.insert(i, j, x.induced_block(i, j, sizes))
                .expect("labeling matches sizes");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDiagnostic {
    /// Singular values, largest first.
    pub singular_values: Vec<f64>,
    /// `Σ_{i>r} σ_i² / Σ σ_i²`, zero for the zero matrix.
    pub tail_ratio: f64,
}

pub fn rank_diagnostic(m: &DMatrix<f64>, r: usize) -> RankDiagnostic {
    let sv = singular_values(m);
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let tail: f64 = sv.iter().skip(r).map(|s| s * s).sum();
    let tail_ratio = if total > 0.0 { tail / total } else { 0.0 };
    RankDiagnostic {
        singular_values: sv,
        tail_ratio,
    }
}
