//! Pairwise input from descriptor similarities via linear assignment.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::assignment::solve_lap;
use crate::error::{Error, Result};
use crate::model::{FeatureSet, PairwiseScores};

/// Inner products of unit descriptors, clamped to `[0, 1]`.
pub fn similarity(desc_i: &DMatrix<f64>, desc_j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if desc_i.nrows() != desc_j.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "descriptor dimensions {} and {} differ",
            desc_i.nrows(),
            desc_j.nrows()
        )));
    }
    Ok(desc_i.tr_mul(desc_j).map(|v| v.clamp(0.0, 1.0)))
}

/// Binary `p_i×p_j` partial permutation with `min(p_i, p_j)` matches of
/// maximal total similarity.
pub fn pairwise_match(desc_i: &DMatrix<f64>, desc_j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sim = similarity(desc_i, desc_j)?;
    let (pi, pj) = sim.shape();
    let mut out = DMatrix::zeros(pi, pj);
    if pi >= pj {
        let res = solve_lap(&(-&sim))?;
        for (b, &a) in res.column_to_row.iter().enumerate() {
            out[(a, b)] = 1.0;
        }
    } else {
        let res = solve_lap(&(-sim.transpose()))?;
        for (a, &b) in res.column_to_row.iter().enumerate() {
            out[(a, b)] = 1.0;
        }
    }
    Ok(out)
}

/// Matches every image pair `i < j` from descriptors.
pub fn scores_from_descriptors(features: &[FeatureSet]) -> Result<PairwiseScores> {
    let desc: Vec<&DMatrix<f64>> = features
        .iter()
        .map(|f| {
            f.descriptors.as_ref().ok_or_else(|| {
                Error::InvalidParameter(format!("image {} has no descriptors", f.image_id))
            })
        })
        .collect::<Result<_>>()?;
    let n = features.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let blocks: Vec<DMatrix<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| pairwise_match(desc[i], desc[j]))
        .collect::<Result<_>>()?;
    let mut scores = PairwiseScores::new(features.iter().map(FeatureSet::len).collect());
    for ((i, j), b) in pairs.into_iter().zip(blocks) {
        scores.insert(i, j, b)?;
    }
    Ok(scores)
}
