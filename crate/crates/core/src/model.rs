//! Problem description: per-image feature candidates, pairwise score blocks,
//! and the selection labeling that the solver produces.
//!
//! Images are indexed in input order. The `m = Σ p_i` candidates of the whole
//! collection are laid out image after image, so candidate `a` of image `i`
//! sits at global row `offsets[i] + a` of the block score matrix `W` and of
//! the stacked labeling `X`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::config::SolverConfig;
use crate::error::{Error, Result};

const UNIT_NORM_TOL: f64 = 1e-6;

/// Feature candidates detected in a single image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub image_id: String,
    /// 2×p pixel positions, one column per candidate.
    pub coordinates: DMatrix<f64>,
    /// Optional d×p descriptors with unit-norm columns.
    pub descriptors: Option<DMatrix<f64>>,
}

impl FeatureSet {
    pub fn new(
        image_id: impl Into<String>,
        coordinates: DMatrix<f64>,
        descriptors: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if coordinates.nrows() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "image {image_id}: coordinates must have 2 rows, got {}",
                coordinates.nrows()
            )));
        }
        if coordinates.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "image {image_id}: no feature candidates"
            )));
        }
        if coordinates.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coordinates"));
        }
        if let Some(desc) = &descriptors {
            if desc.ncols() != coordinates.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "image {image_id}: {} descriptors for {} candidates",
                    desc.ncols(),
                    coordinates.ncols()
                )));
            }
            if desc.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("descriptors"));
            }
            for (a, col) in desc.column_iter().enumerate() {
                if (col.norm() - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "image {image_id}: descriptor {a} is not unit-normalized (norm {})",
                        col.norm()
                    )));
                }
            }
        }
        Ok(Self {
            image_id,
            coordinates,
            descriptors,
        })
    }

    /// Number of candidates `p_i`.
    pub fn len(&self) -> usize {
        self.coordinates.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates.ncols() == 0
    }
}

/// Pairwise score blocks `W_ij` for an image collection.
///
/// Raw inputs may carry either orientation of a pair, or both. After
/// [`validate_instance`] only blocks with `i < j` are stored; the lower
/// triangle is the transpose and the diagonal blocks are identities.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseScores {
    sizes: Vec<usize>,
    blocks: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl PairwiseScores {
    pub fn new(sizes: Vec<usize>) -> Self {
        Self {
            sizes,
            blocks: BTreeMap::new(),
        }
    }

    /// Builds blocks from sparse `(i, j, row, col, value)` entries.
    pub fn from_entries(
        sizes: Vec<usize>,
        entries: impl IntoIterator<Item = (usize, usize, usize, usize, f64)>,
    ) -> Result<Self> {
        let mut scores = Self::new(sizes);
        for (i, j, row, col, value) in entries {
            let (pi, pj) = scores.check_pair(i, j)?;
            if row >= pi || col >= pj {
                return Err(Error::DimensionMismatch(format!(
                    "entry ({row}, {col}) outside the {pi}x{pj} block ({i}, {j})"
                )));
            }
            scores
                .blocks
                .entry((i, j))
                .or_insert_with(|| DMatrix::zeros(pi, pj))[(row, col)] = value;
        }
        Ok(scores)
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<(usize, usize)> {
        let n = self.sizes.len();
        if i >= n || j >= n {
            return Err(Error::DimensionMismatch(format!(
                "block ({i}, {j}) references an image beyond n = {n}"
            )));
        }
        Ok((self.sizes[i], self.sizes[j]))
    }

    /// Inserts (or replaces) the block for the ordered pair `(i, j)`.
    pub fn insert(&mut self, i: usize, j: usize, block: DMatrix<f64>) -> Result<()> {
        let (pi, pj) = self.check_pair(i, j)?;
        if block.shape() != (pi, pj) {
            return Err(Error::DimensionMismatch(format!(
                "block ({i}, {j}) has shape {}x{}, expected {pi}x{pj}",
                block.nrows(),
                block.ncols()
            )));
        }
        self.blocks.insert((i, j), block);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Total candidate count `m`.
    pub fn m(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Stored blocks in their stored orientation.
    pub fn stored(&self) -> impl Iterator<Item = (&(usize, usize), &DMatrix<f64>)> {
        self.blocks.iter()
    }

    /// Block `W_ij` for any ordered pair: transposes a stored `(j, i)` block,
    /// returns the identity on the diagonal and zeros for absent pairs.
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        if i == j {
            return DMatrix::identity(self.sizes[i], self.sizes[i]);
        }
        if let Some(b) = self.blocks.get(&(i, j)) {
            return b.clone();
        }
        if let Some(b) = self.blocks.get(&(j, i)) {
            return b.transpose();
        }
        DMatrix::zeros(self.sizes[i], self.sizes[j])
    }

    /// Nonzero off-diagonal entries `(i, j, row, col, value)` with `i < j`.
    pub fn upper_entries(&self) -> Vec<(usize, usize, usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n() {
            for j in i + 1..self.n() {
                let b = self.block(i, j);
                for col in 0..b.ncols() {
                    for row in 0..b.nrows() {
                        let v = b[(row, col)];
                        if v != 0.0 {
                            out.push((i, j, row, col, v));
                        }
                    }
                }
            }
        }
        out.sort_by_key(|a| (a.0, a.1, a.2, a.3));
        out
    }
}

/// Candidate index offsets of each image inside the stacked layout.
pub fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    sizes
        .iter()
        .map(|&p| {
            let o = acc;
            acc += p;
            o
        })
        .collect()
}

/// A validated, immutable matching problem.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    features: Vec<FeatureSet>,
    scores: PairwiseScores,
    offsets: Vec<usize>,
    w: CsrMatrix<f64>,
    w_sq_norm: f64,
    w_inf_norm: f64,
}

/// Validates features and scores, symmetrizes `W`, and forces identity
/// diagonal blocks.
pub fn validate_instance(
    features: Vec<FeatureSet>,
    scores: PairwiseScores,
    config: &SolverConfig,
) -> Result<ProblemInstance> {
    let instance = ProblemInstance::new(features, scores)?;
    instance.check_k(config.k)?;
    Ok(instance)
}

impl ProblemInstance {
    /// Validates without a solver configuration; `k` is checked separately.
    pub fn new(features: Vec<FeatureSet>, scores: PairwiseScores) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::DimensionMismatch("no images".into()));
        }
        let sizes: Vec<usize> = features.iter().map(FeatureSet::len).collect();
        if scores.sizes() != sizes.as_slice() {
            return Err(Error::DimensionMismatch(format!(
                "score blocks sized for {:?}, features have {:?}",
                scores.sizes(),
                sizes
            )));
        }
        for (&(i, j), b) in scores.stored() {
            if b.shape() != (sizes[i], sizes[j]) {
                return Err(Error::DimensionMismatch(format!(
                    "block ({i}, {j}) has shape {}x{}, expected {}x{}",
                    b.nrows(),
                    b.ncols(),
                    sizes[i],
                    sizes[j]
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("pairwise scores"));
            }
            if b.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidParameter(format!(
                    "block ({i}, {j}) has a score outside [0, 1]"
                )));
            }
        }

        let mut sym = PairwiseScores::new(sizes.clone());
        let n = sizes.len();
        for i in 0..n {
            for j in i + 1..n {
                let upper = scores.blocks.get(&(i, j));
                let lower = scores.blocks.get(&(j, i));
                let block = match (upper, lower) {
                    (Some(u), Some(l)) => (u + l.transpose()) * 0.5,
                    (Some(u), None) => u.clone(),
                    (None, Some(l)) => l.transpose(),
                    (None, None) => continue,
                };
                sym.blocks.insert((i, j), block);
            }
        }

        let offsets = offsets(&sizes);
        let w = sparse_scores(&sym, &offsets);
        let w_sq_norm = w.values().iter().map(|v| v * v).sum();
        let w_inf_norm = row_abs_max(&w);
        Ok(Self {
            features,
            scores: sym,
            offsets,
            w,
            w_sq_norm,
            w_inf_norm,
        })
    }

    /// Rejects `k` values that no labeling can satisfy.
    pub fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be positive".into()));
        }
        for (image, f) in self.features.iter().enumerate() {
            if k > f.len() {
                return Err(Error::InfeasibleK {
                    k,
                    p: f.len(),
                    image,
                });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.features.len()
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn features(&self) -> &[FeatureSet] {
        &self.features
    }

    pub fn scores(&self) -> &PairwiseScores {
        &self.scores
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.features.iter().map(FeatureSet::len).collect()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Sparse symmetric `m×m` score matrix including the identity diagonal.
    pub fn w(&self) -> &CsrMatrix<f64> {
        &self.w
    }

    /// `‖W‖²_F`.
    pub fn w_sq_norm(&self) -> f64 {
        self.w_sq_norm
    }

    /// `‖W‖_∞` (maximum absolute row sum).
    pub fn w_inf_norm(&self) -> f64 {
        self.w_inf_norm
    }

    /// Smallest candidate count over all images.
    pub fn min_candidates(&self) -> usize {
        self.features.iter().map(FeatureSet::len).min().unwrap_or(0)
    }
}

fn row_abs_max(w: &CsrMatrix<f64>) -> f64 {
    w.row_iter()
        .map(|r| r.values().iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn sparse_scores(scores: &PairwiseScores, offsets: &[usize]) -> CsrMatrix<f64> {
    let m = scores.m();
    let mut coo = CooMatrix::new(m, m);
    for (i, &o) in offsets.iter().enumerate() {
        for a in 0..scores.sizes[i] {
            coo.push(o + a, o + a, 1.0);
        }
    }
    for (&(i, j), b) in &scores.blocks {
        for col in 0..b.ncols() {
            for row in 0..b.nrows() {
                let v = b[(row, col)];
                if v != 0.0 {
                    coo.push(offsets[i] + row, offsets[j] + col, v);
                    coo.push(offsets[j] + col, offsets[i] + row, v);
                }
            }
        }
    }
    CsrMatrix::from(&coo)
}

/// Dense `m×m` block score matrix with the image-major layout.
pub fn assemble_block(scores: &PairwiseScores) -> DMatrix<f64> {
    let sizes = scores.sizes();
    let offs = offsets(sizes);
    let m = scores.m();
    let mut w = DMatrix::zeros(m, m);
    for i in 0..sizes.len() {
        for j in 0..sizes.len() {
            let b = scores.block(i, j);
            w.view_mut((offs[i], offs[j]), (sizes[i], sizes[j]))
                .copy_from(&b);
        }
    }
    w
}

/// Per-image partial permutations `X_i` into a `k`-element label space.
///
/// Stored as `labels[i][l] = a`: label `l` is realized by candidate `a` of
/// image `i`, so every column of `X_i` has exactly one 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionLabeling {
    k: usize,
    labels: Vec<Vec<usize>>,
}

impl SelectionLabeling {
    pub fn new(k: usize, labels: Vec<Vec<usize>>, sizes: &[usize]) -> Result<Self> {
        if labels.len() != sizes.len() {
            return Err(Error::DimensionMismatch(format!(
                "labeling covers {} images, expected {}",
                labels.len(),
                sizes.len()
            )));
        }
        for (i, (rows, &p)) in labels.iter().zip(sizes).enumerate() {
            if rows.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "image {i} has {} labels, expected {k}",
                    rows.len()
                )));
            }
            if k > p {
                return Err(Error::InfeasibleK { k, p, image: i });
            }
            let mut seen = vec![false; p];
            for &a in rows {
                if a >= p {
                    return Err(Error::DimensionMismatch(format!(
                        "image {i}: candidate {a} out of range (p = {p})"
                    )));
                }
                if std::mem::replace(&mut seen[a], true) {
                    return Err(Error::InvalidParameter(format!(
                        "image {i}: candidate {a} carries two labels"
                    )));
                }
            }
        }
        Ok(Self { k, labels })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Candidate index per label for image `i`.
    pub fn labels(&self, i: usize) -> &[usize] {
        &self.labels[i]
    }

    pub fn all_labels(&self) -> &[Vec<usize>] {
        &self.labels
    }

    /// Label carried by candidate `a` of image `i`, if selected.
    pub fn label_of(&self, i: usize, a: usize) -> Option<usize> {
        self.labels[i].iter().position(|&r| r == a)
    }

    /// Binary `p×k` matrix `X_i`.
    pub fn block_matrix(&self, i: usize, p: usize) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(p, self.k);
        for (l, &a) in self.labels[i].iter().enumerate() {
            x[(a, l)] = 1.0;
        }
        x
    }

    /// Stacked binary `m×k` matrix `X`.
    pub fn stacked(&self, sizes: &[usize]) -> DMatrix<f64> {
        let offs = offsets(sizes);
        let m: usize = sizes.iter().sum();
        let mut x = DMatrix::zeros(m, self.k);
        for (i, rows) in self.labels.iter().enumerate() {
            for (l, &a) in rows.iter().enumerate() {
                x[(offs[i] + a, l)] = 1.0;
            }
        }
        x
    }

    /// Pairwise correspondence block `X_i X_jᵀ`.
    pub fn induced_block(&self, i: usize, j: usize, sizes: &[usize]) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(sizes[i], sizes[j]);
        for (&a, &b) in self.labels[i].iter().zip(&self.labels[j]) {
            p[(a, b)] = 1.0;
        }
        p
    }

    /// `2n×k` matrix of selected coordinates, rows `2i, 2i+1` equal to `C_i X_i`.
    pub fn measurement_matrix(&self, coords: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(2 * self.n(), self.k);
        for (i, rows) in self.labels.iter().enumerate() {
            for (l, &a) in rows.iter().enumerate() {
                m[(2 * i, l)] = coords[i][(0, a)];
                m[(2 * i + 1, l)] = coords[i][(1, a)];
            }
        }
        m
    }

    /// Relabels with `perm[l]` as the new index of label `l`.
    pub fn permute_labels(&self, perm: &[usize]) -> Self {
        let labels = self
            .labels
            .iter()
            .map(|rows| {
                let mut out = vec![0; self.k];
                for (l, &a) in rows.iter().enumerate() {
                    out[perm[l]] = a;
                }
                out
            })
            .collect();
        Self { k: self.k, labels }
    }
}
