//! Planted multi-image problems with known ground truth.
//!
//! A rigid scene of `u` points in the unit cube `[-0.5, 0.5]³` is viewed by
//! `n` random orthographic cameras. Coordinates are in scene units, so the
//! noise level `sigma` is relative to a scene of extent 1.

use nalgebra::{DMatrix, Matrix2x3, Matrix3, Vector2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::frontend::scores_from_descriptors;
use crate::model::{FeatureSet, PairwiseScores, ProblemInstance, SelectionLabeling};
use crate::solver::{coordinate_frame, discrete_objective_in};

/// Largest labeling count `brute_force_solve` will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Number of images.
    pub n: usize,
    /// Number of scene points `u`, all visible in every image.
    pub universe: usize,
    /// Outlier candidates per image.
    pub outliers: usize,
    /// Standard deviation of the inlier coordinate noise.
    pub sigma: f64,
    /// Fraction of each block's true matches that are reassigned.
    pub corruption: f64,
    pub seed: u64,
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParameter("need at least 2 images".into()));
        }
        if self.universe == 0 {
            return Err(Error::InvalidParameter("universe must be non-empty".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma = {}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.corruption) {
            return Err(Error::InvalidParameter(format!(
                "corruption rate {} outside [0, 1]",
                self.corruption
            )));
        }
        Ok(())
    }
}

/// Orthographic camera `x = R p + t`, with `R` two orthonormal rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub rotation: Matrix2x3<f64>,
    pub translation: Vector2<f64>,
}

#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub instance: ProblemInstance,
    /// `X*` with `k = u`; label `l` is scene point `l`.
    pub ground_truth: SelectionLabeling,
    pub truth: GroundTruth,
    /// 3×u scene points.
    pub scene: DMatrix<f64>,
    pub cameras: Vec<Camera>,
    pub params: SynthParams,
}

impl PlantedInstance {
    /// Noiseless `2n×u` measurement matrix of the scene.
    pub fn true_measurement(&self) -> DMatrix<f64> {
        let u = self.scene.ncols();
        let mut m = DMatrix::zeros(2 * self.cameras.len(), u);
        for (i, cam) in self.cameras.iter().enumerate() {
            for l in 0..u {
                let p = cam.rotation * self.scene.fixed_view::<3, 1>(0, l) + cam.translation;
                m[(2 * i, l)] = p[0];
                m[(2 * i + 1, l)] = p[1];
            }
        }
        m
    }

    /// Fraction of ground-truth correspondences missing from `W`.
    pub fn corrupted_fraction(&self) -> f64 {
        let sizes = self.instance.sizes();
        let (mut missing, mut total) = (0usize, 0usize);
        for i in 0..sizes.len() {
            for j in i + 1..sizes.len() {
                let block = self.instance.scores().block(i, j);
                for (&a, &b) in self.ground_truth.labels(i).iter().zip(self.ground_truth.labels(j)) {
                    total += 1;
                    if block[(a, b)] != 1.0 {
                        missing += 1;
                    }
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            missing as f64 / total as f64
        }
    }

    /// The same scene with `d`-dimensional descriptors and `W` rebuilt by
    /// pairwise linear matching of them. Every scene point gets a random unit
    /// base vector; inliers see it with Gaussian noise of std `noise` before
    /// renormalizing, outliers get unrelated random unit vectors.
    pub fn with_descriptor_matching(&self, dim: usize, noise: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("descriptor dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_unit_columns(&mut rng, dim, self.scene.ncols());
        let mut features = Vec::with_capacity(self.truth.n());
        for (f, labels) in self.instance.features().iter().zip(&self.truth.labels) {
            let mut desc = DMatrix::zeros(dim, labels.len());
            for (a, &l) in labels.iter().enumerate() {
                let mut col = if l >= 0 {
                    let mut v = base.column(l as usize).into_owned();
                    for x in v.iter_mut() {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        *x += noise * e;
                    }
                    v
                } else {
                    random_unit_columns(&mut rng, dim, 1).column(0).into_owned()
                };
                col /= col.norm();
                desc.set_column(a, &col);
            }
            features.push(FeatureSet::new(f.image_id.clone(), f.coordinates.clone(), Some(desc))?);
        }
        let scores = scores_from_descriptors(&features)?;
        Ok(Self {
            instance: ProblemInstance::new(features, scores)?,
            ..self.clone()
        })
    }
}

fn random_unit_columns(rng: &mut ChaCha8Rng, d: usize, p: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(d, p, |_, _| StandardNormal.sample(rng));
    for mut c in m.column_iter_mut() {
        let norm = c.norm();
        if norm > 0.0 {
            c /= norm;
        } else {
            c[0] = 1.0;
        }
    }
    m
}

fn random_camera(rng: &mut ChaCha8Rng) -> Camera {
    let g = Matrix3::from_fn(|_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    Camera {
        rotation: Matrix2x3::from_fn(|r, c| q[(r, c)]),
        translation: Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
    }
}

/// Samples a planted instance; identical parameters give identical output.
pub fn generate(params: &SynthParams) -> Result<PlantedInstance> {
    params.validate()?;
    let SynthParams {
        n,
        universe: u,
        outliers,
        sigma,
        corruption,
        seed,
    } = *params;
    let p = u + outliers;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let scene = DMatrix::from_fn(3, u, |_, _| rng.random_range(-0.5..0.5));
    let cameras: Vec<Camera> = (0..n).map(|_| random_camera(&mut rng)).collect();

    let mut features = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    for (i, cam) in cameras.iter().enumerate() {
        let clean = DMatrix::from_fn(2, u, |r, l| {
            (cam.rotation * scene.fixed_view::<3, 1>(0, l) + cam.translation)[r]
        });
        let lo = Vector2::new(clean.row(0).min(), clean.row(1).min());
        let hi = Vector2::new(clean.row(0).max(), clean.row(1).max());
        let pad = Vector2::from_fn(|r, _| if hi[r] - lo[r] < 1e-9 { 0.5 } else { 0.0 });
        let (lo, hi) = (lo - pad, hi + pad);

        // candidate slot -> universe label, outliers as -1
        let mut order: Vec<i64> = (0..u as i64).chain(std::iter::repeat_n(-1, outliers)).collect();
        order.shuffle(&mut rng);
        let mut coords = DMatrix::zeros(2, p);
        let mut pos = vec![0usize; u];
        for (a, &l) in order.iter().enumerate() {
            if l >= 0 {
                let l = l as usize;
                pos[l] = a;
                for r in 0..2 {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    coords[(r, a)] = clean[(r, l)] + sigma * noise;
                }
            } else {
                for r in 0..2 {
                    coords[(r, a)] = rng.random_range(lo[r]..=hi[r]);
                }
            }
        }
        features.push(FeatureSet::new(format!("img{i:03}"), coords, None)?);
        truth.push(order);
        positions.push(pos);
    }

    let mut scores = PairwiseScores::new(vec![p; n]);
    for i in 0..n {
        for j in i + 1..n {
            let block = corrupted_block(&positions[i], &positions[j], p, corruption, &mut rng);
            scores.insert(i, j, block)?;
        }
    }

    let ground_truth = SelectionLabeling::new(u, positions, &vec![p; n])?;
    Ok(PlantedInstance {
        instance: ProblemInstance::new(features, scores)?,
        ground_truth,
        truth: GroundTruth { labels: truth },
        scene,
        cameras,
        params: params.clone(),
    })
}

/// True matches `pos_i[l] ↔ pos_j[l]` with a random subset of
/// `rate·u` of them (fractional part by coin flip) moved to other columns.
/// A moved match lands on a column that is free or was vacated by another
/// moved match, never on its own; if no such column remains it is dropped.
fn corrupted_block(
    pos_i: &[usize],
    pos_j: &[usize],
    p: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let u = pos_i.len();
    let exact = rate * u as f64;
    let mut count = exact.floor() as usize;
    if rng.random_bool(exact - exact.floor()) {
        count += 1;
    }
    let count = count.min(u);

    let mut labels: Vec<usize> = (0..u).collect();
    labels.shuffle(rng);
    let (moved, kept) = labels.split_at(count);

    let mut taken = vec![false; p];
    for &l in kept {
        taken[pos_j[l]] = true;
    }
    let mut block = DMatrix::zeros(p, p);
    for &l in kept {
        block[(pos_i[l], pos_j[l])] = 1.0;
    }
    for &l in moved {
        let options: Vec<usize> = (0..p).filter(|&b| !taken[b] && b != pos_j[l]).collect();
        if let Some(&b) = options.choose(rng) {
            taken[b] = true;
            block[(pos_i[l], b)] = 1.0;
        }
    }
    block
}

/// Number of labelings `Π_i p_i! / (p_i − k)!`.
pub fn labeling_count(sizes: &[usize], k: usize) -> f64 {
    sizes
        .iter()
        .map(|&p| {
            if k > p {
                0.0
            } else {
                ((p - k + 1)..=p).map(|v| v as f64).product::<f64>()
            }
        })
        .product()
}

/// All ordered selections of `k` distinct rows out of `p`.
fn arrangements(p: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(p: usize, k: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for a in 0..p {
            if !used[a] {
                used[a] = true;
                cur.push(a);
                rec(p, k, cur, used, out);
                cur.pop();
                used[a] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(p, k, &mut Vec::with_capacity(k), &mut vec![false; p], &mut out);
    out
}

/// Global minimizer of the discrete objective by enumeration. Ties keep the
/// first labeling in lexicographic order of per-image arrangements.
pub fn brute_force_solve(
    instance: &ProblemInstance,
    config: &SolverConfig,
) -> Result<(SelectionLabeling, f64)> {
    instance.check_k(config.k)?;
    let sizes = instance.sizes();
    let count = labeling_count(&sizes, config.k);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::InstanceTooLarge(count));
    }
    let options: Vec<Vec<Vec<usize>>> = sizes.iter().map(|&p| arrangements(p, config.k)).collect();
    let frame = coordinate_frame(instance, config);
    let mut digits = vec![0usize; sizes.len()];
    let mut best: Option<(SelectionLabeling, f64)> = None;
    loop {
        let labels: Vec<Vec<usize>> = digits
            .iter()
            .zip(&options)
            .map(|(&d, o)| o[d].clone())
            .collect();
        let x = SelectionLabeling::new(config.k, labels, &sizes)?;
        let value = discrete_objective_in(instance, &x, &frame, config);
        if best.as_ref().is_none_or(|b| value < b.1) {
            best = Some((x, value));
        }
        // odometer with the last image varying fastest
        let mut i = digits.len();
        loop {
            if i == 0 {
                return Ok(best.expect("at least one labeling"));
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < options[i].len() {
                break;
            }
            digits[i] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::rank_diagnostic;
    use crate::model::assemble_block;

    fn params(n: usize, u: usize, outliers: usize, sigma: f64, corruption: f64, seed: u64) -> SynthParams {
        SynthParams {
            n,
            universe: u,
            outliers,
            sigma,
            corruption,
            seed,
        }
    }

    #[test]
    fn noiseless_scores_are_planted_product() {
        let pl = generate(&params(4, 5, 0, 0.0, 0.0, 7)).unwrap();
        let xs = pl.ground_truth.stacked(&pl.instance.sizes());
        let w = assemble_block(pl.instance.scores());
        assert_eq!(w, &xs * xs.transpose());
        assert_eq!(pl.corrupted_fraction(), 0.0);

        // outlier rows of X* are empty, so only the off-diagonal blocks agree
        let pl = generate(&params(4, 5, 3, 0.0, 0.0, 7)).unwrap();
        let sizes = pl.instance.sizes();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let b = pl.ground_truth.induced_block(i, j, &sizes);
                    assert_eq!(pl.instance.scores().block(i, j), b);
                }
            }
        }
    }

    #[test]
    fn noiseless_measurement_has_rank_four() {
        for seed in 0..5 {
            let pl = generate(&params(6, 12, 4, 0.0, 0.3, seed)).unwrap();
            let sizes = pl.instance.sizes();
            let coords: Vec<DMatrix<f64>> =
                pl.instance.features().iter().map(|f| f.coordinates.clone()).collect();
            let m = pl.ground_truth.measurement_matrix(&coords);
            assert!((&m - pl.true_measurement()).amax() < 1e-12);
            let sv = rank_diagnostic(&m, 4).singular_values;
            assert!(sv[4] / sv[0] < 1e-10, "seed {seed}: {sv:?}");
            assert_eq!(sizes, vec![16; 6]);
        }
    }

    #[test]
    fn ground_truth_sidecar_agrees_with_labeling() {
        let pl = generate(&params(3, 4, 2, 0.01, 0.0, 3)).unwrap();
        for i in 0..3 {
            for (l, &a) in pl.ground_truth.labels(i).iter().enumerate() {
                assert_eq!(pl.truth.labels[i][a], l as i64);
            }
            assert_eq!(pl.truth.labels[i].iter().filter(|&&v| v < 0).count(), 2);
        }
    }

    #[test]
    fn corruption_rate_is_met() {
        let mut total = 0.0;
        for seed in 0..10 {
            let pl = generate(&params(10, 10, 10, 0.0, 0.2, seed)).unwrap();
            let f = pl.corrupted_fraction();
            assert!((f - 0.2).abs() <= 0.05, "seed {seed}: {f}");
            total += f;
        }
        assert!((total / 10.0 - 0.2).abs() < 0.01);
    }

    #[test]
    fn corrupted_blocks_stay_partial_permutations() {
        let pl = generate(&params(5, 6, 0, 0.0, 0.5, 11)).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let b = pl.instance.scores().block(i, j);
                assert!(b.row_iter().all(|r| r.sum() <= 1.0));
                assert!(b.column_iter().all(|c| c.sum() <= 1.0));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&params(4, 5, 5, 0.02, 0.2, 9)).unwrap();
        let b = generate(&params(4, 5, 5, 0.02, 0.2, 9)).unwrap();
        assert_eq!(a.instance.features(), b.instance.features());
        assert_eq!(a.instance.scores(), b.instance.scores());
        assert_eq!(a.truth, b.truth);
        let c = generate(&params(4, 5, 5, 0.02, 0.2, 10)).unwrap();
        assert_ne!(a.instance.features(), c.instance.features());
    }

    #[test]
    fn invalid_parameters() {
        assert!(generate(&params(1, 5, 0, 0.0, 0.0, 0)).is_err());
        assert!(generate(&params(3, 0, 2, 0.0, 0.0, 0)).is_err());
        assert!(generate(&params(3, 2, 2, -1.0, 0.0, 0)).is_err());
        assert!(generate(&params(3, 2, 2, 0.0, 1.5, 0)).is_err());
    }

    #[test]
    fn descriptor_matching_recovers_inliers() {
        let pl = generate(&params(3, 6, 0, 0.0, 0.0, 2)).unwrap();
        let d = pl.with_descriptor_matching(32, 0.01, 5).unwrap();
        let xs = pl.ground_truth.stacked(&pl.instance.sizes());
        assert_eq!(assemble_block(d.instance.scores()), &xs * xs.transpose());
    }

    #[test]
    fn brute_force_finds_planted_optimum() {
        let cfg = SolverConfig {
            k: 3,
            ..SolverConfig::default()
        };
        let pl = generate(&params(3, 3, 0, 0.0, 0.0, 4)).unwrap();
        let (x, value) = brute_force_solve(&pl.instance, &cfg).unwrap();
        assert!(value.abs() < 1e-12);
        // labels are only defined up to a common permutation
        assert_eq!(crate::eval::recall(&x, &pl.truth).value, 1.0);

        let pl = generate(&params(3, 3, 1, 0.0, 0.0, 4)).unwrap();
        let (x, _) = brute_force_solve(&pl.instance, &cfg).unwrap();
        assert_eq!(crate::eval::recall(&x, &pl.truth).value, 1.0);
        assert_eq!(crate::eval::precision(&x, &pl.truth).value, 1.0);
    }

    #[test]
    fn brute_force_two_by_two_by_hand() {
        // W_12 = [[0, 1], [0, 0]], so ‖W‖² = 6. With k = 1 the labeling (a, b)
        // stacks x = e_a ⊕ e_b and ¼‖W − xxᵀ‖² = ¼(6 − 2(2 + 2W_ab) + 4)
        // = 1.5 − W_ab: 0.5 for the matched pair (0, 1), 1.5 for the others.
        let f = |x: f64| FeatureSet::new("a", DMatrix::from_row_slice(2, 2, &[0., x, 0., 1.]), None).unwrap();
        let mut scores = PairwiseScores::new(vec![2, 2]);
        scores
            .insert(0, 1, DMatrix::from_row_slice(2, 2, &[0., 1., 0., 0.]))
            .unwrap();
        let inst = ProblemInstance::new(vec![f(1.0), f(2.0)], scores).unwrap();
        let cfg = SolverConfig {
            k: 1,
            lambda: 0.0,
            ..SolverConfig::default()
        };
        let (x, value) = brute_force_solve(&inst, &cfg).unwrap();
        assert_eq!(x.all_labels(), &[vec![0], vec![1]]);
        assert!((value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn brute_force_rejects_large_instances() {
        let pl = generate(&params(4, 8, 4, 0.0, 0.0, 1)).unwrap();
        let cfg = SolverConfig::with_k(8);
        assert!(matches!(
            brute_force_solve(&pl.instance, &cfg),
            Err(Error::InstanceTooLarge(_))
        ));
        assert_eq!(labeling_count(&[3, 3, 3], 2), 216.0);
    }
}
