//! Affine structure from motion by rank-3 factorization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::svd;

/// Relative threshold below which the third singular value of the centered
/// measurements counts as zero.
const DEGENERATE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AffineReconstruction {
    /// 2n×3 stacked affine cameras.
    pub motion: DMatrix<f64>,
    /// 3×k points.
    pub shape: DMatrix<f64>,
    /// Per-row means removed before factorizing.
    pub translations: DVector<f64>,
    /// `‖centered − motion·shape‖_F / √(2nk)`.
    pub reprojection_rms: f64,
    /// Centered measurements have rank below 3.
    pub degenerate: bool,
    /// Singular values of the centered measurements, largest first.
    pub singular_values: Vec<f64>,
}

/// Factorizes a `2n×k` measurement matrix into motion and shape.
pub fn affine_factorize(m: &DMatrix<f64>) -> Result<AffineReconstruction> {
    let (rows, k) = m.shape();
    if rows % 2 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "measurement matrix has {rows} rows, expected 2 per image"
        )));
    }
    if rows < 4 {
        return Err(Error::InvalidParameter(format!(
            "reconstruction needs at least 2 images, got {}",
            rows / 2
        )));
    }
    if k < 4 {
        return Err(Error::TooFewFeatures(k));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("measurement matrix"));
    }

    let translations = DVector::from_fn(rows, |r, _| m.row(r).mean());
    let mut centered = m.clone();
    for (r, mut row) in centered.row_iter_mut().enumerate() {
        row.add_scalar_mut(-translations[r]);
    }

    let d = svd(&centered);
    let singular_values: Vec<f64> = d.singular_values.iter().copied().collect();

    let mut motion = DMatrix::zeros(rows, 3);
    let mut shape = DMatrix::zeros(3, k);
    for (c, &s) in singular_values.iter().take(3).enumerate() {
        motion.set_column(c, &(d.u.column(c) * s.sqrt()));
        shape.set_row(c, &(d.v_t.row(c) * s.sqrt()));
    }
    let reprojection_rms = (&centered - &motion * &shape).norm() / ((rows * k) as f64).sqrt();
    let degenerate = singular_values.len() < 3
        || singular_values[2] <= DEGENERATE_TOL * singular_values[0].max(f64::MIN_POSITIVE);

    Ok(AffineReconstruction {
        motion,
        shape,
        translations,
        reprojection_rms,
        degenerate,
        singular_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SynthParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn planted_m(n: usize, u: usize, seed: u64) -> DMatrix<f64> {
        generate(&SynthParams {
            n,
            universe: u,
            outliers: 0,
            sigma: 0.0,
            corruption: 0.0,
            seed,
        })
        .unwrap()
        .true_measurement()
    }

    #[test]
    fn noiseless_rigid_is_exact() {
        for seed in 0..5 {
            let r = affine_factorize(&planted_m(6, 12, seed)).unwrap();
            assert!(r.reprojection_rms < 1e-9, "{}", r.reprojection_rms);
            assert!(!r.degenerate);
        }
    }

    #[test]
    fn noise_envelope() {
        // The rank-3 fit absorbs part of i.i.d. noise, so the residual rms
        // sits below σ; 1.5σ is the bound asserted per seed.
        let sigma = 0.01;
        for seed in 0..20 {
            let clean = planted_m(8, 15, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let noisy = clean.map(|v| {
                let e: f64 = StandardNormal.sample(&mut rng);
                v + sigma * e
            });
            let r = affine_factorize(&noisy).unwrap();
            assert!(r.reprojection_rms <= 1.5 * sigma, "seed {seed}: {}", r.reprojection_rms);
            assert!(r.reprojection_rms > 0.3 * sigma);
        }
    }

    #[test]
    fn residual_matches_discarded_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::from_fn(8, 6, |_, _| StandardNormal.sample(&mut rng));
        let r = affine_factorize(&m).unwrap();
        let tail: f64 = r.singular_values.iter().skip(3).map(|s| s * s).sum();
        let residual_sq = r.reprojection_rms.powi(2) * 48.0;
        assert!((residual_sq - tail).abs() < 1e-9 * tail.max(1.0));

        // translations are the row means
        for row in 0..8 {
            assert!((r.translations[row] - m.row(row).mean()).abs() < 1e-12);
        }
    }

    #[test]
    fn shapes_agree_up_to_linear_map() {
        let m = planted_m(5, 10, 8);
        let a = affine_factorize(&m).unwrap();
        // an independently scaled copy of the measurements gives another
        // factorization; its shape must be a linear image of the first
        let b = affine_factorize(&(m.clone() * 3.0)).unwrap();
        let sa = a.shape.transpose();
        let sb = b.shape.transpose();
        let sa_svd = svd(&sa);
        let map = DMatrix::from_fn(3, 3, |r, c| sa_svd.solve(&sb.column(c).into_owned(), 1e-12)[r]);
        let residual = (&sa * &map - &sb).norm();
        assert!(residual < 1e-6, "{residual}");

        // and reprojection is unchanged under any invertible remix
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.0, 2.0, 0.1, 0.3, 0.0, 1.0]);
        let ginv = g.clone().try_inverse().unwrap();
        let remixed = (&a.motion * &g) * (&ginv * &a.shape);
        assert!((remixed - &a.motion * &a.shape).amax() < 1e-9);
    }

    #[test]
    fn rejects_small_inputs() {
        assert_eq!(affine_factorize(&DMatrix::zeros(6, 3)), Err(Error::TooFewFeatures(3)));
        assert!(affine_factorize(&DMatrix::zeros(2, 5)).is_err());
        assert!(affine_factorize(&DMatrix::zeros(5, 5)).is_err());
    }

    #[test]
    fn planar_scene_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let motion = DMatrix::<f64>::from_fn(6, 2, |_, _| StandardNormal.sample(&mut rng));
        let shape = DMatrix::<f64>::from_fn(2, 7, |_, _| StandardNormal.sample(&mut rng));
        let r = affine_factorize(&(motion * shape)).unwrap();
        assert!(r.degenerate);
    }
}
