//! Per-image coordinate preconditioning for the geometric term.
//!
//! Each image's candidates are shifted to zero centroid and scaled to a mean
//! distance of √2 from it. A per-image similarity keeps an orthographic
//! measurement matrix at rank ≤ 4, so the low-rank constraint is unaffected.

use nalgebra::{DMatrix, Vector2};

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateFrame {
    /// Candidate coordinates used by the solver.
    pub coords: Vec<DMatrix<f64>>,
    centroids: Vec<Vector2<f64>>,
    scales: Vec<f64>,
}

impl CoordinateFrame {
    /// Normalized frame, or the raw coordinates when `normalize` is false.
    pub fn new(raw: &[DMatrix<f64>], normalize: bool) -> Self {
        if !normalize {
            return Self {
                coords: raw.to_vec(),
                centroids: vec![Vector2::zeros(); raw.len()],
                scales: vec![1.0; raw.len()],
            };
        }
        let mut coords = Vec::with_capacity(raw.len());
        let mut centroids = Vec::with_capacity(raw.len());
        let mut scales = Vec::with_capacity(raw.len());
        for c in raw {
            let p = c.ncols() as f64;
            let centroid = Vector2::new(c.row(0).sum() / p, c.row(1).sum() / p);
            let mut shifted = c.clone();
            for mut col in shifted.column_iter_mut() {
                col -= &centroid;
            }
            let mean_norm = shifted.column_iter().map(|col| col.norm()).sum::<f64>() / p;
            let scale = if mean_norm > 0.0 {
                std::f64::consts::SQRT_2 / mean_norm
            } else {
                1.0
            };
            coords.push(shifted * scale);
            centroids.push(centroid);
            scales.push(scale);
        }
        Self {
            coords,
            centroids,
            scales,
        }
    }

    /// Maps a `2n×k` matrix from the solver frame back to pixels.
    pub fn to_pixels(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = z.clone();
        for (i, (c, s)) in self.centroids.iter().zip(&self.scales).enumerate() {
            for d in 0..2 {
                for v in out.row_mut(2 * i + d).iter_mut() {
                    *v = *v / s + c[d];
                }
            }
        }
        out
    }
}
