//! Synthetic corpora: Gaussian blobs and small class-templated images.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::numcore::{RngStream, Tensor};

/// K unit-covariance Gaussian clusters whose centers sit on distinct vertices
/// of a hypercube with edge `separation`, so centers are at least
/// `separation` apart.
pub fn make_blobs(n_per_class: usize, k: usize, d: usize, separation: f64, rng: &RngStream) -> Result<Dataset> {
    if n_per_class < 1 || k < 2 || d < 2 || !(separation > 0.0) {
        return Err(Error::Config(format!(
            "make_blobs needs n >= 1, K >= 2, d >= 2, separation > 0 (got {n_per_class}, {k}, {d}, {separation})"
        )));
    }
    let vertex_bits = d.min(62) as u32;
    if (k as u128) > (1u128 << vertex_bits) {
        return Err(Error::Config(format!(
            "cannot place {k} separated centers on a {d}-cube"
        )));
    }
    let mut crng = rng.child("blob-centers");
    let mut used = BTreeSet::new();
    let mut centers = Vec::with_capacity(k);
    let mask = (1u64 << vertex_bits) - 1;
    while centers.len() < k {
        let v = crng.next_u64() & mask;
        if used.insert(v) {
            let c: Vec<f64> = (0..d)
                .map(|j| {
                    let bit = if j < vertex_bits as usize { (v >> j) & 1 } else { 0 };
                    separation * (bit as f64 - 0.5)
                })
                .collect();
            centers.push(c);
        }
    }
    let mut srng = rng.child("blob-samples");
    let n = n_per_class * k;
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n_per_class {
        for (y, c) in centers.iter().enumerate() {
            for cj in c {
                values.push(cj + srng.standard_normal());
            }
            labels.push(y);
        }
    }
    Dataset::new(
        Tensor::matrix(n, d, values)?,
        labels,
        (0..n as u64).collect(),
        DatasetMeta {
            num_classes: k,
            image_side: None,
            range: None,
        },
    )
}

/// Knobs for [`make_grid_images_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub side: usize,
    /// Peak-to-peak amplitude of the class template around mid-gray.
    pub contrast: f64,
    /// Per-pixel Gaussian noise standard deviation.
    pub noise: f64,
}

impl GridSpec {
    pub fn new(side: usize) -> Self {
        Self {
            side,
            contrast: 0.5,
            noise: 0.3,
        }
    }
}

/// `side x side` single-channel images in `[0, 1]` built from a per-class
/// low-frequency template plus pixel noise.
pub fn make_grid_images(n_per_class: usize, k: usize, side: usize, rng: &RngStream) -> Result<Dataset> {
    make_grid_images_with(n_per_class, k, &GridSpec::new(side), rng)
}

pub fn make_grid_images_with(n_per_class: usize, k: usize, spec: &GridSpec, rng: &RngStream) -> Result<Dataset> {
    let side = spec.side;
    if side < 4 || n_per_class < 1 || k < 2 || spec.contrast < 0.0 || spec.noise < 0.0 {
        return Err(Error::Config(format!(
            "make_grid_images needs side >= 4, n >= 1, K >= 2 and non-negative contrast/noise (got side {side})"
        )));
    }
    let d = side * side;
    let mut trng = rng.child("grid-templates");
    let templates: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let waves: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        trng.below(3) as f64,
                        trng.below(3) as f64,
                        trng.uniform_range(0.0, std::f64::consts::TAU),
                        trng.uniform_range(0.5, 1.0),
                    )
                })
                .collect();
            let mut t: Vec<f64> = (0..d)
                .map(|p| {
                    let (u, v) = ((p / side) as f64, (p % side) as f64);
                    waves
                        .iter()
                        .map(|(fu, fv, ph, a)| {
                            a * (std::f64::consts::TAU * (fu * u + fv * v) / side as f64 + ph).cos()
                        })
                        .sum()
                })
                .collect();
            let m = t.iter().sum::<f64>() / d as f64;
            t.iter_mut().for_each(|x| *x -= m);
            let peak = t.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-12);
            t.iter_mut().for_each(|x| *x /= peak);
            t
        })
        .collect();
    let mut srng = rng.child("grid-samples");
    let n = n_per_class * k;
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n_per_class {
        for (y, t) in templates.iter().enumerate() {
            for tp in t {
                let v = 0.5 + 0.5 * spec.contrast * tp + spec.noise * srng.standard_normal();
                values.push(v.clamp(0.0, 1.0));
            }
            labels.push(y);
        }
    }
    Dataset::new(
        Tensor::matrix(n, d, values)?,
        labels,
        (0..n as u64).collect(),
        DatasetMeta {
            num_classes: k,
            image_side: Some(side),
            range: Some((0.0, 1.0)),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_sizes_and_determinism() {
        let r = RngStream::new(1, 0);
        let ds = make_blobs(1, 3, 2, 4.0, &r).unwrap();
        assert_eq!(ds.len(), 3);
        let a = make_blobs(20, 4, 5, 3.0, &r).unwrap();
        let b = make_blobs(20, 4, 5, 3.0, &r).unwrap();
        assert_eq!(a.features(), b.features());
        assert!(a.is_complete());
    }

    #[test]
    fn blob_placement_limit() {
        let r = RngStream::new(1, 0);
        assert!(matches!(make_blobs(5, 5, 2, 1.0, &r), Err(Error::Config(_))));
        assert!(make_blobs(5, 4, 2, 1.0, &r).is_ok());
        assert!(make_blobs(0, 2, 2, 1.0, &r).is_err());
        assert!(make_blobs(1, 2, 2, 0.0, &r).is_err());
    }

    #[test]
    fn blob_centers_are_separated() {
        let r = RngStream::new(8, 2);
        let sep = 2.5;
        let ds = make_blobs(400, 6, 4, sep, &r).unwrap();
        let d = ds.dim();
        let mut means = vec![vec![0.0; d]; 6];
        for i in 0..ds.len() {
            for j in 0..d {
                means[ds.labels()[i]][j] += ds.row(i)[j] / 400.0;
            }
        }
        for a in 0..6 {
            for b in a + 1..6 {
                let dist: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                // Sample means carry ~sqrt(2d/400) ~ 0.14 of noise.
                assert!(dist > sep - 0.6, "classes {a},{b}: {dist}");
            }
        }
    }

    #[test]
    fn grid_images_shape_and_range() {
        let r = RngStream::new(3, 0);
        let ds = make_grid_images(5, 4, 8, &r).unwrap();
        assert_eq!(ds.features().shape(), &[20, 64]);
        assert!(ds.features().values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(ds.meta().image_side, Some(8));
        assert!(make_grid_images(5, 4, 3, &r).is_err());
    }
}
