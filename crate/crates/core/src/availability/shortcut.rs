//! Gradient-free shortcuts: per-class pixel overwrites and per-class
//! linearly separable patch patterns.

use super::{Mode, PerturbOp, PerturbationSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numcore::RngStream;

/// Standardized mean shift `|class_mean - global_mean| / (global_std + 1e-8)`.
pub fn ops_drift(class_mean: &[f64], global_mean: &[f64], global_std: &[f64]) -> Vec<f64> {
    class_mean
        .iter()
        .zip(global_mean)
        .zip(global_std)
        .map(|((c, g), s)| (c - g).abs() / (s + 1e-8))
        .collect()
}

/// Indices of the `p` largest scores; equal scores favour the lower index.
pub fn top_p_features(scores: &[f64], p: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(p);
    idx.sort_unstable();
    idx
}

/// Per class, overwrites the `p` features of largest drift with 1.0.
pub fn shortcut_pixels(ds: &Dataset, p: usize) -> Result<PerturbationSet> {
    if ds.meta().image_side.is_none() {
        return Err(Error::Capability("pixel shortcuts need an image dataset".into()));
    }
    let d = ds.dim();
    if p == 0 || p > d {
        return Err(Error::Config(format!("pixel count {p} outside [1, {d}]")));
    }
    if ds.is_empty() {
        return Err(Error::Domain("empty dataset".into()));
    }
    let n = ds.len() as f64;
    let mut mean = vec![0.0; d];
    for i in 0..ds.len() {
        for (m, x) in mean.iter_mut().zip(ds.row(i)) {
            *m += x / n;
        }
    }
    let mut std = vec![0.0; d];
    for i in 0..ds.len() {
        for ((s, x), m) in std.iter_mut().zip(ds.row(i)).zip(&mean) {
            *s += (x - m).powi(2) / n;
        }
    }
    std.iter_mut().for_each(|s| *s = s.sqrt());
    let k = ds.num_classes();
    let counts = ds.class_counts();
    let mut class_mean = vec![vec![0.0; d]; k];
    for i in 0..ds.len() {
        let y = ds.labels()[i];
        for (m, x) in class_mean[y].iter_mut().zip(ds.row(i)) {
            *m += x / counts[y] as f64;
        }
    }
    let entries = (0..k)
        .map(|y| {
            let mut mask = vec![0.0; d];
            if counts[y] > 0 {
                for j in top_p_features(&ops_drift(&class_mean[y], &mean, &std), p) {
                    mask[j] = 1.0;
                }
            }
            (y as u64, mask)
        })
        .collect();
    Ok(PerturbationSet {
        mode: Mode::ClassWise,
        budget: 0.0,
        op: PerturbOp::Overwrite {
            value: 1.0,
            max_pixels: p,
        },
        method: "shortcut_pixels".into(),
        entries,
    })
}

/// Per class, a random pattern that is constant on 2x2 patches (images) or
/// per feature otherwise, scaled so its largest entry is exactly `B`.
pub fn shortcut_linear(ds: &Dataset, budget: f64, rng: &RngStream) -> Result<PerturbationSet> {
    if !(budget > 0.0) {
        return Err(Error::Domain(format!("shortcut budget must be > 0, got {budget}")));
    }
    let d = ds.dim();
    let patch_of: Vec<usize> = match ds.meta().image_side {
        Some(side) => {
            let per_row = side.div_ceil(2);
            (0..d).map(|p| (p / side / 2) * per_row + (p % side) / 2).collect()
        }
        None => (0..d).collect(),
    };
    let n_patches = patch_of.iter().max().map_or(0, |m| m + 1);
    let mut r = rng.child("shortcut-linear");
    let entries = (0..ds.num_classes())
        .map(|y| {
            let levels: Vec<f64> = (0..n_patches).map(|_| r.uniform_range(-1.0, 1.0)).collect();
            let peak = levels.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
            let delta = patch_of
                .iter()
                .map(|&q| {
                    let v = levels[q];
                    if v.abs() == peak {
                        budget * v.signum()
                    } else {
                        budget * (v / peak)
                    }
                })
                .collect();
            (y as u64, delta)
        })
        .collect();
    Ok(PerturbationSet {
        mode: Mode::ClassWise,
        budget,
        op: PerturbOp::Additive,
        method: "shortcut_linear".into(),
        entries,
    })
}
