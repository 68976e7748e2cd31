//! Latent-space objectives: push `Phi(x + delta)` away from `Phi(x)`
//! (dissimilarization) or pull it toward `Phi(T)` (collision).

use super::{Mode, PerturbOp, PerturbationSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::numcore::rng::keyed_sign;
use crate::numcore::{Graph, Tensor};

fn clamp_rows(ds: &Dataset, delta: &[f64]) -> Tensor {
    let range = ds.meta().range;
    let vals = ds
        .features()
        .values()
        .iter()
        .zip(delta)
        .map(|(x, d)| match range {
            Some((lo, hi)) => (x + d).clamp(lo, hi),
            None => x + d,
        })
        .collect();
    Tensor::matrix(ds.len(), ds.dim(), vals).expect("row shape")
}

/// Per-row `||Phi(x_i) - target_i||^2` and its gradient in `x`.
fn distance_and_grad(clf: &Classifier, x: &Tensor, target: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let mut g = Graph::new();
    let theta = g.leaf(Tensor::vector(clf.params.values().to_vec()));
    let xv = g.leaf(x.clone());
    let (feat, _) = clf.build_graph(&mut g, theta, xv)?;
    let t = g.leaf(target.clone());
    let diff = g.sub(feat, t)?;
    let sq = g.square(diff);
    let per_row: Vec<f64> = {
        let v = g.value(sq);
        (0..v.rows()).map(|i| v.row(i).iter().sum()).collect()
    };
    let total = g.sum(sq);
    let grads = g.backward(total)?;
    Ok((per_row, grads.wrt(&g, xv)))
}

/// Per-row squared feature distance `||Phi(x_i) - target_i||^2`; `target`
/// has one row per example or a single shared row.
pub fn feature_distances(clf: &Classifier, x: &Tensor, target: &Tensor) -> Result<Vec<f64>> {
    let t = broadcast_target(clf, x.rows(), target)?;
    let fx = clf.feature_map(x)?;
    Ok((0..x.rows())
        .map(|i| fx.row(i).iter().zip(t.row(i)).map(|(a, b)| (a - b).powi(2)).sum())
        .collect())
}

fn broadcast_target(clf: &Classifier, n: usize, target: &Tensor) -> Result<Tensor> {
    let f = clf.feature_map(target)?;
    match f.rows() {
        r if r == n => Ok(f),
        1 => Tensor::matrix(n, f.cols(), (0..n).flat_map(|_| f.row(0).iter().copied()).collect()),
        r => Err(Error::Shape(format!("target has {r} rows for {n} examples"))),
    }
}

/// Signed PGD on the feature distance; returns the best iterate per row.
/// Coordinates with an exactly-zero gradient take a per-example keyed sign.
#[allow(clippy::too_many_arguments)]
fn craft(
    ds: &Dataset,
    clf: &Classifier,
    target_features: &Tensor,
    budget: f64,
    steps: usize,
    step_size: f64,
    ascend: bool,
    method: &str,
) -> Result<PerturbationSet> {
    if !(budget >= 0.0) {
        return Err(Error::Domain(format!("budget {budget} < 0")));
    }
    let (n, d) = (ds.len(), ds.dim());
    let mut delta = vec![0.0; n * d];
    let mut best = delta.clone();
    if budget > 0.0 && steps > 0 && n > 0 {
        let dir = if ascend { 1.0 } else { -1.0 };
        let better = |new: f64, old: f64| if ascend { new > old } else { new < old };
        let (mut best_obj, _) = distance_and_grad(clf, &clamp_rows(ds, &delta), target_features)?;
        for step in 0..steps {
            let (_, gx) = distance_and_grad(clf, &clamp_rows(ds, &delta), target_features)?;
            for i in 0..n {
                let id = ds.ids()[i];
                for j in 0..d {
                    let gv = gx.values()[i * d + j];
                    let s = if gv > 0.0 {
                        1.0
                    } else if gv < 0.0 {
                        -1.0
                    } else {
                        keyed_sign(id, (step * d + j) as u64)
                    };
                    let v = &mut delta[i * d + j];
                    *v = (*v + dir * step_size * s).clamp(-budget, budget);
                }
            }
            let (obj, _) = distance_and_grad(clf, &clamp_rows(ds, &delta), target_features)?;
            for i in 0..n {
                if better(obj[i], best_obj[i]) {
                    best_obj[i] = obj[i];
                    best[i * d..(i + 1) * d].copy_from_slice(&delta[i * d..(i + 1) * d]);
                }
            }
        }
    }
    Ok(PerturbationSet {
        mode: Mode::SampleWise,
        budget,
        op: PerturbOp::Additive,
        method: method.into(),
        entries: ds
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (*id, best[i * d..(i + 1) * d].to_vec()))
            .collect(),
    })
}

/// Label-free: ascends `||Phi(x + delta) - Phi(x)||^2` per example.
pub fn feature_dissim(ds: &Dataset, clf: &Classifier, budget: f64, steps: usize, step_size: f64) -> Result<PerturbationSet> {
    let target = clf.feature_map(ds.features())?;
    craft(ds, clf, &target, budget, steps, step_size, true, "feature_dissim")
}

/// Descends `||Phi(x + delta) - Phi(T)||^2`; `target_x` is one shared row or
/// one row per example.
pub fn feature_collide(
    ds: &Dataset,
    clf: &Classifier,
    target_x: &Tensor,
    budget: f64,
    steps: usize,
    step_size: f64,
) -> Result<PerturbationSet> {
    let target = broadcast_target(clf, ds.len(), target_x)?;
    craft(ds, clf, &target, budget, steps, step_size, false, "feature_collide")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::availability::apply;
    use crate::data::make_grid_images;
    use crate::model::{Activation, Arch};
    use crate::numcore::RngStream;

    fn setup() -> (Dataset, Classifier) {
        let ds = make_grid_images(4, 3, 4, &RngStream::new(8, 0)).unwrap();
        let clf = Classifier::init(
            Arch::Mlp {
                hidden: 6,
                activation: Activation::Tanh,
            },
            16,
            3,
            &RngStream::new(8, 1),
        )
        .unwrap();
        (ds, clf)
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn zero_budget_or_zero_steps_give_zero_noise() {
        let (ds, clf) = setup();
        assert_eq!(feature_dissim(&ds, &clf, 0.0, 5, 0.1).unwrap().max_abs(), 0.0);
        assert_eq!(feature_dissim(&ds, &clf, 0.3, 0, 0.1).unwrap().max_abs(), 0.0);
        assert_eq!(feature_collide(&ds, &clf, ds.features(), 0.0, 5, 0.1).unwrap().max_abs(), 0.0);
        assert!(matches!(feature_dissim(&ds, &clf, -1.0, 1, 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn dissimilarization_moves_features_away() {
        let (ds, clf) = setup();
        let ps = feature_dissim(&ds, &clf, 0.2, 10, 0.05).unwrap();
        assert!(ps.max_abs() <= 0.2 + 1e-12);
        let du = apply(&ds, &ps).unwrap();
        let dist = feature_distances(&clf, du.features(), ds.features()).unwrap();
        assert!(mean(&dist) > 0.0);
    }

    #[test]
    fn dissimilarization_ignores_labels() {
        let (ds, clf) = setup();
        let mut labels = ds.labels().to_vec();
        labels.rotate_left(1);
        let shuffled = ds.with_labels(labels).unwrap();
        let a = feature_dissim(&ds, &clf, 0.2, 4, 0.05).unwrap();
        let b = feature_dissim(&shuffled, &clf, 0.2, 4, 0.05).unwrap();
        assert_eq!(a.entries, b.entries);
    }

    #[test]
    fn self_collision_never_moves_away() {
        let (ds, clf) = setup();
        let ps = feature_collide(&ds, &clf, ds.features(), 0.2, 6, 0.05).unwrap();
        let du = apply(&ds, &ps).unwrap();
        let dist = feature_distances(&clf, du.features(), ds.features()).unwrap();
        assert!(dist.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn collision_pulls_toward_the_target() {
        let (ds, clf) = setup();
        let target = Tensor::matrix(1, 16, ds.row(0).to_vec()).unwrap();
        let before = mean(&feature_distances(&clf, ds.features(), &target).unwrap());
        let ps = feature_collide(&ds, &clf, &target, 0.2, 10, 0.05).unwrap();
        let du = apply(&ds, &ps).unwrap();
        let after = mean(&feature_distances(&clf, du.features(), &target).unwrap());
        assert!(after < before, "{after} >= {before}");
    }
}
