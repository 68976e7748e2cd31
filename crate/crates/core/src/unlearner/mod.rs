//! Unlearning algorithms: retraining, fine-tuning, gradient ascent,
//! influence updates and certified noisy fine-tuning.

pub mod certified;
pub mod hessian;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{Arch, Classifier, LossKind, LossSpec};
use crate::numcore::{ParameterVector, RngStream};
use crate::trainer::{retrain_from_scratch, train, TrainConfig};

pub use certified::{
    cert_sigma, cert_sigma_sq, certified_descent, indistinguishability_check, indistinguishable_probs, solve_steps,
    unlearn_certified, CertConfig, CertTrace, IndistinguishabilityResult, PrivacyBudget,
};
pub use hessian::{exact_hessian, solve_damped, WoodFisher, EXACT_HESSIAN_MAX_PARAMS};

/// Finite-difference step for the dense Hessian.
pub const HESSIAN_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HessianMode {
    Exact {
        #[serde(default = "default_damping")]
        damping: f64,
    },
    Woodfisher {
        damping: f64,
    },
}

fn default_damping() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "UPPERCASE")]
pub enum UnlearnMethod {
    Rt,
    Ft { epochs: usize, lr: f64 },
    Ga { epochs: usize, lr: f64 },
    If { alpha: f64, hessian: HessianMode },
    Cert(CertConfig),
}

impl UnlearnMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            UnlearnMethod::Rt => "RT",
            UnlearnMethod::Ft { .. } => "FT",
            UnlearnMethod::Ga { .. } => "GA",
            UnlearnMethod::If { .. } => "IF",
            UnlearnMethod::Cert(_) => "CERT",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            UnlearnMethod::Ft { lr, .. } | UnlearnMethod::Ga { lr, .. } if !(lr >= 0.0) => {
                Err(Error::Config(format!("unlearning lr {lr} < 0")))
            }
            UnlearnMethod::If { alpha, hessian } => {
                if !(alpha > 0.0) {
                    return Err(Error::Config(format!("IF alpha must be > 0, got {alpha}")));
                }
                match hessian {
                    HessianMode::Woodfisher { damping } | HessianMode::Exact { damping } if !(damping > 0.0) => {
                        Err(Error::Config(format!("Hessian damping must be > 0, got {damping}")))
                    }
                    _ => Ok(()),
                }
            }
            UnlearnMethod::Cert(c) => c.validate(),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    #[serde(flatten)]
    pub method: UnlearnMethod,
    #[serde(default)]
    pub seed: u64,
}

/// Minibatch SGD on the retain set, using `template` for everything except
/// the epoch count, learning rate and seed.
pub fn unlearn_ft(clf: &Classifier, d_r: &Dataset, epochs: usize, lr: f64, seed: u64, template: &TrainConfig) -> Result<Classifier> {
    if d_r.is_empty() {
        return Err(Error::Domain("fine-tuning needs a non-empty retain set".into()));
    }
    let cfg = TrainConfig {
        epochs,
        lr,
        seed,
        ..*template
    };
    Ok(train(clf, d_r, &cfg)?.0)
}

/// `theta <- theta + lr * grad`, once per entry of `batches`.
pub fn gradient_ascent<F>(theta: &ParameterVector, lr: f64, steps: usize, mut grad: F) -> Result<ParameterVector>
where
    F: FnMut(usize, &ParameterVector) -> Result<ParameterVector>,
{
    let mut t = theta.clone();
    for s in 0..steps {
        let g = grad(s, &t)?;
        t = t.axpy(lr, &g)?;
        if !t.all_finite() {
            return Err(Error::Numeric("gradient ascent diverged".into()));
        }
    }
    Ok(t)
}

/// Ascent on the data loss of the forget set, in shuffled minibatches.
pub fn unlearn_ga(
    clf: &Classifier,
    d_f: &Dataset,
    epochs: usize,
    lr: f64,
    seed: u64,
    batch_size: usize,
    kind: LossKind,
) -> Result<Classifier> {
    if d_f.is_empty() {
        return Err(Error::Domain("gradient ascent needs a non-empty forget set".into()));
    }
    let bs = batch_size.max(1);
    let spec = LossSpec { kind, weight_decay: 0.0 };
    let mut r = RngStream::new(seed, 0).child("ga-shuffle");
    let mut batches: Vec<Vec<usize>> = Vec::new();
    for _ in 0..epochs {
        batches.extend(r.permutation(d_f.len()).chunks(bs).map(<[usize]>::to_vec));
    }
    let theta = gradient_ascent(&clf.params, lr, batches.len(), |s, t| {
        let m = clf.with_params(t.clone())?;
        Ok(m.loss_and_grad(&d_f.select(&batches[s]), &spec)?.1)
    })?;
    clf.with_params(theta)
}

/// Influence update `theta - alpha H^-1 g` with `g = -(n_f / n_r) grad J(theta; D_f)`
/// and `H` the Hessian of the full objective on `d_ref` (defaults to `d_r`).
/// On a quadratic objective at its minimizer, `alpha = 1` lands exactly on
/// the retain-set minimizer.
#[allow(clippy::too_many_arguments)]
pub fn if_update(
    clf: &Classifier,
    d_f: &Dataset,
    d_r: &Dataset,
    alpha: f64,
    mode: HessianMode,
    spec: &LossSpec,
    d_ref: Option<&Dataset>,
    exec: Exec,
) -> Result<Classifier> {
    if d_f.is_empty() {
        return Ok(clf.clone());
    }
    if d_r.is_empty() {
        return Err(Error::Domain("influence update needs a non-empty retain set".into()));
    }
    let d_ref = d_ref.unwrap_or(d_r);
    let (_, gf) = clf.loss_and_grad(d_f, spec)?;
    let w = -(d_f.len() as f64) / (d_r.len() as f64);
    let g: Vec<f64> = gf.values().iter().map(|v| w * v).collect();
    let step = match mode {
        HessianMode::Exact { damping } => {
            let h = exact_hessian(clf, d_ref, spec, HESSIAN_FD_STEP, exec)?;
            solve_damped(&h, &g, damping)?
        }
        HessianMode::Woodfisher { damping } => {
            let grads: Vec<Vec<f64>> = clf
                .per_sample_grads(d_ref, spec, exec)?
                .into_iter()
                .map(|p| p.values().to_vec())
                .collect();
            WoodFisher::build(&grads, damping)?.apply(&g)
        }
    };
    let delta = ParameterVector::new(step, clf.params.layout().clone())?;
    let theta = clf.params.axpy(-alpha, &delta)?;
    if !theta.all_finite() {
        return Err(Error::Numeric("influence update produced non-finite weights".into()));
    }
    clf.with_params(theta)
}

/// Everything a method may need besides the model.
pub struct UnlearnInputs<'a> {
    pub arch: Arch,
    pub d_f: &'a Dataset,
    pub d_r: &'a Dataset,
    /// The victim's training recipe; RT reuses it verbatim.
    pub train: &'a TrainConfig,
    pub exec: Exec,
}

/// Dispatches on the method; returns the model and, for CERT, sigma.
pub fn unlearn(clf: &Classifier, inputs: &UnlearnInputs<'_>, cfg: &UnlearnConfig) -> Result<(Classifier, Option<f64>)> {
    cfg.method.validate()?;
    let spec = inputs.train.loss_spec();
    Ok(match cfg.method {
        UnlearnMethod::Rt => (retrain_from_scratch(inputs.arch, inputs.d_r, inputs.train)?, None),
        UnlearnMethod::Ft { epochs, lr } => (unlearn_ft(clf, inputs.d_r, epochs, lr, cfg.seed, inputs.train)?, None),
        UnlearnMethod::Ga { epochs, lr } => (
            unlearn_ga(clf, inputs.d_f, epochs, lr, cfg.seed, inputs.train.batch_size, spec.kind)?,
            None,
        ),
        UnlearnMethod::If { alpha, hessian } => (
            if_update(clf, inputs.d_f, inputs.d_r, alpha, hessian, &spec, None, inputs.exec)?,
            None,
        ),
        UnlearnMethod::Cert(c) => {
            let (m, s) = unlearn_certified(clf, inputs.d_r, &c, &spec, cfg.seed)?;
            (m, Some(s))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnReport {
    pub method: String,
    pub config: UnlearnConfig,
    pub acc: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;

    #[test]
    fn ascent_on_half_norm_scales_by_one_plus_lr() {
        let t0 = ParameterVector::from_slice(&[1.0, -2.0, 0.5]);
        let t1 = gradient_ascent(&t0, 0.1, 1, |_, t| Ok(t.clone())).unwrap();
        for (a, b) in t1.values().iter().zip(t0.values()) {
            assert!((a - 1.1 * b).abs() < 1e-15);
        }
    }

    fn setup() -> (Classifier, Dataset, Dataset) {
        let ds = make_blobs(20, 3, 4, 3.0, &RngStream::new(1, 0)).unwrap();
        let d_f = ds.filter_labels(|y| y == 0);
        let d_r = ds.filter_labels(|y| y != 0);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let clf = retrain_from_scratch(Arch::Linear, &ds, &cfg).unwrap();
        (clf, d_f, d_r)
    }

    #[test]
    fn zero_epochs_or_rates_are_no_ops() {
        let (clf, d_f, d_r) = setup();
        let t = TrainConfig::default();
        assert_eq!(unlearn_ft(&clf, &d_r, 0, 0.1, 1, &t).unwrap().params, clf.params);
        assert_eq!(unlearn_ft(&clf, &d_r, 3, 0.0, 1, &t).unwrap().params, clf.params);
        assert_eq!(unlearn_ga(&clf, &d_f, 0, 0.1, 1, 8, LossKind::CrossEntropy).unwrap().params, clf.params);
        assert!(matches!(unlearn_ft(&clf, &d_r.empty_like(), 1, 0.1, 1, &t), Err(Error::Domain(_))));
        assert!(matches!(
            unlearn_ga(&clf, &d_f.empty_like(), 1, 0.1, 1, 8, LossKind::CrossEntropy),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn small_ascent_step_raises_the_forget_loss() {
        let (clf, d_f, _) = setup();
        let spec = LossSpec::cross_entropy(0.0);
        let before = clf.loss(&d_f, &spec).unwrap();
        let after_model = unlearn_ga(&clf, &d_f, 1, 1e-3, 0, d_f.len(), LossKind::CrossEntropy).unwrap();
        assert!(after_model.loss(&d_f, &spec).unwrap() > before);
    }

    #[test]
    fn empty_forget_set_leaves_influence_update_alone() {
        let (clf, d_f, d_r) = setup();
        let spec = LossSpec::cross_entropy(5e-4);
        let out = if_update(&clf, &d_f.empty_like(), &d_r, 1.0, HessianMode::Exact { damping: 1e-4 }, &spec, None, Exec::Sequential).unwrap();
        assert_eq!(out.params, clf.params);
    }

    #[test]
    fn woodfisher_update_moves_away_from_the_forget_class() {
        let (clf, d_f, d_r) = setup();
        let spec = LossSpec::cross_entropy(5e-4);
        let out = if_update(&clf, &d_f, &d_r, 1.0, HessianMode::Woodfisher { damping: 1e-3 }, &spec, None, Exec::Sequential).unwrap();
        assert_ne!(out.params, clf.params);
        assert!(out.params.all_finite());
    }

    #[test]
    fn method_config_serde_shape() {
        let c: UnlearnConfig = serde_json::from_str(r#"{"method":"IF","alpha":0.3,"hessian":{"kind":"woodfisher","damping":0.01},"seed":3}"#).unwrap();
        assert_eq!(c.method.tag(), "IF");
        assert_eq!(c.seed, 3);
        let rt: UnlearnConfig = serde_json::from_str(r#"{"method":"RT"}"#).unwrap();
        assert_eq!(rt.method, UnlearnMethod::Rt);
        let bad = UnlearnMethod::If {
            alpha: 0.0,
            hessian: HessianMode::Exact { damping: 1e-4 },
        };
        assert!(bad.validate().is_err());
    }
}
