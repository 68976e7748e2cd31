//! Alternating bilevel crafting: a few surrogate SGD steps on the perturbed
//! data, then a few signed-gradient steps on the noise, repeated.

use serde::{Deserialize, Serialize};

use super::{perturbed_rows, Mode, PerturbOp, PerturbationSet, SurrogateSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::numcore::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Error-minimizing noise: descend the surrogate loss.
    Minimize,
    /// Error-maximizing noise: ascend it.
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CraftConfig {
    pub budget: f64,
    pub mode: Mode,
    pub rounds: usize,
    pub inner_model_steps: usize,
    pub inner_noise_steps: usize,
    pub step_size: f64,
}

impl CraftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget >= 0.0) {
            return Err(Error::Domain(format!("budget {} < 0", self.budget)));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if !(self.step_size >= 0.0) {
            return Err(Error::Config(format!("step size {} < 0", self.step_size)));
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Runs the alternating schedule and returns the noise together with the
/// final surrogate.
pub fn bilevel_craft(
    ds: &Dataset,
    surrogate: &SurrogateSpec,
    cfg: &CraftConfig,
    direction: Direction,
    rng: &RngStream,
) -> Result<(PerturbationSet, Classifier)> {
    cfg.validate()?;
    surrogate.train.validate()?;
    if ds.is_empty() {
        return Err(Error::Domain("crafting on an empty dataset".into()));
    }
    let (n, d) = (ds.len(), ds.dim());
    let keys: Vec<u64> = match cfg.mode {
        Mode::SampleWise => ds.ids().to_vec(),
        Mode::ClassWise => (0..ds.num_classes() as u64).collect(),
    };
    let key_row: Vec<usize> = match cfg.mode {
        Mode::SampleWise => (0..n).collect(),
        Mode::ClassWise => ds.labels().to_vec(),
    };
    let mut delta = vec![0.0; keys.len() * d];
    let mut model = Classifier::init(surrogate.arch, d, ds.num_classes(), &rng.child("surrogate-init"))?;
    let tc = &surrogate.train;
    let spec = tc.loss_spec();
    let mut batches = rng.child("surrogate-batches");
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut velocity = vec![0.0; model.params.len()];
    let signed = match direction {
        Direction::Minimize => -cfg.step_size,
        Direction::Maximize => cfg.step_size,
    };
    for _ in 0..cfg.rounds {
        if cfg.inner_model_steps > 0 {
            let x = perturbed_rows(ds, &delta, &key_row);
            for _ in 0..cfg.inner_model_steps {
                if cursor >= order.len() {
                    order = batches.permutation(n);
                    cursor = 0;
                }
                let end = (cursor + tc.batch_size).min(n);
                let chunk = &order[cursor..end];
                cursor = end;
                let xb = x.select_rows(chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| ds.labels()[i]).collect();
                let (_, g) = model.loss_and_grad_xy(&xb, &yb, &spec)?;
                let theta = model.params.values_mut();
                for ((v, gj), t) in velocity.iter_mut().zip(g.values()).zip(theta.iter_mut()) {
                    *v = tc.momentum * *v + gj;
                    *t -= tc.lr * *v;
                }
            }
            if !model.params.all_finite() {
                return Err(Error::Numeric("surrogate diverged during crafting".into()));
            }
        }
        for _ in 0..cfg.inner_noise_steps {
            let x = perturbed_rows(ds, &delta, &key_row);
            let (_, gx) = model.input_grad(&x, ds.labels(), spec.kind)?;
            let mut g = vec![0.0; delta.len()];
            for (i, &k) in key_row.iter().enumerate() {
                for j in 0..d {
                    g[k * d + j] += gx.values()[i * d + j];
                }
            }
            for (dv, gv) in delta.iter_mut().zip(&g) {
                *dv = (*dv + signed * sign(*gv)).clamp(-cfg.budget, cfg.budget);
            }
        }
    }
    let method = match direction {
        Direction::Minimize => "emin",
        Direction::Maximize => "emax",
    };
    let entries = keys
        .into_iter()
        .enumerate()
        .map(|(r, k)| (k, delta[r * d..(r + 1) * d].to_vec()))
        .collect();
    Ok((
        PerturbationSet {
            mode: cfg.mode,
            budget: cfg.budget,
            op: PerturbOp::Additive,
            method: method.into(),
            entries,
        },
        model,
    ))
}

pub fn emin_generate(ds: &Dataset, surrogate: &SurrogateSpec, cfg: &CraftConfig, rng: &RngStream) -> Result<PerturbationSet> {
    Ok(bilevel_craft(ds, surrogate, cfg, Direction::Minimize, rng)?.0)
}

pub fn emax_generate(ds: &Dataset, surrogate: &SurrogateSpec, cfg: &CraftConfig, rng: &RngStream) -> Result<PerturbationSet> {
    Ok(bilevel_craft(ds, surrogate, cfg, Direction::Maximize, rng)?.0)
}
