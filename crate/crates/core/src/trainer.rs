//! Minibatch SGD with heavy-ball momentum, the learning algorithm behind
//! every trained model in the lab.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{augment_batch, Augment, Dataset};
use crate::error::{Error, Result};
use crate::model::{Arch, Classifier, LossKind, LossSpec};
use crate::numcore::{RngStream, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub augment: Augment,
    pub seed: u64,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
}

fn default_loss() -> LossKind {
    LossKind::CrossEntropy
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            augment: Augment::None,
            seed: 0,
            loss: LossKind::CrossEntropy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        self.loss_spec().validate()
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            kind: self.loss,
            weight_decay: self.weight_decay,
        }
    }

    fn rng(&self) -> RngStream {
        RngStream::new(self.seed, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

/// Per-epoch trajectory; entry 0 is the state before any update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History(pub Vec<EpochRecord>);

impl History {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "train_acc", "test_acc"])?;
        for r in &self.0 {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.train_acc.to_string(),
                r.test_acc.map(|a| a.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.0.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.0.last()
    }
}

pub(crate) fn accuracy_of(clf: &Classifier, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(f64::NAN);
    }
    let pred = clf.predict(ds.features())?;
    let hits = pred.iter().zip(ds.labels()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / ds.len() as f64)
}

fn record(clf: &Classifier, epoch: usize, ds: &Dataset, test: Option<&Dataset>, spec: &LossSpec) -> Result<EpochRecord> {
    Ok(EpochRecord {
        epoch,
        train_loss: if ds.is_empty() { f64::NAN } else { clf.loss(ds, spec)? },
        train_acc: accuracy_of(clf, ds)?,
        test_acc: test.map(|t| accuracy_of(clf, t)).transpose()?,
    })
}

/// Trains `clf` on `ds`; `test` only feeds the history.
pub fn train_with_eval(
    clf: &Classifier,
    ds: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(Classifier, History)> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok((clf.clone(), History::default()));
    }
    if ds.is_empty() {
        return Err(Error::Domain("training on an empty dataset".into()));
    }
    let spec = cfg.loss_spec();
    let root = cfg.rng();
    let mut shuffle = root.child("shuffle");
    let mut aug_rng = root.child("augment");
    let mut theta = clf.params.clone();
    let mut velocity = vec![0.0; theta.len()];
    let mut model = clf.clone();
    let mut history = vec![record(&model, 0, ds, test, &spec)?];
    let n = ds.len();
    for epoch in 1..=cfg.epochs {
        let order = shuffle.permutation(n);
        for chunk in order.chunks(cfg.batch_size) {
            let mut x = Tensor::matrix(
                chunk.len(),
                ds.dim(),
                chunk.iter().flat_map(|&i| ds.row(i).iter().copied()).collect(),
            )?;
            let labels: Vec<usize> = chunk.iter().map(|&i| ds.labels()[i]).collect();
            augment_batch(&mut x, cfg.augment, ds.meta().image_side, &mut aug_rng);
            let (_, g) = model.loss_and_grad_xy(&x, &labels, &spec)?;
            let t = theta.values_mut();
            for ((v, gj), tj) in velocity.iter_mut().zip(g.values()).zip(t.iter_mut()) {
                *v = cfg.momentum * *v + gj;
                *tj -= cfg.lr * *v;
            }
            model.params = theta.clone();
        }
        if !theta.all_finite() {
            return Err(Error::Numeric(format!("training diverged in epoch {epoch}")));
        }
        history.push(record(&model, epoch, ds, test, &spec)?);
    }
    Ok((model, History(history)))
}

pub fn train(clf: &Classifier, ds: &Dataset, cfg: &TrainConfig) -> Result<(Classifier, History)> {
    train_with_eval(clf, ds, None, cfg)
}

/// The initialization every from-scratch run starts from.
pub fn fresh_model(arch: Arch, input_dim: usize, num_classes: usize, cfg: &TrainConfig) -> Result<Classifier> {
    Classifier::init(arch, input_dim, num_classes, &cfg.rng())
}

/// Fresh initialization from `cfg.seed`, then training on `d_r` alone.
pub fn retrain_from_scratch(arch: Arch, d_r: &Dataset, cfg: &TrainConfig) -> Result<Classifier> {
    let clf = fresh_model(arch, d_r.dim(), d_r.num_classes(), cfg)?;
    Ok(train(&clf, d_r, cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::model::Activation;

    fn cfg(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            lr,
            seed: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_or_zero_lr_leave_params_alone() {
        let ds = make_blobs(20, 3, 4, 3.0, &RngStream::new(1, 0)).unwrap();
        let clf = fresh_model(Arch::Linear, 4, 3, &cfg(0, 0.1)).unwrap();
        assert_eq!(train(&clf, &ds, &cfg(0, 0.1)).unwrap().0.params, clf.params);
        assert_eq!(train(&clf, &ds, &cfg(3, 0.0)).unwrap().0.params, clf.params);
        assert_eq!(train(&clf, &ds.empty_like(), &cfg(0, 0.1)).unwrap().0.params, clf.params);
    }

    #[test]
    fn empty_data_with_epochs_is_a_domain_error() {
        let ds = make_blobs(2, 2, 2, 3.0, &RngStream::new(1, 0)).unwrap();
        let clf = fresh_model(Arch::Linear, 2, 2, &cfg(1, 0.1)).unwrap();
        assert!(matches!(train(&clf, &ds.empty_like(), &cfg(1, 0.1)), Err(Error::Domain(_))));
    }

    #[test]
    fn runs_are_bitwise_deterministic() {
        let ds = make_blobs(30, 3, 5, 2.0, &RngStream::new(2, 0)).unwrap();
        let arch = Arch::Mlp {
            hidden: 8,
            activation: Activation::Relu,
        };
        let mut c = cfg(4, 0.05);
        c.augment = Augment::Jitter { sigma: 0.1 };
        let a = retrain_from_scratch(arch, &ds, &c).unwrap();
        let b = retrain_from_scratch(arch, &ds, &c).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn training_lowers_the_loss() {
        let ds = make_blobs(40, 4, 6, 2.0, &RngStream::new(3, 0)).unwrap();
        let c = cfg(5, 0.05);
        let clf = fresh_model(Arch::Linear, 6, 4, &c).unwrap();
        let (_, h) = train(&clf, &ds, &c).unwrap();
        assert_eq!(h.0.len(), 6);
        assert!(h.last().unwrap().train_loss < h.first().unwrap().train_loss);
    }

    #[test]
    fn history_csv_header() {
        let h = History(vec![EpochRecord {
            epoch: 0,
            train_loss: 1.0,
            train_acc: 0.5,
            test_acc: None,
        }]);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("epoch,train_loss,train_acc,test_acc\n0,1,0.5,\n"));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = cfg(1, 0.1);
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = cfg(1, 0.1);
        c.momentum = 1.0;
        assert!(c.validate().is_err());
    }
}
