//! Split-wise accuracy and threshold membership-inference attacks.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::numcore::{RngStream, Tensor};

/// Top-1 accuracy; ties go to the lowest class index.
pub fn accuracy(clf: &Classifier, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Domain("accuracy of an empty set".into()));
    }
    crate::trainer::accuracy_of(clf, ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiaVariant {
    Corr,
    Prob,
    Entro,
}

impl MiaVariant {
    pub const ALL: [MiaVariant; 3] = [MiaVariant::Corr, MiaVariant::Prob, MiaVariant::Entro];

    pub fn name(&self) -> &'static str {
        match self {
            MiaVariant::Corr => "corr",
            MiaVariant::Prob => "prob",
            MiaVariant::Entro => "entro",
        }
    }
}

/// Per-row attack signal: correctness (0/1), true-class confidence, or
/// negative prediction entropy.
pub fn mia_signal(clf: &Classifier, ds: &Dataset, variant: MiaVariant) -> Result<Vec<f64>> {
    let p = clf.forward(ds.features())?;
    Ok(signal_from_probs(&p, ds.labels(), variant))
}

fn signal_from_probs(p: &Tensor, labels: &[usize], variant: MiaVariant) -> Vec<f64> {
    (0..p.rows())
        .map(|i| {
            let row = p.row(i);
            match variant {
                MiaVariant::Corr => {
                    let mut best = 0;
                    for (j, v) in row.iter().enumerate() {
                        if *v > row[best] {
                            best = j;
                        }
                    }
                    if best == labels[i] {
                        1.0
                    } else {
                        0.0
                    }
                }
                MiaVariant::Prob => row[labels[i]],
                MiaVariant::Entro => row.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum(),
            }
        })
        .collect()
}

/// Best balanced accuracy over every threshold and both polarities.
/// Never below 0.5.
pub fn best_threshold_rate(members: &[f64], nonmembers: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = members
        .iter()
        .map(|&v| (v, true))
        .chain(nonmembers.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nm, nn) = (members.len() as f64, nonmembers.len() as f64);
    // Rule "member iff signal > t" with t below every value: TPR 1, TNR 0.
    let (mut tp, mut tn) = (nm, 0.0);
    let mut best = 0.5f64;
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                tp -= 1.0;
            } else {
                tn += 1.0;
            }
            i += 1;
        }
        let ba = 0.5 * (tp / nm + tn / nn);
        best = best.max(ba).max(1.0 - ba);
    }
    best
}

/// Balanced rate for the correctness attack: member iff correct.
pub fn corr_rate(members: &[f64], nonmembers: &[f64]) -> f64 {
    let tpr = members.iter().sum::<f64>() / members.len() as f64;
    let tnr = nonmembers.iter().map(|v| 1.0 - v).sum::<f64>() / nonmembers.len() as f64;
    0.5 * (tpr + tnr)
}

/// Attack success on `members` vs `nonmembers`. The larger side is
/// subsampled (seeded) down to the smaller one.
pub fn mia(clf: &Classifier, members: &Dataset, nonmembers: &Dataset, variant: MiaVariant, seed: u64) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::Domain("membership inference needs both sides non-empty".into()));
    }
    let m = members.len().min(nonmembers.len());
    let mut r = RngStream::new(seed, 0).child("mia-balance");
    let balance = |ds: &Dataset, r: &mut RngStream| -> Dataset {
        if ds.len() == m {
            ds.clone()
        } else {
            let mut idx = r.permutation(ds.len());
            idx.truncate(m);
            idx.sort_unstable();
            ds.select(&idx)
        }
    };
    let a = balance(members, &mut r);
    let b = balance(nonmembers, &mut r);
    let sa = mia_signal(clf, &a, variant)?;
    let sb = mia_signal(clf, &b, variant)?;
    Ok(match variant {
        MiaVariant::Corr => corr_rate(&sa, &sb),
        MiaVariant::Prob | MiaVariant::Entro => best_threshold_rate(&sa, &sb),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaRecord {
    pub model: String,
    pub variant: MiaVariant,
    pub members_tag: String,
    pub nonmembers_tag: String,
    pub rate: f64,
    pub gap_vs_rt: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub accuracy: BTreeMap<String, f64>,
    pub mia: BTreeMap<MiaVariant, f64>,
    pub baseline_deltas: BTreeMap<String, f64>,
}

impl EvalReport {
    /// Accuracy on each named split that is non-empty.
    pub fn evaluate(model: &str, clf: &Classifier, splits: &[(&str, &Dataset)]) -> Result<Self> {
        let mut accuracy = BTreeMap::new();
        for (name, ds) in splits {
            if !ds.is_empty() {
                accuracy.insert(name.to_string(), crate::evalmetrics::accuracy(clf, ds)?);
            }
        }
        Ok(Self {
            model: model.into(),
            accuracy,
            ..Self::default()
        })
    }

    /// Fills `baseline_deltas` with `self - reference` per shared split.
    pub fn with_baseline(mut self, reference: &EvalReport) -> Self {
        self.baseline_deltas = self
            .accuracy
            .iter()
            .filter_map(|(k, v)| reference.accuracy.get(k).map(|r| (k.clone(), v - r)))
            .collect();
        self
    }
}

fn fmt_rate(v: f64) -> String {
    format!("{v:.6}")
}

/// `eval.csv`: model, split, accuracy.
pub fn write_eval_csv<W: Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "split", "accuracy"])?;
    for r in reports {
        for (split, acc) in &r.accuracy {
            w.write_record([r.model.as_str(), split.as_str(), &fmt_rate(*acc)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `mia.csv`: model, variant, members_tag, nonmembers_tag, rate, gap_vs_rt.
pub fn write_mia_csv<W: Write>(records: &[MiaRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "variant", "members_tag", "nonmembers_tag", "rate", "gap_vs_rt"])?;
    for r in records {
        w.write_record([
            r.model.as_str(),
            r.variant.name(),
            &r.members_tag,
            &r.nonmembers_tag,
            &fmt_rate(r.rate),
            &r.gap_vs_rt.map(fmt_rate).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
