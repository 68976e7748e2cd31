//! Unlearnability perturbations under an `l_inf` budget: bilevel
//! error-minimizing / error-maximizing noise, gradient-free shortcuts, and
//! representation-space objectives.

mod bilevel;
mod representation;
mod shortcut;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::checkpoint::{decode_f64s, encode_f64s};
use crate::model::Arch;
use crate::numcore::Tensor;
use crate::trainer::TrainConfig;

pub use bilevel::{bilevel_craft, emax_generate, emin_generate, CraftConfig, Direction};
pub use representation::{feature_collide, feature_dissim, feature_distances};
pub use shortcut::{ops_drift, shortcut_linear, shortcut_pixels, top_p_features};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SampleWise,
    ClassWise,
}

/// How an entry combines with a row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbOp {
    /// `x + delta`, clamped to the dataset range.
    Additive,
    /// Entries are 0/1 masks; masked features are replaced by `value`.
    Overwrite { value: f64, max_pixels: usize },
}

/// Surrogate used inside bilevel crafting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub arch: Arch,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    pub mode: Mode,
    pub budget: f64,
    pub op: PerturbOp,
    pub method: String,
    /// Keyed by example id (sample-wise) or class label (class-wise).
    pub entries: BTreeMap<u64, Vec<f64>>,
}

impl PerturbationSet {
    /// All-zero additive set covering `ds`.
    pub fn zeros(ds: &Dataset, mode: Mode) -> Self {
        let keys: Vec<u64> = match mode {
            Mode::SampleWise => ds.ids().to_vec(),
            Mode::ClassWise => (0..ds.num_classes() as u64).collect(),
        };
        Self {
            mode,
            budget: 0.0,
            op: PerturbOp::Additive,
            method: "zero".into(),
            entries: keys.into_iter().map(|k| (k, vec![0.0; ds.dim()])).collect(),
        }
    }

    pub fn key_for(&self, id: u64, label: usize) -> u64 {
        match self.mode {
            Mode::SampleWise => id,
            Mode::ClassWise => label as u64,
        }
    }

    /// Largest `|delta_j|` over every entry (additive sets).
    pub fn max_abs(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Number of distinct delta vectors.
    pub fn distinct_entries(&self) -> usize {
        let mut seen: Vec<&Vec<f64>> = Vec::new();
        for v in self.entries.values() {
            if !seen.iter().any(|s| s.iter().zip(v.iter()).all(|(a, b)| a.to_bits() == b.to_bits())) {
                seen.push(v);
            }
        }
        seen.len()
    }
}

/// `D_u`: every row of `ds` combined with its entry.
pub fn apply(ds: &Dataset, ps: &PerturbationSet) -> Result<Dataset> {
    let d = ds.dim();
    let range = ds.meta().range;
    let mut values = ds.features().values().to_vec();
    for i in 0..ds.len() {
        let key = ps.key_for(ds.ids()[i], ds.labels()[i]);
        let delta = ps.entries.get(&key).ok_or_else(|| {
            Error::Coverage(format!("no perturbation entry for key {key} ({:?})", ps.mode))
        })?;
        if delta.len() != d {
            return Err(Error::Shape(format!("entry {key} has width {}, rows have {d}", delta.len())));
        }
        let row = &mut values[i * d..(i + 1) * d];
        match ps.op {
            PerturbOp::Additive => {
                for (x, dv) in row.iter_mut().zip(delta) {
                    let mut v = *x + dv;
                    if let Some((lo, hi)) = range {
                        v = v.clamp(lo, hi);
                    }
                    *x = v;
                }
            }
            PerturbOp::Overwrite { value, .. } => {
                for (x, m) in row.iter_mut().zip(delta) {
                    if *m != 0.0 {
                        *x = value;
                    }
                }
            }
        }
    }
    ds.with_features(Tensor::matrix(ds.len(), d, values)?)
}

/// Rows of `x + delta` clamped to `range`.
pub(crate) fn perturbed_rows(ds: &Dataset, deltas: &[f64], key_row: &[usize]) -> Tensor {
    let d = ds.dim();
    let range = ds.meta().range;
    let mut out = ds.features().values().to_vec();
    for (i, &k) in key_row.iter().enumerate() {
        for j in 0..d {
            let mut v = out[i * d + j] + deltas[k * d + j];
            if let Some((lo, hi)) = range {
                v = v.clamp(lo, hi);
            }
            out[i * d + j] = v;
        }
    }
    Tensor::matrix(ds.len(), d, out).expect("perturbed rows shape")
}

#[derive(Serialize, Deserialize)]
struct PerturbationFile {
    format: String,
    mode: Mode,
    #[serde(rename = "B")]
    budget: f64,
    op: PerturbOp,
    method: String,
    entries: BTreeMap<String, String>,
    #[serde(default)]
    lineage: serde_json::Value,
}

const FORMAT: &str = "dememlab-perturbation-v1";

impl PerturbationSet {
    pub fn to_json(&self, lineage: serde_json::Value) -> Result<String> {
        let file = PerturbationFile {
            format: FORMAT.into(),
            mode: self.mode,
            budget: self.budget,
            op: self.op,
            method: self.method.clone(),
            entries: self.entries.iter().map(|(k, v)| (k.to_string(), encode_f64s(v))).collect(),
            lineage,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<(Self, serde_json::Value)> {
        let file: PerturbationFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("perturbation header: {e}")))?;
        if file.format != FORMAT {
            return Err(Error::Format(format!("unknown perturbation format `{}`", file.format)));
        }
        let mut entries = BTreeMap::new();
        for (k, v) in &file.entries {
            let key = k
                .parse::<u64>()
                .map_err(|_| Error::Format(format!("bad entry key `{k}`")))?;
            entries.insert(key, decode_f64s(v)?);
        }
        Ok((
            Self {
                mode: file.mode,
                budget: file.budget,
                op: file.op,
                method: file.method,
                entries,
            },
            file.lineage,
        ))
    }

    pub fn save(&self, path: &Path, lineage: serde_json::Value) -> Result<()> {
        std::fs::write(path, self.to_json(lineage)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
