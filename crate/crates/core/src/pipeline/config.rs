//! Declarative experiment description, `--set` overrides and the canonical
//! config hash.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::availability::{CraftConfig, Mode, SurrogateSpec};
use crate::certifier::Adjustment;
use crate::data::{make_blobs, make_grid_images_with, Dataset, DatasetMeta, GridSpec};
use crate::error::{Error, Result};
use crate::model::{Activation, Arch};
use crate::numcore::params::hex_digest;
use crate::numcore::RngStream;
use crate::trainer::TrainConfig;
use crate::unlearner::UnlearnMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Grid {
        n_per_class: usize,
        num_classes: usize,
        side: usize,
        #[serde(default = "default_contrast")]
        contrast: f64,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Blobs {
        n_per_class: usize,
        num_classes: usize,
        dim: usize,
        separation: f64,
    },
}

fn default_contrast() -> f64 {
    GridSpec::new(8).contrast
}

fn default_noise() -> f64 {
    GridSpec::new(8).noise
}

impl Default for DatasetSpec {
    /// 10 classes of 8x8 images, 300 rows each (200 train + 100 test).
    fn default() -> Self {
        DatasetSpec::Grid {
            n_per_class: 300,
            num_classes: 10,
            side: 8,
            contrast: default_contrast(),
            noise: default_noise(),
        }
    }
}

impl DatasetSpec {
    pub fn generate(&self, rng: &RngStream) -> Result<Dataset> {
        match *self {
            DatasetSpec::Grid {
                n_per_class,
                num_classes,
                side,
                contrast,
                noise,
            } => make_grid_images_with(n_per_class, num_classes, &GridSpec { side, contrast, noise }, rng),
            DatasetSpec::Blobs {
                n_per_class,
                num_classes,
                dim,
                separation,
            } => make_blobs(n_per_class, num_classes, dim, separation, rng),
        }
    }

    pub fn meta(&self) -> DatasetMeta {
        match *self {
            DatasetSpec::Grid { num_classes, side, .. } => DatasetMeta {
                num_classes,
                image_side: Some(side),
                range: Some((0.0, 1.0)),
            },
            DatasetSpec::Blobs { num_classes, .. } => DatasetMeta {
                num_classes,
                image_side: None,
                range: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Every class keeps `test_per_class` test rows; `ratio` of the rest is
    /// protected and forgotten.
    SubsetLevel { test_per_class: usize, ratio: f64 },
    ClassLevel {
        test_per_class: usize,
        protected: Vec<usize>,
        #[serde(default)]
        observation: Vec<usize>,
        forget: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilevelSpec {
    pub budget: f64,
    pub mode: Mode,
    pub rounds: usize,
    pub inner_model_steps: usize,
    pub inner_noise_steps: usize,
    pub step_size: f64,
    /// Defaults to the victim's architecture with the default recipe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<SurrogateSpec>,
}

impl BilevelSpec {
    pub fn craft(&self) -> CraftConfig {
        CraftConfig {
            budget: self.budget,
            mode: self.mode,
            rounds: self.rounds,
            inner_model_steps: self.inner_model_steps,
            inner_noise_steps: self.inner_noise_steps,
            step_size: self.step_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PerturbationSpec {
    #[default]
    None,
    Emin(BilevelSpec),
    Emax(BilevelSpec),
    ShortcutPixels {
        pixels: usize,
    },
    ShortcutLinear {
        budget: f64,
    },
    /// Pushes features away from a clean reference model's representation.
    FeatureDissim {
        budget: f64,
        steps: usize,
        step_size: f64,
    },
}

impl PerturbationSpec {
    pub fn name(&self) -> &'static str {
        match self {
            PerturbationSpec::None => "none",
            PerturbationSpec::Emin(_) => "emin",
            PerturbationSpec::Emax(_) => "emax",
            PerturbationSpec::ShortcutPixels { .. } => "shortcut_pixels",
            PerturbationSpec::ShortcutLinear { .. } => "shortcut_linear",
            PerturbationSpec::FeatureDissim { .. } => "feature_dissim",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VictimSpec {
    pub arch: Arch,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for VictimSpec {
    fn default() -> Self {
        Self {
            arch: Arch::Mlp {
                hidden: 32,
                activation: Activation::Relu,
            },
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySpec {
    #[serde(default = "default_etas")]
    pub etas: Vec<f64>,
    #[serde(default = "default_recovery_steps")]
    pub steps: usize,
    #[serde(default = "default_recovery_lr")]
    pub lr: f64,
    #[serde(default = "default_recovery_batch")]
    pub batch_size: usize,
    #[serde(default = "default_recovery_fraction")]
    pub recovery_fraction: f64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

pub fn default_etas() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.8]
}

fn default_recovery_steps() -> usize {
    100
}

fn default_recovery_lr() -> f64 {
    0.05
}

fn default_recovery_batch() -> usize {
    16
}

fn default_recovery_fraction() -> f64 {
    0.1
}

fn default_checkpoint_every() -> usize {
    10
}

impl Default for RecoverySpec {
    fn default() -> Self {
        Self {
            etas: default_etas(),
            steps: default_recovery_steps(),
            lr: default_recovery_lr(),
            batch_size: default_recovery_batch(),
            recovery_fraction: default_recovery_fraction(),
            checkpoint_every: default_checkpoint_every(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifySpec {
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    /// Falls back to the recovery grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub etas: Option<Vec<f64>>,
    #[serde(default = "default_one_minus_alpha")]
    pub one_minus_alpha: f64,
    #[serde(default = "default_adjustment")]
    pub adjustment: Adjustment,
}

fn default_q() -> f64 {
    0.9
}

fn default_sigma() -> f64 {
    0.3
}

fn default_n_samples() -> usize {
    500
}

fn default_one_minus_alpha() -> f64 {
    0.999
}

fn default_adjustment() -> Adjustment {
    Adjustment::ClopperPearson
}

impl Default for CertifySpec {
    fn default() -> Self {
        Self {
            q: default_q(),
            sigma: default_sigma(),
            n_samples: default_n_samples(),
            etas: None,
            one_minus_alpha: default_one_minus_alpha(),
            adjustment: default_adjustment(),
        }
    }
}

/// Shallow-vs-deep expectation checked by `report --check`: after recovery at
/// `eta`, every `shallow` model is within `shallow_within` of the clean
/// model's target accuracy and every `deep` model at least `deep_below` under it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectSpec {
    pub eta: f64,
    #[serde(default)]
    pub shallow: Vec<String>,
    #[serde(default)]
    pub deep: Vec<String>,
    pub shallow_within: f64,
    pub deep_below: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Master seed; overrides the seeds inside the training and unlearning recipes.
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub victim: VictimSpec,
    #[serde(default)]
    pub unlearn: Vec<UnlearnMethod>,
    #[serde(default)]
    pub recovery: RecoverySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certify: Option<CertifySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<ExpectSpec>,
    /// Not part of the hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

fn default_name() -> String {
    "experiment".into()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad experiment config: {e}")))
    }

    pub fn from_value(v: Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::Config(format!("bad experiment config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Training recipe with the master seed applied.
    pub fn victim_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.victim.train
        }
    }

    pub fn certify_etas(&self) -> Vec<f64> {
        self.certify
            .as_ref()
            .and_then(|c| c.etas.clone())
            .unwrap_or_else(|| self.recovery.etas.clone())
    }

    pub fn validate(&self) -> Result<()> {
        self.victim.train.validate()?;
        for m in &self.unlearn {
            m.validate()?;
        }
        let mut tags: Vec<&str> = self.unlearn.iter().map(|m| m.tag()).collect();
        tags.sort_unstable();
        if tags.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("each unlearning method may appear only once".into()));
        }
        if self.recovery.etas.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::Config("recovery etas must be >= 0".into()));
        }
        if let Some(c) = &self.certify {
            if !(c.sigma > 0.0) || !(c.q > 0.0 && c.q < 1.0) {
                return Err(Error::Config("certification needs sigma > 0 and q in (0, 1)".into()));
            }
            if !(c.one_minus_alpha > 0.0 && c.one_minus_alpha < 1.0) {
                return Err(Error::Config("one_minus_alpha must lie in (0, 1)".into()));
            }
        }
        if let PerturbationSpec::Emin(b) | PerturbationSpec::Emax(b) = &self.perturbation {
            b.craft().validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Canonical JSON: sorted keys, no whitespace, output directory removed.
    pub fn canonical_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Value::Object(m) = &mut v {
            m.remove("out_dir");
        }
        Ok(serde_json::to_string(&v)?)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hex_digest(self.canonical_json()?.as_bytes()))
    }
}

/// Applies `path=value` to a JSON document. Path segments are object keys or
/// array indices; the value is parsed as JSON and falls back to a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form path=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(m) => {
                if last {
                    m.insert(part.to_string(), value);
                    return Ok(());
                }
                m.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(a) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Config(format!("`{part}` in `{path}` is not an array index")))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("index {idx} out of range (len {len}) in `{path}`")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("cannot descend into `{part}` of `{path}`"))),
        };
    }
    Err(Error::Config("empty override path".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> Value {
        serde_json::json!({
            "seed": 3,
            "split": {"level": "subset_level", "test_per_class": 10, "ratio": 0.9},
        })
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_value(minimal()).unwrap();
        assert_eq!(cfg.recovery.etas, vec![0.0, 0.2, 0.4, 0.8]);
        assert_eq!(cfg.victim.train.epochs, 50);
        assert!(cfg.unlearn.is_empty());
        cfg.validate().unwrap();
    }

    #[test]
    fn hash_ignores_key_order_and_out_dir() {
        let a = ExperimentConfig::from_value(minimal()).unwrap();
        let mut b = ExperimentConfig::from_json(
            r#"{"split": {"ratio": 0.9, "test_per_class": 10, "level": "subset_level"}, "seed": 3}"#,
        )
        .unwrap();
        b.out_dir = Some("/tmp/x".into());
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 4;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn overrides() {
        let mut doc = minimal();
        apply_override(&mut doc, "seed=11").unwrap();
        apply_override(&mut doc, "recovery.etas=[0,1.5]").unwrap();
        apply_override(&mut doc, "name=run-a").unwrap();
        let cfg = ExperimentConfig::from_value(doc.clone()).unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.recovery.etas, vec![0.0, 1.5]);
        assert_eq!(cfg.name, "run-a");
        apply_override(&mut doc, "recovery.etas.1=0.5").unwrap();
        assert_eq!(ExperimentConfig::from_value(doc.clone()).unwrap().recovery.etas, vec![0.0, 0.5]);
        assert!(apply_override(&mut doc, "recovery.etas.9=1").is_err());
        assert!(apply_override(&mut doc, "no-equals").is_err());
    }

    #[test]
    fn unknown_top_level_keys_are_config_errors() {
        let mut doc = minimal();
        apply_override(&mut doc, "sed=1").unwrap();
        assert!(matches!(ExperimentConfig::from_value(doc), Err(Error::Config(_))));
    }

    #[test]
    fn unlearn_specs_parse() {
        let mut doc = minimal();
        doc["unlearn"] = serde_json::json!([
            {"method": "RT"},
            {"method": "FT", "epochs": 5, "lr": 0.05},
            {"method": "IF", "alpha": 0.3, "hessian": {"kind": "woodfisher", "damping": 0.01}},
        ]);
        let cfg = ExperimentConfig::from_value(doc.clone()).unwrap();
        assert_eq!(cfg.unlearn.len(), 3);
        doc["unlearn"] = serde_json::json!([{"method": "RT"}, {"method": "RT"}]);
        assert!(ExperimentConfig::from_value(doc).unwrap().validate().is_err());
    }
}
