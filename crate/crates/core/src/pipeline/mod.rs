//! Configuration-driven runner: poison, train, unlearn, evaluate, recover,
//! certify and report, each persisted under one output directory.
//!
//! Every stage reads its inputs from files written by earlier stages, so
//! each one can also run standalone. `manifest.json` records the config
//! hash and a sha256 for every artifact together with the artifacts it was
//! derived from. Wallclock times go to `timings.json`; everything else is
//! byte-identical across reruns of the same config.

mod config;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::{
    apply_override, default_etas, BilevelSpec, CertifySpec, DatasetSpec, ExpectSpec, ExperimentConfig,
    PerturbationSpec, RecoverySpec, SplitSpec, VictimSpec,
};
pub use report::{write_report, ReportOutcome};

use crate::availability::{
    apply, bilevel_craft, feature_dissim, shortcut_linear, shortcut_pixels, Direction, Mode, PerturbationSet,
    SurrogateSpec,
};
use crate::certifier::{
    certify_from_samples, monte_carlo_accuracies, recovery_attack, CertificateReport, CertifyOptions, RecoveryConfig,
};
use crate::data::io::{load_dataset_csv, load_split_plan, save_dataset_csv, save_split_plan};
use crate::data::{apply_split, Dataset, ForgetSelector, Role, SplitPlan, SplitViews};
use crate::error::{Error, Result};
use crate::evalmetrics::{mia, write_eval_csv, write_mia_csv, EvalReport, MiaRecord, MiaVariant};
use crate::exec::Exec;
use crate::model::checkpoint::write_json;
use crate::model::Classifier;
use crate::numcore::params::hex_digest;
use crate::numcore::RngStream;
use crate::trainer::{fresh_model, train_with_eval, TrainConfig};
use crate::unlearner::{unlearn, UnlearnConfig, UnlearnInputs, UnlearnReport};

pub const DATASET: &str = "data/dataset.csv";
pub const POISONED: &str = "data/poisoned.csv";
pub const SPLIT: &str = "data/split.json";
pub const PERTURBATION: &str = "data/perturbation.json";
pub const VICTIM: &str = "models/before.json";
pub const CLEAN: &str = "models/clean.json";
pub const HISTORY: &str = "train/history.csv";
pub const EVAL_CSV: &str = "eval/eval.csv";
pub const MIA_CSV: &str = "eval/mia.csv";
pub const TRAJECTORY_CSV: &str = "recover/trajectory.csv";
pub const RECOVERY_CSV: &str = "recover/summary.csv";
pub const CERT_JSON: &str = "certify/certificates.json";
pub const CERT_CSV: &str = "certify/certify.csv";
pub const REPORT: &str = "report.md";
pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";

const MANIFEST_FORMAT: &str = "dememlab-manifest-v1";

/// Stage names in execution order.
pub const STAGES: [&str; 7] = ["poison", "train", "unlearn", "mia", "recover", "certify", "report"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Partial,
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub artifacts: BTreeMap<String, String>,
    pub parents: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// The directory already held a complete run with the same config hash.
    Cached,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Completed => "complete",
            RunStatus::Cached => "cached",
        }
    }
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(hex_digest(&std::fs::read(path)?))
}

/// Model names in report order: the clean reference, the victim before
/// unlearning, then one per unlearning method.
fn model_names(cfg: &ExperimentConfig) -> Vec<String> {
    let mut names = vec!["clean".to_string(), "before".to_string()];
    names.extend(cfg.unlearn.iter().map(|m| m.tag().to_string()));
    names
}

fn model_path(name: &str) -> String {
    format!("models/{name}.json")
}

/// One experiment bound to an output directory.
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub out: PathBuf,
    pub exec: Exec,
}

struct Loaded {
    clean: Dataset,
    plan: SplitPlan,
    views: SplitViews,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, out: &Path, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash()?;
        Ok(Self {
            cfg,
            hash,
            out: out.to_path_buf(),
            exec,
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Path of an upstream artifact, or a dependency error naming its stage.
    fn need(&self, rel: &str, stage: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::Dependency {
                artifact: rel.to_string(),
                stage: stage.to_string(),
            })
        }
    }

    fn ensure_dir(&self, rel: &str) -> Result<()> {
        std::fs::create_dir_all(self.path(rel))?;
        Ok(())
    }

    fn parents(&self, rels: &[String]) -> Result<BTreeMap<String, String>> {
        rels.iter()
            .map(|r| Ok((r.clone(), file_digest(&self.path(r))?)))
            .collect()
    }

    fn lineage(&self, stage: &str, parents: &[String]) -> Result<Value> {
        Ok(json!({
            "stage": stage,
            "config_hash": self.hash,
            "parents": self.parents(parents)?,
        }))
    }

    fn read_manifest(&self) -> Option<Manifest> {
        Manifest::load(&self.path(MANIFEST))
            .ok()
            .filter(|m| m.config_hash == self.hash)
    }

    fn write_manifest(&self, m: &Manifest) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        write_json(m, &self.path(MANIFEST))
    }

    fn fresh_manifest(&self, status: Status) -> Manifest {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            name: self.cfg.name.clone(),
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            status,
            failed_stage: None,
            stages: BTreeMap::new(),
        }
    }

    fn record(&self, stage: &str, artifacts: &[String], parents: &[String]) -> Result<()> {
        let mut m = self.read_manifest().unwrap_or_else(|| self.fresh_manifest(Status::Partial));
        m.stages.insert(
            stage.to_string(),
            StageRecord {
                artifacts: self.parents(artifacts)?,
                parents: self.parents(parents)?,
            },
        );
        self.write_manifest(&m)
    }

    fn set_status(&self, status: Status, failed: Option<&str>) -> Result<()> {
        let mut m = self.read_manifest().unwrap_or_else(|| self.fresh_manifest(status));
        m.status = status;
        m.failed_stage = failed.map(str::to_string);
        self.write_manifest(&m)
    }

    fn record_time(&self, stage: &str, seconds: f64) -> Result<()> {
        let p = self.path(TIMINGS);
        let mut t: BTreeMap<String, f64> = std::fs::read_to_string(&p)
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or_default();
        t.insert(stage.to_string(), seconds);
        write_json(&t, &p)
    }

    /// True when the manifest matches this config and every artifact it lists
    /// is present with the recorded digest.
    pub fn is_cached(&self) -> bool {
        let Some(m) = self.read_manifest() else {
            return false;
        };
        m.status == Status::Complete
            && m.stages.values().all(|s| {
                s.artifacts
                    .iter()
                    .all(|(rel, sha)| file_digest(&self.path(rel)).map(|d| &d == sha).unwrap_or(false))
            })
    }

    /// Runs one named stage, wrapping any failure with the stage name.
    pub fn run_stage(&self, stage: &str) -> Result<()> {
        let t0 = Instant::now();
        std::fs::create_dir_all(&self.out)?;
        let r = match stage {
            "poison" => self.poison(),
            "train" => self.train(),
            "unlearn" => self.unlearn(),
            "mia" => self.evaluate(),
            "recover" => self.recover(),
            "certify" => self.certify(),
            "report" => self.report(false).map(|_| ()),
            other => return Err(Error::Config(format!("unknown stage `{other}`"))),
        };
        r.map_err(|e| e.in_stage(stage))?;
        self.record_time(stage, t0.elapsed().as_secs_f64())
    }

    /// Every stage in order. A failure marks the manifest incomplete.
    pub fn run(&self) -> Result<RunStatus> {
        if self.is_cached() {
            return Ok(RunStatus::Cached);
        }
        std::fs::create_dir_all(&self.out)?;
        self.write_manifest(&self.fresh_manifest(Status::Partial))?;
        for stage in STAGES {
            if let Err(e) = self.run_stage(stage) {
                self.set_status(Status::Incomplete, Some(stage))?;
                return Err(e);
            }
        }
        self.set_status(Status::Complete, None)?;
        Ok(RunStatus::Completed)
    }

    fn load_views(&self) -> Result<Loaded> {
        let meta = self.cfg.dataset.meta();
        let clean = load_dataset_csv(&self.need(DATASET, "poison")?, meta)?;
        let poisoned = load_dataset_csv(&self.need(POISONED, "poison")?, meta)?;
        let plan = load_split_plan(&self.need(SPLIT, "poison")?)?;
        let views = apply_split(&clean, &poisoned, &plan)?;
        Ok(Loaded { clean, plan, views })
    }

    fn load_model(&self, name: &str) -> Result<Classifier> {
        let producer = match name {
            "clean" | "before" => "train",
            _ => "unlearn",
        };
        Ok(Classifier::load(&self.need(&model_path(name), producer)?)?.0)
    }

    fn root_rng(&self) -> RngStream {
        RngStream::new(self.cfg.seed, 0)
    }

    // ---- poison -------------------------------------------------------

    pub fn poison(&self) -> Result<()> {
        let cfg = &self.cfg;
        let root = self.root_rng();
        let ds = cfg.dataset.generate(&root.child("data"))?;
        let plan = match &cfg.split {
            SplitSpec::SubsetLevel { test_per_class, ratio } => SplitPlan::subset_level(&ds, *test_per_class, *ratio, &root)?,
            SplitSpec::ClassLevel {
                test_per_class,
                protected,
                observation,
                forget,
            } => SplitPlan::class_level(&ds, *test_per_class, protected, observation, forget, &root)?,
        };
        let mut train_ids: Vec<u64> = plan
            .roles
            .iter()
            .filter(|(_, r)| **r != Role::Test)
            .map(|(id, _)| *id)
            .collect();
        train_ids.sort_unstable();
        let train_rows = ds.select_ids(&train_ids)?;
        let test_rows = ds.select_ids(&plan.ids_with(Role::Test))?;
        let craft_rng = root.child("craft");
        let ps = match &cfg.perturbation {
            PerturbationSpec::None => PerturbationSet::zeros(&train_rows, Mode::SampleWise),
            PerturbationSpec::Emin(b) | PerturbationSpec::Emax(b) => {
                let dir = if matches!(cfg.perturbation, PerturbationSpec::Emin(_)) {
                    Direction::Minimize
                } else {
                    Direction::Maximize
                };
                let sur = b.surrogate.unwrap_or(SurrogateSpec {
                    arch: cfg.victim.arch,
                    train: TrainConfig {
                        seed: cfg.seed,
                        ..TrainConfig::default()
                    },
                });
                bilevel_craft(&train_rows, &sur, &b.craft(), dir, &craft_rng)?.0
            }
            PerturbationSpec::ShortcutPixels { pixels } => shortcut_pixels(&train_rows, *pixels)?,
            PerturbationSpec::ShortcutLinear { budget } => shortcut_linear(&train_rows, *budget, &craft_rng)?,
            PerturbationSpec::FeatureDissim {
                budget,
                steps,
                step_size,
            } => {
                let tc = cfg.victim_train();
                let init = fresh_model(cfg.victim.arch, train_rows.dim(), train_rows.num_classes(), &tc)?;
                let reference = train_with_eval(&init, &train_rows, None, &tc)?.0;
                feature_dissim(&train_rows, &reference, *budget, *steps, *step_size)?
            }
        };
        let poisoned = Dataset::concat(&[&apply(&train_rows, &ps)?, &test_rows])?.sorted_by_id();
        self.ensure_dir("data")?;
        save_dataset_csv(&ds, &self.path(DATASET))?;
        save_dataset_csv(&poisoned, &self.path(POISONED))?;
        save_split_plan(&plan, &self.path(SPLIT))?;
        ps.save(&self.path(PERTURBATION), self.lineage("poison", &[])?)?;
        self.record(
            "poison",
            &[DATASET, POISONED, SPLIT, PERTURBATION].map(String::from),
            &[],
        )
    }

    // ---- train --------------------------------------------------------

    pub fn train(&self) -> Result<()> {
        let Loaded { clean, views: v, .. } = self.load_views()?;
        let cfg = &self.cfg;
        let tc = cfg.victim_train();
        let init = fresh_model(cfg.victim.arch, v.train.dim(), v.train.num_classes(), &tc)?;
        let (victim, history) = train_with_eval(&init, &v.train, Some(&v.t), &tc)?;
        let clean_train = clean.select_ids(v.train.ids())?;
        let (clean_model, _) = train_with_eval(&init, &clean_train, None, &tc)?;
        self.ensure_dir("models")?;
        self.ensure_dir("train")?;
        let parents = [POISONED, SPLIT].map(String::from);
        victim.save(&self.path(VICTIM), self.lineage("train", &parents)?)?;
        clean_model.save(&self.path(CLEAN), self.lineage("train", &[DATASET.to_string(), SPLIT.to_string()])?)?;
        history.save_csv(&self.path(HISTORY))?;
        self.record("train", &[VICTIM, CLEAN, HISTORY].map(String::from), &[DATASET, POISONED, SPLIT].map(String::from))
    }

    // ---- unlearn ------------------------------------------------------

    pub fn unlearn(&self) -> Result<()> {
        let Loaded { views: v, .. } = self.load_views()?;
        let victim = self.load_model("before")?;
        let tc = self.cfg.victim_train();
        let inputs = UnlearnInputs {
            arch: self.cfg.victim.arch,
            d_f: &v.f,
            d_r: &v.r,
            train: &tc,
            exec: self.exec,
        };
        self.ensure_dir("models")?;
        self.ensure_dir("unlearn")?;
        let splits = eval_splits(&v);
        let split_refs: Vec<(&str, &Dataset)> = splits.iter().map(|(n, d)| (n.as_str(), d)).collect();
        let mut artifacts = Vec::new();
        let parents = [VICTIM, POISONED, SPLIT].map(String::from);
        for method in &self.cfg.unlearn {
            let t0 = Instant::now();
            let ucfg = UnlearnConfig {
                method: *method,
                seed: self.cfg.seed,
            };
            let (model, sigma) = unlearn(&victim, &inputs, &ucfg).map_err(|e| e.in_stage(&format!("unlearn:{}", method.tag())))?;
            let tag = method.tag();
            model.save(&self.path(&model_path(tag)), self.lineage("unlearn", &parents)?)?;
            let report = UnlearnReport {
                method: tag.to_string(),
                config: ucfg,
                acc: EvalReport::evaluate(tag, &model, &split_refs)?.accuracy,
                sigma,
            };
            let rel = format!("unlearn/{tag}.json");
            write_json(&report, &self.path(&rel))?;
            self.record_time(&format!("unlearn:{tag}"), t0.elapsed().as_secs_f64())?;
            artifacts.push(model_path(tag));
            artifacts.push(rel);
        }
        self.record("unlearn", &artifacts, &parents)
    }

    fn model_parents(&self) -> Vec<String> {
        model_names(&self.cfg).iter().map(|n| model_path(n)).collect()
    }

    // ---- mia / eval ---------------------------------------------------

    pub fn evaluate(&self) -> Result<()> {
        let Loaded { views: v, .. } = self.load_views()?;
        let splits = eval_splits(&v);
        let split_refs: Vec<(&str, &Dataset)> = splits.iter().map(|(n, d)| (n.as_str(), d)).collect();
        let names = model_names(&self.cfg);
        let models: Vec<Classifier> = names.iter().map(|n| self.load_model(n)).collect::<Result<_>>()?;
        let members: Vec<(&str, &Dataset)> = [("D_f", &v.f), ("D_uc", &v.uc)]
            .into_iter()
            .filter(|(_, d)| !d.is_empty())
            .collect();
        let mut reports = Vec::new();
        let mut records = Vec::new();
        for (name, clf) in names.iter().zip(&models) {
            let mut rep = EvalReport::evaluate(name, clf, &split_refs)?;
            for (tag, ds) in &members {
                for variant in MiaVariant::ALL {
                    let rate = if v.t.is_empty() {
                        continue;
                    } else {
                        mia(clf, ds, &v.t, variant, self.cfg.seed)?
                    };
                    if *tag == "D_f" {
                        rep.mia.insert(variant, rate);
                    }
                    records.push(MiaRecord {
                        model: name.clone(),
                        variant,
                        members_tag: tag.to_string(),
                        nonmembers_tag: "D_t".into(),
                        rate,
                        gap_vs_rt: None,
                    });
                }
            }
            reports.push(rep);
        }
        let rt_rates: BTreeMap<(MiaVariant, String), f64> = records
            .iter()
            .filter(|r| r.model == "RT")
            .map(|r| ((r.variant, r.members_tag.clone()), r.rate))
            .collect();
        for r in &mut records {
            r.gap_vs_rt = rt_rates.get(&(r.variant, r.members_tag.clone())).map(|b| r.rate - b);
        }
        if let Some(rt) = reports.iter().find(|r| r.model == "RT").cloned() {
            reports = reports.into_iter().map(|r| r.with_baseline(&rt)).collect();
        }
        self.ensure_dir("eval")?;
        write_eval_csv(&reports, std::fs::File::create(self.path(EVAL_CSV))?)?;
        write_mia_csv(&records, std::fs::File::create(self.path(MIA_CSV))?)?;
        write_json(&reports, &self.path("eval/eval.json"))?;
        let mut parents = self.model_parents();
        parents.extend([POISONED, SPLIT].map(String::from));
        self.record("mia", &[EVAL_CSV, MIA_CSV, "eval/eval.json"].map(String::from), &parents)
    }

    /// Target set and recovery pool for the attacks and the certificate.
    fn recovery_sets(&self, v: &SplitViews, plan: &SplitPlan) -> Result<(Dataset, Dataset)> {
        let target = match plan.forget {
            ForgetSelector::ClassLevel { .. } => v.forget_test(plan),
            ForgetSelector::SubsetLevel { .. } => v.t.clone(),
        };
        let target = if target.is_empty() { v.t.clone() } else { target };
        let pool = v.forget_clean()?;
        if pool.is_empty() {
            return Ok((target, pool));
        }
        let mut r = self.root_rng().child("recovery-pool");
        let take = ((self.cfg.recovery.recovery_fraction * pool.len() as f64).ceil() as usize).clamp(1, pool.len());
        let mut idx = r.permutation(pool.len());
        idx.truncate(take);
        idx.sort_unstable();
        Ok((target, pool.select(&idx)))
    }

    // ---- recover ------------------------------------------------------

    pub fn recover(&self) -> Result<()> {
        let Loaded { plan, views: v, .. } = self.load_views()?;
        let (target, pool) = self.recovery_sets(&v, &plan)?;
        let names = model_names(&self.cfg);
        let models: Vec<Classifier> = names.iter().map(|n| self.load_model(n)).collect::<Result<_>>()?;
        let etas = &self.cfg.recovery.etas;
        let rs = &self.cfg.recovery;
        let tasks: Vec<(usize, f64)> = (0..models.len()).flat_map(|m| etas.iter().map(move |&e| (m, e))).collect();
        let results = self.exec.try_map(tasks.len(), |i| {
            let (m, eta) = tasks[i];
            let rc = RecoveryConfig {
                eta,
                steps: rs.steps,
                lr: rs.lr,
                batch_size: rs.batch_size,
                recovery_fraction: rs.recovery_fraction,
                seed: self.cfg.seed,
                checkpoint_every: rs.checkpoint_every,
            };
            recovery_attack(&models[m], &pool, &target, &rc).map(|r| r.trajectory)
        })?;
        self.ensure_dir("recover")?;
        let mut traj = csv::Writer::from_path(self.path(TRAJECTORY_CSV))?;
        traj.write_record(["model", "eta", "step", "accuracy", "distance"])?;
        let mut summary = csv::Writer::from_path(self.path(RECOVERY_CSV))?;
        summary.write_record(["model", "eta", "start_accuracy", "final_accuracy", "delta", "final_distance"])?;
        for ((m, eta), points) in tasks.iter().zip(&results) {
            for p in points {
                traj.write_record([
                    names[*m].clone(),
                    fmt(*eta),
                    p.step.to_string(),
                    fmt(p.accuracy),
                    fmt(p.distance),
                ])?;
            }
            let (first, last) = (points[0], points[points.len() - 1]);
            summary.write_record([
                names[*m].clone(),
                fmt(*eta),
                fmt(first.accuracy),
                fmt(last.accuracy),
                fmt(last.accuracy - first.accuracy),
                fmt(last.distance),
            ])?;
        }
        traj.flush()?;
        summary.flush()?;
        let mut parents = self.model_parents();
        parents.extend([DATASET, POISONED, SPLIT].map(String::from));
        self.record("recover", &[TRAJECTORY_CSV, RECOVERY_CSV].map(String::from), &parents)
    }

    // ---- certify ------------------------------------------------------

    pub fn certify(&self) -> Result<()> {
        let Some(spec) = self.cfg.certify.clone() else {
            return Ok(());
        };
        if spec.n_samples < 100 {
            return Err(Error::SampleSize(format!("need >= 100 Monte-Carlo samples, got {}", spec.n_samples)));
        }
        let Loaded { plan, views: v, .. } = self.load_views()?;
        let (target, _) = self.recovery_sets(&v, &plan)?;
        let names = model_names(&self.cfg);
        let opts = CertifyOptions {
            one_minus_alpha: spec.one_minus_alpha,
            adjustment: spec.adjustment,
            exec: self.exec,
        };
        let root = self.root_rng().child("certify");
        let mut rows = Vec::new();
        let mut reports: Vec<(String, CertificateReport)> = Vec::new();
        for (i, name) in names.iter().enumerate() {
            let clf = self.load_model(name)?;
            let sorted = monte_carlo_accuracies(&clf, &target, spec.sigma, spec.n_samples, &root.child_indexed("model", i as u64), self.exec)?;
            for eta in self.cfg.certify_etas() {
                match certify_from_samples(sorted.clone(), clf.params.norm(), spec.q, eta, spec.sigma, &opts) {
                    Ok(mut rep) => {
                        rep.mc_values.clear();
                        rows.push(cert_row(name, &rep, "ok"));
                        reports.push((name.clone(), rep));
                    }
                    // The level needs more samples than were drawn: both bounds are vacuous.
                    Err(Error::SampleSize(_)) => {
                        let (q_bar, q_under) = crate::certifier::adjusted_quantile_levels(spec.q, eta, spec.sigma)?;
                        let mut rep = certify_from_samples(sorted.clone(), clf.params.norm(), spec.q, 0.0, spec.sigma, &opts)?;
                        rep.mc_values.clear();
                        rep.eta = eta;
                        rep.eta_relative = eta / clf.params.norm();
                        rep.q_bar = q_bar;
                        rep.q_under = q_under;
                        rep.upper_bound = 1.0;
                        rep.lower_bound = 0.0;
                        rows.push(cert_row(name, &rep, "insufficient_samples"));
                        reports.push((name.clone(), rep));
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        self.ensure_dir("certify")?;
        let mut w = csv::Writer::from_path(self.path(CERT_CSV))?;
        w.write_record([
            "model",
            "eta",
            "eta_relative",
            "q",
            "q_bar",
            "q_under",
            "sigma",
            "n_samples",
            "upper_bound",
            "lower_bound",
            "status",
            "mc_digest",
        ])?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        let names_json: Vec<Value> = reports
            .iter()
            .map(|(n, r)| json!({"model": n, "certificate": r}))
            .collect();
        write_json(
            &json!({"lineage": self.lineage("certify", &self.model_parents())?, "certificates": names_json}),
            &self.path(CERT_JSON),
        )?;
        let mut parents = self.model_parents();
        parents.extend([DATASET, SPLIT].map(String::from));
        self.record("certify", &[CERT_CSV, CERT_JSON].map(String::from), &parents)
    }

    fn report_inputs(&self) -> Vec<String> {
        [EVAL_CSV, MIA_CSV, RECOVERY_CSV, CERT_CSV]
            .iter()
            .filter(|r| self.path(r).is_file())
            .map(|r| r.to_string())
            .collect()
    }

    // ---- report -------------------------------------------------------

    pub fn report(&self, check: bool) -> Result<ReportOutcome> {
        let outcome = write_report(&self.out, self.cfg.expect.as_ref(), check)?;
        self.record("report", &[REPORT.to_string()], &self.report_inputs())?;
        Ok(outcome)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn cert_row(model: &str, r: &CertificateReport, status: &str) -> Vec<String> {
    vec![
        model.to_string(),
        fmt(r.eta),
        fmt(r.eta_relative),
        fmt(r.q),
        format!("{:.9}", r.q_bar),
        format!("{:.9}", r.q_under),
        fmt(r.sigma),
        r.n_samples.to_string(),
        fmt(r.upper_bound),
        fmt(r.lower_bound),
        status.to_string(),
        r.mc_digest.clone(),
    ]
}

/// Named evaluation splits. `D_ut`/`D_ct` are the test rows of classes that
/// do / do not contain protected examples.
pub fn eval_splits(v: &SplitViews) -> Vec<(String, Dataset)> {
    let protected: std::collections::BTreeSet<usize> = v.u.labels().iter().copied().collect();
    vec![
        ("D_u".into(), v.u.clone()),
        ("D_uc".into(), v.uc.clone()),
        ("D_c".into(), v.c.clone()),
        ("D_f".into(), v.f.clone()),
        ("D_r".into(), v.r.clone()),
        ("D_t".into(), v.t.clone()),
        ("D_ut".into(), v.t.filter_labels(|y| protected.contains(&y))),
        ("D_ct".into(), v.t.filter_labels(|y| !protected.contains(&y))),
        ("D_tr".into(), v.tr.clone()),
    ]
}

/// `Pipeline::new(..).run()`.
pub fn run_pipeline(cfg: ExperimentConfig, out: &Path, exec: Exec) -> Result<RunStatus> {
    Pipeline::new(cfg, out, exec)?.run()
}
