//! `dememlab`: run the dememorization pipeline, or any one stage of it, from
//! a JSON experiment config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use dememlab::pipeline::{apply_override, write_report, ExperimentConfig, Pipeline};
use dememlab::{Error, Exec};

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "dememlab", version, about = "Unlearnability, unlearning, recovery attacks and dememorization-depth certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set recovery.etas=[0,0.4]`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Worker threads for Monte-Carlo, recovery grids and per-sample gradients.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory (default: the config's `out_dir`, else `runs/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset, split plan and perturbations.
    Poison(Common),
    /// Train the victim on poisoned data and the clean reference model.
    Train(Common),
    /// Unlearn the forget set with every configured method.
    Unlearn {
        #[command(flatten)]
        common: Common,
        /// Run only this method (RT, FT, GA, IF, CERT).
        #[arg(long)]
        method: Option<String>,
        /// IF update scale.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Recovery attacks over the eta grid.
    Recover(Common),
    /// Monte-Carlo dememorization-depth certificates.
    Certify(Common),
    /// Split accuracies and membership inference.
    Mia(Common),
    /// Merge the CSVs into report.md.
    Report {
        #[command(flatten)]
        common: Common,
        /// Exit with status 4 if a consistency or expectation check fails.
        #[arg(long)]
        check: bool,
    },
    /// Every stage in order; a no-op when the directory already holds this config.
    Run(Common),
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Stage(Error),
    Check(Vec<String>),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Stage(e)
        }
    }
}

fn load_config(common: &Common, extra: &[String]) -> Result<ExperimentConfig, CliError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config FILE is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut doc: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for s in common.set.iter().chain(extra) {
        apply_override(&mut doc, s)?;
    }
    if let Ok(seed) = std::env::var("DEMEMLAB_SEED") {
        let seed: u64 = seed
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("DEMEMLAB_SEED={seed} is not an unsigned integer")))?;
        doc["seed"] = json!(seed);
    }
    Ok(ExperimentConfig::from_value(doc)?)
}

fn out_dir(common: &Common, cfg: Option<&ExperimentConfig>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out_dir.clone()).map(PathBuf::from))
        .unwrap_or_else(|| Path::new("runs").join(cfg.map(|c| c.name.as_str()).unwrap_or("experiment")))
}

fn pipeline(common: &Common, extra: &[String]) -> Result<Pipeline, CliError> {
    let cfg = load_config(common, extra)?;
    let out = out_dir(common, Some(&cfg));
    Ok(Pipeline::new(cfg, &out, Exec::from_jobs(common.jobs))?)
}

fn stage(common: &Common, name: &str) -> Result<(), CliError> {
    let p = pipeline(common, &[])?;
    p.run_stage(name)?;
    println!("{name}: done ({})", p.out.display());
    Ok(())
}

/// `--method` keeps only that method's entry (created with defaults when
/// absent); the numeric flags then override its fields.
fn unlearn_overrides(
    common: &Common,
    method: Option<&str>,
    alpha: Option<f64>,
    epochs: Option<usize>,
    lr: Option<f64>,
) -> Result<Vec<String>, CliError> {
    let Some(method) = method.map(str::to_uppercase) else {
        if alpha.is_some() || epochs.is_some() || lr.is_some() {
            return Err(CliError::Config("--alpha/--epochs/--lr need --method".into()));
        }
        return Ok(Vec::new());
    };
    let base = load_config(common, &[])?;
    let existing = base
        .unlearn
        .iter()
        .find(|m| m.tag() == method)
        .map(|m| serde_json::to_value(m).expect("serializable"));
    let mut entry = match (existing, method.as_str()) {
        (Some(v), _) => v,
        (None, "RT") => json!({"method": "RT"}),
        (None, "FT") | (None, "GA") => json!({"method": method, "epochs": 10, "lr": 0.01}),
        (None, "IF") => json!({"method": "IF", "alpha": 1.0, "hessian": {"kind": "woodfisher", "damping": 0.01}}),
        (None, other) => {
            return Err(CliError::Config(format!(
                "method `{other}` needs its parameters in the config's unlearn list"
            )))
        }
    };
    if let Some(a) = alpha {
        entry["alpha"] = json!(a);
    }
    if let Some(e) = epochs {
        entry["epochs"] = json!(e);
    }
    if let Some(l) = lr {
        entry["lr"] = json!(l);
    }
    Ok(vec![format!("unlearn=[{entry}]")])
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Poison(c) => stage(&c, "poison"),
        Command::Train(c) => stage(&c, "train"),
        Command::Recover(c) => stage(&c, "recover"),
        Command::Certify(c) => stage(&c, "certify"),
        Command::Mia(c) => stage(&c, "mia"),
        Command::Unlearn {
            common,
            method,
            alpha,
            epochs,
            lr,
        } => {
            let extra = unlearn_overrides(&common, method.as_deref(), alpha, epochs, lr)?;
            let p = pipeline(&common, &extra)?;
            p.run_stage("unlearn")?;
            println!("unlearn: done ({})", p.out.display());
            Ok(())
        }
        Command::Report { common, check } => {
            let outcome = if common.config.is_some() {
                pipeline(&common, &[])?.report(check)?
            } else {
                write_report(&out_dir(&common, None), None, check)?
            };
            print!("{}", outcome.markdown);
            if outcome.passed() {
                Ok(())
            } else {
                Err(CliError::Check(outcome.failures))
            }
        }
        Command::Run(c) => {
            let p = pipeline(&c, &[])?;
            let status = p.run()?;
            println!("run: {} (config hash {}, {})", status.as_str(), p.hash, p.out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_STAGE)
        }
        Err(CliError::Check(failures)) => {
            for f in failures {
                eprintln!("check failed: {f}");
            }
            ExitCode::from(EXIT_CHECK)
        }
    }
}
