use std::path::Path;

use dememlab::pipeline::{run_pipeline, ExperimentConfig, Pipeline, RunStatus};
use dememlab::{Error, Exec};

fn smoke() -> ExperimentConfig {
    ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json")).unwrap()
}

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap()
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run_pipeline(smoke(), a.path(), Exec::Sequential).unwrap(), RunStatus::Completed);
    assert_eq!(run_pipeline(smoke(), b.path(), Exec::Parallel { jobs: 3 }).unwrap(), RunStatus::Completed);
    for f in ["eval/eval.csv", "eval/mia.csv", "recover/trajectory.csv", "certify/certify.csv", "models/GA.json", "manifest.json", "report.md"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs");
    }
}

#[test]
fn rerun_is_cached_until_the_config_changes() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(smoke(), dir.path(), Exec::Sequential).unwrap();
    assert_eq!(run_pipeline(smoke(), dir.path(), Exec::Sequential).unwrap(), RunStatus::Cached);
    let mut changed = smoke();
    changed.seed = 2;
    assert_eq!(run_pipeline(changed, dir.path(), Exec::Sequential).unwrap(), RunStatus::Completed);
}

#[test]
fn missing_input_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(smoke(), dir.path(), Exec::Sequential).unwrap();
    let err = p.run_stage("unlearn").unwrap_err();
    match err {
        Error::Stage { stage, source } => {
            assert_eq!(stage, "unlearn");
            assert!(matches!(*source, Error::Dependency { ref stage, .. } if stage == "poison"), "{source}");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn certificates_stay_ordered() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(smoke(), dir.path(), Exec::Sequential).unwrap();
    let mut r = csv::Reader::from_path(dir.path().join("certify/certify.csv")).unwrap();
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let (u, l) = (col("upper_bound"), col("lower_bound"));
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let (hi, lo): (f64, f64) = (rec[u].parse().unwrap(), rec[l].parse().unwrap());
        assert!(lo <= hi);
        rows += 1;
    }
    assert!(rows > 0);
}
