//! Markdown summary over whatever CSVs exist in an output directory, plus
//! the consistency checks behind `report --check`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::config::ExpectSpec;
use super::{Manifest, Status, CERT_CSV, EVAL_CSV, MANIFEST, MIA_CSV, RECOVERY_CSV, REPORT, TRAJECTORY_CSV};
use crate::error::Result;

type Row = BTreeMap<String, String>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportOutcome {
    pub markdown: String,
    /// Empty unless checks were requested and some failed.
    pub failures: Vec<String>,
}

impl ReportOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn read_rows(path: &Path) -> Result<Vec<Row>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect());
    }
    Ok(rows)
}

fn num(row: &Row, key: &str) -> f64 {
    row.get(key).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)
}

fn get<'a>(row: &'a Row, key: &str) -> &'a str {
    row.get(key).map(String::as_str).unwrap_or("")
}

/// Models in first-seen order.
fn ordered_models(rows: &[Row]) -> Vec<String> {
    let mut seen = Vec::new();
    for r in rows {
        let m = get(r, "model").to_string();
        if !seen.contains(&m) {
            seen.push(m);
        }
    }
    seen
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

const ACC_COLUMNS: [&str; 9] = ["D_u", "D_uc", "D_c", "D_t", "D_f", "D_r", "D_ut", "D_ct", "D_tr"];

/// Builds `report.md` in `out`. With `check`, also validates rates, the
/// recovery ball, bound ordering, run status and the optional expectation.
pub fn write_report(out: &Path, expect: Option<&ExpectSpec>, check: bool) -> Result<ReportOutcome> {
    let eval = read_rows(&out.join(EVAL_CSV))?;
    let mia = read_rows(&out.join(MIA_CSV))?;
    let recovery = read_rows(&out.join(RECOVERY_CSV))?;
    let certs = read_rows(&out.join(CERT_CSV))?;
    let manifest = Manifest::load(&out.join(MANIFEST)).ok();

    let mut md = String::from("# Dememorization report\n\n");
    if let Some(m) = &manifest {
        let _ = writeln!(md, "- experiment: `{}`\n- config hash: `{}`\n- seed: {}\n", m.name, m.config_hash, m.seed);
    }

    md.push_str("## Accuracy\n\n");
    let acc: BTreeMap<(String, String), String> = eval
        .iter()
        .map(|r| ((get(r, "model").to_string(), get(r, "split").to_string()), get(r, "accuracy").to_string()))
        .collect();
    let cols: Vec<&str> = ACC_COLUMNS
        .iter()
        .copied()
        .filter(|c| ["D_u", "D_uc", "D_c", "D_t"].contains(c) || eval.iter().any(|r| get(r, "split") == *c))
        .collect();
    let rows: Vec<Vec<String>> = ordered_models(&eval)
        .into_iter()
        .map(|m| {
            let mut row = vec![m.clone()];
            row.extend(cols.iter().map(|c| acc.get(&(m.clone(), c.to_string())).cloned().unwrap_or_else(|| "-".into())));
            row
        })
        .collect();
    let mut header = vec!["model"];
    header.extend(&cols);
    table(&mut md, &header, &rows);

    md.push_str("## Membership inference\n\n");
    let rows: Vec<Vec<String>> = mia
        .iter()
        .map(|r| {
            ["model", "variant", "members_tag", "nonmembers_tag", "rate", "gap_vs_rt"]
                .iter()
                .map(|k| match get(r, k) {
                    "" => "-".to_string(),
                    v => v.to_string(),
                })
                .collect()
        })
        .collect();
    table(&mut md, &["model", "variant", "members", "nonmembers", "rate", "gap vs RT"], &rows);

    md.push_str("## Recovery (final target accuracy)\n\n");
    let mut etas: Vec<String> = Vec::new();
    for r in &recovery {
        let e = get(r, "eta").to_string();
        if !etas.contains(&e) {
            etas.push(e);
        }
    }
    let rec: BTreeMap<(String, String), String> = recovery
        .iter()
        .map(|r| ((get(r, "model").to_string(), get(r, "eta").to_string()), get(r, "final_accuracy").to_string()))
        .collect();
    let rows: Vec<Vec<String>> = ordered_models(&recovery)
        .into_iter()
        .map(|m| {
            let mut row = vec![m.clone()];
            row.extend(etas.iter().map(|e| rec.get(&(m.clone(), e.clone())).cloned().unwrap_or_else(|| "-".into())));
            row
        })
        .collect();
    let eta_headers: Vec<String> = etas
        .iter()
        .map(|e| match e.parse::<f64>() {
            Ok(v) => format!("eta={v}"),
            Err(_) => format!("eta={e}"),
        })
        .collect();
    let mut header = vec!["model"];
    header.extend(eta_headers.iter().map(String::as_str));
    table(&mut md, &header, &rows);

    md.push_str("## Certified depth bounds\n\n");
    let rows: Vec<Vec<String>> = certs
        .iter()
        .map(|r| {
            ["model", "eta", "q", "q_bar", "q_under", "upper_bound", "lower_bound", "status"]
                .iter()
                .map(|k| get(r, k).to_string())
                .collect()
        })
        .collect();
    table(&mut md, &["model", "eta", "q", "q_bar", "q_under", "upper", "lower", "status"], &rows);

    let mut failures = Vec::new();
    if check {
        if let Some(m) = &manifest {
            if m.status == Status::Incomplete {
                failures.push(format!(
                    "run is incomplete (failed stage: {})",
                    m.failed_stage.as_deref().unwrap_or("unknown")
                ));
            }
        }
        for r in &eval {
            let a = num(r, "accuracy");
            if !(0.0..=1.0).contains(&a) {
                failures.push(format!("accuracy {a} of {} on {} outside [0, 1]", get(r, "model"), get(r, "split")));
            }
        }
        for r in &mia {
            let v = num(r, "rate");
            if !(0.0..=1.0).contains(&v) {
                failures.push(format!("MIA rate {v} of {} outside [0, 1]", get(r, "model")));
            }
        }
        // Distances are printed with 6 decimals.
        for r in read_rows(&out.join(TRAJECTORY_CSV))? {
            let (eta, d) = (num(&r, "eta"), num(&r, "distance"));
            if !(d <= eta * (1.0 + 1e-9) + 1e-6) {
                failures.push(format!("{} left the eta={eta} ball (distance {d})", get(&r, "model")));
            }
        }
        for r in &certs {
            let (u, l) = (num(r, "upper_bound"), num(r, "lower_bound"));
            if !(l <= u) {
                failures.push(format!("{} at eta={}: lower bound {l} above upper {u}", get(r, "model"), get(r, "eta")));
            }
        }
        if let Some(x) = expect {
            check_expectation(x, &recovery, &mut failures);
        }
        md.push_str("## Checks\n\n");
        if failures.is_empty() {
            md.push_str("All checks passed.\n");
        } else {
            for f in &failures {
                let _ = writeln!(md, "- FAIL: {f}");
            }
        }
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(REPORT), &md)?;
    Ok(ReportOutcome { markdown: md, failures })
}

fn check_expectation(x: &ExpectSpec, recovery: &[Row], failures: &mut Vec<String>) {
    let at = |model: &str| {
        recovery
            .iter()
            .find(|r| get(r, "model") == model && (num(r, "eta") - x.eta).abs() < 1e-9)
    };
    let Some(reference) = at("clean").map(|r| num(r, "start_accuracy")) else {
        failures.push(format!("no recovery row for the clean model at eta={}", x.eta));
        return;
    };
    for m in &x.shallow {
        match at(m) {
            Some(r) if num(r, "final_accuracy") >= reference - x.shallow_within => {}
            Some(r) => failures.push(format!(
                "{m} recovered to {} at eta={}, more than {} below the clean {reference}",
                get(r, "final_accuracy"),
                x.eta,
                x.shallow_within
            )),
            None => failures.push(format!("no recovery row for {m} at eta={}", x.eta)),
        }
    }
    for m in &x.deep {
        match at(m) {
            Some(r) if num(r, "final_accuracy") <= reference - x.deep_below => {}
            Some(r) => failures.push(format!(
                "{m} recovered to {} at eta={}, less than {} below the clean {reference}",
                get(r, "final_accuracy"),
                x.eta,
                x.deep_below
            )),
            None => failures.push(format!("no recovery row for {m} at eta={}", x.eta)),
        }
    }
}
