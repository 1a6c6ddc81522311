//! Study outputs: `metrics.json`, plot-ready CSV tables and trace files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Result, SimError};
use crate::metrics::StudyMetrics;
use crate::trial::TrialResult;

pub const METRICS_FILE: &str = "metrics.json";
pub const PCS_FILE: &str = "pcs.csv";
pub const FUTILITY_FILE: &str = "futility.csv";
pub const ALLOCATION_FILE: &str = "allocation.csv";
pub const TRACE_DIR: &str = "traces";

#[derive(Serialize)]
struct PcsRow<'a> {
    scenario: &'a str,
    design: String,
    n_max: usize,
    subgroup: &'a str,
    true_obd: usize,
    prevalence: f64,
    recommended: String,
    proportion: f64,
    correct: bool,
}

#[derive(Serialize)]
struct FutilityRow<'a> {
    scenario: &'a str,
    design: String,
    n_max: usize,
    assessment: String,
    subgroup: &'a str,
    proportion: f64,
}

#[derive(Serialize)]
struct AllocationRow<'a> {
    scenario: &'a str,
    design: String,
    n_max: usize,
    dose: usize,
    mean_patients: f64,
    share: f64,
}

fn csv_err(path: &Path, e: csv::Error) -> SimError {
    SimError::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

/// Writes every table for `metrics` into `dir`, creating it if needed.
pub fn write_metrics(dir: &Path, metrics: &StudyMetrics) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let path = dir.join(METRICS_FILE);
    let json = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    fs::write(&path, json + "\n").map_err(|e| SimError::io(&path, e))?;

    let m = metrics;
    let design = m.design.to_string();
    let mut pcs = Vec::new();
    for g in &m.pcs {
        let j = g.recommended.len() - 1;
        for (slot, p) in g.recommended.iter().enumerate() {
            pcs.push(PcsRow {
                scenario: &m.scenario,
                design: design.clone(),
                n_max: m.n_max,
                subgroup: &g.label,
                true_obd: g.true_obd.0,
                prevalence: g.prevalence,
                recommended: if slot == j { "none".into() } else { (slot + 1).to_string() },
                proportion: *p,
                correct: slot + 1 == g.true_obd.0,
            });
        }
    }
    write_rows(&dir.join(PCS_FILE), pcs)?;
    write_rows(
        &dir.join(FUTILITY_FILE),
        m.futility.iter().map(|f| FutilityRow {
            scenario: &m.scenario,
            design: design.clone(),
            n_max: m.n_max,
            assessment: f.assessment.to_string(),
            subgroup: &f.label,
            proportion: f.proportion,
        }),
    )?;
    write_rows(
        &dir.join(ALLOCATION_FILE),
        m.allocation
            .mean_per_dose
            .iter()
            .zip(&m.allocation.share_per_dose)
            .enumerate()
            .map(|(j, (mean, share))| AllocationRow {
                scenario: &m.scenario,
                design: design.clone(),
                n_max: m.n_max,
                dose: j + 1,
                mean_patients: *mean,
                share: *share,
            }),
    )
}

pub fn trace_path(dir: &Path, replicate: u64) -> PathBuf {
    dir.join(format!("rep-{replicate:05}.json"))
}

pub fn write_traces(dir: &Path, traces: &[TrialResult]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    for t in traces {
        let path = trace_path(dir, t.replicate);
        fs::write(&path, t.to_json()).map_err(|e| SimError::io(&path, e))?;
    }
    Ok(())
}

/// Loads every `*.json` trace in `dir`, ordered by replicate.
pub fn read_traces(dir: &Path) -> Result<Vec<TrialResult>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| SimError::io(dir, e))? {
        let path = entry.map_err(|e| SimError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let text = fs::read_to_string(&path).map_err(|e| SimError::io(&path, e))?;
            let t: TrialResult = serde_json::from_str(&text).map_err(|e| SimError::Parse {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
            out.push(t);
        }
    }
    out.sort_by_key(|t| t.replicate);
    Ok(out)
}
