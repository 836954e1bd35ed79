//! JSON-lines cohort files and summary export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Cohort, FeatureSet, Split, Trajectory};
use crate::error::{Error, Result};

/// Read a JSON-lines cohort file, one trajectory per line. Blank lines are skipped.
pub fn load_cohort(path: impl AsRef<Path>) -> Result<Cohort> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut trajectories = Vec::new();
    let mut feature_set: Option<FeatureSet> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let traj: Trajectory = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let fs = match feature_set {
            Some(fs) => fs,
            None => {
                let width = traj.states.first().map_or(0, Vec::len);
                let fs = FeatureSet::from_len(width).ok_or_else(|| Error::Validation {
                    line: lineno,
                    field: "states".into(),
                    message: format!(
                        "state rows have {width} values; expected {} (full) or {} (reduced)",
                        FeatureSet::Full.len(),
                        FeatureSet::Reduced.len()
                    ),
                })?;
                feature_set = Some(fs);
                fs
            }
        };
        traj.validate(fs.len()).map_err(|v| Error::Validation {
            line: lineno,
            field: v.field.to_string(),
            message: v.message,
        })?;
        if traj.sofa_components.is_none() {
            log::debug!(
                "line {lineno}: no SOFA subscores; organ-count term will use 1{{SOFA > 0}}"
            );
        }
        trajectories.push(traj);
    }
    let fs = feature_set.unwrap_or_default();
    Cohort::new(fs, trajectories)
}

pub fn save_cohort(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in cohort.trajectories() {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long-format `metric,value` summary of a cohort.
pub fn write_summary_csv(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "value"])?;
    let n = cohort.len();
    let steps: usize = cohort.trajectories().iter().map(Trajectory::len).sum();
    let deaths = cohort.trajectories().iter().filter(|t| t.mortality).count();
    let mut rows: Vec<(String, f64)> = vec![
        ("n_trajectories".into(), n as f64),
        ("n_train".into(), cohort.indices(Split::Train).len() as f64),
        ("n_test".into(), cohort.indices(Split::Test).len() as f64),
        ("n_steps".into(), steps as f64),
        ("mean_length_steps".into(), steps as f64 / n.max(1) as f64),
        ("mortality_rate".into(), deaths as f64 / n.max(1) as f64),
    ];
    for score in 0..=5u8 {
        let c = cohort.trajectories().iter().filter(|t| t.tqs == score).count();
        rows.push((format!("tqs_{score}_count"), c as f64));
    }
    let scored: Vec<f64> = cohort
        .trajectories()
        .iter()
        .filter(|t| t.is_scored())
        .map(|t| t.confidence)
        .collect();
    rows.push((
        "mean_confidence_scored".into(),
        scored.iter().sum::<f64>() / scored.len().max(1) as f64,
    ));
    let names = cohort.feature_set().names();
    for (j, name) in names.iter().enumerate() {
        let vals: Vec<f64> = cohort
            .trajectories()
            .iter()
            .flat_map(|t| t.states.iter().map(move |r| r[j]))
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len().max(1) as f64;
        rows.push((format!("feature_mean:{name}"), m));
        rows.push((format!("feature_std:{name}"), v.sqrt()));
    }
    for (k, v) in rows {
        w.write_record([k, v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
