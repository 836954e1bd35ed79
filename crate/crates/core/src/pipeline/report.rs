//! Markdown summary that aggregates the tables of a finished run.

use std::fmt::Write as _;
use std::path::Path;

use super::config::ExperimentConfig;
use super::{RewardAlignment, ALIGNMENT_FILE, REPORT_FILE};
use crate::error::{Error, Result};
use crate::evaluation::analysis::OUTCOMES;

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Input(format!("{}: {other:?}", path.display())),
    })?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for r in rows {
        s += &format!("| {} |\n", r.join(" | "));
    }
    s
}

fn csv_section(doc: &mut String, dir: &Path, file: &str, title: &str, filter: impl Fn(&[String]) -> bool) -> Result<()> {
    let path = dir.join(file);
    if !path.exists() {
        return Ok(());
    }
    let (h, rows) = read_csv(&path)?;
    let rows: Vec<Vec<String>> = rows.into_iter().filter(|r| filter(r)).collect();
    let _ = write!(doc, "\n## {title}\n\n{}", markdown_table(&h, &rows));
    Ok(())
}

/// Build the report text from the files in `dir`; missing tables are skipped.
pub fn build_report(dir: &Path) -> Result<String> {
    let mut doc = String::from("# Run report\n");
    csv_section(&mut doc, dir, "cohort_summary.csv", "Cohort", |_| true)?;
    let align = dir.join(ALIGNMENT_FILE);
    if align.exists() {
        let text = std::fs::read_to_string(&align).map_err(|e| Error::io(&align, e))?;
        let a: RewardAlignment = serde_json::from_str(&text)?;
        let effect = match (a.cohens_d, a.cohens_d_ci) {
            (Some(d), Some((lo, hi))) => format!("{d:.2} (95% CI {lo:.2} to {hi:.2})"),
            _ => "not estimable (fewer than two trajectories in a group)".into(),
        };
        let _ = write!(
            doc,
            "\n## Learned reward vs quality score (test split)\n\n\
             - trajectories: {}\n- Spearman rho: {:.3} (p = {:.2e})\n\
             - Cohen's d, score 5 vs 1: {effect}\n\n",
            a.n, a.spearman, a.spearman_p
        );
        let rows: Vec<Vec<String>> = a
            .by_tqs
            .iter()
            .map(|(s, m, n)| vec![s.to_string(), m.map_or("-".into(), |m| format!("{m:.4}")), n.to_string()])
            .collect();
        doc += &markdown_table(&["tqs".into(), "mean reward".into(), "n".into()], &rows);
    }
    csv_section(&mut doc, dir, "reward_correlations.csv", "Spearman correlation of cumulative reward with outcomes", |_| true)?;
    for (outcome, _) in OUTCOMES {
        csv_section(
            &mut doc,
            dir,
            &format!("regression_{outcome}.csv"),
            &format!("Regression: {outcome}, beta (95% CI)"),
            |_| true,
        )?;
    }
    csv_section(&mut doc, dir, "fig_feature_importance.csv", "Top permutation importances", |r| {
        r.get(2).and_then(|v| v.parse::<usize>().ok()).is_some_and(|rank| rank <= 5)
    })?;
    Ok(doc)
}

pub fn write_report(cfg: &ExperimentConfig) -> Result<()> {
    let text = build_report(&cfg.output_dir)?;
    let path = cfg.output_dir.join(REPORT_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}
