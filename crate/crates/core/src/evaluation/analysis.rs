//! Per-policy outcome regressions, reward-outcome correlations and their tables.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::distance::{distance_summary, DistanceSummary};
use super::heatmap::{action_heatmap, ActionHeatmap, ANNOTATION_FLOOR};
use super::regression::{logistic_fit, ols_hc3, ModelKind, RegressionResult};
use super::stats::{correlation_p_value, spearman};
use super::Policy;
use crate::cohort::{Cohort, FeatureSet, NUM_BINS};
use crate::error::{Error, Result};
use crate::outcomes::OutcomeRecord;

pub const DISTANCE_TERM: &str = "distance";

/// Regressed outcomes and their model family.
pub const OUTCOMES: [(&str, ModelKind); 6] = [
    ("mortality", ModelKind::Logistic),
    ("osfd7", ModelKind::Ols),
    ("tsr", ModelKind::Ols),
    ("iv_burden", ModelKind::Ols),
    ("vaso_burden", ModelKind::Ols),
    ("discharge_score", ModelKind::Ols),
];

/// Outcome value used in regressions; `None` drops the trajectory from that fit.
pub fn outcome_value(rec: &OutcomeRecord, outcome: &str) -> Option<f64> {
    match outcome {
        "mortality" => Some(if rec.mortality { 1.0 } else { 0.0 }),
        "osfd7" => Some(rec.osfd7),
        "tsr" => rec.tsr_hours,
        "iv_burden" => Some(rec.iv_burden),
        "vaso_burden" => Some(rec.vaso_burden),
        "discharge_score" => rec.discharge_score.map(f64::from),
        _ => None,
    }
}

/// Adjustment covariates; the comorbidity index is dropped for the reduced
/// feature set or when any evaluated trajectory lacks it, and any covariate
/// that is constant over `indices` is dropped.
pub fn covariate_names(cohort: &Cohort, indices: &[usize]) -> Vec<&'static str> {
    let with_elix = cohort.feature_set() == FeatureSet::Full
        && indices
            .iter()
            .all(|&i| cohort.trajectory(i).covariates.elixhauser.is_some());
    if !with_elix && cohort.feature_set() == FeatureSet::Full {
        log::warn!("comorbidity index missing for some trajectories; dropping it from the regressions");
    }
    let mut v = vec!["age", "sofa_baseline"];
    if with_elix {
        v.push("elixhauser");
    }
    v.extend(["lactate", "shock_index", "mech_vent_baseline"]);
    v.retain(|name| {
        let mut values = indices.iter().map(|&i| covariate_value(cohort, i, name));
        let first = values.next();
        let varies = values.any(|x| Some(x) != first);
        if !varies {
            log::warn!("covariate `{name}` is constant over the evaluated trajectories; dropping it");
        }
        varies
    });
    v
}

fn covariate_value(cohort: &Cohort, i: usize, name: &str) -> f64 {
    let c = &cohort.trajectory(i).covariates;
    match name {
        "age" => c.age,
        "sofa_baseline" => f64::from(c.sofa_baseline),
        "elixhauser" => c.elixhauser.unwrap_or(f64::NAN),
        "lactate" => c.lactate,
        "shock_index" => c.shock_index,
        "mech_vent_baseline" => f64::from(u8::from(c.mech_vent_baseline)),
        _ => f64::NAN,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeFit {
    pub outcome: String,
    pub result: RegressionResult,
    /// Mean of each design column over the fitted rows.
    pub column_means: Vec<f64>,
}

impl OutcomeFit {
    pub fn distance_coef(&self) -> f64 {
        self.result.coefficient(DISTANCE_TERM).unwrap_or(f64::NAN)
    }

    /// Prediction at distance z with other covariates at their means, with a
    /// 95% band; logistic fits are mapped to probabilities.
    pub fn curve_point(&self, z: f64) -> (f64, f64, f64) {
        let mut x = self.column_means.clone();
        if let Some(j) = self.result.index_of(DISTANCE_TERM) {
            x[j] = z;
        }
        let (eta, se) = self.result.linear_prediction(&x);
        let (lo, hi) = (eta - 1.96 * se, eta + 1.96 * se);
        match self.result.model {
            ModelKind::Ols => (eta, lo, hi),
            ModelKind::Logistic => {
                let s = |v: f64| 1.0 / (1.0 + (-v).exp());
                (s(eta), s(lo), s(hi))
            }
        }
    }
}

/// Fit every outcome against the z-scored distance plus covariates. An outcome
/// whose model cannot be estimated (separation, rank deficiency, no
/// convergence) is skipped with a warning.
pub fn regress_outcomes(
    cohort: &Cohort,
    outcomes: &[OutcomeRecord],
    distances: &DistanceSummary,
) -> Result<Vec<OutcomeFit>> {
    if outcomes.len() != cohort.len() {
        return Err(Error::Input(format!(
            "{} outcome records for {} trajectories",
            outcomes.len(),
            cohort.len()
        )));
    }
    let covs = covariate_names(cohort, &distances.indices);
    let mut names = vec!["intercept".to_string(), DISTANCE_TERM.to_string()];
    names.extend(covs.iter().map(|s| s.to_string()));
    let mut fits = Vec::new();
    for (outcome, kind) in OUTCOMES {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut y = Vec::new();
        for (k, &i) in distances.indices.iter().enumerate() {
            let Some(v) = outcome_value(&outcomes[i], outcome) else { continue };
            let mut row = vec![1.0, distances.joint_z[k]];
            row.extend(covs.iter().map(|c| covariate_value(cohort, i, c)));
            rows.push(row);
            y.push(v);
        }
        let p = names.len();
        let x = DMatrix::from_fn(rows.len(), p, |r, c| rows[r][c]);
        let fitted = match kind {
            ModelKind::Ols => ols_hc3(&y, &x, &names),
            ModelKind::Logistic => {
                let yb: Vec<bool> = y.iter().map(|v| *v > 0.5).collect();
                logistic_fit(&yb, &x, &names)
            }
        };
        let result = match fitted {
            Ok(r) => r,
            Err(Error::Numerical(m)) => {
                log::warn!("{outcome}: regression skipped: {m}");
                continue;
            }
            Err(Error::Input(m)) => return Err(Error::Input(format!("{outcome}: {m}"))),
            Err(e) => return Err(e),
        };
        let n = rows.len().max(1) as f64;
        let column_means = (0..p).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n).collect();
        fits.push(OutcomeFit {
            outcome: outcome.to_string(),
            result,
            column_means,
        });
    }
    Ok(fits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub policy: String,
    pub distances: DistanceSummary,
    pub fits: Vec<OutcomeFit>,
    pub heatmaps: [ActionHeatmap; 2],
}

impl PolicyEvaluation {
    pub fn fit(&self, outcome: &str) -> Option<&OutcomeFit> {
        self.fits.iter().find(|f| f.outcome == outcome)
    }
}

pub fn evaluate_policy(
    name: &str,
    policy: &Policy,
    cohort: &Cohort,
    indices: &[usize],
    outcomes: &[OutcomeRecord],
) -> Result<PolicyEvaluation> {
    let distances = distance_summary(policy, cohort, indices)?;
    let fits = regress_outcomes(cohort, outcomes, &distances)?;
    let heatmaps = action_heatmap(policy, cohort, indices)?;
    Ok(PolicyEvaluation {
        policy: name.to_string(),
        distances,
        fits,
        heatmaps,
    })
}

/// Display label for a regression term.
pub fn term_label(term: &str) -> &str {
    match term {
        "intercept" => "Intercept",
        DISTANCE_TERM => "Distance",
        "age" => "Age",
        "sofa_baseline" => "SOFA",
        "elixhauser" => "Elixhauser",
        "lactate" => "Lactate",
        "shock_index" => "Shock Index",
        "mech_vent_baseline" => "MechVent",
        other => other,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// One table per outcome: terms as rows, policies as columns, cells "β (lo, hi)" with stars.
pub fn write_regression_table(path: &Path, outcome: &str, evals: &[PolicyEvaluation]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["term".to_string()];
    header.extend(evals.iter().map(|e| e.policy.clone()));
    w.write_record(&header)?;
    let Some(first) = evals.iter().find_map(|e| e.fit(outcome)) else {
        return finish(w, path);
    };
    for (j, term) in first.result.names.iter().enumerate().skip(1) {
        let mut row = vec![term_label(term).to_string()];
        for e in evals {
            row.push(e.fit(outcome).map_or_else(|| "n/a".to_string(), |f| f.result.format_cell(j)));
        }
        w.write_record(&row)?;
    }
    finish(w, path)
}

#[derive(Debug, Serialize)]
struct CoefRow<'a> {
    outcome: &'a str,
    policy: &'a str,
    model: &'a str,
    term: &'a str,
    coef: f64,
    se: f64,
    ci_lo: f64,
    ci_hi: f64,
    p_value: f64,
    n: usize,
}

pub fn write_coefficients_long(path: &Path, evals: &[PolicyEvaluation]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for e in evals {
        for f in &e.fits {
            let r = &f.result;
            for j in 0..r.coef.len() {
                w.serialize(CoefRow {
                    outcome: &f.outcome,
                    policy: &e.policy,
                    model: match r.model {
                        ModelKind::Ols => "ols_hc3",
                        ModelKind::Logistic => "logistic",
                    },
                    term: &r.names[j],
                    coef: r.coef[j],
                    se: r.se[j],
                    ci_lo: r.ci_lo[j],
                    ci_hi: r.ci_hi[j],
                    p_value: r.p_value[j],
                    n: r.n,
                })?;
            }
        }
    }
    finish(w, path)
}

/// Linear-prediction curves over the z-scored distance.
pub fn write_regression_curves(path: &Path, evals: &[PolicyEvaluation]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["outcome", "policy", "distance_z", "prediction", "ci_lo", "ci_hi"])?;
    for e in evals {
        for f in &e.fits {
            for k in -20..=20 {
                let z = f64::from(k) * 0.1;
                let (p, lo, hi) = f.curve_point(z);
                w.write_record([
                    f.outcome.clone(),
                    e.policy.clone(),
                    format!("{z:.1}"),
                    p.to_string(),
                    lo.to_string(),
                    hi.to_string(),
                ])?;
            }
        }
    }
    finish(w, path)
}

pub fn write_heatmaps(path: &Path, evals: &[PolicyEvaluation]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["policy", "stratum", "iv_bin", "vaso_bin", "count", "freq", "annotate"])?;
    for e in evals {
        for m in &e.heatmaps {
            for iv in 0..NUM_BINS {
                for v in 0..NUM_BINS {
                    let f = m.freq[iv][v];
                    w.write_record([
                        e.policy.clone(),
                        m.stratum.label().to_string(),
                        iv.to_string(),
                        v.to_string(),
                        m.counts[iv][v].to_string(),
                        f.to_string(),
                        (f >= ANNOTATION_FLOOR).to_string(),
                    ])?;
                }
            }
        }
    }
    finish(w, path)
}

pub fn write_distances(path: &Path, evals: &[PolicyEvaluation]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["policy", "trajectory_id", "mean_iv", "mean_vaso", "mean_joint", "joint_z"])?;
    for e in evals {
        for (d, z) in e.distances.per_trajectory.iter().zip(&e.distances.joint_z) {
            w.write_record([
                e.policy.clone(),
                d.trajectory_id.clone(),
                d.mean_iv.to_string(),
                d.mean_vaso.to_string(),
                d.mean_joint.to_string(),
                z.to_string(),
            ])?;
        }
    }
    finish(w, path)
}

/// Spearman correlations of cumulative rewards with each outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub reward: String,
    /// `(outcome, rho, p, n)` in [`OUTCOMES`] order.
    pub cells: Vec<(String, f64, f64, usize)>,
}

/// `returns[k]` holds one cumulative reward per entry of `indices`.
pub fn reward_outcome_correlations(
    returns: &[(String, Vec<f64>)],
    indices: &[usize],
    outcomes: &[OutcomeRecord],
) -> Result<Vec<CorrelationRow>> {
    let mut rows = Vec::new();
    for (name, ret) in returns {
        if ret.len() != indices.len() {
            return Err(Error::Input(format!("{name}: {} returns for {} trajectories", ret.len(), indices.len())));
        }
        let mut cells = Vec::new();
        for (outcome, _) in OUTCOMES {
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for (k, &i) in indices.iter().enumerate() {
                if let Some(v) = outcome_value(&outcomes[i], outcome) {
                    x.push(ret[k]);
                    y.push(v);
                }
            }
            let (rho, p) = match spearman(&x, &y) {
                Ok(r) => (r, correlation_p_value(r, x.len())),
                Err(_) => (f64::NAN, f64::NAN),
            };
            cells.push((outcome.to_string(), rho, p, x.len()));
        }
        rows.push(CorrelationRow { reward: name.clone(), cells });
    }
    Ok(rows)
}

pub fn write_correlations(path: &Path, rows: &[CorrelationRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["reward".to_string()];
    header.extend(OUTCOMES.iter().map(|(o, _)| o.to_string()));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.reward.clone()];
        rec.extend(r.cells.iter().map(|(_, rho, _, _)| format!("{rho:.3}")));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::test_support::simple_trajectory;
    use crate::cohort::Action;
    use crate::evaluation::distance::distance_to_clinician;
    use crate::outcomes::compute_outcomes;
    use rand::Rng;

    fn toy_cohort(n: usize) -> Cohort {
        let mut g = crate::rng::substream(1, "analysis-toy");
        let trajs = (0..n)
            .map(|k| {
                let mut t = simple_trajectory(&format!("t{k}"), 6, 0.0, 3, 0.5);
                let dev = g.random_range(0..3u8);
                t.actions = vec![Action::new(2, dev).unwrap(); 6];
                t.covariates.age = g.random_range(30.0..90.0);
                t.covariates.sofa_baseline = g.random_range(0..15);
                t.covariates.lactate = g.random_range(0.5..8.0);
                t.covariates.shock_index = g.random_range(0.4..1.5);
                t.covariates.elixhauser = Some(g.random_range(0.0..20.0));
                t.covariates.mech_vent_baseline = g.random_bool(0.4);
                // larger deviation from (2, 0) costs support-free time and survival
                let bad = usize::from(dev) * 2 + g.random_range(0..3);
                for f in t.flags.iter_mut().take(bad) {
                    f.mech_vent = true;
                }
                if g.random_bool(0.1 + 0.25 * f64::from(dev)) {
                    t.mortality = true;
                    t.flags[5].alive = false;
                }
                t.map[0] = if g.random_bool(0.6) { 60.0 } else { 80.0 };
                t
            })
            .collect();
        Cohort::new(FeatureSet::Full, trajs).unwrap()
    }

    #[test]
    fn constant_and_missing_covariates_are_dropped() {
        let c = toy_cohort(30);
        let all: Vec<usize> = (0..30).collect();
        assert_eq!(
            covariate_names(&c, &all),
            ["age", "sofa_baseline", "elixhauser", "lactate", "shock_index", "mech_vent_baseline"]
        );
        let mut trajs = c.trajectories().to_vec();
        for t in &mut trajs {
            t.covariates.mech_vent_baseline = false;
        }
        trajs[3].covariates.elixhauser = None;
        let c = Cohort::new(FeatureSet::Full, trajs).unwrap();
        assert_eq!(covariate_names(&c, &all), ["age", "sofa_baseline", "lactate", "shock_index"]);
    }

    #[test]
    fn inestimable_outcome_is_skipped() {
        let mut trajs = toy_cohort(60).trajectories().to_vec();
        for t in &mut trajs {
            t.mortality = false;
            t.flags.iter_mut().for_each(|f| f.alive = true);
        }
        let c = Cohort::new(FeatureSet::Full, trajs).unwrap();
        let all: Vec<usize> = (0..60).collect();
        let outcomes = compute_outcomes(&c);
        let e = evaluate_policy("p", &Policy::Random { seed: 1 }, &c, &all, &outcomes).unwrap();
        assert!(e.fit("mortality").is_none());
        assert_eq!(e.fits.len(), OUTCOMES.len() - 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_regression_table(&path, "mortality", std::slice::from_ref(&e)).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "term,p\n");
    }

    #[test]
    fn deviation_policy_shows_expected_signs() {
        let c = toy_cohort(300);
        let out = compute_outcomes(&c);
        let idx: Vec<usize> = (0..c.len()).collect();
        // a policy fixed at the reference action: its distance is the clinician deviation
        let per: Vec<_> = idx
            .iter()
            .map(|&i| distance_to_clinician(&c, i, &vec![Action::new(2, 0).unwrap(); c.trajectory(i).len()]))
            .collect();
        let joint: Vec<f64> = per.iter().map(|p| p.mean_joint).collect();
        let summary = DistanceSummary {
            indices: idx,
            joint_z: crate::evaluation::stats::z_scores(&joint),
            per_trajectory: per,
        };
        let fits = regress_outcomes(&c, &out, &summary).unwrap();
        let osfd = fits.iter().find(|f| f.outcome == "osfd7").unwrap();
        let mort = fits.iter().find(|f| f.outcome == "mortality").unwrap();
        assert!(osfd.distance_coef() < 0.0);
        assert!(mort.distance_coef() > 0.0);
        assert_eq!(osfd.result.names.len(), 8);
        let (p, lo, hi) = mort.curve_point(0.0);
        assert!(lo <= p && p <= hi && (0.0..1.0).contains(&p));
    }

    #[test]
    fn tables_have_expected_layout() {
        let c = toy_cohort(120);
        let out = compute_outcomes(&c);
        let idx: Vec<usize> = (0..c.len()).collect();
        let evals = vec![
            evaluate_policy("Random policy", &Policy::Random { seed: 1 }, &c, &idx, &out).unwrap(),
            evaluate_policy("Random policy 2", &Policy::Random { seed: 2 }, &c, &idx, &out).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("osfd7.csv");
        write_regression_table(&p, "osfd7", &evals).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "term,Random policy,Random policy 2");
        assert!(lines[1].starts_with("Distance,"));
        assert_eq!(lines.len(), 1 + 7);
        let h = dir.path().join("h.csv");
        write_heatmaps(&h, &evals).unwrap();
        assert_eq!(std::fs::read_to_string(&h).unwrap().lines().count(), 1 + 2 * 2 * 25);
    }

    #[test]
    fn correlations_follow_outcome_order() {
        let c = toy_cohort(80);
        let out = compute_outcomes(&c);
        let idx: Vec<usize> = (0..c.len()).collect();
        let ret: Vec<f64> = idx.iter().map(|&i| out[i].osfd7).collect();
        let rows = reward_outcome_correlations(&[("r".into(), ret)], &idx, &out).unwrap();
        let (name, rho, _, n) = &rows[0].cells[1];
        assert_eq!(name, "osfd7");
        assert!((rho - 1.0).abs() < 1e-12);
        assert_eq!(*n, 80);
    }
}
