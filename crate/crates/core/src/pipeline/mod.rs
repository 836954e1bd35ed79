//! Seeded end-to-end pipeline. Every stage reads the artifacts of the previous
//! stages from the run directory, so stages can also run one at a time.

pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_rewards, sofa_count_approximated, write_reward_trace, BaselineReward};
use crate::cohort::{
    generate_synthetic_cohort, load_cohort, save_cohort, write_summary_csv, Action, Cohort, FeatureSet, NUM_ACTIONS,
};
use crate::error::{Error, Result};
use crate::evaluation::analysis::{
    evaluate_policy, reward_outcome_correlations, write_coefficients_long, write_correlations, write_distances,
    write_heatmaps, write_regression_curves, write_regression_table, PolicyEvaluation, OUTCOMES,
};
use crate::evaluation::forest::permutation_importance;
use crate::evaluation::heatmap::{action_heatmap, SOFA_SPLIT};
use crate::evaluation::stats::{cohens_d, correlation_p_value, spearman};
use crate::evaluation::Policy;
use crate::offline_rl::{build_transitions, train_policy, QModel};
use crate::outcomes::{compute_outcomes, read_outcomes_csv, write_outcomes_csv, OutcomeRecord};
use crate::preference::{fit_normalization, train_reward, LearnedReward};
use crate::rng;

pub use checkpoint::{PolicyCheckpoint, RewardCheckpoint};
pub use config::ExperimentConfig;
pub use manifest::Manifest;

pub const CONFIG_FILE: &str = "config.resolved.toml";
pub const COHORT_FILE: &str = "cohort.jsonl";
pub const REWARD_FILE: &str = "reward_model.json";
pub const OUTCOMES_FILE: &str = "outcomes.csv";
pub const ALIGNMENT_FILE: &str = "reward_alignment.json";
pub const EVAL_SUMMARY_FILE: &str = "eval_summary.json";
pub const REPORT_FILE: &str = "report.md";

/// Key of the learned reward among the reward formulations.
pub const CNPR: &str = "cnpr";

/// A stage failure with the name of the stage.
#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.source.exit_code()
    }
}

trait InStage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> InStage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

/// A reward formulation trained on and evaluated in the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardKind {
    Learned,
    Baseline(BaselineReward),
}

/// `(key, kind)` for every formulation, learned reward first.
pub fn reward_kinds(cfg: &ExperimentConfig) -> Vec<(String, RewardKind)> {
    let mut v = vec![(CNPR.to_string(), RewardKind::Learned)];
    v.extend(
        cfg.baselines
            .rewards()
            .into_iter()
            .map(|b| (b.name().to_string(), RewardKind::Baseline(b))),
    );
    v
}

pub fn rewards_file(key: &str) -> String {
    format!("rewards_{key}.csv")
}

pub fn policy_file(key: &str) -> String {
    format!("policy_{key}.json")
}

/// Column label of the policy trained on reward `key`.
pub fn policy_label(key: &str) -> String {
    match key {
        CNPR => "CN-PR".into(),
        "sofa-lac" => "SOFA-Lac policy".into(),
        "mortality" => "Mortality policy".into(),
        "news2" => "NEWS2 policy".into(),
        other => format!("{other} policy"),
    }
}

pub fn reward_label(key: &str) -> String {
    match key {
        CNPR => "CN-PR Reward".into(),
        "sofa-lac" => "SOFA-Lac Reward".into(),
        "mortality" => "Mortality Reward".into(),
        "news2" => "NEWS2 Reward".into(),
        other => format!("{other} reward"),
    }
}

pub const RANDOM_POLICY: &str = "Random policy";
pub const CLINICIAN: &str = "Clinician";

fn out(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn flush(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Size the global worker pool once; later calls keep the first setting.
pub fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already initialized; keeping its size");
        }
    }
}

/// Create the run directory, clear an old failure marker and write the resolved config.
pub fn prepare_run_dir(cfg: &ExperimentConfig) -> StageResult<()> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).stage("prepare")?;
    manifest::clear_failed_marker(dir).stage("prepare")?;
    write_text(&out(cfg, CONFIG_FILE), &cfg.to_toml_string().stage("prepare")?).stage("prepare")
}

// ---------------------------------------------------------------- cohort

fn project_reduced(cohort: Cohort) -> Result<Cohort> {
    if cohort.feature_set() == FeatureSet::Reduced {
        return Ok(cohort);
    }
    let trajs = cohort
        .trajectories()
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.states = t.states.iter().map(|r| FeatureSet::Reduced.project(r)).collect();
            t.covariates.elixhauser = None;
            t
        })
        .collect();
    Cohort::new(FeatureSet::Reduced, trajs)
}

/// Generate or load the cohort and write it with its summary tables.
pub fn stage_generate(cfg: &ExperimentConfig) -> StageResult<Cohort> {
    let cohort = match &cfg.cohort.path {
        Some(p) => {
            let c = load_cohort(p).stage("load_cohort")?;
            if cfg.reduced_features {
                project_reduced(c).stage("load_cohort")?
            } else {
                c
            }
        }
        None => generate_synthetic_cohort(&cfg.cohort.synthetic, cfg.seed).stage("generate")?,
    };
    (|| {
        save_cohort(&cohort, out(cfg, COHORT_FILE))?;
        write_summary_csv(&cohort, out(cfg, "cohort_summary.csv"))?;
        write_tqs_distribution(&cohort, &out(cfg, "fig_tqs_distribution.csv"))
    })()
    .stage("generate")?;
    Ok(cohort)
}

fn write_tqs_distribution(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["tqs", "count", "share"])?;
    let n = cohort.len().max(1) as f64;
    for s in 0..=5u8 {
        let c = cohort.trajectories().iter().filter(|t| t.tqs == s).count();
        w.write_record([s.to_string(), c.to_string(), (c as f64 / n).to_string()])?;
    }
    flush(w, path)
}

/// Seeded train/test split with the training-fitted scaler.
pub fn split_cohort(cfg: &ExperimentConfig, cohort: Cohort) -> StageResult<Cohort> {
    cohort.fit_split_and_scaler(cfg.train_frac, cfg.seed).stage("split")
}

/// Load the run's cohort file and apply the split.
pub fn load_run_cohort(cfg: &ExperimentConfig) -> StageResult<Cohort> {
    let c = load_cohort(out(cfg, COHORT_FILE)).stage("load_cohort")?;
    split_cohort(cfg, c)
}

// ---------------------------------------------------------------- reward

/// Held-out agreement between the learned reward and the quality scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardAlignment {
    pub n: usize,
    pub spearman: f64,
    pub spearman_p: f64,
    /// Cohen's d of mean reward, quality score 5 relative to 1; `None` when
    /// either group has fewer than two trajectories.
    pub cohens_d: Option<f64>,
    pub cohens_d_ci: Option<(f64, f64)>,
    /// `(tqs, mean of per-trajectory mean reward, count)`.
    pub by_tqs: Vec<(u8, Option<f64>, usize)>,
}

/// Spearman and effect size of per-trajectory mean normalized reward against
/// the quality score over scored test trajectories.
pub fn reward_alignment(reward: &LearnedReward, cohort: &Cohort, n_boot: usize, seed: u64) -> Result<RewardAlignment> {
    let idx: Vec<usize> = cohort
        .test_indices()
        .into_iter()
        .filter(|&i| cohort.trajectory(i).tqs > 0)
        .collect();
    let mut means = Vec::with_capacity(idx.len());
    for &i in &idx {
        means.push(reward.mean_reward(cohort, i)?);
    }
    let tqs: Vec<f64> = idx.iter().map(|&i| f64::from(cohort.trajectory(i).tqs)).collect();
    let rho = spearman(&means, &tqs)?;
    let group = |s: u8| -> Vec<f64> {
        idx.iter()
            .zip(&means)
            .filter(|(i, _)| cohort.trajectory(**i).tqs == s)
            .map(|(_, m)| *m)
            .collect()
    };
    let (top, bottom) = (group(5), group(1));
    let eff = if top.len() < 2 || bottom.len() < 2 {
        log::warn!(
            "effect size skipped: {} held-out trajectories score 5 and {} score 1",
            top.len(),
            bottom.len()
        );
        None
    } else {
        Some(cohens_d(&top, &bottom, n_boot, seed)?)
    };
    let by_tqs = (1..=5u8)
        .map(|s| {
            let g = group(s);
            let m = (!g.is_empty()).then(|| g.iter().sum::<f64>() / g.len() as f64);
            (s, m, g.len())
        })
        .collect();
    Ok(RewardAlignment {
        n: idx.len(),
        spearman: rho,
        spearman_p: correlation_p_value(rho, idx.len()),
        cohens_d: eff.as_ref().map(|e| e.d),
        cohens_d_ci: eff.map(|e| (e.ci_lo, e.ci_hi)),
        by_tqs,
    })
}

/// Train the preference reward, fit its normalization and write the checkpoint
/// with its training log and reward-quality tables.
pub fn stage_learn_reward(cfg: &ExperimentConfig, cohort: &Cohort) -> StageResult<(LearnedReward, RewardAlignment)> {
    const S: &str = "learn_reward";
    let (model, log) = train_reward(cohort, &cfg.reward).stage(S)?;
    let norm = fit_normalization(&model, cohort).stage(S)?;
    let reward = LearnedReward { model, norm };
    let upstream = checkpoint::upstream_hashes(&cfg.output_dir, &[COHORT_FILE]).stage(S)?;
    let ck = RewardCheckpoint::new(&reward, cohort.feature_set(), cohort.scaler(), upstream);
    checkpoint::save_json(&ck, &out(cfg, REWARD_FILE)).stage(S)?;
    log.write_csv(out(cfg, "reward_train_log.csv")).stage(S)?;
    let seed = rng::derive_seed(cfg.seed, rng::streams::BOOTSTRAP);
    let alignment = reward_alignment(&reward, cohort, cfg.evaluation.n_boot, seed).stage(S)?;
    write_json_pretty(&out(cfg, ALIGNMENT_FILE), &alignment).stage(S)?;
    write_reward_by_tqs(&reward, cohort, &out(cfg, "fig_reward_by_tqs.csv")).stage(S)?;
    write_reward_surface(&reward, cohort, &out(cfg, "fig_reward_surface.csv")).stage(S)?;
    Ok((reward, alignment))
}

fn write_reward_by_tqs(reward: &LearnedReward, cohort: &Cohort, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["trajectory_id", "split", "tqs", "mean_reward"])?;
    for i in 0..cohort.len() {
        let t = cohort.trajectory(i);
        if t.tqs == 0 {
            continue;
        }
        let split = match cohort.split()[i] {
            crate::cohort::Split::Train => "train",
            crate::cohort::Split::Test => "test",
        };
        w.write_record([t.id.clone(), split.into(), t.tqs.to_string(), reward.mean_reward(cohort, i)?.to_string()])?;
    }
    flush(w, path)
}

/// Mean normalized reward of every joint action over test states, by severity stratum.
fn write_reward_surface(reward: &LearnedReward, cohort: &Cohort, path: &Path) -> Result<()> {
    let mut rows: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for i in cohort.test_indices() {
        let f = cohort.features(i);
        for t in 0..f.nrows() {
            let sofa = cohort.raw_value(i, t, "sofa").unwrap_or(0.0);
            rows[usize::from(sofa >= SOFA_SPLIT)].push(f.row(t).to_vec());
        }
    }
    let mut w = csv_writer(path)?;
    w.write_record(["stratum", "iv_bin", "vaso_bin", "mean_reward", "n_states"])?;
    for (k, states) in rows.iter().enumerate() {
        let label = if k == 0 { "SOFA<8" } else { "SOFA>=8" };
        let n = states.len();
        let d = cohort.feature_count();
        let x = Array2::from_shape_fn((n, d), |(r, c)| states[r][c]);
        for j in 0..NUM_ACTIONS {
            let a = Action::from_joint(j)?;
            let m = if n == 0 {
                f64::NAN
            } else {
                let raw = reward.model.rewards(x.view(), &vec![a; n])?;
                raw.iter().map(|&r| crate::preference::normalize_reward(r, &reward.norm)).sum::<f64>() / n as f64
            };
            w.write_record([label.to_string(), a.iv_bin().to_string(), a.vaso_bin().to_string(), m.to_string(), n.to_string()])?;
        }
    }
    flush(w, path)
}

/// Load the reward checkpoint, warning when its cohort has changed.
pub fn load_reward(cfg: &ExperimentConfig) -> StageResult<LearnedReward> {
    let ck = checkpoint::load_reward_checkpoint(&out(cfg, REWARD_FILE)).stage("load_reward")?;
    checkpoint::check_upstream(&cfg.output_dir, REWARD_FILE, &ck.upstream);
    ck.learned_reward().stage("load_reward")
}

// ---------------------------------------------------------------- rewards

/// Per-step rewards of every trajectory under each formulation, by cohort position.
pub type RewardTraces = BTreeMap<String, Vec<Vec<f64>>>;

pub fn score_rewards(cfg: &ExperimentConfig, cohort: &Cohort, learned: &LearnedReward) -> Result<RewardTraces> {
    let approx = sofa_count_approximated(cohort);
    if approx > 0 {
        log::warn!("{approx} trajectories lack SOFA subscores; the organ count uses 1{{SOFA > 0}}");
    }
    let mut traces = RewardTraces::new();
    for (key, kind) in reward_kinds(cfg) {
        let mut v = Vec::with_capacity(cohort.len());
        for i in 0..cohort.len() {
            v.push(match &kind {
                RewardKind::Learned => learned.step_rewards(cohort, i)?,
                RewardKind::Baseline(b) => baseline_rewards(cohort, i, b)?,
            });
        }
        traces.insert(key, v);
    }
    Ok(traces)
}

/// Score all formulations and write one trace file per formulation.
pub fn stage_score_baselines(cfg: &ExperimentConfig, cohort: &Cohort, learned: &LearnedReward) -> StageResult<RewardTraces> {
    const S: &str = "score_baselines";
    let traces = score_rewards(cfg, cohort, learned).stage(S)?;
    for (key, v) in &traces {
        let rows: Vec<(usize, Vec<f64>)> = v.iter().cloned().enumerate().collect();
        write_reward_trace(out(cfg, &rewards_file(key)), cohort, &rows).stage(S)?;
    }
    Ok(traces)
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    trajectory_id: String,
    step: usize,
    reward: f64,
}

/// Read a reward trace file into per-position vectors, checking it covers the cohort.
pub fn read_reward_trace(path: &Path, cohort: &Cohort) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Input(format!("{}: {other:?}", path.display())),
    })?;
    let pos: BTreeMap<&str, usize> = cohort
        .trajectories()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id.as_str(), i))
        .collect();
    let mut v: Vec<Vec<f64>> = vec![Vec::new(); cohort.len()];
    for (k, rec) in r.deserialize::<TraceRow>().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { line: k + 2, message: e.to_string() })?;
        let &i = pos.get(rec.trajectory_id.as_str()).ok_or_else(|| Error::Validation {
            line: k + 2,
            field: "trajectory_id".into(),
            message: format!("`{}` is not in the cohort", rec.trajectory_id),
        })?;
        if rec.step != v[i].len() {
            return Err(Error::Validation {
                line: k + 2,
                field: "step".into(),
                message: format!("expected step {} of `{}`", v[i].len(), rec.trajectory_id),
            });
        }
        v[i].push(rec.reward);
    }
    for (i, r) in v.iter().enumerate() {
        if r.len() != cohort.trajectory(i).len() {
            return Err(Error::Input(format!(
                "{}: trajectory `{}` has {} rewards for {} steps",
                path.display(),
                cohort.trajectory(i).id,
                r.len(),
                cohort.trajectory(i).len()
            )));
        }
    }
    Ok(v)
}

pub fn load_reward_traces(cfg: &ExperimentConfig, cohort: &Cohort) -> StageResult<RewardTraces> {
    reward_kinds(cfg)
        .into_iter()
        .map(|(key, _)| {
            let v = read_reward_trace(&out(cfg, &rewards_file(&key)), cohort).stage("load_rewards")?;
            Ok((key, v))
        })
        .collect()
}

// ---------------------------------------------------------------- policies

/// Train one conservative Q-network per reward formulation on the training split.
pub fn stage_train_policies(
    cfg: &ExperimentConfig,
    cohort: &Cohort,
    traces: &RewardTraces,
) -> StageResult<Vec<(String, QModel)>> {
    const S: &str = "train_policy";
    let train = cohort.train_indices();
    let mut policies = Vec::new();
    for (k, (key, _)) in reward_kinds(cfg).into_iter().enumerate() {
        let trace = traces
            .get(&key)
            .ok_or_else(|| Error::State(format!("no rewards scored for `{key}`")))
            .stage(S)?;
        let data = build_transitions(cohort, &train, |i| Ok(trace[i].clone())).stage(S)?;
        let mut rl = cfg.rl;
        rl.seed = rng::derive_indexed(cfg.seed, rng::streams::RL, k as u64);
        log::info!("training {} on {} transitions", policy_label(&key), data.len());
        let (q, log) = train_policy(&data, &rl).stage(S)?;
        let upstream = checkpoint::upstream_hashes(&cfg.output_dir, &[COHORT_FILE, &rewards_file(&key)]).stage(S)?;
        checkpoint::save_json(&PolicyCheckpoint::new(&key, &q, cohort.scaler(), upstream), &out(cfg, &policy_file(&key)))
            .stage(S)?;
        log.write_csv(out(cfg, &format!("rl_log_{key}.csv"))).stage(S)?;
        policies.push((key, q));
    }
    Ok(policies)
}

pub fn load_policies(cfg: &ExperimentConfig) -> StageResult<Vec<(String, QModel)>> {
    reward_kinds(cfg)
        .into_iter()
        .map(|(key, _)| {
            let name = policy_file(&key);
            let ck = checkpoint::load_policy_checkpoint(&out(cfg, &name)).stage("load_policy")?;
            checkpoint::check_upstream(&cfg.output_dir, &name, &ck.upstream);
            Ok((key, ck.q_model().stage("load_policy")?))
        })
        .collect()
}

// ---------------------------------------------------------------- outcomes

pub fn stage_compute_outcomes(cfg: &ExperimentConfig, cohort: &Cohort) -> StageResult<Vec<OutcomeRecord>> {
    let rec = compute_outcomes(cohort);
    write_outcomes_csv(out(cfg, OUTCOMES_FILE), &rec).stage("compute_outcomes")?;
    Ok(rec)
}

pub fn load_outcomes(cfg: &ExperimentConfig, cohort: &Cohort) -> StageResult<Vec<OutcomeRecord>> {
    const S: &str = "load_outcomes";
    let rec = read_outcomes_csv(out(cfg, OUTCOMES_FILE)).stage(S)?;
    if rec.len() != cohort.len() || rec.iter().zip(cohort.trajectories()).any(|(r, t)| r.trajectory_id != t.id) {
        return Err(Error::Input(format!("{OUTCOMES_FILE} does not match the cohort; rerun compute-outcomes"))).stage(S);
    }
    Ok(rec)
}

// ---------------------------------------------------------------- evaluation

/// Distance coefficients of one policy, keyed by outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub distance_coef: BTreeMap<String, f64>,
    pub distance_p: BTreeMap<String, f64>,
    pub mean_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_evaluated: usize,
    pub policies: Vec<PolicySummary>,
}

/// Regressions, correlations, heatmaps and feature importances on the test split.
pub fn stage_evaluate(
    cfg: &ExperimentConfig,
    cohort: &Cohort,
    policies: &[(String, QModel)],
    outcomes: &[OutcomeRecord],
    traces: &RewardTraces,
) -> StageResult<(Vec<PolicyEvaluation>, EvalSummary)> {
    const S: &str = "evaluate";
    let idx = cohort.test_indices();
    let mut named: Vec<(String, Policy)> = policies
        .iter()
        .map(|(k, q)| (policy_label(k), Policy::Greedy(Box::new(q.clone()))))
        .collect();
    named.push((
        RANDOM_POLICY.into(),
        Policy::Random { seed: rng::derive_seed(cfg.seed, rng::streams::POLICY) },
    ));
    let evals = named
        .iter()
        .map(|(name, p)| evaluate_policy(name, p, cohort, &idx, outcomes))
        .collect::<Result<Vec<_>>>()
        .stage(S)?;

    (|| {
        for (outcome, _) in OUTCOMES {
            write_regression_table(&out(cfg, &format!("regression_{outcome}.csv")), outcome, &evals)?;
        }
        write_coefficients_long(&out(cfg, "regression_coefficients.csv"), &evals)?;
        write_regression_curves(&out(cfg, "fig_regression_curves.csv"), &evals)?;
        write_distances(&out(cfg, "distances.csv"), &evals)?;
        // action heatmaps include the clinician for reference
        let clinician = PolicyEvaluation {
            policy: CLINICIAN.into(),
            distances: crate::evaluation::distance::DistanceSummary {
                indices: Vec::new(),
                per_trajectory: Vec::new(),
                joint_z: Vec::new(),
            },
            fits: Vec::new(),
            heatmaps: action_heatmap(&Policy::Clinician, cohort, &idx)?,
        };
        let mut with_clin = vec![clinician];
        with_clin.extend(evals.iter().cloned());
        write_heatmaps(&out(cfg, "fig_action_heatmaps.csv"), &with_clin)?;

        let returns: Vec<(String, Vec<f64>)> = reward_kinds(cfg)
            .iter()
            .map(|(k, _)| (reward_label(k), idx.iter().map(|&i| traces[k][i].iter().sum()).collect()))
            .collect();
        let corr = reward_outcome_correlations(&returns, &idx, outcomes)?;
        write_correlations(&out(cfg, "reward_correlations.csv"), &corr)?;

        if cfg.evaluation.feature_importance {
            let cnpr = policies
                .iter()
                .find(|(k, _)| k == CNPR)
                .map(|(_, q)| Policy::Greedy(Box::new(q.clone())));
            let mut targets = vec![(CLINICIAN.to_string(), Policy::Clinician)];
            if let Some(p) = cnpr {
                targets.push((policy_label(CNPR), p));
            }
            write_feature_importance(cfg, cohort, &idx, &targets, &out(cfg, "fig_feature_importance.csv"))?;
        }
        Ok(())
    })()
    .stage(S)?;

    let summary = EvalSummary {
        n_evaluated: idx.len(),
        policies: evals
            .iter()
            .map(|e| PolicySummary {
                policy: e.policy.clone(),
                distance_coef: e.fits.iter().map(|f| (f.outcome.clone(), f.distance_coef())).collect(),
                distance_p: e
                    .fits
                    .iter()
                    .map(|f| (f.outcome.clone(), f.result.p_value[f.result.index_of("distance").unwrap_or(1)]))
                    .collect(),
                mean_distance: e.distances.per_trajectory.iter().map(|d| d.mean_joint).sum::<f64>()
                    / e.distances.per_trajectory.len().max(1) as f64,
            })
            .collect(),
    };
    write_json_pretty(&out(cfg, EVAL_SUMMARY_FILE), &summary).stage(S)?;
    Ok((evals, summary))
}

fn write_feature_importance(
    cfg: &ExperimentConfig,
    cohort: &Cohort,
    idx: &[usize],
    policies: &[(String, Policy)],
    path: &Path,
) -> Result<()> {
    let d = cohort.feature_count();
    let names = cohort.feature_set().names();
    let rows: Vec<(usize, usize)> = idx.iter().flat_map(|&i| (0..cohort.trajectory(i).len()).map(move |t| (i, t))).collect();
    let x = Array2::from_shape_fn((rows.len(), d), |(r, c)| cohort.trajectory(rows[r].0).states[rows[r].1][c]);
    let mut w = csv_writer(path)?;
    w.write_record(["policy", "target", "rank", "feature", "importance", "std", "baseline_accuracy"])?;
    let mut task = 0u64;
    for (name, p) in policies {
        let mut actions = Vec::with_capacity(rows.len());
        for &i in idx {
            actions.extend(p.actions(cohort, i)?);
        }
        for target in ["iv_bin", "vaso_bin"] {
            let y: Vec<usize> = actions
                .iter()
                .map(|a| usize::from(if target == "iv_bin" { a.iv_bin() } else { a.vaso_bin() }))
                .collect();
            let seed = rng::derive_indexed(cfg.seed, rng::streams::FOREST, task);
            task += 1;
            match permutation_importance(x.view(), &y, &names, &cfg.evaluation.forest, seed) {
                Ok(rep) => {
                    for (r, f) in rep.ranked.iter().enumerate() {
                        w.write_record([
                            name.clone(),
                            target.to_string(),
                            (r + 1).to_string(),
                            f.feature.clone(),
                            f.importance.to_string(),
                            f.std.to_string(),
                            rep.baseline_accuracy.to_string(),
                        ])?;
                    }
                }
                Err(Error::Input(m)) => log::warn!("feature importance for {name} {target} skipped: {m}"),
                Err(e) => return Err(e),
            }
        }
    }
    flush(w, path)
}

// ---------------------------------------------------------------- run

/// Results of a full run kept in memory for callers.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub alignment: RewardAlignment,
    pub evaluations: Vec<PolicyEvaluation>,
    pub summary: EvalSummary,
    pub manifest: Manifest,
}

fn run_stages(cfg: &ExperimentConfig) -> StageResult<RunSummary> {
    prepare_run_dir(cfg)?;
    let cohort = split_cohort(cfg, stage_generate(cfg)?)?;
    let (reward, alignment) = stage_learn_reward(cfg, &cohort)?;
    let traces = stage_score_baselines(cfg, &cohort, &reward)?;
    let policies = stage_train_policies(cfg, &cohort, &traces)?;
    let outcomes = stage_compute_outcomes(cfg, &cohort)?;
    let (evaluations, summary) = stage_evaluate(cfg, &cohort, &policies, &outcomes, &traces)?;
    report::write_report(cfg).stage("report")?;
    let manifest = Manifest::build(&cfg.output_dir).stage("manifest")?;
    manifest.write(&cfg.output_dir).stage("manifest")?;
    Ok(RunSummary {
        output_dir: cfg.output_dir.clone(),
        alignment,
        evaluations,
        summary,
        manifest,
    })
}

/// Run every stage in order. On failure the partial outputs stay in place next
/// to a `FAILED` marker naming the stage.
pub fn run_pipeline(cfg: &ExperimentConfig) -> StageResult<RunSummary> {
    configure_threads(cfg.threads);
    let res = run_stages(cfg);
    if let Err(e) = &res {
        if cfg.output_dir.is_dir() {
            if let Err(m) = manifest::write_failed_marker(&cfg.output_dir, e.stage, &e.source) {
                log::error!("could not write failure marker: {m}");
            }
        }
    }
    res
}

/// Write the manifest of a run directory after standalone stages.
pub fn write_manifest(cfg: &ExperimentConfig) -> StageResult<Manifest> {
    let m = Manifest::build(&cfg.output_dir).stage("manifest")?;
    m.write(&cfg.output_dir).stage("manifest")?;
    Ok(m)
}

/// A pipeline stage that can run on its own from persisted artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    LearnReward,
    ScoreBaselines,
    TrainPolicy,
    ComputeOutcomes,
    Evaluate,
    Report,
}

fn run_one(cfg: &ExperimentConfig, stage: Stage) -> StageResult<()> {
    prepare_run_dir(cfg)?;
    match stage {
        Stage::Generate => {
            stage_generate(cfg)?;
        }
        Stage::LearnReward => {
            let cohort = load_run_cohort(cfg)?;
            stage_learn_reward(cfg, &cohort)?;
        }
        Stage::ScoreBaselines => {
            let cohort = load_run_cohort(cfg)?;
            let reward = load_reward(cfg)?;
            stage_score_baselines(cfg, &cohort, &reward)?;
        }
        Stage::TrainPolicy => {
            let cohort = load_run_cohort(cfg)?;
            let traces = load_reward_traces(cfg, &cohort)?;
            stage_train_policies(cfg, &cohort, &traces)?;
        }
        Stage::ComputeOutcomes => {
            let cohort = load_run_cohort(cfg)?;
            stage_compute_outcomes(cfg, &cohort)?;
        }
        Stage::Evaluate => {
            let cohort = load_run_cohort(cfg)?;
            let traces = load_reward_traces(cfg, &cohort)?;
            let policies = load_policies(cfg)?;
            let outcomes = load_outcomes(cfg, &cohort)?;
            stage_evaluate(cfg, &cohort, &policies, &outcomes, &traces)?;
        }
        Stage::Report => report::write_report(cfg).stage("report")?,
    }
    write_manifest(cfg)?;
    Ok(())
}

/// Run one stage against the run directory and refresh its manifest.
pub fn run_stage(cfg: &ExperimentConfig, stage: Stage) -> StageResult<()> {
    configure_threads(cfg.threads);
    let res = run_one(cfg, stage);
    if let Err(e) = &res {
        if cfg.output_dir.is_dir() {
            if let Err(m) = manifest::write_failed_marker(&cfg.output_dir, e.stage, &e.source) {
                log::error!("could not write failure marker: {m}");
            }
        }
    }
    res
}
