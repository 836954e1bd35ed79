//! Preference pairs built from trajectory quality scores, the confidence-weighted
//! margin ranking objective, the reward training loop and reward normalization.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::cohort::{Action, Cohort};
use crate::error::{Error, Result};
use crate::evaluation::stats::percentile_sorted;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rewardnet::{Gradients, Mode, RewardModel, RewardNetConfig, Tape};
use crate::rng::{self, SeededRng};

/// An ordered comparison: `winner` has the strictly higher quality score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    /// Cohort positions of the two trajectories.
    pub winner: usize,
    pub loser: usize,
    pub winner_id: String,
    pub loser_id: String,
    pub delta: f64,
    pub weight: f64,
    pub margin: f64,
}

impl PreferencePair {
    /// Pair two cohort trajectories, deriving weight and margin from their scores
    /// and confidences.
    pub fn new(cohort: &Cohort, winner: usize, loser: usize, cfg: &PrefTrainConfig) -> Self {
        let (w, l) = (cohort.trajectory(winner), cohort.trajectory(loser));
        let delta = f64::from(w.tqs) - f64::from(l.tqs);
        Self {
            winner,
            loser,
            winner_id: w.id.clone(),
            loser_id: l.id.clone(),
            delta,
            weight: delta * w.confidence * l.confidence,
            margin: cfg.m0 + cfg.alpha_margin * delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefTrainConfig {
    pub min_gap: u8,
    /// Lower-scored partners sampled per trajectory.
    pub partners_per_trajectory: usize,
    /// Total pair cap; defaults to 50 times the cohort size.
    pub max_pairs: Option<usize>,
    pub m0: f64,
    pub alpha_margin: f64,
    pub lambda_reg: f64,
    pub lr: f64,
    pub grad_clip_norm: f64,
    pub batch_pairs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_frac: f64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for PrefTrainConfig {
    fn default() -> Self {
        Self {
            min_gap: 1,
            partners_per_trajectory: 10,
            max_pairs: None,
            m0: 0.0,
            alpha_margin: 0.5,
            lambda_reg: 1e-3,
            lr: 1e-3,
            grad_clip_norm: 1.0,
            batch_pairs: 256,
            max_epochs: 5,
            patience: 3,
            val_frac: 0.1,
            hidden: 128,
            embed_dim: 8,
            dropout: 0.2,
            seed: 0,
        }
    }
}

impl PrefTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.min_gap == 0 {
            return bad("min_gap must be at least 1".into());
        }
        if self.partners_per_trajectory == 0 || self.batch_pairs == 0 || self.max_epochs == 0 {
            return bad("partners_per_trajectory, batch_pairs and max_epochs must be positive".into());
        }
        if self.max_pairs == Some(0) {
            return bad("max_pairs must be positive".into());
        }
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return bad(format!("val_frac must lie in (0, 1), got {}", self.val_frac));
        }
        if !(self.lr > 0.0) || !(self.grad_clip_norm > 0.0) {
            return bad("lr and grad_clip_norm must be positive".into());
        }
        if !(self.lambda_reg >= 0.0) || !(self.alpha_margin >= 0.0) || !self.m0.is_finite() {
            return bad("lambda_reg and alpha_margin must be non-negative, m0 finite".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.hidden == 0 || self.embed_dim == 0 {
            return bad("hidden and embed_dim must be positive".into());
        }
        Ok(())
    }

    pub fn net_config(&self, input_dim: usize) -> RewardNetConfig {
        RewardNetConfig {
            input_dim,
            hidden: self.hidden,
            embed_dim: self.embed_dim,
            dropout: self.dropout,
        }
    }
}

fn score_histogram(cohort: &Cohort, idx: &[usize]) -> String {
    let mut counts = [0usize; 6];
    for &i in idx {
        counts[usize::from(cohort.trajectory(i).tqs)] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(s, c)| format!("{s}:{c}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Sample preference pairs from scored training trajectories.
pub fn build_pairs(cohort: &Cohort, cfg: &PrefTrainConfig) -> Result<Vec<PreferencePair>> {
    cfg.validate()?;
    let train = cohort.train_indices();
    let scored: Vec<usize> = train
        .iter()
        .copied()
        .filter(|&i| cohort.trajectory(i).is_scored())
        .collect();
    let mut by_score: [Vec<usize>; 6] = Default::default();
    for &i in &scored {
        by_score[usize::from(cohort.trajectory(i).tqs)].push(i);
    }
    let mut rng = rng::substream(cfg.seed, rng::streams::PAIRS);
    let mut pairs = Vec::new();
    for &i in &scored {
        let yi = cohort.trajectory(i).tqs;
        if yi <= cfg.min_gap {
            continue;
        }
        let top = usize::from(yi - cfg.min_gap);
        let partners: Vec<usize> = by_score[1..=top].iter().flatten().copied().collect();
        if partners.is_empty() {
            continue;
        }
        let k = cfg.partners_per_trajectory.min(partners.len());
        let mut picked = index::sample(&mut rng, partners.len(), k).into_vec();
        picked.sort_unstable();
        pairs.extend(picked.into_iter().map(|p| PreferencePair::new(cohort, i, partners[p], cfg)));
    }
    if pairs.is_empty() {
        return Err(Error::Config(format!(
            "no preference pair has a score gap of at least {}; train score histogram {}",
            cfg.min_gap,
            score_histogram(cohort, &train)
        )));
    }
    let cap = cfg.max_pairs.unwrap_or(50 * cohort.len());
    if pairs.len() > cap {
        let mut keep = index::sample(&mut rng, pairs.len(), cap).into_vec();
        keep.sort_unstable();
        pairs = keep.into_iter().map(|k| pairs[k].clone()).collect();
    }
    Ok(pairs)
}

/// log(1 + e^x) with linear and exponential branches beyond |x| > 30.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weighted margin loss for a given return difference `R_winner - R_loser`.
pub fn pair_loss_value(return_diff: f64, margin: f64, weight: f64) -> f64 {
    weight * softplus(margin - return_diff)
}

/// Eval-mode loss of one pair (no regularizer).
pub fn pair_loss(model: &RewardModel, pair: &PreferencePair, cohort: &Cohort) -> Result<f64> {
    let rw = trajectory_return(model, cohort, pair.winner)?;
    let rl = trajectory_return(model, cohort, pair.loser)?;
    Ok(pair_loss_value(rw - rl, pair.margin, pair.weight))
}

/// Eval-mode return of cohort trajectory `i` on standardized features.
pub fn trajectory_return(model: &RewardModel, cohort: &Cohort, i: usize) -> Result<f64> {
    model.trajectory_return(cohort.features(i).view(), &cohort.trajectory(i).actions)
}

/// Eval-mode per-step raw rewards of trajectory `i`.
pub fn step_rewards(model: &RewardModel, cohort: &Cohort, i: usize) -> Result<Array1<f64>> {
    model.rewards(cohort.features(i).view(), &cohort.trajectory(i).actions)
}

/// Trajectories touched by a batch, stacked into one step matrix.
struct StackedBatch {
    states: Array2<f64>,
    actions: Vec<Action>,
    /// Slot of each step.
    step_slot: Vec<usize>,
    /// Slot of each cohort position.
    slot: HashMap<usize, usize>,
    n_slots: usize,
}

fn stack(cohort: &Cohort, pairs: &[&PreferencePair]) -> StackedBatch {
    let mut slot = HashMap::new();
    let mut order = Vec::new();
    for p in pairs {
        for i in [p.winner, p.loser] {
            slot.entry(i).or_insert_with(|| {
                order.push(i);
                order.len() - 1
            });
        }
    }
    let total: usize = order.iter().map(|&i| cohort.trajectory(i).len()).sum();
    let d = cohort.feature_count();
    let mut states = Array2::zeros((total, d));
    let mut actions = Vec::with_capacity(total);
    let mut step_slot = Vec::with_capacity(total);
    let mut row = 0;
    for (s, &i) in order.iter().enumerate() {
        let f = cohort.features(i);
        let t = f.nrows();
        states.slice_mut(ndarray::s![row..row + t, ..]).assign(f);
        actions.extend_from_slice(&cohort.trajectory(i).actions);
        step_slot.extend(std::iter::repeat_n(s, t));
        row += t;
    }
    StackedBatch {
        states,
        actions,
        step_slot,
        slot,
        n_slots: order.len(),
    }
}

/// Mean weighted pair loss plus `lambda` times the mean squared step reward over
/// the distinct steps in the batch, with its parameter gradient.
///
/// `mode` controls dropout; the same `rng` state reproduces the same masks.
pub fn objective_and_gradient(
    model: &RewardModel,
    pairs: &[&PreferencePair],
    cohort: &Cohort,
    lambda: f64,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<(f64, Gradients)> {
    let (loss, grads) = objective(model, pairs, cohort, lambda, mode, rng, true)?;
    Ok((loss, grads.expect("gradient requested")))
}

fn objective(
    model: &RewardModel,
    pairs: &[&PreferencePair],
    cohort: &Cohort,
    lambda: f64,
    mode: Mode,
    rng: &mut SeededRng,
    want_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    if pairs.is_empty() {
        return Err(Error::Input("objective over an empty pair batch".into()));
    }
    let batch = stack(cohort, pairs);
    let mut tape = Tape::new();
    let r = if want_grad {
        model.forward_recorded(&mut tape, batch.states.view(), &batch.actions, mode, rng)?
    } else {
        model.forward(batch.states.view(), &batch.actions, mode, rng)?
    };
    let mut returns = vec![0.0; batch.n_slots];
    for (k, &s) in batch.step_slot.iter().enumerate() {
        returns[s] += r[k];
    }
    let p = pairs.len() as f64;
    let mut d_return = vec![0.0; batch.n_slots];
    let mut pair_sum = 0.0;
    for pair in pairs {
        let (sw, sl) = (batch.slot[&pair.winner], batch.slot[&pair.loser]);
        let x = pair.margin - (returns[sw] - returns[sl]);
        pair_sum += pair.weight * softplus(x);
        let g = pair.weight * sigmoid(x) / p;
        d_return[sw] -= g;
        d_return[sl] += g;
    }
    let n_steps = r.len() as f64;
    let reg = lambda * r.iter().map(|v| v * v).sum::<f64>() / n_steps;
    let loss = pair_sum / p + reg;
    if !want_grad {
        return Ok((loss, None));
    }
    let upstream: Array1<f64> = batch
        .step_slot
        .iter()
        .zip(r.iter())
        .map(|(&s, &rk)| d_return[s] + 2.0 * lambda * rk / n_steps)
        .collect();
    let grads = model.backward(&tape, upstream.view())?;
    Ok((loss, Some(grads)))
}

/// Eval-mode value of the full objective over `pairs`.
pub fn batch_loss(
    model: &RewardModel,
    pairs: &[PreferencePair],
    cohort: &Cohort,
    cfg: &PrefTrainConfig,
) -> Result<f64> {
    let refs: Vec<&PreferencePair> = pairs.iter().collect();
    // eval mode draws nothing from the generator
    let mut rng = rng::substream(cfg.seed, rng::streams::DROPOUT);
    objective(model, &refs, cohort, cfg.lambda_reg, Mode::Eval, &mut rng, false).map(|(l, _)| l)
}

fn returns_for(model: &RewardModel, cohort: &Cohort, pairs: &[&PreferencePair]) -> Result<HashMap<usize, f64>> {
    let batch = stack(cohort, pairs);
    let r = model.rewards(batch.states.view(), &batch.actions)?;
    let mut by_slot = vec![0.0; batch.n_slots];
    for (k, &s) in batch.step_slot.iter().enumerate() {
        by_slot[s] += r[k];
    }
    Ok(batch.slot.into_iter().map(|(i, s)| (i, by_slot[s])).collect())
}

/// Fraction of pairs whose winner receives a strictly higher eval-mode return.
pub fn pair_accuracy(model: &RewardModel, pairs: &[PreferencePair], cohort: &Cohort) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Input("pair accuracy of an empty pair set".into()));
    }
    let refs: Vec<&PreferencePair> = pairs.iter().collect();
    let ret = returns_for(model, cohort, &refs)?;
    let correct = pairs.iter().filter(|p| ret[&p.winner] > ret[&p.loser]).count();
    Ok(correct as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_pair_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub n_train_pairs: usize,
    pub n_val_pairs: usize,
}

impl TrainLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Train a reward model on preference pairs with Adam, early stopping on a held-out
/// share of the pairs. Returns the checkpoint with the lowest validation loss.
pub fn train_reward(cohort: &Cohort, cfg: &PrefTrainConfig) -> Result<(RewardModel, TrainLog)> {
    let pairs = build_pairs(cohort, cfg)?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng::substream(cfg.seed, "pairs-split"));
    let n_val = ((pairs.len() as f64) * cfg.val_frac).round() as usize;
    let n_val = if n_val >= pairs.len() { 0 } else { n_val };
    let train: Vec<&PreferencePair> = order[n_val..].iter().map(|&k| &pairs[k]).collect();
    let mut val: Vec<PreferencePair> = order[..n_val].iter().map(|&k| pairs[k].clone()).collect();
    if val.is_empty() {
        log::warn!("too few pairs for a validation split; validating on training pairs");
        val = train.iter().map(|p| (*p).clone()).collect();
    }
    log::info!("reward training on {} pairs, validating on {}", train.len(), val.len());

    let mut model = RewardModel::initialized(cfg.net_config(cohort.feature_count()), cfg.seed);
    let mut adam = AdamState::new(
        model.params().len(),
        AdamConfig {
            lr: cfg.lr,
            grad_clip_norm: Some(cfg.grad_clip_norm),
            ..AdamConfig::default()
        },
    );
    let mut dropout_rng = rng::substream(cfg.seed, rng::streams::DROPOUT);
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut wait = 0usize;
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        n_train_pairs: train.len(),
        n_val_pairs: n_val,
    };
    let mut batch_order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        batch_order.shuffle(&mut rng::indexed_substream(cfg.seed, "pair-batches", epoch as u64));
        let mut loss_sum = 0.0;
        for (b, chunk) in batch_order.chunks(cfg.batch_pairs).enumerate() {
            let batch: Vec<&PreferencePair> = chunk.iter().map(|&k| train[k]).collect();
            let (loss, mut grads) =
                objective_and_gradient(&model, &batch, cohort, cfg.lambda_reg, Mode::Train, &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "reward training diverged at epoch {epoch}, batch {b}: loss {loss}"
                )));
            }
            adam_step(model.params_mut(), &mut grads.0, &mut adam);
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = batch_loss(&model, &val, cohort, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "validation loss is {val_loss} at epoch {epoch}"
            )));
        }
        let val_pair_accuracy = pair_accuracy(&model, &val, cohort)?;
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} acc {val_pair_accuracy:.4}");
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_pair_accuracy,
        });
        if val_loss < best.0 {
            best = (val_loss, model.clone(), epoch);
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience.max(1) {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.best_epoch = best.2;
    Ok((best.1, log))
}

/// Percentile clip bounds and tanh scale for raw rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub lo: f64,
    pub hi: f64,
    pub scale_c: f64,
}

/// Fit normalization from a sample of raw rewards.
pub fn fit_normalization_from_rewards(rewards: &[f64]) -> Result<NormalizationParams> {
    if rewards.is_empty() {
        return Err(Error::Input("no rewards to fit normalization on".into()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::Numerical("non-finite raw reward".into()));
    }
    let mut sorted = rewards.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&sorted, 0.01);
    let hi = percentile_sorted(&sorted, 0.99);
    if !(lo < hi) {
        return Err(Error::Numerical(format!(
            "degenerate reward distribution: 1st and 99th percentiles are both {lo}"
        )));
    }
    Ok(NormalizationParams {
        lo,
        hi,
        scale_c: lo.abs().max(hi.abs()),
    })
}

/// Fit normalization on every per-step reward of the training split.
pub fn fit_normalization(model: &RewardModel, cohort: &Cohort) -> Result<NormalizationParams> {
    let mut all = Vec::new();
    for i in cohort.train_indices() {
        all.extend(step_rewards(model, cohort, i)?);
    }
    fit_normalization_from_rewards(&all)
}

/// Clip to `[lo, hi]` and squash with `tanh(x / scale_c)`.
pub fn normalize_reward(raw: f64, p: &NormalizationParams) -> f64 {
    (raw.clamp(p.lo, p.hi) / p.scale_c).tanh()
}

/// A trained reward model with its normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedReward {
    pub model: RewardModel,
    pub norm: NormalizationParams,
}

impl LearnedReward {
    /// Normalized per-step rewards of trajectory `i`.
    pub fn step_rewards(&self, cohort: &Cohort, i: usize) -> Result<Vec<f64>> {
        Ok(step_rewards(&self.model, cohort, i)?
            .iter()
            .map(|&r| normalize_reward(r, &self.norm))
            .collect())
    }

    pub fn mean_reward(&self, cohort: &Cohort, i: usize) -> Result<f64> {
        let r = self.step_rewards(cohort, i)?;
        Ok(r.iter().sum::<f64>() / r.len() as f64)
    }
}
