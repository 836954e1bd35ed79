//! Offline policy learning: a dueling double DQN with a conservative Q-learning
//! penalty, trained on fixed transition sets derived from any reward.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub hidden: usize,
    pub leaky_slope: f64,
    pub lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub cql_alpha: f64,
    /// Gradient steps between hard target-network copies.
    pub target_sync_interval: usize,
    pub epochs: usize,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            leaky_slope: 0.01,
            lr: 1e-3,
            gamma: 0.99,
            batch_size: 256,
            cql_alpha: 0.5,
            target_sync_interval: 200,
            epochs: 30,
            grad_clip_norm: Some(10.0),
            seed: 0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 || self.epochs == 0 || self.target_sync_interval == 0 {
            return Err(Error::Config(
                "hidden, batch_size, epochs and target_sync_interval must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.lr > 0.0) || !(self.cql_alpha >= 0.0) || !(self.leaky_slope >= 0.0) {
            return Err(Error::Config("lr must be positive; cql_alpha and leaky_slope non-negative".into()));
        }
        Ok(())
    }
}

/// One transition for hand-built datasets; `s_next` is `None` at episode end.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Option<Vec<f64>>,
}

/// Column-oriented transition set. Terminal rows carry a zero next state.
#[derive(Debug, Clone, PartialEq)]
pub struct Transitions {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub done: Vec<bool>,
}

impl Transitions {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn from_transitions(items: &[Transition], d: usize) -> Result<Self> {
        let n = items.len();
        let mut states = Array2::zeros((n, d));
        let mut next_states = Array2::zeros((n, d));
        for (k, t) in items.iter().enumerate() {
            if t.s.len() != d || t.s_next.as_ref().is_some_and(|x| x.len() != d) {
                return Err(Error::Input(format!("transition {k} has the wrong state width")));
            }
            if t.a >= NUM_ACTIONS {
                return Err(Error::Input(format!("transition {k} has action {} outside 0..25", t.a)));
            }
            if !t.r.is_finite() {
                return Err(Error::Numerical(format!("transition {k} has non-finite reward")));
            }
            states.row_mut(k).assign(&ArrayView1::from(&t.s[..]));
            if let Some(x) = &t.s_next {
                next_states.row_mut(k).assign(&ArrayView1::from(&x[..]));
            }
        }
        Ok(Self {
            states,
            actions: items.iter().map(|t| t.a).collect(),
            rewards: items.iter().map(|t| t.r).collect(),
            next_states,
            done: items.iter().map(|t| t.s_next.is_none()).collect(),
        })
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            states: self.states.select(Axis(0), idx),
            actions: idx.iter().map(|&k| self.actions[k]).collect(),
            rewards: idx.iter().map(|&k| self.rewards[k]).collect(),
            next_states: self.next_states.select(Axis(0), idx),
            done: idx.iter().map(|&k| self.done[k]).collect(),
        }
    }
}

/// One transition per step of each listed trajectory, using standardized states
/// and the per-step rewards returned by `reward_fn(i)`.
pub fn build_transitions(
    cohort: &Cohort,
    indices: &[usize],
    mut reward_fn: impl FnMut(usize) -> Result<Vec<f64>>,
) -> Result<Transitions> {
    let d = cohort.feature_count();
    let total: usize = indices.iter().map(|&i| cohort.trajectory(i).len()).sum();
    let mut states = Array2::zeros((total, d));
    let mut next_states = Array2::zeros((total, d));
    let mut actions = Vec::with_capacity(total);
    let mut rewards = Vec::with_capacity(total);
    let mut done = Vec::with_capacity(total);
    let mut row = 0;
    for &i in indices {
        let traj = cohort.trajectory(i);
        let f = cohort.features(i);
        let r = reward_fn(i)?;
        if r.len() != traj.len() {
            return Err(Error::Input(format!(
                "reward function returned {} values for trajectory `{}` of length {}",
                r.len(),
                traj.id,
                traj.len()
            )));
        }
        let t = traj.len();
        states.slice_mut(s![row..row + t, ..]).assign(f);
        if t > 1 {
            next_states
                .slice_mut(s![row..row + t - 1, ..])
                .assign(&f.slice(s![1.., ..]));
        }
        for (k, (a, rk)) in traj.actions.iter().zip(&r).enumerate() {
            if !rk.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite reward at step {k} of trajectory `{}`",
                    traj.id
                )));
            }
            actions.push(a.joint_index());
            rewards.push(*rk);
            done.push(k + 1 == t);
        }
        row += t;
    }
    Ok(Transitions {
        states,
        actions,
        rewards,
        next_states,
        done,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    d: usize,
    h: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wv: usize,
    bv: usize,
    wa: usize,
    ba: usize,
    end: usize,
}

impl Layout {
    fn new(d: usize, h: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + h * d;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let wv = b2 + h;
        let bv = wv + h;
        let wa = bv + 1;
        let ba = wa + NUM_ACTIONS * h;
        Self {
            d,
            h,
            w1,
            b1,
            w2,
            b2,
            wv,
            bv,
            wa,
            ba,
            end: ba + NUM_ACTIONS,
        }
    }
}

/// Shapes of the Q-network parameter segments, in storage order.
pub fn q_segments(d: usize, h: usize) -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("w1", vec![h, d]),
        ("b1", vec![h]),
        ("w2", vec![h, h]),
        ("b2", vec![h]),
        ("w_value", vec![h]),
        ("b_value", vec![1]),
        ("w_advantage", vec![NUM_ACTIONS, h]),
        ("b_advantage", vec![NUM_ACTIONS]),
    ]
}

/// Online and target dueling Q-networks.
#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    pub config: RlConfig,
    layout: Layout,
    online: Vec<f64>,
    target: Vec<f64>,
}

struct QPass {
    z1: Array2<f64>,
    h1: Array2<f64>,
    z2: Array2<f64>,
    h2: Array2<f64>,
    q: Array2<f64>,
}

fn leaky(z: &Array2<f64>, slope: f64) -> Array2<f64> {
    z.mapv(|v| if v > 0.0 { v } else { slope * v })
}

fn logsumexp(row: ArrayView1<'_, f64>) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn argmax_lowest(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

impl QModel {
    pub fn zeros(input_dim: usize, config: RlConfig) -> Self {
        let layout = Layout::new(input_dim, config.hidden);
        Self {
            config,
            layout,
            online: vec![0.0; layout.end],
            target: vec![0.0; layout.end],
        }
    }

    /// He-uniform hidden layers, fan-in uniform heads, zero biases; target = online.
    pub fn initialized(input_dim: usize, config: RlConfig) -> Self {
        let mut m = Self::zeros(input_dim, config);
        let l = m.layout;
        let mut g = rng::substream(config.seed, rng::streams::INIT);
        let mut fill = |p: &mut [f64], bound: f64| {
            for v in p {
                *v = g.random_range(-bound..bound);
            }
        };
        let h = l.h as f64;
        fill(&mut m.online[l.w1..l.b1], (6.0 / l.d as f64).sqrt());
        fill(&mut m.online[l.w2..l.b2], (6.0 / h).sqrt());
        fill(&mut m.online[l.wv..l.bv], (1.0 / h).sqrt());
        fill(&mut m.online[l.wa..l.ba], (1.0 / h).sqrt());
        m.target = m.online.clone();
        m
    }

    pub fn from_params(input_dim: usize, config: RlConfig, online: Vec<f64>, target: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(input_dim, config.hidden);
        if online.len() != layout.end || target.len() != layout.end {
            return Err(Error::Input(format!(
                "Q-network expects {} parameters per copy, got {} and {}",
                layout.end,
                online.len(),
                target.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            online,
            target,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layout.d
    }

    pub fn param_count(&self) -> usize {
        self.layout.end
    }

    pub fn params(&self) -> &[f64] {
        &self.online
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.online
    }

    pub fn target_params(&self) -> &[f64] {
        &self.target
    }

    pub fn target_params_mut(&mut self) -> &mut [f64] {
        &mut self.target
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from_slice(&self.online);
    }

    /// Named segment of the online parameters.
    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let l = self.layout;
        let r = match name {
            "w1" => l.w1..l.b1,
            "b1" => l.b1..l.w2,
            "w2" => l.w2..l.b2,
            "b2" => l.b2..l.wv,
            "w_value" => l.wv..l.bv,
            "b_value" => l.bv..l.wa,
            "w_advantage" => l.wa..l.ba,
            "b_advantage" => l.ba..l.end,
            _ => return None,
        };
        Some(&mut self.online[r])
    }

    fn pass(&self, p: &[f64], x: ArrayView2<'_, f64>) -> QPass {
        let l = self.layout;
        let v2 = |off: usize, r: usize, c: usize| {
            ArrayView2::from_shape((r, c), &p[off..off + r * c]).expect("layout")
        };
        let v1 = |off: usize, n: usize| ArrayView1::from(&p[off..off + n]);
        let slope = self.config.leaky_slope;
        let z1 = x.dot(&v2(l.w1, l.h, l.d).t()) + &v1(l.b1, l.h);
        let h1 = leaky(&z1, slope);
        let z2 = h1.dot(&v2(l.w2, l.h, l.h).t()) + &v1(l.b2, l.h);
        let h2 = leaky(&z2, slope);
        let v = h2.dot(&v1(l.wv, l.h)) + p[l.bv];
        let a = h2.dot(&v2(l.wa, NUM_ACTIONS, l.h).t()) + &v1(l.ba, NUM_ACTIONS);
        let a_mean = a.mean_axis(Axis(1)).expect("non-empty action axis");
        let q = a - &a_mean.insert_axis(Axis(1)) + &v.insert_axis(Axis(1));
        QPass { z1, h1, z2, h2, q }
    }

    fn check_width(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.layout.d {
            return Err(Error::Input(format!(
                "state width {} does not match Q-network input {}",
                x.ncols(),
                self.layout.d
            )));
        }
        Ok(())
    }

    /// Online Q-values, one row of 25 per state.
    pub fn q_values(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_width(&states)?;
        Ok(self.pass(&self.online, states).q)
    }

    pub fn target_q_values(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_width(&states)?;
        Ok(self.pass(&self.target, states).q)
    }

    pub fn q_values_one(&self, state: &[f64]) -> Result<Array1<f64>> {
        let x = ArrayView2::from_shape((1, state.len()), state).map_err(|e| Error::Input(e.to_string()))?;
        Ok(self.q_values(x)?.row(0).to_owned())
    }

    /// Argmax of the online Q-values, lowest index on ties.
    pub fn greedy_action(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax_lowest(self.q_values_one(state)?.view()))
    }

    pub fn greedy_actions(&self, states: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let q = self.q_values(states)?;
        Ok(q.rows().into_iter().map(argmax_lowest).collect())
    }

    /// Double-DQN targets: next action chosen by the online network, valued by the target.
    pub fn td_targets(&self, batch: &Transitions) -> Result<Vec<f64>> {
        let next = batch.next_states.view();
        let q_online = self.q_values(next)?;
        let q_target = self.target_q_values(next)?;
        Ok((0..batch.len())
            .map(|k| {
                if batch.done[k] {
                    batch.rewards[k]
                } else {
                    let a = argmax_lowest(q_online.row(k));
                    batch.rewards[k] + self.config.gamma * q_target[[k, a]]
                }
            })
            .collect())
    }

    fn loss_and_grad(&self, batch: &Transitions, want_grad: bool) -> Result<(f64, f64, f64, Option<Vec<f64>>)> {
        if batch.is_empty() {
            return Err(Error::Input("TD/CQL loss of an empty batch".into()));
        }
        self.check_width(&batch.states.view())?;
        let y = self.td_targets(batch)?;
        let pass = self.pass(&self.online, batch.states.view());
        let n = batch.len() as f64;
        let alpha = self.config.cql_alpha;
        let mut td = 0.0;
        let mut cql = 0.0;
        let mut dq = Array2::<f64>::zeros(pass.q.raw_dim());
        for k in 0..batch.len() {
            let a = batch.actions[k];
            let row = pass.q.row(k);
            let delta = row[a] - y[k];
            td += if delta.abs() <= 1.0 {
                0.5 * delta * delta
            } else {
                delta.abs() - 0.5
            };
            let lse = logsumexp(row);
            cql += lse - row[a];
            if want_grad {
                let mut drow = dq.row_mut(k);
                drow[a] += delta.clamp(-1.0, 1.0) / n;
                if alpha > 0.0 {
                    for (j, q) in row.iter().enumerate() {
                        drow[j] += alpha * (q - lse).exp() / n;
                    }
                    drow[a] -= alpha / n;
                }
            }
        }
        let td = td / n;
        let cql = alpha * cql / n;
        let grads = want_grad.then(|| self.backward(&pass, batch.states.view(), &dq));
        Ok((td + cql, td, cql, grads))
    }

    fn backward(&self, pass: &QPass, x: ArrayView2<'_, f64>, dq: &Array2<f64>) -> Vec<f64> {
        let l = self.layout;
        let p = &self.online;
        let slope = self.config.leaky_slope;
        let mut g = vec![0.0; l.end];
        let dv = dq.sum_axis(Axis(1));
        let dq_mean = dq.mean_axis(Axis(1)).expect("non-empty");
        let da = dq - &dq_mean.insert_axis(Axis(1));

        let put = |g: &mut Vec<f64>, off: usize, a: &Array2<f64>| {
            let std = a.as_standard_layout();
            g[off..off + a.len()].copy_from_slice(std.as_slice().expect("contiguous"));
        };
        let put1 = |g: &mut Vec<f64>, off: usize, a: &Array1<f64>| {
            for (k, v) in a.iter().enumerate() {
                g[off + k] = *v;
            }
        };
        put1(&mut g, l.wv, &pass.h2.t().dot(&dv));
        g[l.bv] = dv.sum();
        put(&mut g, l.wa, &da.t().dot(&pass.h2));
        put1(&mut g, l.ba, &da.sum_axis(Axis(0)));

        let wv = ArrayView1::from(&p[l.wv..l.bv]);
        let wa = ArrayView2::from_shape((NUM_ACTIONS, l.h), &p[l.wa..l.ba]).expect("layout");
        let mut dz2 = da.dot(&wa) + &(&dv.view().insert_axis(Axis(1)) * &wv.insert_axis(Axis(0)));
        Zip::from(&mut dz2).and(&pass.z2).for_each(|d, &z| {
            if z <= 0.0 {
                *d *= slope;
            }
        });
        put(&mut g, l.w2, &dz2.t().dot(&pass.h1));
        put1(&mut g, l.b2, &dz2.sum_axis(Axis(0)));
        let w2 = ArrayView2::from_shape((l.h, l.h), &p[l.w2..l.b2]).expect("layout");
        let mut dz1 = dz2.dot(&w2);
        Zip::from(&mut dz1).and(&pass.z1).for_each(|d, &z| {
            if z <= 0.0 {
                *d *= slope;
            }
        });
        put(&mut g, l.w1, &dz1.t().dot(&x));
        put1(&mut g, l.b1, &dz1.sum_axis(Axis(0)));
        g
    }

    /// Huber TD loss against double-DQN targets plus the CQL penalty.
    pub fn td_cql_loss(&self, batch: &Transitions) -> Result<f64> {
        Ok(self.loss_and_grad(batch, false)?.0)
    }

    /// Loss and its semi-gradient with respect to the online parameters (targets held fixed).
    pub fn td_cql_loss_and_grad(&self, batch: &Transitions) -> Result<(f64, Vec<f64>)> {
        let (l, _, _, g) = self.loss_and_grad(batch, true)?;
        Ok((l, g.expect("requested")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlEpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub td_loss: f64,
    pub cql_loss: f64,
    pub mean_data_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlTrainLog {
    pub epochs: Vec<RlEpochRecord>,
    pub gradient_steps: u64,
    pub skipped_steps: u64,
}

impl RlTrainLog {
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Train a fresh Q-model on `data`. Each epoch visits every transition once in a
/// seeded random order; the target network is copied every `target_sync_interval`
/// gradient steps.
pub fn train_policy(data: &Transitions, config: &RlConfig) -> Result<(QModel, RlTrainLog)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Input("no transitions to train on".into()));
    }
    let mut model = QModel::initialized(data.state_dim(), *config);
    let mut adam = AdamState::new(
        model.param_count(),
        AdamConfig {
            lr: config.lr,
            grad_clip_norm: config.grad_clip_norm,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = rng::substream(config.seed, rng::streams::RL);
    let mut log = RlTrainLog {
        epochs: Vec::new(),
        gradient_steps: 0,
        skipped_steps: 0,
    };
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum, mut td_sum, mut cql_sum, mut q_sum) = (0.0, 0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch = data.select(chunk);
            let (loss, td, cql, grads) = model.loss_and_grad(&batch, true)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "policy training diverged at epoch {epoch}: loss {loss}"
                )));
            }
            let mut grads = grads.expect("requested");
            match adam_step(&mut model.online, &mut grads, &mut adam) {
                crate::optim::StepOutcome::Skipped => log.skipped_steps += 1,
                crate::optim::StepOutcome::Applied { .. } => {}
            }
            log.gradient_steps += 1;
            if log.gradient_steps % config.target_sync_interval as u64 == 0 {
                model.sync_target();
            }
            let m = chunk.len() as f64;
            sum += loss * m;
            td_sum += td * m;
            cql_sum += cql * m;
        }
        for chunk in order.chunks(4096) {
            let batch = data.select(chunk);
            let q = model.q_values(batch.states.view())?;
            q_sum += (0..chunk.len()).map(|k| q[[k, batch.actions[k]]]).sum::<f64>();
        }
        let n = data.len() as f64;
        let rec = RlEpochRecord {
            epoch,
            loss: sum / n,
            td_loss: td_sum / n,
            cql_loss: cql_sum / n,
            mean_data_q: q_sum / n,
        };
        log::debug!("rl epoch {epoch}: loss {:.5} mean Q {:.4}", rec.loss, rec.mean_data_q);
        log.epochs.push(rec);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::test_support::simple_trajectory;
    use crate::cohort::{Action, FeatureSet};

    fn small(hidden: usize, alpha: f64) -> RlConfig {
        RlConfig {
            hidden,
            cql_alpha: alpha,
            ..RlConfig::default()
        }
    }

    #[test]
    fn transitions_from_cohort() {
        let mut t5 = simple_trajectory("five", 5, 1.0, 3, 0.5);
        t5.actions[2] = Action::new(3, 1).unwrap();
        let c = Cohort::new(
            FeatureSet::Full,
            vec![simple_trajectory("one", 1, 0.0, 3, 0.5), t5],
        )
        .unwrap();
        let tr = build_transitions(&c, &[0], |i| Ok(vec![0.5; c.trajectory(i).len()])).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.done, vec![true]);
        let tr = build_transitions(&c, &[1], |i| Ok(vec![0.1; c.trajectory(i).len()])).unwrap();
        assert_eq!(tr.len(), 5);
        assert_eq!(tr.done.iter().filter(|d| **d).count(), 1);
        assert!(tr.done[4]);
        assert_eq!(tr.actions[2], 16);
        assert_eq!(tr.next_states.row(0), tr.states.row(1));
        assert!(build_transitions(&c, &[1], |_| Ok(vec![0.0; 2])).is_err());
        assert!(build_transitions(&c, &[0], |_| Ok(vec![f64::NAN])).is_err());
    }

    #[test]
    fn zero_model_gives_zero_q() {
        let m = QModel::zeros(3, small(4, 0.5));
        let q = m.q_values_one(&[1.0, -2.0, 0.5]).unwrap();
        assert!(q.iter().all(|v| *v == 0.0));
        assert_eq!(m.greedy_action(&[1.0, -2.0, 0.5]).unwrap(), 0);
    }

    #[test]
    fn dueling_identity_under_advantage_shift() {
        let mut m = QModel::initialized(4, small(8, 0.5));
        let s = [0.3, -1.0, 2.0, 0.1];
        let before = m.q_values_one(&s).unwrap();
        let greedy = m.greedy_action(&s).unwrap();
        for v in m.segment_mut("b_advantage").unwrap() {
            *v += 7.25;
        }
        let after = m.q_values_one(&s).unwrap();
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert_eq!(m.greedy_action(&s).unwrap(), greedy);
    }

    /// D = 2, H = 1, slope 0.01.
    ///   z1 = 2 s0 - s1 + 0.5; h1 = leaky(z1)
    ///   z2 = 1.5 h1 - 0.2; h2 = leaky(z2)
    ///   V = 2 h2 + 0.1; A_j = j * h2 / 10 + b_j with b_3 = 1, others 0
    fn hand_model() -> QModel {
        let mut m = QModel::zeros(2, small(1, 0.5));
        m.segment_mut("w1").unwrap().copy_from_slice(&[2.0, -1.0]);
        m.segment_mut("b1").unwrap()[0] = 0.5;
        m.segment_mut("w2").unwrap()[0] = 1.5;
        m.segment_mut("b2").unwrap()[0] = -0.2;
        m.segment_mut("w_value").unwrap()[0] = 2.0;
        m.segment_mut("b_value").unwrap()[0] = 0.1;
        for (j, w) in m.segment_mut("w_advantage").unwrap().iter_mut().enumerate() {
            *w = j as f64 / 10.0;
        }
        m.segment_mut("b_advantage").unwrap()[3] = 1.0;
        m
    }

    #[test]
    fn hand_built_q_values() {
        let m = hand_model();
        // s = (1, 1): z1 = 1.5, z2 = 2.05, V = 4.2, A_j = 0.205 j (+1 at j = 3)
        // mean A = 0.205 * 12 + 1/25 = 2.5
        let q = m.q_values_one(&[1.0, 1.0]).unwrap();
        for j in 0..25 {
            let a = 0.205 * j as f64 + if j == 3 { 1.0 } else { 0.0 };
            let expected = 4.2 + a - 2.5;
            assert!((q[j] - expected).abs() < 1e-12, "{j}: {} vs {expected}", q[j]);
        }
        assert_eq!(m.greedy_action(&[1.0, 1.0]).unwrap(), 24);
        // s = (-1, 1): z1 = -2.5 -> -0.025; z2 = -0.2375 -> -0.002375
        // V = 0.09525; A_j = -0.0002375 j (+1 at 3); mean = -0.0002375*12 + 0.04
        let q = m.q_values_one(&[-1.0, 1.0]).unwrap();
        let h2 = -0.002375;
        let mean = h2 / 10.0 * 12.0 + 0.04;
        for j in 0..25 {
            let a = h2 * j as f64 / 10.0 + if j == 3 { 1.0 } else { 0.0 };
            assert!((q[j] - (2.0 * h2 + 0.1 + a - mean)).abs() < 1e-12);
        }
        assert_eq!(m.greedy_action(&[-1.0, 1.0]).unwrap(), 3);
    }

    fn one(s: Vec<f64>, a: usize, r: f64, next: Option<Vec<f64>>) -> Transition {
        Transition { s, a, r, s_next: next }
    }

    #[test]
    fn td_loss_zero_for_exact_terminal_target() {
        let mut m = QModel::zeros(2, small(2, 0.0));
        // Q(s, a) = V = 1 everywhere via the value bias
        m.segment_mut("b_value").unwrap()[0] = 1.0;
        let batch = Transitions::from_transitions(&[one(vec![0.2, 0.4], 5, 1.0, None)], 2).unwrap();
        assert_eq!(m.td_cql_loss(&batch).unwrap(), 0.0);
        assert!(matches!(
            m.td_cql_loss(&Transitions::from_transitions(&[], 2).unwrap()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn cql_term_for_equal_q_is_alpha_log_25() {
        let m = QModel::zeros(2, small(2, 0.5));
        let batch = Transitions::from_transitions(&[one(vec![0.0, 0.0], 7, 0.0, None)], 2).unwrap();
        let (_, td, cql, _) = m.loss_and_grad(&batch, false).unwrap();
        assert_eq!(td, 0.0);
        assert!((cql - 0.5 * 25f64.ln()).abs() < 1e-12);
        assert!((cql - 1.6094).abs() < 1e-4);
    }

    #[test]
    fn zero_alpha_is_pure_td() {
        let mut m = QModel::initialized(3, small(5, 0.0));
        m.target_params_mut().iter_mut().for_each(|v| *v *= 0.5);
        let items = vec![
            one(vec![0.1, 0.2, 0.3], 4, 0.7, Some(vec![0.3, 0.1, -0.2])),
            one(vec![1.1, -0.2, 0.0], 12, -0.3, None),
        ];
        let batch = Transitions::from_transitions(&items, 3).unwrap();
        let y = m.td_targets(&batch).unwrap();
        let q = m.q_values(batch.states.view()).unwrap();
        let huber = |d: f64| if d.abs() <= 1.0 { 0.5 * d * d } else { d.abs() - 0.5 };
        let oracle = (huber(q[[0, 4]] - y[0]) + huber(q[[1, 12]] - y[1])) / 2.0;
        assert!((m.td_cql_loss(&batch).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn double_dqn_selects_with_online_and_values_with_target() {
        let mut m = QModel::initialized(2, RlConfig { gamma: 0.9, ..small(4, 0.5) });
        let batch = Transitions::from_transitions(&[one(vec![0.0, 0.0], 0, 0.5, Some(vec![1.0, -1.0]))], 2).unwrap();
        let chosen = m.greedy_action(&[1.0, -1.0]).unwrap();
        // make the target prefer a different action than the online network
        let other = (chosen + 1) % 25;
        m.target_params_mut().iter_mut().for_each(|v| *v = 0.0);
        let l = Layout::new(2, 4);
        m.target_params_mut()[l.ba + other] = 10.0;
        m.target_params_mut()[l.ba + chosen] = 2.0;
        let y = m.td_targets(&batch).unwrap()[0];
        let qt = m.target_q_values(batch.next_states.view()).unwrap();
        assert!((y - (0.5 + 0.9 * qt[[0, chosen]])).abs() < 1e-12);
        assert!(qt[[0, other]] > qt[[0, chosen]]);
        // changing only the target weights changes the target value
        m.target_params_mut()[l.ba + chosen] = -3.0;
        let y2 = m.td_targets(&batch).unwrap()[0];
        assert!((y2 - y).abs() > 1e-6);
    }

    #[test]
    fn td_cql_gradient_matches_finite_differences() {
        let cfg = RlConfig { gamma: 0.9, ..small(6, 0.5) };
        let mut m = QModel::initialized(4, cfg);
        for (k, v) in m.target_params_mut().iter_mut().enumerate() {
            *v += 0.01 * ((k % 7) as f64 - 3.0);
        }
        let mut g = rng::substream(2, "fd-data");
        let items: Vec<Transition> = (0..12)
            .map(|k| {
                let s: Vec<f64> = (0..4).map(|_| g.random_range(-1.5..1.5)).collect();
                let next = (k % 4 != 3).then(|| (0..4).map(|_| g.random_range(-1.5..1.5)).collect());
                one(s, g.random_range(0..25), g.random_range(-1.0..1.0), next)
            })
            .collect();
        let batch = Transitions::from_transitions(&items, 4).unwrap();
        let (_, grad) = m.td_cql_loss_and_grad(&batch).unwrap();
        let mut worst: f64 = 0.0;
        let mut pick = rng::substream(3, "fd-coords");
        for _ in 0..80 {
            let k = pick.random_range(0..m.param_count());
            let h = 1e-5;
            let mut p = m.clone();
            p.params_mut()[k] += h;
            let mut q = m.clone();
            q.params_mut()[k] -= h;
            let num = (p.td_cql_loss(&batch).unwrap() - q.td_cql_loss(&batch).unwrap()) / (2.0 * h);
            let ana = grad[k];
            if num.abs().max(ana.abs()) < 1e-9 {
                continue;
            }
            worst = worst.max((num - ana).abs() / num.abs().max(ana.abs()));
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn greedy_ties_resolve_to_lowest_index() {
        let m = QModel::zeros(1, small(2, 0.0));
        assert_eq!(m.greedy_action(&[3.0]).unwrap(), 0);
        assert_eq!(argmax_lowest(ArrayView1::from(&[1.0, 2.0, 2.0, 0.0][..])), 1);
    }

    fn single_state_bandit(covered: &[usize]) -> Transitions {
        let items: Vec<Transition> = (0..400)
            .map(|k| {
                let a = covered[k % covered.len()];
                one(vec![1.0, 0.5], a, if a == 3 { 1.0 } else { 0.0 }, None)
            })
            .collect();
        Transitions::from_transitions(&items, 2).unwrap()
    }

    #[test]
    fn trivial_mdp_learns_the_rewarded_action() {
        let data = single_state_bandit(&(0..25).collect::<Vec<_>>());
        let cfg = RlConfig {
            hidden: 16,
            gamma: 0.0,
            epochs: 150,
            batch_size: 64,
            lr: 5e-3,
            ..RlConfig::default()
        };
        let (m, log) = train_policy(&data, &cfg).unwrap();
        assert_eq!(m.greedy_action(&[1.0, 0.5]).unwrap(), 3);
        let (_, log2) = train_policy(&data, &cfg).unwrap();
        assert_eq!(log, log2);
    }

    #[test]
    fn cql_lowers_q_on_uncovered_actions() {
        let covered = [0, 3, 7, 12, 20];
        let data = single_state_bandit(&covered);
        let uncovered_mean = |alpha: f64| {
            let cfg = RlConfig {
                hidden: 16,
                gamma: 0.0,
                epochs: 40,
                batch_size: 64,
                cql_alpha: alpha,
                seed: 4,
                ..RlConfig::default()
            };
            let (m, _) = train_policy(&data, &cfg).unwrap();
            let q = m.q_values_one(&[1.0, 0.5]).unwrap();
            (0..25).filter(|a| !covered.contains(a)).map(|a| q[a]).sum::<f64>() / 20.0
        };
        assert!(uncovered_mean(0.5) < uncovered_mean(0.0));
    }
}
