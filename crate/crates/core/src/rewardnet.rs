//! Per-step reward network: state features concatenated with learned IV and
//! vasopressor bin embeddings, two rectifier layers with inverted dropout, and
//! a scalar head. Forward and reverse passes are written out for exactly this
//! architecture; parameters live in one flat vector.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Action, NUM_BINS};
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardNetConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub dropout: f64,
}

impl Default for RewardNetConfig {
    fn default() -> Self {
        Self {
            input_dim: 48,
            hidden: 128,
            embed_dim: 8,
            dropout: 0.2,
        }
    }
}

impl RewardNetConfig {
    pub fn concat_dim(&self) -> usize {
        self.input_dim + 2 * self.embed_dim
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (h, e) = (self.hidden, self.embed_dim);
        2 * NUM_BINS * e + h * self.concat_dim() + h + h * h + h + h + 1
    }

    pub fn segments(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (h, e) = (self.hidden, self.embed_dim);
        vec![
            ("emb_iv", vec![NUM_BINS, e]),
            ("emb_vaso", vec![NUM_BINS, e]),
            ("w1", vec![h, self.concat_dim()]),
            ("b1", vec![h]),
            ("w2", vec![h, h]),
            ("b2", vec![h]),
            ("w3", vec![h]),
            ("b3", vec![1]),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    emb_iv: usize,
    emb_vaso: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

impl Offsets {
    fn new(c: &RewardNetConfig) -> Self {
        let (h, e) = (c.hidden, c.embed_dim);
        let emb_iv = 0;
        let emb_vaso = emb_iv + NUM_BINS * e;
        let w1 = emb_vaso + NUM_BINS * e;
        let b1 = w1 + h * c.concat_dim();
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + h;
        Self { emb_iv, emb_vaso, w1, b1, w2, b2, w3, b3, end: b3 + 1 }
    }
}

/// Flat gradient vector with the same layout as [`RewardModel`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    config: RewardNetConfig,
    offsets: Offsets,
    params: Vec<f64>,
}

impl PartialEq for Offsets {
    fn eq(&self, other: &Self) -> bool {
        self.end == other.end && self.w1 == other.w1
    }
}

/// Activations saved by a recorded forward pass.
#[derive(Debug, Clone)]
struct ForwardRecord {
    xin: Array2<f64>,
    z1: Array2<f64>,
    mask1: Option<Array2<f64>>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    mask2: Option<Array2<f64>>,
    a2: Array2<f64>,
    iv: Vec<usize>,
    vaso: Vec<usize>,
}

/// Holds the most recent recorded forward pass for [`RewardModel::backward`].
#[derive(Debug, Default, Clone)]
pub struct Tape {
    record: Option<ForwardRecord>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.record = None;
    }

    pub fn is_empty(&self) -> bool {
        self.record.is_none()
    }
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut SeededRng) -> Array2<f64> {
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < keep {
            scale
        } else {
            0.0
        }
    })
}

impl RewardModel {
    pub fn zeros(config: RewardNetConfig) -> Self {
        let offsets = Offsets::new(&config);
        Self {
            config,
            offsets,
            params: vec![0.0; offsets.end],
        }
    }

    /// He-uniform rectifier layers, fan-in uniform head, embeddings in [-0.1, 0.1].
    pub fn initialized(config: RewardNetConfig, seed: u64) -> Self {
        let mut m = Self::zeros(config);
        let mut rng = rng::substream(seed, rng::streams::INIT);
        let o = m.offsets;
        let din = config.concat_dim() as f64;
        let h = config.hidden as f64;
        let mut fill = |range: std::ops::Range<usize>, bound: f64, p: &mut [f64]| {
            for v in &mut p[range] {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(o.emb_iv..o.w1, 0.1, &mut m.params);
        fill(o.w1..o.b1, (6.0 / din).sqrt(), &mut m.params);
        fill(o.w2..o.b2, (6.0 / h).sqrt(), &mut m.params);
        fill(o.w3..o.b3, (1.0 / h).sqrt(), &mut m.params);
        m
    }

    pub fn from_params(config: RewardNetConfig, params: Vec<f64>) -> Result<Self> {
        let offsets = Offsets::new(&config);
        if params.len() != offsets.end {
            return Err(Error::Input(format!(
                "reward model expects {} parameters, got {}",
                offsets.end,
                params.len()
            )));
        }
        Ok(Self { config, offsets, params })
    }

    pub fn config(&self) -> &RewardNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients(vec![0.0; self.params.len()])
    }

    fn view2(&self, off: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.params[off..off + rows * cols])
            .expect("layout is consistent")
    }

    fn view1(&self, off: usize, len: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[off..off + len])
    }

    pub fn emb_iv(&self) -> ArrayView2<'_, f64> {
        self.view2(self.offsets.emb_iv, NUM_BINS, self.config.embed_dim)
    }

    pub fn emb_vaso(&self) -> ArrayView2<'_, f64> {
        self.view2(self.offsets.emb_vaso, NUM_BINS, self.config.embed_dim)
    }

    pub fn w1(&self) -> ArrayView2<'_, f64> {
        self.view2(self.offsets.w1, self.config.hidden, self.config.concat_dim())
    }

    pub fn b1(&self) -> ArrayView1<'_, f64> {
        self.view1(self.offsets.b1, self.config.hidden)
    }

    pub fn w2(&self) -> ArrayView2<'_, f64> {
        self.view2(self.offsets.w2, self.config.hidden, self.config.hidden)
    }

    pub fn b2(&self) -> ArrayView1<'_, f64> {
        self.view1(self.offsets.b2, self.config.hidden)
    }

    pub fn w3(&self) -> ArrayView1<'_, f64> {
        self.view1(self.offsets.w3, self.config.hidden)
    }

    pub fn b3(&self) -> f64 {
        self.params[self.offsets.b3]
    }

    /// Named parameter segment, for building toy models by hand.
    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let o = self.offsets;
        let range = match name {
            "emb_iv" => o.emb_iv..o.emb_vaso,
            "emb_vaso" => o.emb_vaso..o.w1,
            "w1" => o.w1..o.b1,
            "b1" => o.b1..o.w2,
            "w2" => o.w2..o.b2,
            "b2" => o.b2..o.w3,
            "w3" => o.w3..o.b3,
            "b3" => o.b3..o.end,
            _ => return None,
        };
        Some(&mut self.params[range])
    }

    fn build_input(&self, states: ArrayView2<'_, f64>, actions: &[Action]) -> Result<Array2<f64>> {
        let d = self.config.input_dim;
        let e = self.config.embed_dim;
        if states.ncols() != d {
            return Err(Error::Input(format!(
                "state width {} does not match model input {d}",
                states.ncols()
            )));
        }
        if states.nrows() != actions.len() {
            return Err(Error::Input(format!(
                "{} states but {} actions",
                states.nrows(),
                actions.len()
            )));
        }
        let mut xin = Array2::zeros((states.nrows(), self.config.concat_dim()));
        xin.slice_mut(s![.., ..d]).assign(&states);
        let (ei, ev) = (self.emb_iv(), self.emb_vaso());
        for (r, a) in actions.iter().enumerate() {
            xin.slice_mut(s![r, d..d + e])
                .assign(&ei.row(usize::from(a.iv_bin())));
            xin.slice_mut(s![r, d + e..])
                .assign(&ev.row(usize::from(a.vaso_bin())));
        }
        Ok(xin)
    }

    fn run(
        &self,
        states: ArrayView2<'_, f64>,
        actions: &[Action],
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Array1<f64>, ForwardRecord)> {
        let xin = self.build_input(states, actions)?;
        let m = xin.nrows();
        let h = self.config.hidden;
        let p = self.config.dropout;
        let train = mode == Mode::Train && p > 0.0;

        let z1 = xin.dot(&self.w1().t()) + &self.b1();
        let mut a1 = z1.clone();
        relu_inplace(&mut a1);
        let mask1 = train.then(|| dropout_mask(m, h, p, rng));
        if let Some(mk) = &mask1 {
            a1 *= mk;
        }
        let z2 = a1.dot(&self.w2().t()) + &self.b2();
        let mut a2 = z2.clone();
        relu_inplace(&mut a2);
        let mask2 = train.then(|| dropout_mask(m, h, p, rng));
        if let Some(mk) = &mask2 {
            a2 *= mk;
        }
        let r = a2.dot(&self.w3()) + self.b3();
        let rec = ForwardRecord {
            xin,
            z1,
            mask1,
            a1,
            z2,
            mask2,
            a2,
            iv: actions.iter().map(|a| usize::from(a.iv_bin())).collect(),
            vaso: actions.iter().map(|a| usize::from(a.vaso_bin())).collect(),
        };
        Ok((r, rec))
    }

    /// Rewards for a batch of steps (rows of `states`) without recording activations.
    pub fn forward(
        &self,
        states: ArrayView2<'_, f64>,
        actions: &[Action],
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<Array1<f64>> {
        self.run(states, actions, mode, rng).map(|(r, _)| r)
    }

    /// Deterministic eval-mode rewards.
    pub fn rewards(&self, states: ArrayView2<'_, f64>, actions: &[Action]) -> Result<Array1<f64>> {
        // eval mode never draws from the generator
        let mut rng = rng::substream(0, "unused");
        self.forward(states, actions, Mode::Eval, &mut rng)
    }

    /// Forward pass that stores activations on `tape` for a later [`RewardModel::backward`].
    pub fn forward_recorded(
        &self,
        tape: &mut Tape,
        states: ArrayView2<'_, f64>,
        actions: &[Action],
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<Array1<f64>> {
        let (r, rec) = self.run(states, actions, mode, rng)?;
        tape.record = Some(rec);
        Ok(r)
    }

    /// r(s, a) for a single step.
    pub fn forward_step_reward(
        &self,
        state: &[f64],
        action: Action,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<f64> {
        let s = ArrayView2::from_shape((1, state.len()), state)
            .map_err(|e| Error::Input(e.to_string()))?;
        Ok(self.forward(s, &[action], mode, rng)?[0])
    }

    /// Sum of eval-mode per-step rewards over a trajectory.
    pub fn trajectory_return(&self, states: ArrayView2<'_, f64>, actions: &[Action]) -> Result<f64> {
        if actions.is_empty() {
            return Err(Error::Input("trajectory return of an empty trajectory".into()));
        }
        Ok(self.rewards(states, actions)?.sum())
    }

    /// Reverse pass: gradients of `sum_i upstream[i] * r_i` for the recorded batch.
    pub fn backward(&self, tape: &Tape, upstream: ArrayView1<'_, f64>) -> Result<Gradients> {
        let rec = tape
            .record
            .as_ref()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        if upstream.len() != rec.xin.nrows() {
            return Err(Error::State(format!(
                "upstream gradient has {} entries for a recorded batch of {}",
                upstream.len(),
                rec.xin.nrows()
            )));
        }
        let o = self.offsets;
        let (d, e, h) = (self.config.input_dim, self.config.embed_dim, self.config.hidden);
        let mut g = vec![0.0; self.params.len()];

        // head
        let dw3 = rec.a2.t().dot(&upstream);
        g[o.w3..o.b3].copy_from_slice(dw3.as_slice().expect("contiguous"));
        g[o.b3] = upstream.sum();

        // layer 2
        let upstream_col = upstream.view().insert_axis(Axis(1));
        let mut dz2 = &upstream_col * &self.w3().insert_axis(Axis(0));
        if let Some(mk) = &rec.mask2 {
            dz2 *= mk;
        }
        ndarray::Zip::from(&mut dz2).and(&rec.z2).for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        let dw2 = dz2.t().dot(&rec.a1);
        g[o.w2..o.b2].copy_from_slice(dw2.as_standard_layout().as_slice().expect("contiguous"));
        let db2 = dz2.sum_axis(Axis(0));
        g[o.b2..o.w3].copy_from_slice(db2.as_slice().expect("contiguous"));

        // layer 1
        let mut dz1 = dz2.dot(&self.w2());
        if let Some(mk) = &rec.mask1 {
            dz1 *= mk;
        }
        ndarray::Zip::from(&mut dz1).and(&rec.z1).for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        let dw1 = dz1.t().dot(&rec.xin);
        g[o.w1..o.b1].copy_from_slice(dw1.as_standard_layout().as_slice().expect("contiguous"));
        let db1 = dz1.sum_axis(Axis(0));
        g[o.b1..o.w2].copy_from_slice(db1.as_slice().expect("contiguous"));

        // embeddings: scatter-add the input gradient of the embedding columns
        let w1_emb = self.w1().slice_move(s![.., d..]);
        let dxe = dz1.dot(&w1_emb);
        for r in 0..dxe.nrows() {
            let iv = rec.iv[r];
            let va = rec.vaso[r];
            for k in 0..e {
                g[o.emb_iv + iv * e + k] += dxe[[r, k]];
                g[o.emb_vaso + va * e + k] += dxe[[r, e + k]];
            }
        }
        debug_assert_eq!(dw1.ncols(), d + 2 * e);
        debug_assert_eq!(dw1.nrows(), h);
        Ok(Gradients(g))
    }
}
