//! Trajectory data model, ingestion, the synthetic cohort simulator and the
//! train/test split with its feature scaler.

mod action;
mod features;
mod io;
pub mod synth;
mod trajectory;

pub use action::{discretize_dose, Action, IV_THRESHOLDS, NUM_ACTIONS, NUM_BINS, VASO_THRESHOLDS};
pub use features::{FeatureSet, FULL_FEATURES, REDUCED_DROPPED};
pub use io::{load_cohort, save_cohort, write_summary_csv};
pub use synth::{generate_synthetic_cohort, SynthConfig};
pub use trajectory::{
    Covariates, DischargeCategory, StepFlags, Trajectory, Violation, STEP_HOURS,
};

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Per-feature standardization fitted on training states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    /// Fit on rows; zero-variance features get std = 1.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, d: usize, names: &[&str]) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        // Welford
        for row in rows {
            n += 1;
            for j in 0..d {
                let delta = row[j] - mean[j];
                mean[j] += delta / n as f64;
                m2[j] += delta * (row[j] - mean[j]);
            }
        }
        let std = m2
            .iter()
            .enumerate()
            .map(|(j, &s)| {
                let sd = if n > 0 { (s / n as f64).sqrt() } else { 0.0 };
                if sd > 1e-12 {
                    sd
                } else {
                    log::warn!(
                        "feature `{}` has zero variance on the training split; using std = 1",
                        names.get(j).copied().unwrap_or("?")
                    );
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Array2<f64> {
        let d = self.mean.len();
        let mut out = Array2::zeros((rows.len(), d));
        for (i, row) in rows.iter().enumerate() {
            for j in 0..d {
                out[[i, j]] = (row[j] - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

/// An immutable collection of trajectories with split tags and standardized features.
#[derive(Debug, Clone)]
pub struct Cohort {
    feature_set: FeatureSet,
    trajectories: Vec<Trajectory>,
    split: Vec<Split>,
    scaler: Scaler,
    features: Vec<Array2<f64>>,
}

impl Cohort {
    /// Validate and wrap trajectories. All trajectories start in the train split with
    /// an identity scaler until [`Cohort::fit_split_and_scaler`] is called.
    pub fn new(feature_set: FeatureSet, trajectories: Vec<Trajectory>) -> Result<Self> {
        let d = feature_set.len();
        for (i, t) in trajectories.iter().enumerate() {
            t.validate(d).map_err(|v| Error::Validation {
                line: i + 1,
                field: v.field.to_string(),
                message: format!("trajectory `{}`: {}", t.id, v.message),
            })?;
        }
        let scaler = Scaler::identity(d);
        let features = trajectories.iter().map(|t| scaler.transform(&t.states)).collect();
        Ok(Self {
            feature_set,
            split: vec![Split::Train; trajectories.len()],
            trajectories,
            scaler,
            features,
        })
    }

    pub fn feature_set(&self) -> FeatureSet {
        self.feature_set
    }

    pub fn feature_count(&self) -> usize {
        self.feature_set.len()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn trajectory(&self, i: usize) -> &Trajectory {
        &self.trajectories[i]
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    /// Standardized state matrix (T x D) of trajectory `i`.
    pub fn features(&self, i: usize) -> &Array2<f64> {
        &self.features[i]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices(Split::Train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices(Split::Test)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.trajectories.iter().position(|t| t.id == id)
    }

    /// Assign a seeded train/test split, fit the scaler on training states and
    /// standardize every trajectory with it.
    pub fn fit_split_and_scaler(self, train_frac: f64, seed: u64) -> Result<Self> {
        if !(train_frac > 0.0 && train_frac < 1.0) {
            return Err(Error::Config(format!(
                "train_frac must lie in (0, 1), got {train_frac}"
            )));
        }
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = rng::substream(seed, rng::streams::SPLIT);
        order.shuffle(&mut rng);
        let n_train = ((n as f64) * train_frac).round() as usize;
        let mut split = vec![Split::Test; n];
        for &i in &order[..n_train] {
            split[i] = Split::Train;
        }
        self.with_split(split)
    }

    /// Install an explicit split and refit the scaler on its training part.
    pub fn with_split(self, split: Vec<Split>) -> Result<Self> {
        if split.len() != self.len() {
            return Err(Error::Input(format!(
                "split has {} tags for {} trajectories",
                split.len(),
                self.len()
            )));
        }
        let names = self.feature_set.names();
        let d = self.feature_count();
        let rows = self
            .trajectories
            .iter()
            .zip(&split)
            .filter(|(_, s)| **s == Split::Train)
            .flat_map(|(t, _)| t.states.iter().map(|r| r.as_slice()));
        let scaler = Scaler::fit(rows, d, &names);
        Ok(self.with_scaler(split, scaler))
    }

    /// Install a previously fitted scaler (e.g. from a checkpoint).
    pub fn with_scaler(self, split: Vec<Split>, scaler: Scaler) -> Self {
        let features = self
            .trajectories
            .iter()
            .map(|t| scaler.transform(&t.states))
            .collect();
        Self {
            split,
            scaler,
            features,
            ..self
        }
    }

    /// Raw (unstandardized) value of a named feature at step `t` of trajectory `i`.
    pub fn raw_value(&self, i: usize, t: usize, name: &str) -> Option<f64> {
        self.feature_set
            .index_of(name)
            .map(|j| self.trajectories[i].states[t][j])
    }
}
