//! JSON checkpoints for the reward model and Q-networks.
//!
//! Each checkpoint records the hashes of the files it was built from so a
//! later stage can warn when an upstream artifact has changed since.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::sha256_file;
use crate::cohort::{FeatureSet, Scaler};
use crate::error::{Error, Result};
use crate::offline_rl::{QModel, RlConfig};
use crate::preference::{LearnedReward, NormalizationParams};
use crate::rewardnet::{RewardModel, RewardNetConfig};

pub const REWARD_FORMAT: &str = "cnpr-reward-v1";
pub const POLICY_FORMAT: &str = "cnpr-policy-v1";
/// Conservative penalty used by the trainer, recorded for readers of a policy.
pub const CQL_PENALTY: &str = "logsumexp_a Q(s,a) - Q(s,a_data)";

/// File name to sha256 of the inputs a checkpoint was built from.
pub type Upstream = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardCheckpoint {
    pub format: String,
    pub feature_set: FeatureSet,
    pub net: RewardNetConfig,
    pub params: Vec<f64>,
    pub scaler: Scaler,
    pub normalization: NormalizationParams,
    pub upstream: Upstream,
}

impl RewardCheckpoint {
    pub fn new(reward: &LearnedReward, feature_set: FeatureSet, scaler: &Scaler, upstream: Upstream) -> Self {
        Self {
            format: REWARD_FORMAT.into(),
            feature_set,
            net: *reward.model.config(),
            params: reward.model.params().to_vec(),
            scaler: scaler.clone(),
            normalization: reward.norm,
            upstream,
        }
    }

    pub fn learned_reward(&self) -> Result<LearnedReward> {
        Ok(LearnedReward {
            model: RewardModel::from_params(self.net, self.params.clone())?,
            norm: self.normalization,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format: String,
    /// Reward formulation the policy was trained on.
    pub reward: String,
    pub cql_penalty: String,
    pub input_dim: usize,
    pub config: RlConfig,
    pub online: Vec<f64>,
    pub target: Vec<f64>,
    pub scaler: Scaler,
    pub upstream: Upstream,
}

impl PolicyCheckpoint {
    pub fn new(reward: &str, q: &QModel, scaler: &Scaler, upstream: Upstream) -> Self {
        Self {
            format: POLICY_FORMAT.into(),
            reward: reward.into(),
            cql_penalty: CQL_PENALTY.into(),
            input_dim: q.input_dim(),
            config: q.config,
            online: q.params().to_vec(),
            target: q.target_params().to_vec(),
            scaler: scaler.clone(),
            upstream,
        }
    }

    pub fn q_model(&self) -> Result<QModel> {
        QModel::from_params(self.input_dim, self.config, self.online.clone(), self.target.clone())
    }
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}

fn check_format(found: &str, expected: &str, path: &Path) -> Result<()> {
    if found != expected {
        return Err(Error::Input(format!(
            "{}: expected checkpoint format `{expected}`, found `{found}`",
            path.display()
        )));
    }
    Ok(())
}

pub fn load_reward_checkpoint(path: &Path) -> Result<RewardCheckpoint> {
    let c: RewardCheckpoint = load_json(path)?;
    check_format(&c.format, REWARD_FORMAT, path)?;
    Ok(c)
}

pub fn load_policy_checkpoint(path: &Path) -> Result<PolicyCheckpoint> {
    let c: PolicyCheckpoint = load_json(path)?;
    check_format(&c.format, POLICY_FORMAT, path)?;
    Ok(c)
}

/// Hashes of `names` inside `dir`.
pub fn upstream_hashes(dir: &Path, names: &[&str]) -> Result<Upstream> {
    names
        .iter()
        .map(|n| Ok((n.to_string(), sha256_file(&dir.join(n))?)))
        .collect()
}

/// Compare recorded upstream hashes against the current files and log a
/// warning for each mismatch; returns the warnings.
pub fn check_upstream(dir: &Path, artifact: &str, upstream: &Upstream) -> Vec<String> {
    let mut warnings = Vec::new();
    for (name, recorded) in upstream {
        let msg = match sha256_file(&dir.join(name)) {
            Ok(current) if &current == recorded => continue,
            Ok(_) => format!("{artifact} is stale: upstream input `{name}` changed since it was built"),
            Err(_) => format!("{artifact}: upstream input `{name}` is missing"),
        };
        log::warn!("{msg}");
        warnings.push(msg);
    }
    warnings
}
