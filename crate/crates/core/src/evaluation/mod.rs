//! Regression-based evaluation of policies against observed outcomes.

pub mod analysis;
pub mod distance;
pub mod forest;
pub mod heatmap;
pub mod regression;
pub mod stats;

use crate::baselines::random_policy;
use crate::cohort::{Action, Cohort, NUM_ACTIONS};
use crate::error::Result;
use crate::offline_rl::QModel;
use crate::rng;

/// A policy that proposes one action per recorded state.
#[derive(Debug, Clone)]
pub enum Policy {
    /// The recorded clinician actions.
    Clinician,
    /// Greedy actions of a trained Q-network on standardized states.
    Greedy(Box<QModel>),
    /// Uniform over the joint actions, seeded per trajectory.
    Random { seed: u64 },
}

impl Policy {
    pub fn actions(&self, cohort: &Cohort, i: usize) -> Result<Vec<Action>> {
        match self {
            Policy::Clinician => Ok(cohort.trajectory(i).actions.clone()),
            Policy::Greedy(q) => q
                .greedy_actions(cohort.features(i).view())?
                .into_iter()
                .map(Action::from_joint)
                .collect(),
            Policy::Random { seed } => {
                let mut g = rng::indexed_substream(*seed, rng::streams::POLICY, i as u64);
                (0..cohort.trajectory(i).len())
                    .map(|_| Action::from_joint(random_policy(NUM_ACTIONS, &mut g)))
                    .collect()
            }
        }
    }
}
