pub mod baselines;
pub mod cohort;
pub mod error;
pub mod evaluation;
pub mod offline_rl;
pub mod optim;
pub mod outcomes;
pub mod pipeline;
pub mod preference;
pub mod rewardnet;
pub mod rng;

pub use error::{Error, Result};
