//! Train a conservative dueling double-DQN on the SOFA-lactate reward and
//! compare its greedy actions with the recorded clinician actions.
//!
//! `cargo run --example train_policy -- [n] [epochs]`

use cnpr::baselines::{baseline_rewards, BaselineReward};
use cnpr::cohort::{generate_synthetic_cohort, SynthConfig};
use cnpr::offline_rl::{build_transitions, train_policy, RlConfig};

fn main() -> cnpr::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().and_then(|a| a.parse().ok()).unwrap_or(400);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);

    let cohort = generate_synthetic_cohort(&SynthConfig { n_trajectories: n, ..SynthConfig::default() }, 2)?
        .fit_split_and_scaler(0.8, 2)?;
    let kind = BaselineReward::sofa_lac();
    let data = build_transitions(&cohort, &cohort.train_indices(), |i| baseline_rewards(&cohort, i, &kind))?;
    let cfg = RlConfig { epochs, seed: 2, ..RlConfig::default() };
    let (q, log) = train_policy(&data, &cfg)?;
    for e in &log.epochs {
        println!("epoch {}: td {:.4}, cql {:.4}, mean data Q {:.3}", e.epoch, e.td_loss, e.cql_loss, e.mean_data_q);
    }

    let (mut same, mut total) = (0usize, 0usize);
    for i in cohort.test_indices() {
        let greedy = q.greedy_actions(cohort.features(i).view())?;
        let clinician = &cohort.trajectory(i).actions;
        same += greedy.iter().zip(clinician).filter(|(g, c)| **g == c.joint_index()).count();
        total += greedy.len();
    }
    println!("greedy policy matches the clinician on {:.1}% of test steps", 100.0 * same as f64 / total as f64);
    Ok(())
}
