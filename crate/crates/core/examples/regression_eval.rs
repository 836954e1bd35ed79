//! Regress each outcome on the standardized distance between a policy and the
//! clinician, adjusting for baseline covariates. Compares a briefly trained
//! greedy policy with the random policy.

use cnpr::baselines::{baseline_rewards, BaselineReward};
use cnpr::cohort::{generate_synthetic_cohort, SynthConfig};
use cnpr::evaluation::analysis::{evaluate_policy, PolicyEvaluation};
use cnpr::evaluation::Policy;
use cnpr::offline_rl::{build_transitions, train_policy, RlConfig};
use cnpr::outcomes::compute_outcomes;

fn main() -> cnpr::Result<()> {
    let cohort = generate_synthetic_cohort(&SynthConfig { n_trajectories: 1200, ..SynthConfig::default() }, 5)?
        .fit_split_and_scaler(0.7, 5)?;
    let outcomes = compute_outcomes(&cohort);
    let test = cohort.test_indices();

    let kind = BaselineReward::sofa_lac();
    let data = build_transitions(&cohort, &cohort.train_indices(), |i| baseline_rewards(&cohort, i, &kind))?;
    let (q, _) = train_policy(&data, &RlConfig { epochs: 5, seed: 5, ..RlConfig::default() })?;

    for (name, policy) in [("SOFA-Lac policy", Policy::Greedy(Box::new(q))), ("Random policy", Policy::Random { seed: 5 })] {
        print(&evaluate_policy(name, &policy, &cohort, &test, &outcomes)?);
    }
    Ok(())
}

fn print(e: &PolicyEvaluation) {
    println!("{}: distance coefficient, beta (95% CI)", e.policy);
    for fit in &e.fits {
        let j = fit.result.index_of("distance").expect("distance term");
        println!("  {:<16} {}", fit.outcome, fit.result.format_cell(j));
    }
}
