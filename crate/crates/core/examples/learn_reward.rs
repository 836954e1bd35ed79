//! Learn a per-step reward from quality-score preferences and check how well the
//! held-out mean reward tracks the score.
//!
//! `cargo run --example learn_reward -- [n] [epochs]`

use cnpr::cohort::{generate_synthetic_cohort, SynthConfig};
use cnpr::evaluation::stats::spearman;
use cnpr::preference::{build_pairs, fit_normalization, train_reward, LearnedReward, PrefTrainConfig};

fn main() -> cnpr::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().and_then(|a| a.parse().ok()).unwrap_or(800);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(3);

    let cohort = generate_synthetic_cohort(&SynthConfig { n_trajectories: n, ..SynthConfig::default() }, 1)?
        .fit_split_and_scaler(0.8, 1)?;
    let cfg = PrefTrainConfig { max_epochs: epochs, seed: 1, ..PrefTrainConfig::default() };
    println!("{} preference pairs from the training split", build_pairs(&cohort, &cfg)?.len());

    let (model, log) = train_reward(&cohort, &cfg)?;
    for e in &log.epochs {
        println!(
            "epoch {}: train loss {:.4}, val loss {:.4}, val pair accuracy {:.3}",
            e.epoch, e.train_loss, e.val_loss, e.val_pair_accuracy
        );
    }
    let norm = fit_normalization(&model, &cohort)?;
    let reward = LearnedReward { model, norm };

    let test: Vec<usize> = cohort.test_indices().into_iter().filter(|&i| cohort.trajectory(i).tqs > 0).collect();
    let mean_reward = test.iter().map(|&i| reward.mean_reward(&cohort, i)).collect::<cnpr::Result<Vec<_>>>()?;
    let tqs: Vec<f64> = test.iter().map(|&i| f64::from(cohort.trajectory(i).tqs)).collect();
    println!("held-out Spearman(mean reward, score) = {:.3} over {} trajectories", spearman(&mean_reward, &tqs)?, test.len());
    Ok(())
}
