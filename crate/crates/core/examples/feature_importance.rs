//! Rank state features by how much shuffling them hurts a random forest that
//! predicts the clinician's vasopressor bin.

use ndarray::Array2;

use cnpr::cohort::{generate_synthetic_cohort, SynthConfig};
use cnpr::evaluation::forest::{permutation_importance, ForestConfig};

fn main() -> cnpr::Result<()> {
    let cohort = generate_synthetic_cohort(&SynthConfig { n_trajectories: 300, ..SynthConfig::default() }, 6)?;
    let names = cohort.feature_set().names();
    let d = names.len();

    let mut rows = Vec::new();
    let mut y = Vec::new();
    for t in cohort.trajectories() {
        for (s, a) in t.states.iter().zip(&t.actions) {
            rows.extend_from_slice(s);
            y.push(usize::from(a.vaso_bin()));
        }
    }
    let x = Array2::from_shape_vec((y.len(), d), rows).expect("rectangular states");
    let cfg = ForestConfig { n_trees: 60, ..ForestConfig::default() };
    let report = permutation_importance(x.view(), &y, &names, &cfg, 6)?;

    println!(
        "holdout accuracy {:.3} ({} train rows, {} holdout rows)",
        report.baseline_accuracy, report.n_train, report.n_holdout
    );
    for f in report.ranked.iter().take(8) {
        println!("  {:<18} {:.4} +/- {:.4}", f.feature, f.importance, f.std);
    }
    Ok(())
}
