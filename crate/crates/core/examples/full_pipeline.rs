//! Run every stage end to end into a directory and print the headline numbers.
//!
//! `cargo run --release --example full_pipeline -- [output_dir] [n]`

use cnpr::pipeline::{run_pipeline, ExperimentConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "runs/example".into());
    let n = args.next().and_then(|a| a.parse().ok()).unwrap_or(600);

    let mut cfg = ExperimentConfig { output_dir: out.into(), ..ExperimentConfig::default() };
    cfg.cohort.synthetic.n_trajectories = n;
    cfg.rl.epochs = 10;
    cfg.evaluation.forest.n_trees = 50;
    let cfg = match cfg.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    };
    let run = match run_pipeline(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    };
    let a = &run.alignment;
    let d = a.cohens_d.map_or("n/a".into(), |d| format!("{d:.2}"));
    println!("learned reward vs score: Spearman {:.3}, Cohen's d {d} (n = {})", a.spearman, a.n);
    for p in &run.summary.policies {
        println!(
            "{:<17} mean distance {:.2}, OSFD-7 beta {:+.3}, mortality beta {:+.3}",
            p.policy, p.mean_distance, p.distance_coef["osfd7"], p.distance_coef["mortality"]
        );
    }
    println!("{} files in {}, see report.md", run.manifest.files.len(), run.output_dir.display());
}
