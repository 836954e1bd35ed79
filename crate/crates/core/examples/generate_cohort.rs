//! Generate a synthetic cohort, save it as JSON lines and reload it.
//!
//! `cargo run --example generate_cohort -- [n] [seed]`

use cnpr::cohort::{generate_synthetic_cohort, load_cohort, save_cohort, SynthConfig};

fn main() -> cnpr::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().and_then(|a| a.parse().ok()).unwrap_or(500);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);

    let cfg = SynthConfig { n_trajectories: n, ..SynthConfig::default() };
    let cohort = generate_synthetic_cohort(&cfg, seed)?;

    let mut hist = [0usize; 6];
    for t in cohort.trajectories() {
        hist[usize::from(t.tqs)] += 1;
    }
    let deaths = cohort.trajectories().iter().filter(|t| t.mortality).count();
    let steps: usize = cohort.trajectories().iter().map(|t| t.len()).sum();
    println!("{n} trajectories, {steps} steps, mortality {:.1}%", 100.0 * deaths as f64 / n as f64);
    println!("quality score counts (0 = unscorable): {hist:?}");

    let dir = tempfile::tempdir().expect("create temp dir");
    let path = dir.path().join("cohort.jsonl");
    save_cohort(&cohort, &path)?;
    let back = load_cohort(&path)?;
    assert_eq!(back.trajectories(), cohort.trajectories());
    println!("saved and reloaded {}", path.display());
    Ok(())
}

