//! Compute per-trajectory outcome metrics and summarize them.

use cnpr::cohort::{generate_synthetic_cohort, SynthConfig};
use cnpr::evaluation::stats::mean;
use cnpr::outcomes::compute_outcomes;

fn main() -> cnpr::Result<()> {
    let cohort = generate_synthetic_cohort(&SynthConfig { n_trajectories: 1000, ..SynthConfig::default() }, 4)?;
    let records = compute_outcomes(&cohort);

    let osfd: Vec<f64> = records.iter().map(|r| r.osfd7).collect();
    let tsr: Vec<f64> = records.iter().filter_map(|r| r.tsr_hours).collect();
    let iv: Vec<f64> = records.iter().map(|r| r.iv_burden).collect();
    let vaso: Vec<f64> = records.iter().map(|r| r.vaso_burden).collect();
    let discharge: Vec<f64> = records.iter().filter_map(|r| r.discharge_score.map(f64::from)).collect();
    let capped = tsr.iter().filter(|&&h| h == 72.0).count();

    println!("organ support-free days (7 d): mean {:.2}", mean(&osfd));
    println!(
        "time to shock resolution: {} of {} ever in shock, mean {:.1} h, {capped} capped at 72 h",
        tsr.len(),
        records.len(),
        mean(&tsr)
    );
    println!("treatment burden: IV {:.2}, vasopressor {:.2} mean bins per step", mean(&iv), mean(&vaso));
    println!("discharge score: mean {:.2} over {} ranked destinations", mean(&discharge), discharge.len());
    Ok(())
}
