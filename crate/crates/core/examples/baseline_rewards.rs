//! Score one trajectory under the three hand-designed rewards and show the
//! NEWS2 component breakdown for a set of vitals.

use cnpr::baselines::{baseline_rewards, news2_score, BaselineReward, News2Vitals};
use cnpr::cohort::{generate_synthetic_cohort, SynthConfig};

fn main() -> cnpr::Result<()> {
    let cohort = generate_synthetic_cohort(&SynthConfig { n_trajectories: 50, ..SynthConfig::default() }, 3)?;
    let i = (0..cohort.len()).find(|&i| cohort.trajectory(i).mortality).unwrap_or(0);
    let t = cohort.trajectory(i);
    println!("trajectory {} ({} steps, died: {})", t.id, t.len(), t.mortality);
    for kind in [BaselineReward::mortality(), BaselineReward::sofa_lac(), BaselineReward::news2()] {
        let r = baseline_rewards(&cohort, i, &kind)?;
        let shown: Vec<String> = r.iter().map(|v| format!("{v:.3}")).collect();
        println!("{:>9}: [{}]", kind.name(), shown.join(", "));
    }

    let vitals = News2Vitals {
        resp_rate: 23.0,
        spo2: 94.0,
        supplemental_o2: true,
        sbp: 98.0,
        hr: 118.0,
        temperature: 38.4,
        gcs: 15.0,
    };
    let c = news2_score(&vitals);
    println!("NEWS2 components {:?}, total {}", c.as_array(), c.total());
    Ok(())
}
