//! Baseline reward formulations (terminal mortality, SOFA-lactate shaping and
//! NEWS2) and the uniform random policy.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Terminal-only reward: `+r` for survivors and `-r` for deaths at the last step.
pub fn mortality_reward(died: bool, t: usize, len: usize, r: f64) -> f64 {
    if t + 1 < len {
        0.0
    } else if died {
        -r
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SofaLacCoeffs {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub r_outcome_survive: f64,
    pub r_outcome_die: f64,
}

impl Default for SofaLacCoeffs {
    fn default() -> Self {
        Self {
            c0: -0.025,
            c1: -0.125,
            c2: -2.0,
            r_outcome_survive: 15.0,
            r_outcome_die: -15.0,
        }
    }
}

/// Physiology needed by the SOFA-lactate reward at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SofaLacStep {
    /// Organ systems with a positive subscore.
    pub organs_failing: u32,
    pub sofa_total: f64,
    pub lactate: f64,
}

/// SOFA-lactate reward at step `t` of `steps`. The delta terms vanish at the
/// final step, which carries the outcome reward instead.
pub fn sofa_lac_reward(steps: &[SofaLacStep], t: usize, died: bool, c: &SofaLacCoeffs) -> f64 {
    let now = steps[t];
    let mut r = c.c0 * f64::from(now.organs_failing).tanh();
    match steps.get(t + 1) {
        Some(next) => {
            r += c.c1 * (next.sofa_total - now.sofa_total);
            r += c.c2 * (next.lactate - now.lactate).tanh();
        }
        None => r += if died { c.r_outcome_die } else { c.r_outcome_survive },
    }
    r
}

/// NEWS2 component scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct News2Components {
    pub rr: u8,
    pub spo2: u8,
    pub o2: u8,
    pub bp: u8,
    pub hr: u8,
    pub temp: u8,
    pub cns: u8,
}

impl News2Components {
    pub fn total(&self) -> u8 {
        self.rr + self.spo2 + self.o2 + self.bp + self.hr + self.temp + self.cns
    }

    pub fn as_array(&self) -> [u8; 7] {
        [self.rr, self.spo2, self.o2, self.bp, self.hr, self.temp, self.cns]
    }
}

/// Vital signs scored by NEWS2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct News2Vitals {
    pub resp_rate: f64,
    pub spo2: f64,
    pub supplemental_o2: bool,
    pub sbp: f64,
    pub hr: f64,
    pub temperature: f64,
    pub gcs: f64,
}

/// First band whose upper bound (inclusive) admits `x`; beyond the last bound
/// the trailing score applies.
fn band(x: f64, uppers: &[f64], scores: &[u8]) -> u8 {
    debug_assert_eq!(scores.len(), uppers.len() + 1);
    for (u, s) in uppers.iter().zip(scores) {
        if x <= *u {
            return *s;
        }
    }
    scores[uppers.len()]
}

pub const RR_BANDS: ([f64; 4], [u8; 5]) = ([8.0, 11.0, 20.0, 24.0], [3, 1, 0, 2, 3]);
pub const SPO2_BANDS: ([f64; 3], [u8; 4]) = ([91.0, 93.0, 95.0], [3, 2, 1, 0]);
pub const SBP_BANDS: ([f64; 4], [u8; 5]) = ([90.0, 100.0, 110.0, 219.0], [3, 2, 1, 0, 3]);
pub const HR_BANDS: ([f64; 5], [u8; 6]) = ([40.0, 50.0, 90.0, 110.0, 130.0], [3, 1, 0, 1, 2, 3]);
pub const TEMP_BANDS: ([f64; 4], [u8; 5]) = ([35.0, 36.0, 38.0, 39.0], [3, 1, 0, 1, 2]);

/// Score vitals against the scale-1 NEWS2 table. Band edges are inclusive upper
/// bounds, so a value between two integer edges (e.g. RR 8.5) falls in the
/// higher band.
pub fn news2_score(v: &News2Vitals) -> News2Components {
    News2Components {
        rr: band(v.resp_rate, &RR_BANDS.0, &RR_BANDS.1),
        spo2: band(v.spo2, &SPO2_BANDS.0, &SPO2_BANDS.1),
        o2: if v.supplemental_o2 { 2 } else { 0 },
        bp: band(v.sbp, &SBP_BANDS.0, &SBP_BANDS.1),
        hr: band(v.hr, &HR_BANDS.0, &HR_BANDS.1),
        temp: band(v.temperature, &TEMP_BANDS.0, &TEMP_BANDS.1),
        cns: if v.gcs < 15.0 { 3 } else { 0 },
    }
}

/// Normalizer: the largest attainable total.
pub const NEWS2_MAX: f64 = 20.0;

/// NEWS2 reward at step `t`: minus the normalized next-state total, or the
/// terminal outcome value at the final step.
pub fn news2_reward(
    next: Option<&News2Vitals>,
    died: bool,
    r_die: f64,
    r_survive: f64,
) -> f64 {
    match next {
        Some(v) => -f64::from(news2_score(v).total()) / NEWS2_MAX,
        None => {
            if died {
                r_die
            } else {
                r_survive
            }
        }
    }
}

/// Uniform draw over `0..num_actions`.
pub fn random_policy(num_actions: usize, rng: &mut SeededRng) -> usize {
    assert!(num_actions > 0, "random policy needs at least one action");
    rng.random_range(0..num_actions)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaselineReward {
    Mortality { r: f64 },
    SofaLac(SofaLacCoeffs),
    News2 { r_die: f64, r_survive: f64 },
}

impl BaselineReward {
    pub fn mortality() -> Self {
        Self::Mortality { r: 15.0 }
    }

    pub fn sofa_lac() -> Self {
        Self::SofaLac(SofaLacCoeffs::default())
    }

    pub fn news2() -> Self {
        Self::News2 {
            r_die: -1.0,
            r_survive: 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Mortality { .. } => "mortality",
            Self::SofaLac(_) => "sofa-lac",
            Self::News2 { .. } => "news2",
        }
    }
}

fn required(cohort: &Cohort, name: &str) -> Result<usize> {
    cohort.feature_set().index_of(name).ok_or_else(|| {
        Error::Input(format!("baseline reward needs state feature `{name}`, absent from the cohort"))
    })
}

/// SOFA-lactate inputs for trajectory `i`. Without per-organ subscores the organ
/// count falls back to 1{SOFA > 0}.
pub fn sofa_lac_steps(cohort: &Cohort, i: usize) -> Result<Vec<SofaLacStep>> {
    let traj = cohort.trajectory(i);
    let lac = required(cohort, "lactate")?;
    let sofa = required(cohort, "sofa")?;
    Ok((0..traj.len())
        .map(|t| {
            let row = &traj.states[t];
            let (organs_failing, sofa_total) = match &traj.sofa_components {
                Some(c) => (
                    c[t].iter().filter(|&&s| s > 0).count() as u32,
                    c[t].iter().map(|&s| f64::from(s)).sum(),
                ),
                None => (u32::from(row[sofa] > 0.0), row[sofa]),
            };
            SofaLacStep {
                organs_failing,
                sofa_total,
                lactate: row[lac],
            }
        })
        .collect())
}

/// NEWS2 vitals at every step of trajectory `i`.
pub fn news2_vitals(cohort: &Cohort, i: usize) -> Result<Vec<News2Vitals>> {
    let traj = cohort.trajectory(i);
    let idx = [
        required(cohort, "resp_rate")?,
        required(cohort, "spo2")?,
        required(cohort, "sbp")?,
        required(cohort, "hr")?,
        required(cohort, "temperature")?,
        required(cohort, "gcs")?,
    ];
    Ok((0..traj.len())
        .map(|t| {
            let row = &traj.states[t];
            News2Vitals {
                resp_rate: row[idx[0]],
                spo2: row[idx[1]],
                supplemental_o2: traj.flags[t].mech_vent,
                sbp: row[idx[2]],
                hr: row[idx[3]],
                temperature: row[idx[4]],
                gcs: row[idx[5]],
            }
        })
        .collect())
}

/// Per-step rewards of trajectory `i` under a baseline formulation.
pub fn baseline_rewards(cohort: &Cohort, i: usize, kind: &BaselineReward) -> Result<Vec<f64>> {
    let traj = cohort.trajectory(i);
    let len = traj.len();
    Ok(match kind {
        BaselineReward::Mortality { r } => (0..len)
            .map(|t| mortality_reward(traj.mortality, t, len, *r))
            .collect(),
        BaselineReward::SofaLac(c) => {
            let steps = sofa_lac_steps(cohort, i)?;
            (0..len).map(|t| sofa_lac_reward(&steps, t, traj.mortality, c)).collect()
        }
        BaselineReward::News2 { r_die, r_survive } => {
            let vitals = news2_vitals(cohort, i)?;
            (0..len)
                .map(|t| news2_reward(vitals.get(t + 1), traj.mortality, *r_die, *r_survive))
                .collect()
        }
    })
}

/// Whether the SOFA-lactate organ count had to be approximated from total SOFA.
pub fn sofa_count_approximated(cohort: &Cohort) -> usize {
    cohort
        .trajectories()
        .iter()
        .filter(|t| t.sofa_components.is_none())
        .count()
}

#[derive(Debug, Serialize)]
struct TraceRow<'a> {
    trajectory_id: &'a str,
    step: usize,
    reward: f64,
}

/// Write `trajectory_id,step,reward` rows for per-trajectory reward vectors.
pub fn write_reward_trace(
    path: impl AsRef<Path>,
    cohort: &Cohort,
    rewards: &[(usize, Vec<f64>)],
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    for (i, r) in rewards {
        let id = &cohort.trajectory(*i).id;
        for (step, &reward) in r.iter().enumerate() {
            w.serialize(TraceRow {
                trajectory_id: id,
                step,
                reward,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
