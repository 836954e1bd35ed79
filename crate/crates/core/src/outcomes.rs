//! Outcome metrics on the 4-hour grid: organ support-free days, time to shock
//! resolution, treatment burden and the ordinal discharge score.
//!
//! Stays that end before the metric horizon are extended on the grid: survivors
//! count as alive, support-free and shock-free after their last recorded step;
//! decedents count as dead.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, DischargeCategory, Trajectory};
use crate::error::{Error, Result};

/// Intervals in the first seven days.
pub const OSFD_INTERVALS: usize = 42;
pub const INTERVALS_PER_DAY: f64 = 6.0;
/// Intervals in the 72-hour shock-resolution horizon.
pub const TSR_INTERVALS: usize = 18;
/// Consecutive shock-free intervals (12 hours) that define resolution.
pub const TSR_WINDOW: usize = 3;
pub const TSR_CAP_HOURS: f64 = 72.0;
pub const MAP_SHOCK_THRESHOLD: f64 = 65.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub trajectory_id: String,
    pub osfd7: f64,
    pub tsr_hours: Option<f64>,
    pub iv_burden: f64,
    pub vaso_burden: f64,
    pub discharge_score: Option<u8>,
    pub mortality: bool,
}

fn support_free(traj: &Trajectory, t: usize) -> bool {
    match traj.flags.get(t) {
        Some(f) => f.alive && !f.vasopressor_on && !f.mech_vent && !f.rrt,
        None => !traj.mortality,
    }
}

/// Organ support-free days within the first 7 days.
pub fn osfd7(traj: &Trajectory) -> f64 {
    let free = (0..OSFD_INTERVALS).filter(|&t| support_free(traj, t)).count();
    free as f64 / INTERVALS_PER_DAY
}

/// Shock at a recorded step: vasopressors running or MAP below 65 mmHg.
pub fn in_shock(traj: &Trajectory, t: usize) -> bool {
    traj.flags[t].vasopressor_on || traj.map[t] < MAP_SHOCK_THRESHOLD
}

fn shock_free(traj: &Trajectory, t: usize) -> bool {
    if t < traj.len() {
        traj.flags[t].alive && !in_shock(traj, t)
    } else {
        !traj.mortality
    }
}

/// Hours from the start of the grid to the first 12-hour shock-free window that
/// fits inside 72 hours; 72 when no such window exists and `None` when the
/// trajectory is never in shock.
pub fn time_to_shock_resolution(traj: &Trajectory) -> Option<f64> {
    if !(0..traj.len()).any(|t| in_shock(traj, t)) {
        return None;
    }
    let first = (0..=TSR_INTERVALS - TSR_WINDOW)
        .find(|&t| (t..t + TSR_WINDOW).all(|k| shock_free(traj, k)));
    Some(match first {
        Some(t) => (t as u32 * traj.step_hours) as f64,
        None => TSR_CAP_HOURS,
    })
}

/// Mean IV and vasopressor bins per step.
pub fn treatment_burden(traj: &Trajectory) -> (f64, f64) {
    let n = traj.len() as f64;
    let iv: u32 = traj.actions.iter().map(|a| u32::from(a.iv_bin())).sum();
    let vaso: u32 = traj.actions.iter().map(|a| u32::from(a.vaso_bin())).sum();
    (f64::from(iv) / n, f64::from(vaso) / n)
}

/// Ordinal discharge score: 7 for home down to 0 for hospice or death; `None`
/// for destinations outside the ordering.
pub fn discharge_score(category: DischargeCategory) -> Option<u8> {
    use DischargeCategory::*;
    match category {
        Home => Some(7),
        HomeHealth => Some(6),
        Rehab => Some(5),
        AssistedLiving => Some(4),
        SkilledNursing => Some(3),
        LongTermAcuteCare => Some(2),
        AcuteHospitalTransfer => Some(1),
        Hospice | Death => Some(0),
        OtherFacility | AgainstMedicalAdvice | Psychiatric => None,
    }
}

pub fn outcome_record(traj: &Trajectory) -> OutcomeRecord {
    let (iv_burden, vaso_burden) = treatment_burden(traj);
    OutcomeRecord {
        trajectory_id: traj.id.clone(),
        osfd7: osfd7(traj),
        tsr_hours: time_to_shock_resolution(traj),
        iv_burden,
        vaso_burden,
        discharge_score: traj.discharge_category.and_then(discharge_score),
        mortality: traj.mortality,
    }
}

pub fn compute_outcomes(cohort: &Cohort) -> Vec<OutcomeRecord> {
    cohort.trajectories().iter().map(outcome_record).collect()
}

pub fn write_outcomes_csv(path: impl AsRef<Path>, records: &[OutcomeRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_outcomes_csv(path: impl AsRef<Path>) -> Result<Vec<OutcomeRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Input(format!("{}: {other:?}", path.display())),
    })?;
    let mut out = Vec::new();
    for (k, rec) in r.deserialize().enumerate() {
        out.push(rec.map_err(|e| Error::Parse {
            line: k + 2,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::test_support::simple_trajectory;
    use crate::cohort::{Action, StepFlags};
    use proptest::prelude::*;

    fn alive_free(t: usize) -> Trajectory {
        simple_trajectory("x", t, 0.0, 3, 0.5)
    }

    #[test]
    fn osfd_examples() {
        assert_eq!(osfd7(&alive_free(18)), 7.0);
        let mut dead = alive_free(1);
        dead.flags[0].alive = false;
        dead.mortality = true;
        assert_eq!(osfd7(&dead), 0.0);
        let mut vaso = alive_free(18);
        for f in &mut vaso.flags[..6] {
            f.vasopressor_on = true;
        }
        assert_eq!(osfd7(&vaso), 6.0);
    }

    #[test]
    fn tsr_examples() {
        assert_eq!(time_to_shock_resolution(&alive_free(10)), None);
        let mut t = alive_free(10);
        t.map[0] = 60.0;
        t.flags[1].vasopressor_on = true;
        assert_eq!(time_to_shock_resolution(&t), Some(8.0));
        let mut always = alive_free(18);
        for f in &mut always.flags {
            f.vasopressor_on = true;
        }
        assert_eq!(time_to_shock_resolution(&always), Some(72.0));
        // resolution whose window would end past 72 h does not count
        let mut late = alive_free(18);
        for f in &mut late.flags[..16] {
            f.vasopressor_on = true;
        }
        assert_eq!(time_to_shock_resolution(&late), Some(72.0));
        late.flags[15].vasopressor_on = false;
        assert_eq!(time_to_shock_resolution(&late), Some(60.0));
    }

    #[test]
    fn short_stays_follow_the_grid_rule() {
        // survivor discharged after one shock interval resolves at 4 h
        let mut s = alive_free(1);
        s.flags[0].vasopressor_on = true;
        assert_eq!(time_to_shock_resolution(&s), Some(4.0));
        // decedent after one shock interval never resolves
        let mut d = alive_free(2);
        d.flags[0].vasopressor_on = true;
        d.flags[1].alive = false;
        d.mortality = true;
        assert_eq!(time_to_shock_resolution(&d), Some(72.0));
        assert_eq!(osfd7(&d), 0.0);
    }

    #[test]
    fn burden_examples() {
        assert_eq!(treatment_burden(&alive_free(4)), (0.0, 0.0));
        let mut t = alive_free(2);
        t.actions = vec![Action::new(1, 0).unwrap(), Action::new(3, 2).unwrap()];
        assert_eq!(treatment_burden(&t), (2.0, 1.0));
    }

    #[test]
    fn burden_matches_running_sum() {
        let mut t = alive_free(1000);
        let mut g = crate::rng::substream(8, "burden");
        use rand::Rng;
        for a in &mut t.actions {
            *a = Action::from_joint(g.random_range(0..25)).unwrap();
        }
        t.flags = vec![StepFlags { alive: true, ..Default::default() }; 1000];
        let mut iv = 0.0;
        let mut vaso = 0.0;
        for a in &t.actions {
            iv += f64::from(a.joint_index() as u32 / 5);
            vaso += f64::from(a.joint_index() as u32 % 5);
        }
        let (bi, bv) = treatment_burden(&t);
        assert!((bi - iv / 1000.0).abs() < 1e-12);
        assert!((bv - vaso / 1000.0).abs() < 1e-12);
    }

    #[test]
    fn discharge_mapping() {
        use DischargeCategory::*;
        assert_eq!(discharge_score(Home), Some(7));
        assert_eq!(discharge_score(Hospice), Some(0));
        assert_eq!(discharge_score(Death), Some(0));
        assert_eq!(discharge_score(AgainstMedicalAdvice), None);
        assert_eq!(discharge_score(Psychiatric), None);
        assert_eq!(discharge_score(OtherFacility), None);
        let ordered = [Home, HomeHealth, Rehab, AssistedLiving, SkilledNursing, LongTermAcuteCare, AcuteHospitalTransfer];
        for (k, c) in ordered.iter().enumerate() {
            assert_eq!(discharge_score(*c), Some(7 - k as u8));
        }
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = alive_free(3);
        t.flags[0].vasopressor_on = true;
        let recs = vec![outcome_record(&alive_free(2)), outcome_record(&t)];
        let p = dir.path().join("o.csv");
        write_outcomes_csv(&p, &recs).unwrap();
        assert_eq!(read_outcomes_csv(&p).unwrap(), recs);
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("trajectory_id,osfd7,tsr_hours,iv_burden,vaso_burden,discharge_score,mortality"));
    }

    proptest! {
        #[test]
        fn tsr_is_a_multiple_of_four_within_cap(
            shocks in proptest::collection::vec(any::<bool>(), 1..25),
            died in any::<bool>(),
        ) {
            let mut t = alive_free(shocks.len());
            for (f, s) in t.flags.iter_mut().zip(&shocks) {
                f.vasopressor_on = *s;
            }
            if died {
                let n = t.len();
                t.flags[n - 1].alive = false;
                t.mortality = true;
            }
            if let Some(h) = time_to_shock_resolution(&t) {
                prop_assert!(h <= 72.0 && h % 4.0 == 0.0);
            } else {
                prop_assert!(!shocks.iter().any(|s| *s));
            }
            let o = osfd7(&t);
            prop_assert!((0.0..=7.0).contains(&o));
            if died && t.len() <= OSFD_INTERVALS {
                prop_assert!(o <= (t.len() - 1) as f64 / 6.0);
            }
        }
    }
}
