//! Policy-clinician action distances.

use serde::{Deserialize, Serialize};

use super::stats::z_scores;
use super::Policy;
use crate::cohort::{Action, Cohort};
use crate::error::Result;

/// Per-axis and joint Euclidean distance between two actions, in bin units.
pub fn action_distance(policy: Action, clinician: Action) -> (f64, f64, f64) {
    let di = (f64::from(policy.iv_bin()) - f64::from(clinician.iv_bin())).abs();
    let dv = (f64::from(policy.vaso_bin()) - f64::from(clinician.vaso_bin())).abs();
    (di, dv, di.hypot(dv))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDistance {
    pub trajectory_id: String,
    pub mean_iv: f64,
    pub mean_vaso: f64,
    pub mean_joint: f64,
}

/// Mean per-step distances between `actions` and the recorded clinician actions.
pub fn distance_to_clinician(cohort: &Cohort, i: usize, actions: &[Action]) -> TrajectoryDistance {
    let traj = cohort.trajectory(i);
    let n = traj.len() as f64;
    let (mut si, mut sv, mut sj) = (0.0, 0.0, 0.0);
    for (p, c) in actions.iter().zip(&traj.actions) {
        let (di, dv, dj) = action_distance(*p, *c);
        si += di;
        sv += dv;
        sj += dj;
    }
    TrajectoryDistance {
        trajectory_id: traj.id.clone(),
        mean_iv: si / n,
        mean_vaso: sv / n,
        mean_joint: sj / n,
    }
}

pub fn trajectory_distance(policy: &Policy, cohort: &Cohort, i: usize) -> Result<TrajectoryDistance> {
    let actions = policy.actions(cohort, i)?;
    Ok(distance_to_clinician(cohort, i, &actions))
}

/// Trajectory distances for one policy with the z-scored joint distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub indices: Vec<usize>,
    pub per_trajectory: Vec<TrajectoryDistance>,
    pub joint_z: Vec<f64>,
}

pub fn distance_summary(policy: &Policy, cohort: &Cohort, indices: &[usize]) -> Result<DistanceSummary> {
    let per_trajectory = indices
        .iter()
        .map(|&i| trajectory_distance(policy, cohort, i))
        .collect::<Result<Vec<_>>>()?;
    let joint: Vec<f64> = per_trajectory.iter().map(|d| d.mean_joint).collect();
    Ok(DistanceSummary {
        indices: indices.to_vec(),
        joint_z: z_scores(&joint),
        per_trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::test_support::simple_trajectory;
    use crate::cohort::{FeatureSet, NUM_BINS};
    use crate::evaluation::stats::mean;

    fn a(i: u8, v: u8) -> Action {
        Action::new(i, v).unwrap()
    }

    #[test]
    fn action_distance_examples() {
        assert_eq!(action_distance(a(2, 2), a(2, 2)), (0.0, 0.0, 0.0));
        let (di, dv, dj) = action_distance(a(0, 0), a(4, 4));
        assert_eq!((di, dv), (4.0, 4.0));
        assert!((dj - 32f64.sqrt()).abs() < 1e-15);
        assert_eq!(action_distance(a(2, 1), a(2, 3)), (0.0, 2.0, 2.0));
    }

    #[test]
    fn clinician_copy_and_fixed_policies() {
        let mut t = simple_trajectory("t", 4, 0.0, 3, 0.5);
        t.actions = vec![a(1, 1), a(2, 0), a(0, 3), a(4, 4)];
        let c = Cohort::new(FeatureSet::Full, vec![t.clone()]).unwrap();
        let d = trajectory_distance(&Policy::Clinician, &c, 0).unwrap();
        assert_eq!(d.mean_joint, 0.0);
        let mut fixed = t.clone();
        fixed.actions = vec![a(1, 1); 4];
        let c2 = Cohort::new(FeatureSet::Full, vec![fixed]).unwrap();
        let d2 = distance_to_clinician(&c2, 0, &[a(3, 1); 4]);
        assert_eq!(d2.mean_joint, 2.0);
    }

    #[test]
    fn random_policy_distance_matches_expectation() {
        // clinician fixed at (1, 3); the exact expectation enumerates the 25 uniform actions
        let clin = a(1, 3);
        let mut exact = 0.0;
        for i in 0..NUM_BINS as u8 {
            for v in 0..NUM_BINS as u8 {
                exact += action_distance(a(i, v), clin).2 / 25.0;
            }
        }
        let trajs: Vec<_> = (0..800)
            .map(|k| {
                let mut t = simple_trajectory(&format!("t{k}"), 5, 0.0, 3, 0.5);
                t.actions = vec![clin; 5];
                t
            })
            .collect();
        let c = Cohort::new(FeatureSet::Full, trajs).unwrap();
        let idx: Vec<usize> = (0..c.len()).collect();
        let s = distance_summary(&Policy::Random { seed: 3 }, &c, &idx).unwrap();
        let x: Vec<f64> = s.per_trajectory.iter().map(|d| d.mean_joint).collect();
        let m = mean(&x);
        let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt();
        let se = sd / (x.len() as f64).sqrt();
        assert!((m - exact).abs() < 3.0 * se, "mean {m} exact {exact} se {se}");
        let zm = mean(&s.joint_z);
        let zsd = (s.joint_z.iter().map(|v| (v - zm).powi(2)).sum::<f64>() / s.joint_z.len() as f64).sqrt();
        assert!(zm.abs() < 1e-9 && (zsd - 1.0).abs() < 1e-9);
    }
}
