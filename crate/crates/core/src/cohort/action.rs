//! Joint IV-fluid / vasopressor actions and dose discretization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_BINS: usize = 5;
pub const NUM_ACTIONS: usize = NUM_BINS * NUM_BINS;

/// Upper-inclusive thresholds (mL per 4 h) separating IV bins 1|2, 2|3 and 3|4.
pub const IV_THRESHOLDS: [f64; 3] = [50.05, 213.33, 520.0];
/// Upper-inclusive thresholds (mcg/kg per 4 h, norepinephrine-equivalent) for vasopressor bins.
pub const VASO_THRESHOLDS: [f64; 3] = [7.20, 17.41, 40.06];

/// A discretized treatment decision. `joint_index = 5 * iv_bin + vaso_bin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "ActionRecord", into = "ActionRecord")]
pub struct Action {
    iv_bin: u8,
    vaso_bin: u8,
}

impl Action {
    pub fn new(iv_bin: u8, vaso_bin: u8) -> Result<Self> {
        if usize::from(iv_bin) >= NUM_BINS || usize::from(vaso_bin) >= NUM_BINS {
            return Err(Error::Input(format!(
                "action bins must lie in 0..{NUM_BINS}, got ({iv_bin}, {vaso_bin})"
            )));
        }
        Ok(Self { iv_bin, vaso_bin })
    }

    pub fn from_joint(joint: usize) -> Result<Self> {
        if joint >= NUM_ACTIONS {
            return Err(Error::Input(format!(
                "joint action index {joint} outside 0..{NUM_ACTIONS}"
            )));
        }
        Ok(Self {
            iv_bin: (joint / NUM_BINS) as u8,
            vaso_bin: (joint % NUM_BINS) as u8,
        })
    }

    pub fn iv_bin(self) -> u8 {
        self.iv_bin
    }

    pub fn vaso_bin(self) -> u8 {
        self.vaso_bin
    }

    pub fn joint_index(self) -> usize {
        NUM_BINS * usize::from(self.iv_bin) + usize::from(self.vaso_bin)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionRecord {
    iv_bin: u8,
    vaso_bin: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joint_index: Option<usize>,
}

impl TryFrom<ActionRecord> for Action {
    type Error = String;

    fn try_from(r: ActionRecord) -> std::result::Result<Self, String> {
        let a = Action::new(r.iv_bin, r.vaso_bin).map_err(|e| e.to_string())?;
        match r.joint_index {
            Some(j) if j != a.joint_index() => Err(format!(
                "joint_index {j} inconsistent with bins ({}, {})",
                r.iv_bin, r.vaso_bin
            )),
            _ => Ok(a),
        }
    }
}

impl From<Action> for ActionRecord {
    fn from(a: Action) -> Self {
        ActionRecord {
            iv_bin: a.iv_bin,
            vaso_bin: a.vaso_bin,
            joint_index: Some(a.joint_index()),
        }
    }
}

fn bin_dose(dose: f64, thresholds: &[f64; 3]) -> u8 {
    if dose == 0.0 {
        return 0;
    }
    // bin k (k >= 1) covers (t_{k-1}, t_k] with t_0 = 0.
    thresholds
        .iter()
        .position(|&t| dose <= t)
        .map_or(4, |k| k as u8 + 1)
}

/// Map 4-hourly doses to a joint action.
pub fn discretize_dose(iv_ml_per_4h: f64, vaso_mcg_per_kg_per_4h: f64) -> Result<Action> {
    for (name, dose) in [("iv", iv_ml_per_4h), ("vaso", vaso_mcg_per_kg_per_4h)] {
        if !dose.is_finite() || dose < 0.0 {
            return Err(Error::Input(format!(
                "{name} dose must be finite and non-negative, got {dose}"
            )));
        }
    }
    Ok(Action {
        iv_bin: bin_dose(iv_ml_per_4h, &IV_THRESHOLDS),
        vaso_bin: bin_dose(vaso_mcg_per_kg_per_4h, &VASO_THRESHOLDS),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bins(iv: f64, vaso: f64) -> (u8, u8, usize) {
        let a = discretize_dose(iv, vaso).unwrap();
        (a.iv_bin(), a.vaso_bin(), a.joint_index())
    }

    #[test]
    fn zero_dose_is_bin_zero() {
        assert_eq!(bins(0.0, 0.0), (0, 0, 0));
    }

    #[test]
    fn thresholds_are_upper_inclusive() {
        assert_eq!(bins(213.33, 40.06), (2, 3, 13));
        assert_eq!(bins(521.0, 40.07), (4, 4, 24));
        assert_eq!(bins(1e-12, 1e-12), (1, 1, 6));
    }

    #[test]
    fn rejects_bad_doses() {
        assert!(discretize_dose(-1.0, 0.0).is_err());
        assert!(discretize_dose(0.0, f64::NAN).is_err());
        assert!(discretize_dose(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn joint_roundtrip() {
        for j in 0..NUM_ACTIONS {
            assert_eq!(Action::from_joint(j).unwrap().joint_index(), j);
        }
        assert!(Action::from_joint(25).is_err());
        assert!(Action::new(5, 0).is_err());
    }

    #[test]
    fn serde_rejects_inconsistent_joint() {
        let bad = r#"{"iv_bin":1,"vaso_bin":2,"joint_index":3}"#;
        assert!(serde_json::from_str::<Action>(bad).is_err());
        let ok: Action = serde_json::from_str(r#"{"iv_bin":1,"vaso_bin":2}"#).unwrap();
        assert_eq!(ok.joint_index(), 7);
    }

    proptest! {
        #[test]
        fn discretization_is_monotone(a in 0.0f64..2000.0, b in 0.0f64..2000.0,
                                      c in 0.0f64..100.0, d in 0.0f64..100.0) {
            let (lo_iv, hi_iv) = if a <= b { (a, b) } else { (b, a) };
            let (lo_v, hi_v) = if c <= d { (c, d) } else { (d, c) };
            let lo = discretize_dose(lo_iv, lo_v).unwrap();
            let hi = discretize_dose(hi_iv, hi_v).unwrap();
            prop_assert!(lo.iv_bin() <= hi.iv_bin());
            prop_assert!(lo.vaso_bin() <= hi.vaso_bin());
        }
    }
}
