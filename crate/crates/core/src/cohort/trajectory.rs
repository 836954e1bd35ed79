use serde::{Deserialize, Serialize};

use super::action::Action;

/// Hours covered by one trajectory step.
pub const STEP_HOURS: u32 = 4;

/// Per-step support and survival status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepFlags {
    pub vasopressor_on: bool,
    pub mech_vent: bool,
    pub rrt: bool,
    pub alive: bool,
}

/// Hospital discharge destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DischargeCategory {
    Home,
    HomeHealth,
    Rehab,
    AssistedLiving,
    SkilledNursing,
    LongTermAcuteCare,
    AcuteHospitalTransfer,
    Hospice,
    Death,
    OtherFacility,
    AgainstMedicalAdvice,
    Psychiatric,
}

impl DischargeCategory {
    pub const ALL: [DischargeCategory; 12] = [
        DischargeCategory::Home,
        DischargeCategory::HomeHealth,
        DischargeCategory::Rehab,
        DischargeCategory::AssistedLiving,
        DischargeCategory::SkilledNursing,
        DischargeCategory::LongTermAcuteCare,
        DischargeCategory::AcuteHospitalTransfer,
        DischargeCategory::Hospice,
        DischargeCategory::Death,
        DischargeCategory::OtherFacility,
        DischargeCategory::AgainstMedicalAdvice,
        DischargeCategory::Psychiatric,
    ];
}

/// Baseline covariates used for regression adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Covariates {
    pub age: f64,
    pub sofa_baseline: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elixhauser: Option<f64>,
    pub lactate: f64,
    pub shock_index: f64,
    pub mech_vent_baseline: bool,
}

/// One patient episode on the 4-hour grid. `states` holds raw (unstandardized) values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub id: String,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub step_hours: u32,
    pub mortality: bool,
    pub tqs: u8,
    pub confidence: f64,
    pub flags: Vec<StepFlags>,
    pub map: Vec<f64>,
    /// Six organ SOFA subscores per step (respiratory, coagulation, liver,
    /// cardiovascular, CNS, renal) when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sofa_components: Option<Vec<[u8; 6]>>,
    #[serde(default)]
    pub discharge_category: Option<DischargeCategory>,
    pub covariates: Covariates,
    /// Simulator ground truth; absent for ingested data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_quality: Option<f64>,
}

/// A violated trajectory invariant: offending field plus message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

fn violation(field: &'static str, message: impl Into<String>) -> Violation {
    Violation {
        field,
        message: message.into(),
    }
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_scored(&self) -> bool {
        self.tqs > 0
    }

    /// Check every structural invariant against the expected feature count.
    pub fn validate(&self, feature_count: usize) -> Result<(), Violation> {
        let t = self.actions.len();
        if t == 0 {
            return Err(violation("actions", "trajectory must have at least one step"));
        }
        if self.states.len() != t {
            return Err(violation(
                "states",
                format!("{} state rows for {t} actions", self.states.len()),
            ));
        }
        for (i, row) in self.states.iter().enumerate() {
            if row.len() != feature_count {
                return Err(violation(
                    "states",
                    format!("row {i} has {} values, expected {feature_count}", row.len()),
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(violation("states", format!("row {i} has a non-finite value")));
            }
        }
        if self.step_hours != STEP_HOURS {
            return Err(violation(
                "step_hours",
                format!("must be {STEP_HOURS}, got {}", self.step_hours),
            ));
        }
        if self.flags.len() != t {
            return Err(violation("flags", format!("{} entries for {t} steps", self.flags.len())));
        }
        if self.map.len() != t {
            return Err(violation("map", format!("{} entries for {t} steps", self.map.len())));
        }
        if self.map.iter().any(|v| !v.is_finite()) {
            return Err(violation("map", "non-finite value"));
        }
        if self.tqs > 5 {
            return Err(violation("tqs", format!("must be in 0..=5, got {}", self.tqs)));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(violation(
                "confidence",
                format!("must be in [0, 1], got {}", self.confidence),
            ));
        }
        if self.tqs == 0 && self.confidence != 0.0 {
            return Err(violation("confidence", "unscorable trajectory (tqs = 0) must have confidence 0"));
        }
        if self.flags.windows(2).any(|w| !w[0].alive && w[1].alive) {
            return Err(violation("flags", "alive flags must be non-increasing"));
        }
        let last_alive = self.flags[t - 1].alive;
        if self.mortality == last_alive {
            return Err(violation(
                "mortality",
                "mortality must be true exactly when the final alive flag is false",
            ));
        }
        if let Some(sofa) = &self.sofa_components {
            if sofa.len() != t {
                return Err(violation("sofa_components", format!("{} entries for {t} steps", sofa.len())));
            }
            if sofa.iter().flatten().any(|&s| s > 4) {
                return Err(violation("sofa_components", "subscores must lie in 0..=4"));
            }
        }
        if let Some(q) = self.latent_quality {
            if !(0.0..=1.0).contains(&q) {
                return Err(violation("latent_quality", format!("must be in [0, 1], got {q}")));
            }
        }
        let c = &self.covariates;
        if !(c.age.is_finite() && c.lactate.is_finite() && c.shock_index.is_finite()) {
            return Err(violation("covariates", "non-finite covariate"));
        }
        Ok(())
    }
}
