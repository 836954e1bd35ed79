//! State feature catalogue.

use serde::{Deserialize, Serialize};

/// The 48 state variables, in storage order.
pub const FULL_FEATURES: [&str; 48] = [
    // demographics / scores
    "age",
    "gender",
    "weight",
    "icu_readmission",
    "gcs",
    "elixhauser",
    "sofa",
    "sirs",
    // vitals
    "hr",
    "sbp",
    "mbp",
    "dbp",
    "resp_rate",
    "temperature",
    "paco2",
    "pao2",
    "pf_ratio",
    "spo2",
    "shock_index",
    // labs
    "albumin",
    "ph",
    "calcium",
    "glucose",
    "hemoglobin",
    "magnesium",
    "wbc",
    "creatinine",
    "bicarbonate",
    "sodium",
    "lactate",
    "chloride",
    "platelets",
    "potassium",
    "ptt",
    "pt",
    "ast",
    "alt",
    "bun",
    "inr",
    "ionised_calcium",
    "total_bilirubin",
    "base_excess",
    "phosphate",
    // treatments / interventions
    "mech_vent",
    "fio2",
    // other
    "urine_output_4h",
    "total_output",
    "hours_since_sepsis_onset",
];

/// Variables unavailable in the reduced (external-validation) feature set.
pub const REDUCED_DROPPED: [&str; 4] = ["pt", "inr", "paco2", "elixhauser"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    #[default]
    Full,
    Reduced,
}

impl FeatureSet {
    pub fn names(self) -> Vec<&'static str> {
        match self {
            FeatureSet::Full => FULL_FEATURES.to_vec(),
            FeatureSet::Reduced => FULL_FEATURES
                .iter()
                .copied()
                .filter(|n| !REDUCED_DROPPED.contains(n))
                .collect(),
        }
    }

    pub fn len(self) -> usize {
        match self {
            FeatureSet::Full => FULL_FEATURES.len(),
            FeatureSet::Reduced => FULL_FEATURES.len() - REDUCED_DROPPED.len(),
        }
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn index_of(self, name: &str) -> Option<usize> {
        self.names().iter().position(|n| *n == name)
    }

    pub fn from_len(len: usize) -> Option<Self> {
        [FeatureSet::Full, FeatureSet::Reduced]
            .into_iter()
            .find(|fs| fs.len() == len)
    }

    /// Project a full-length row onto this feature set.
    pub fn project(self, full_row: &[f64]) -> Vec<f64> {
        match self {
            FeatureSet::Full => full_row.to_vec(),
            FeatureSet::Reduced => FULL_FEATURES
                .iter()
                .zip(full_row)
                .filter(|(n, _)| !REDUCED_DROPPED.contains(n))
                .map(|(_, v)| *v)
                .collect(),
        }
    }
}
