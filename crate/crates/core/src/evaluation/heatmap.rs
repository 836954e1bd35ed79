//! Joint action frequency tables stratified by severity.

use serde::{Deserialize, Serialize};

use super::Policy;
use crate::cohort::{Cohort, NUM_BINS};
use crate::error::{Error, Result};

/// Steps with recorded SOFA at or above this value fall in the high-severity stratum.
pub const SOFA_SPLIT: f64 = 8.0;
/// Cells at or above this frequency are annotated in plots.
pub const ANNOTATION_FLOOR: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Low,
    High,
}

impl Stratum {
    pub fn label(self) -> &'static str {
        match self {
            Stratum::Low => "SOFA<8",
            Stratum::High => "SOFA>=8",
        }
    }
}

/// Frequencies indexed `[iv_bin][vaso_bin]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionHeatmap {
    pub stratum: Stratum,
    pub counts: [[u64; NUM_BINS]; NUM_BINS],
    pub total: u64,
    pub freq: [[f64; NUM_BINS]; NUM_BINS],
}

impl ActionHeatmap {
    fn empty(stratum: Stratum) -> Self {
        Self {
            stratum,
            counts: [[0; NUM_BINS]; NUM_BINS],
            total: 0,
            freq: [[0.0; NUM_BINS]; NUM_BINS],
        }
    }

    fn normalize(&mut self) {
        if self.total == 0 {
            return;
        }
        for i in 0..NUM_BINS {
            for v in 0..NUM_BINS {
                self.freq[i][v] = self.counts[i][v] as f64 / self.total as f64;
            }
        }
    }
}

/// Low and high severity tables of the policy's actions over `indices`.
pub fn action_heatmap(policy: &Policy, cohort: &Cohort, indices: &[usize]) -> Result<[ActionHeatmap; 2]> {
    let mut maps = [ActionHeatmap::empty(Stratum::Low), ActionHeatmap::empty(Stratum::High)];
    for &i in indices {
        let actions = policy.actions(cohort, i)?;
        for (t, a) in actions.iter().enumerate() {
            let sofa = cohort
                .raw_value(i, t, "sofa")
                .ok_or_else(|| Error::Input("cohort has no `sofa` feature".into()))?;
            let m = &mut maps[usize::from(sofa >= SOFA_SPLIT)];
            m.counts[a.iv_bin() as usize][a.vaso_bin() as usize] += 1;
            m.total += 1;
        }
    }
    for m in &mut maps {
        m.normalize();
    }
    Ok(maps)
}
