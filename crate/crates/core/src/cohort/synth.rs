//! Synthetic ICU cohort simulator.
//!
//! Each patient carries a latent severity that evolves on the 4-hour grid.
//! The simulated clinician follows a severity-dependent reference dosing rule
//! with patient-specific adherence; deviations from the rule worsen the
//! latent severity. A latent quality `q*` is computed from the simulated
//! course (severity, treatment deviation, death) plus narrative noise and is
//! thresholded at fixed cohort quantiles into the 1..=5 quality score.
//! Outcome fields (mortality, support flags, MAP, discharge destination) are
//! emitted from the same simulated course, so they agree with `q*`.

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::action::Action;
use super::features::{FeatureSet, FULL_FEATURES};
use super::trajectory::{Covariates, DischargeCategory, StepFlags, Trajectory, STEP_HOURS};
use super::Cohort;
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_trajectories: usize,
    pub reduced_features: bool,
    /// Maximum steps per trajectory (18 = 72 h).
    pub max_steps: usize,
    /// Mixture for baseline latent severity.
    pub severity_mixture: Vec<SeverityComponent>,
    /// Multiplier on all measurement noise.
    pub physiology_noise: f64,
    /// Per-step standard deviation of latent severity innovations.
    pub dynamics_noise: f64,
    /// Latent severity added per unit of dosing deviation.
    pub treatment_effect: f64,
    /// Noise on the narrative quality channel.
    pub narrative_noise: f64,
    pub confidence_mean: f64,
    pub confidence_sd: f64,
    /// Fraction of trajectories whose narratives are unscorable (tqs = 0).
    pub unscorable_frac: f64,
    /// Cumulative cohort shares of quality scores 1..=5.
    pub tqs_cumulative_shares: [f64; 5],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_trajectories: 2000,
            reduced_features: false,
            max_steps: 18,
            severity_mixture: vec![
                SeverityComponent { weight: 0.55, mean: -0.6, sd: 0.45 },
                SeverityComponent { weight: 0.33, mean: 0.4, sd: 0.45 },
                SeverityComponent { weight: 0.12, mean: 1.4, sd: 0.5 },
            ],
            physiology_noise: 1.0,
            dynamics_noise: 0.15,
            treatment_effect: 0.18,
            narrative_noise: 0.25,
            confidence_mean: 0.78,
            confidence_sd: 0.12,
            unscorable_frac: 0.01,
            tqs_cumulative_shares: [0.03, 0.09, 0.16, 0.50, 1.0],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories <= 1 {
            return Err(Error::Config(format!(
                "synthetic cohort needs at least 2 trajectories to form preference pairs, got {}",
                self.n_trajectories
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if self.severity_mixture.is_empty()
            || self.severity_mixture.iter().any(|c| c.weight < 0.0 || c.sd < 0.0)
        {
            return Err(Error::Config("severity_mixture needs non-negative weights and sds".into()));
        }
        let s = &self.tqs_cumulative_shares;
        if s.windows(2).any(|w| w[0] > w[1]) || s[0] < 0.0 || (s[4] - 1.0).abs() > 1e-12 {
            return Err(Error::Config(
                "tqs_cumulative_shares must be non-decreasing and end at 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.unscorable_frac) {
            return Err(Error::Config("unscorable_frac must lie in [0, 1)".into()));
        }
        for (name, v) in [
            ("physiology_noise", self.physiology_noise),
            ("dynamics_noise", self.dynamics_noise),
            ("narrative_noise", self.narrative_noise),
            ("confidence_sd", self.confidence_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    pub fn feature_set(&self) -> FeatureSet {
        if self.reduced_features {
            FeatureSet::Reduced
        } else {
            FeatureSet::Full
        }
    }
}

/// Reference dosing rule used by the simulator: IV and vasopressor bins as a
/// function of latent severity.
pub fn reference_action(severity: f64) -> Action {
    let iv = (1.6 + 0.9 * severity).round().clamp(0.0, 4.0) as u8;
    let vaso = (1.2 * severity - 0.2).round().clamp(0.0, 4.0) as u8;
    Action::new(iv, vaso).expect("clamped bins are valid")
}

fn action_gap(a: Action, b: Action) -> f64 {
    let di = f64::from(a.iv_bin()) - f64::from(b.iv_bin());
    let dv = f64::from(a.vaso_bin()) - f64::from(b.vaso_bin());
    (di * di + dv * dv).sqrt()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Patient {
    age: f64,
    female: bool,
    weight: f64,
    readmission: bool,
    elixhauser: f64,
    frailty: f64,
    adherence_gap: f64,
    organ_offset: [f64; 6],
    lab_offset: Vec<f64>,
}

/// Generic laboratory channels: (name, base, slope on severity, noise sd).
const LABS: [(&str, f64, f64, f64); 18] = [
    ("albumin", 3.0, -0.25, 0.3),
    ("ph", 7.38, -0.035, 0.04),
    ("calcium", 8.4, -0.25, 0.4),
    ("glucose", 140.0, 12.0, 30.0),
    ("hemoglobin", 10.5, -0.5, 1.2),
    ("magnesium", 2.0, 0.05, 0.25),
    ("wbc", 12.0, 3.0, 4.0),
    ("bicarbonate", 23.0, -2.2, 2.5),
    ("sodium", 139.0, 0.8, 3.5),
    ("chloride", 105.0, 0.5, 4.0),
    ("potassium", 4.1, 0.15, 0.45),
    ("ptt", 34.0, 4.0, 6.0),
    ("pt", 14.5, 1.8, 2.0),
    ("bun", 24.0, 8.0, 8.0),
    ("inr", 1.3, 0.22, 0.2),
    ("ionised_calcium", 1.12, -0.035, 0.06),
    ("base_excess", -2.0, -2.8, 2.5),
    ("phosphate", 3.4, 0.5, 0.7),
];

struct Observation {
    row: [f64; 48],
    sofa: [u8; 6],
    map: f64,
}

struct Simulator<'a> {
    cfg: &'a SynthConfig,
    rng: SeededRng,
    unit: Normal<f64>,
}

fn idx(name: &str) -> usize {
    FULL_FEATURES
        .iter()
        .position(|n| *n == name)
        .expect("known feature name")
}

impl<'a> Simulator<'a> {
    fn gauss(&mut self, sd: f64) -> f64 {
        sd * self.unit.sample(&mut self.rng)
    }

    fn noise(&mut self, sd: f64) -> f64 {
        let k = self.cfg.physiology_noise;
        self.gauss(sd * k)
    }

    fn baseline_severity(&mut self) -> f64 {
        let total: f64 = self.cfg.severity_mixture.iter().map(|c| c.weight).sum();
        let mut u = self.rng.random::<f64>() * total;
        let mut chosen = &self.cfg.severity_mixture[self.cfg.severity_mixture.len() - 1];
        for c in &self.cfg.severity_mixture {
            if u < c.weight {
                chosen = c;
                break;
            }
            u -= c.weight;
        }
        let (m, s) = (chosen.mean, chosen.sd);
        m + self.gauss(s)
    }

    fn patient(&mut self) -> Patient {
        let age = (66.0 + self.gauss(15.0)).clamp(18.0, 95.0);
        let female = self.rng.random_bool(0.42);
        let weight = (80.0 + self.gauss(18.0)).clamp(40.0, 180.0);
        let readmission = self.rng.random_bool(0.08);
        let elixhauser = (5.0 + self.gauss(8.0)).round();
        let frailty = 0.3 * (age - 66.0) / 15.0 + 0.3 * (elixhauser - 5.0) / 8.0;
        let adherence_gap = Beta::new(2.0, 3.0)
            .expect("valid beta")
            .sample(&mut self.rng);
        let mut organ_offset = [0.0; 6];
        for o in &mut organ_offset {
            *o = self.gauss(0.45);
        }
        let lab_offset = LABS.iter().map(|(_, _, _, sd)| 0.5 * sd).collect::<Vec<_>>();
        let lab_offset = lab_offset.into_iter().map(|sd| self.noise(sd)).collect();
        Patient {
            age,
            female,
            weight,
            readmission,
            elixhauser,
            frailty,
            adherence_gap,
            organ_offset,
            lab_offset,
        }
    }

    fn clinician_bin(&mut self, reference: u8, gap: f64) -> u8 {
        if !self.rng.random_bool(gap) {
            return reference;
        }
        let magnitude = if self.rng.random_bool(0.7) { 1 } else { 2 };
        let up = self.rng.random_bool(0.5);
        let r = i32::from(reference);
        let v = if up { r + magnitude } else { r - magnitude };
        // reflect at the edges so a deviation is never silently cancelled
        let v = if v < 0 { r + magnitude } else if v > 4 { r - magnitude } else { v };
        v.clamp(0, 4) as u8
    }

    fn observe(
        &mut self,
        p: &Patient,
        z: f64,
        step: usize,
        prev: Action,
        vent: bool,
    ) -> Observation {
        let mut sofa = [0u8; 6];
        for k in 0..6 {
            let latent = z + p.organ_offset[k] + self.gauss(0.25);
            sofa[k] = (1.0 + latent).round().clamp(0.0, 4.0) as u8;
        }
        let [resp, coag, liver, _cardio, cns, renal] = sofa.map(f64::from);
        let iv_prev = f64::from(prev.iv_bin());
        let vaso_prev = f64::from(prev.vaso_bin());
        let mut row = [0.0; 48];
        let mut set = |name: &str, v: f64| row[idx(name)] = v;

        set("age", p.age);
        set("gender", if p.female { 1.0 } else { 0.0 });
        set("weight", p.weight);
        set("icu_readmission", if p.readmission { 1.0 } else { 0.0 });
        let gcs = (15.0 - 2.4 * cns + self.noise(0.7)).round().clamp(3.0, 15.0);
        set("gcs", gcs);
        set("elixhauser", p.elixhauser);
        set("sofa", sofa.iter().map(|&s| f64::from(s)).sum());
        let sirs = (1.6 + 0.7 * z + self.noise(0.6)).round().clamp(0.0, 4.0);
        set("sirs", sirs);

        let hr = (92.0 + 11.0 * z + self.noise(7.0)).clamp(30.0, 200.0);
        let sbp = (118.0 - 11.0 * z + 3.0 * vaso_prev + 1.5 * iv_prev + self.noise(9.0))
            .clamp(50.0, 240.0);
        let map = (80.0 - 8.5 * z + 2.5 * vaso_prev + 1.2 * iv_prev + self.noise(4.0))
            .clamp(30.0, 150.0);
        set("hr", hr);
        set("sbp", sbp);
        set("mbp", map);
        set("dbp", ((3.0 * map - sbp) / 2.0).max(10.0));
        set("resp_rate", (19.0 + 3.5 * z + self.noise(2.5)).clamp(4.0, 60.0));
        set("temperature", 37.3 + 0.35 * z + self.noise(0.45));
        set("paco2", (40.0 + 2.5 * z + self.noise(4.0)).max(10.0));
        let fio2 = (0.3 + 0.1 * z + if vent { 0.15 } else { 0.0 } + self.noise(0.05))
            .clamp(0.21, 1.0);
        let pf = (400.0 - 70.0 * resp + self.noise(30.0)).clamp(50.0, 600.0);
        set("pao2", pf * fio2);
        set("pf_ratio", pf);
        set("spo2", (97.0 - 1.3 * z + self.noise(1.2)).clamp(70.0, 100.0));
        set("shock_index", hr / sbp);

        for (k, (name, base, slope, sd)) in LABS.iter().enumerate() {
            let v = base + slope * z + p.lab_offset[k] + self.noise(*sd);
            set(name, v);
        }
        set("creatinine", (0.9 + 0.55 * renal + self.noise(0.25)).max(0.2));
        set("lactate", (0.6 + 0.33 * z + self.noise(0.18)).exp());
        set("platelets", (240.0 - 40.0 * coag + self.noise(30.0)).max(5.0));
        set("ast", (40f64.ln() + 0.35 * liver + self.noise(0.3)).exp());
        set("alt", (30f64.ln() + 0.3 * liver + self.noise(0.3)).exp());
        set("total_bilirubin", (0.7 + 0.9 * liver + self.noise(0.3)).max(0.1));
        set("mech_vent", if vent { 1.0 } else { 0.0 });
        set("fio2", fio2);
        let urine = (260.0 - 70.0 * z - 40.0 * renal + 15.0 * iv_prev + self.noise(50.0)).max(0.0);
        set("urine_output_4h", urine);
        set("total_output", urine + (60.0 + self.noise(25.0)).max(0.0));
        set("hours_since_sepsis_onset", (step as f64) * f64::from(STEP_HOURS));
        Observation { row, sofa, map }
    }
}

struct Course {
    trajectory: Trajectory,
    score: f64,
}

fn discharge_for(q: f64, rng: &mut SeededRng) -> DischargeCategory {
    use DischargeCategory::*;
    if rng.random_bool(0.04) {
        let odd = [OtherFacility, AgainstMedicalAdvice, Psychiatric];
        return odd[rng.random_range(0..odd.len())];
    }
    let pick = |rng: &mut SeededRng, opts: &[(DischargeCategory, f64)]| {
        let mut u = rng.random::<f64>();
        for (c, w) in opts {
            if u < *w {
                return *c;
            }
            u -= w;
        }
        opts[opts.len() - 1].0
    };
    if q > 0.7 {
        pick(rng, &[(Home, 0.7), (HomeHealth, 0.3)])
    } else if q > 0.5 {
        pick(rng, &[(HomeHealth, 0.5), (Home, 0.25), (Rehab, 0.25)])
    } else if q > 0.3 {
        pick(rng, &[(Rehab, 0.4), (SkilledNursing, 0.35), (AssistedLiving, 0.25)])
    } else if q > 0.16 {
        pick(rng, &[(SkilledNursing, 0.6), (LongTermAcuteCare, 0.4)])
    } else {
        pick(rng, &[(LongTermAcuteCare, 0.4), (AcuteHospitalTransfer, 0.3), (Hospice, 0.3)])
    }
}

fn simulate(sim: &mut Simulator<'_>, id: String) -> Course {
    let cfg = sim.cfg;
    let p = sim.patient();
    let mut z = sim.baseline_severity() + 0.2 * p.frailty;
    let mut vent = z > 0.9;
    let mut rrt = false;
    let mut prev = Action::default();

    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut flags = Vec::new();
    let mut maps = Vec::new();
    let mut sofas = Vec::new();
    let mut z_sum = 0.0;
    let mut gap_sum = 0.0;
    let mut rrt_any = false;
    let mut died = false;

    for step in 0..cfg.max_steps {
        if vent && z < 0.3 {
            vent = false;
        } else if z > 0.9 {
            vent = true;
        }
        let obs = sim.observe(&p, z, step, prev, vent);
        if obs.sofa[5] >= 3 && z > 1.2 {
            rrt = true;
        } else if rrt && z < 0.8 {
            rrt = false;
        }
        rrt_any |= rrt;

        let reference = reference_action(z);
        let iv = sim.clinician_bin(reference.iv_bin(), p.adherence_gap);
        let vaso = sim.clinician_bin(reference.vaso_bin(), p.adherence_gap);
        let action = Action::new(iv, vaso).expect("valid bins");
        let gap = action_gap(action, reference);

        z_sum += z;
        gap_sum += gap;

        let drift = -0.10 + 0.04 * p.frailty + cfg.treatment_effect * gap;
        z += drift + sim.gauss(cfg.dynamics_noise);
        let dies = sim.rng.random_bool(sigmoid(-7.4 + 1.8 * z));

        states.push(cfg.feature_set().project(&obs.row));
        actions.push(action);
        maps.push(obs.map);
        sofas.push(obs.sofa);
        flags.push(StepFlags {
            vasopressor_on: vaso > 0,
            mech_vent: vent,
            rrt,
            alive: !dies,
        });
        prev = action;
        if dies {
            died = true;
            break;
        }
        if step >= 2 && z < -0.9 && sim.rng.random_bool(0.35) {
            break;
        }
    }

    let t = actions.len() as f64;
    let score = -0.5 * z_sum / t - 0.5 * z - 1.0 * gap_sum / t
        - if died { 2.5 } else { 0.0 }
        - if rrt_any { 0.4 } else { 0.0 }
        + sim.gauss(cfg.narrative_noise);

    let row0 = &states[0];
    let fs = cfg.feature_set();
    let get = |name: &str| fs.index_of(name).map(|j| row0[j]);
    let covariates = Covariates {
        age: p.age,
        sofa_baseline: get("sofa").unwrap_or(0.0) as u32,
        elixhauser: get("elixhauser"),
        lactate: get("lactate").unwrap_or(0.0),
        shock_index: get("shock_index").unwrap_or(0.0),
        mech_vent_baseline: flags[0].mech_vent,
    };

    Course {
        trajectory: Trajectory {
            id,
            states,
            actions,
            step_hours: STEP_HOURS,
            mortality: died,
            tqs: 0,
            confidence: 0.0,
            flags,
            map: maps,
            sofa_components: Some(sofas),
            discharge_category: None,
            covariates,
            latent_quality: None,
        },
        score,
    }
}

/// Generate a synthetic cohort. A pure function of `(config, seed)`.
pub fn generate_synthetic_cohort(config: &SynthConfig, seed: u64) -> Result<Cohort> {
    config.validate()?;
    let mut sim = Simulator {
        cfg: config,
        rng: rng::substream(seed, rng::streams::COHORT),
        unit: Normal::new(0.0, 1.0).expect("unit normal"),
    };
    let n = config.n_trajectories;
    let width = (n.max(10) as f64).log10().ceil() as usize;
    let mut courses: Vec<Course> = (0..n)
        .map(|i| simulate(&mut sim, format!("syn-{i:0width$}")))
        .collect();

    // latent quality = mid-rank percentile of the narrative score
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| courses[a].score.total_cmp(&courses[b].score).then(a.cmp(&b)));
    let mut q = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        q[i] = (rank as f64 + 0.5) / n as f64;
    }

    let shares = config.tqs_cumulative_shares;
    let conf = Normal::new(config.confidence_mean, config.confidence_sd.max(1e-12))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut label_rng = rng::substream(seed, "cohort-labels");
    for (i, c) in courses.iter_mut().enumerate() {
        let t = &mut c.trajectory;
        let qi = q[i];
        t.latent_quality = Some(qi);
        let tqs = 1 + shares[..4].iter().filter(|&&s| qi > s).count() as u8;
        let confidence = conf.sample(&mut label_rng).clamp(0.05, 1.0);
        if label_rng.random_bool(config.unscorable_frac) {
            t.tqs = 0;
            t.confidence = 0.0;
        } else {
            t.tqs = tqs;
            t.confidence = confidence;
        }
        t.discharge_category = Some(if t.mortality {
            DischargeCategory::Death
        } else {
            discharge_for(qi, &mut label_rng)
        });
    }

    Cohort::new(
        config.feature_set(),
        courses.into_iter().map(|c| c.trajectory).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SynthConfig {
        SynthConfig {
            n_trajectories: n,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_tiny_cohorts() {
        assert!(matches!(
            generate_synthetic_cohort(&small(1), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic_cohort(&small(100), 7).unwrap();
        let b = generate_synthetic_cohort(&small(100), 7).unwrap();
        let c = generate_synthetic_cohort(&small(100), 8).unwrap();
        let ser = |c: &Cohort| serde_json::to_string(c.trajectories()).unwrap();
        assert_eq!(ser(&a), ser(&b));
        assert_ne!(ser(&a), ser(&c));
    }

    #[test]
    fn trajectories_respect_window_and_invariants() {
        let c = generate_synthetic_cohort(&small(300), 3).unwrap();
        for t in c.trajectories() {
            assert!((1..=18).contains(&t.len()));
            assert!(t.validate(48).is_ok());
        }
    }

    #[test]
    fn reduced_features_drop_columns() {
        let cfg = SynthConfig {
            reduced_features: true,
            ..small(20)
        };
        let c = generate_synthetic_cohort(&cfg, 1).unwrap();
        assert_eq!(c.feature_count(), 44);
        assert!(c.trajectories().iter().all(|t| t.covariates.elixhauser.is_none()));
    }

    #[test]
    fn reference_rule_escalates() {
        assert_eq!(reference_action(-1.0).vaso_bin(), 0);
        assert!(reference_action(3.0).vaso_bin() >= 3);
        assert!(reference_action(2.0).iv_bin() > reference_action(0.0).iv_bin());
    }
}
