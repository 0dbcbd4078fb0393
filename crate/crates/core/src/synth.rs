//! Seeded synthetic hemodialysis cohorts.
//!
//! Each patient has first-order hemoglobin dynamics driven by an ESA dose
//! level and gated by iron availability. A rule-based physician steers hb
//! toward the target band, acting on a trigger only with a fixed adherence
//! probability, and starts six-week iron courses when stores run low. The
//! generator returns the ground truth and a copy in which some decisions are
//! recorded one or two occasions late, with the lag in `basis_lag`.

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{BloodPanel, Cohort, Direction, Medication, OccasionRecord, PatientTimeline, MAX_IRON_COURSE_WEEKS};
use crate::error::{Error, Result};

pub const MIN_SIMULATED_OCCASIONS: usize = 8;
/// Ferritin and tsat are drawn on every `LAB_INTERVAL`-th occasion.
pub const LAB_INTERVAL: usize = 4;
const VALID_HB: (f64, f64) = (4.0, 20.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientModel {
    /// Hb the patient relaxes to without ESA, g/dl.
    pub hb_equilibrium: f64,
    /// Hb gained per dose level per occasion, g/dl.
    pub esa_sensitivity: f64,
    /// Fraction of the distance to equilibrium recovered per occasion.
    pub relaxation: f64,
    /// Initial ferritin, ng/ml.
    pub iron_store: f64,
    /// Initial transferrin saturation, percent.
    pub tsat_state: f64,
    /// Initial MCV, fl.
    pub mcv_state: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl PatientModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.esa_sensitivity > 0.0
            && self.noise_sd >= 0.0
            && self.relaxation > 0.0
            && self.relaxation <= 1.0
            && [self.hb_equilibrium, self.iron_store, self.tsat_state, self.mcv_state].iter().all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid patient model {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicianPolicy {
    pub target_low: f64,
    pub target_high: f64,
    /// Width of the zone inside the band where a trend toward the edge
    /// already triggers a change.
    pub hysteresis_margin: f64,
    /// Probability of acting on an ESA trigger.
    pub esa_adherence: f64,
    /// Occasions after an ESA change during which no further change is made.
    pub refractory_occasions: usize,
    pub max_dose_level: u32,
    /// ESA µg per dose level.
    pub dose_per_level: f64,
    pub ferritin_cutoff: f64,
    pub tsat_cutoff: f64,
    /// Probability of starting a course when iron is low.
    pub iron_adherence: f64,
    pub iron_course_weeks: u32,
    /// Probability that a non-STAY decision is recorded late.
    pub p_delay: f64,
    pub max_lag: usize,
}

impl Default for PhysicianPolicy {
    fn default() -> Self {
        PhysicianPolicy {
            target_low: 10.0,
            target_high: 12.0,
            hysteresis_margin: 0.3,
            esa_adherence: 0.35,
            refractory_occasions: 3,
            max_dose_level: 10,
            dose_per_level: 7.5,
            ferritin_cutoff: 100.0,
            tsat_cutoff: 20.0,
            iron_adherence: 0.5,
            iron_course_weeks: MAX_IRON_COURSE_WEEKS,
            p_delay: 0.15,
            max_lag: 2,
        }
    }
}

impl PhysicianPolicy {
    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        let problems = [
            (self.target_low < self.target_high, "target_low must be below target_high"),
            ((0.0..1.0).contains(&self.p_delay), "p_delay must lie in [0, 1)"),
            (unit(self.esa_adherence) && unit(self.iron_adherence), "adherence must lie in [0, 1]"),
            ((1..=2).contains(&self.max_lag), "max_lag must be 1 or 2"),
            (
                (1..=MAX_IRON_COURSE_WEEKS).contains(&self.iron_course_weeks),
                "iron_course_weeks must be between 1 and 6",
            ),
            (self.max_dose_level >= 1 && self.dose_per_level > 0.0, "dose levels must be positive"),
            (self.hysteresis_margin >= 0.0, "hysteresis_margin must be non-negative"),
        ];
        match problems.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config(msg.to_string())),
            None => Ok(()),
        }
    }

    /// ESA change the rules call for, before adherence. `hb` holds observed
    /// values up to and including the current occasion; `since_change` counts
    /// occasions since the last ESA change, if any.
    pub fn esa_intent(&self, hb: &[f64], level: u32, since_change: Option<usize>) -> Direction {
        let Some(&cur) = hb.last() else {
            return Direction::Stay;
        };
        if since_change.is_some_and(|k| k < self.refractory_occasions) {
            return Direction::Stay;
        }
        let trend = if hb.len() >= 2 { cur - hb[hb.len() - 2] } else { 0.0 };
        let low = cur < self.target_low || (cur < self.target_low + self.hysteresis_margin && trend < 0.0);
        let high = cur > self.target_high || (cur > self.target_high - self.hysteresis_margin && trend > 0.0);
        if low && level < self.max_dose_level {
            Direction::Up
        } else if high && level > 0 {
            Direction::Down
        } else {
            Direction::Stay
        }
    }

    /// Whether the rules call for an iron course. `fresh_labs` is false when
    /// the latest draw predates the end of the previous course.
    pub fn iron_intent(&self, ferritin: Option<f64>, tsat: Option<f64>, course_active: bool, fresh_labs: bool) -> bool {
        if course_active || !fresh_labs {
            return false;
        }
        ferritin.is_some_and(|f| f < self.ferritin_cutoff) || tsat.is_some_and(|t| t < self.tsat_cutoff)
    }
}

/// One hemoglobin update: dose response, relaxation toward equilibrium, noise.
pub fn hb_step(hb: f64, model: &PatientModel, dose_level: f64, iron_factor: f64, noise: f64) -> f64 {
    hb + model.esa_sensitivity * dose_level * iron_factor - model.relaxation * (hb - model.hb_equilibrium) + noise
}

/// Erythropoietic response multiplier; iron deficiency blunts the ESA effect.
pub fn iron_factor(tsat: f64) -> f64 {
    0.6 + 0.4 * (tsat / 20.0).min(1.0)
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2019, 1, 7).expect("valid date")
}

/// Simulates `occasions` weekly visits. Returns (ground truth, delayed).
pub fn simulate_patient(
    patient_id: &str,
    model: &PatientModel,
    policy: &PhysicianPolicy,
    occasions: usize,
) -> Result<(PatientTimeline, PatientTimeline)> {
    if occasions < MIN_SIMULATED_OCCASIONS {
        return Err(Error::Config(format!(
            "simulation needs at least {MIN_SIMULATED_OCCASIONS} occasions, got {occasions}"
        )));
    }
    model.validate()?;
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let noise = Normal::new(0.0, model.noise_sd).expect("validated");
    let mcv_noise = Normal::new(0.0, 0.2).expect("constant");

    let mut level = ((11.0 - model.hb_equilibrium) * model.relaxation / model.esa_sensitivity)
        .round()
        .clamp(0.0, policy.max_dose_level as f64) as u32;
    let mut hb = model.hb_equilibrium + model.esa_sensitivity * level as f64 / model.relaxation;
    let (mut ferritin, mut tsat, mut mcv) = (model.iron_store, model.tsat_state, model.mcv_state);

    let mut hb_seen = Vec::with_capacity(occasions);
    let mut last_esa_change: Option<usize> = None;
    let mut weeks = 0u32;
    let mut last_course_week: Option<usize> = None;
    let mut last_lab: Option<usize> = None;
    let (mut seen_ferritin, mut seen_tsat) = (None, None);
    let mut records = Vec::with_capacity(occasions);

    for t in 0..occasions {
        if !(VALID_HB.0 < hb && hb < VALID_HB.1) {
            return Err(Error::Simulation {
                patient_id: patient_id.to_string(),
                message: format!("hb {hb:.2} left ({}, {}) at occasion {t}", VALID_HB.0, VALID_HB.1),
            });
        }
        let lab_day = t % LAB_INTERVAL == 0;
        let panel = BloodPanel {
            hb: round1(hb),
            mcv: round1(mcv),
            ferritin: lab_day.then(|| round1(ferritin.max(0.0))),
            tsat: lab_day.then(|| round1(tsat.clamp(0.0, 100.0))),
        };
        if lab_day {
            seen_ferritin = panel.ferritin;
            seen_tsat = panel.tsat;
            last_lab = Some(t);
        }
        hb_seen.push(panel.hb);

        let esa_draw: f64 = rng.gen();
        let iron_draw: f64 = rng.gen();
        let intent = policy.esa_intent(&hb_seen, level, last_esa_change.map(|c| t - c));
        let esa_direction = if intent != Direction::Stay && esa_draw < policy.esa_adherence {
            intent
        } else {
            Direction::Stay
        };
        match esa_direction {
            Direction::Up => level += 1,
            Direction::Down => level -= 1,
            Direction::Stay => {}
        }
        if esa_direction != Direction::Stay {
            last_esa_change = Some(t);
        }

        let course_active = weeks > 0 && weeks < policy.iron_course_weeks;
        let fresh = match (last_course_week, last_lab) {
            (None, _) => true,
            (Some(end), Some(lab)) => lab > end,
            (Some(_), None) => false,
        };
        let start = policy.iron_intent(seen_ferritin, seen_tsat, course_active, fresh) && iron_draw < policy.iron_adherence;
        weeks = if start {
            1
        } else if course_active {
            weeks + 1
        } else {
            0
        };
        if weeks > 0 {
            last_course_week = Some(t);
        }

        records.push(OccasionRecord {
            occasion_index: t,
            exam_date: start_date() + Duration::days(7 * t as i64),
            panel,
            esa_direction,
            esa_dose: round1(level as f64 * policy.dose_per_level),
            is_direction: if start { Direction::Up } else { Direction::Stay },
            is_active_weeks: weeks,
            esa_basis_lag: Some(0),
            is_basis_lag: Some(0),
        });

        let factor = iron_factor(tsat);
        hb = hb_step(hb, model, level as f64, factor, noise.sample(&mut rng));
        if weeks > 0 {
            ferritin += 25.0;
            tsat += 2.0;
        }
        ferritin = (ferritin - 1.0 - 0.5 * level as f64).max(5.0);
        let tsat_eq = (8.0 + ferritin / 8.0).clamp(5.0, 50.0);
        tsat += 0.15 * (tsat_eq - tsat);
        mcv += if tsat < 20.0 { -0.15 } else { 0.05 * (92.0 - mcv) } + mcv_noise.sample(&mut rng);
    }

    let delayed = inject_delays(&records, policy, model.seed);
    Ok((PatientTimeline::new(patient_id, records)?, PatientTimeline::new(patient_id, delayed)?))
}

/// Moves some non-STAY decisions later. A decision only moves onto an
/// occasion whose own decision is STAY, so every move can be undone.
fn inject_delays(records: &[OccasionRecord], policy: &PhysicianPolicy, seed: u64) -> Vec<OccasionRecord> {
    let mut out = records.to_vec();
    if policy.p_delay == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5DE1_A7ED_0000_0000);
    for medication in [Medication::Esa, Medication::Iron] {
        let mut occupied = vec![false; records.len()];
        for t in 0..records.len() {
            let d = records[t].direction(medication);
            if d.is_stay() {
                continue;
            }
            let draw: f64 = rng.gen();
            let lag = rng.gen_range(1..=policy.max_lag);
            let s = t + lag;
            if draw >= policy.p_delay || s >= records.len() || !records[s].direction(medication).is_stay() || occupied[s] {
                continue;
            }
            occupied[s] = true;
            out[t].set_direction(medication, Direction::Stay);
            out[s].set_direction(medication, d);
            out[s].set_basis_lag(medication, Some(lag));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub const fn new(low: f64, high: f64) -> Self {
        Range { low, high }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.gen_range(self.low..self.high)
        }
    }
}

/// Ranges patient models are drawn from, uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParameterRanges {
    pub hb_equilibrium: Range,
    pub esa_sensitivity: Range,
    pub relaxation: Range,
    pub ferritin: Range,
    pub tsat: Range,
    pub mcv: Range,
    pub noise_sd: Range,
}

impl Default for ParameterRanges {
    fn default() -> Self {
        ParameterRanges {
            hb_equilibrium: Range::new(7.0, 9.0),
            esa_sensitivity: Range::new(0.08, 0.16),
            relaxation: Range::new(0.08, 0.15),
            ferritin: Range::new(60.0, 250.0),
            tsat: Range::new(15.0, 35.0),
            mcv: Range::new(86.0, 98.0),
            noise_sd: Range::new(0.35, 0.6),
        }
    }
}

impl ParameterRanges {
    fn validate(&self) -> Result<()> {
        let all = [
            ("hb_equilibrium", self.hb_equilibrium),
            ("esa_sensitivity", self.esa_sensitivity),
            ("relaxation", self.relaxation),
            ("ferritin", self.ferritin),
            ("tsat", self.tsat),
            ("mcv", self.mcv),
            ("noise_sd", self.noise_sd),
        ];
        for (name, r) in all {
            if !(r.low.is_finite() && r.high.is_finite() && r.low <= r.high) {
                return Err(Error::Config(format!("range {name} is empty or not finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub name: String,
    pub patients: usize,
    pub occasions: usize,
    pub seed: u64,
    pub ranges: ParameterRanges,
    pub policy: PhysicianPolicy,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Preset::S1.spec(0)
    }
}

/// Desk-scale stand-ins for the training cohort, a second cohort from the
/// same practice, and a cohort from a practice with a different policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    S1,
    S2,
    K1,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Preset::S1),
            "s2" => Ok(Preset::S2),
            "k1" => Ok(Preset::K1),
            other => Err(format!("unknown preset {other:?} (expected s1, s2 or k1)")),
        }
    }
}

impl Preset {
    pub fn spec(self, seed: u64) -> CohortSpec {
        let (name, patients, occasions, policy) = match self {
            Preset::S1 => ("synthetic-s1", 60, 60, PhysicianPolicy::default()),
            Preset::S2 => ("synthetic-s2", 30, 40, PhysicianPolicy::default()),
            Preset::K1 => ("synthetic-k1", 10, 30, Self::shifted_policy()),
        };
        CohortSpec {
            name: name.into(),
            patients,
            occasions,
            seed,
            ranges: ParameterRanges::default(),
            policy,
        }
    }

    /// A practice aiming slightly higher, reacting faster and more often.
    pub fn shifted_policy() -> PhysicianPolicy {
        PhysicianPolicy {
            target_low: 10.5,
            target_high: 12.5,
            hysteresis_margin: 0.0,
            esa_adherence: 0.6,
            refractory_occasions: 2,
            ferritin_cutoff: 150.0,
            ..PhysicianPolicy::default()
        }
    }
}

/// Per-patient seed derived from the cohort seed, name and the patient's
/// position, so equally seeded cohorts of different names share no patients.
pub fn patient_seed(cohort_seed: u64, cohort_name: &str, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(cohort_seed.to_le_bytes());
    h.update(cohort_name.as_bytes());
    h.update((index as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn draw_model(ranges: &ParameterRanges, seed: u64) -> PatientModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PatientModel {
        hb_equilibrium: ranges.hb_equilibrium.sample(&mut rng),
        esa_sensitivity: ranges.esa_sensitivity.sample(&mut rng),
        relaxation: ranges.relaxation.sample(&mut rng),
        iron_store: ranges.ferritin.sample(&mut rng),
        tsat_state: ranges.tsat.sample(&mut rng),
        mcv_state: ranges.mcv.sample(&mut rng),
        noise_sd: ranges.noise_sd.sample(&mut rng),
        seed: rng.gen(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientManifest {
    pub patient_id: String,
    pub model: PatientModel,
}

/// Everything needed to regenerate a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub rng: String,
    pub spec: CohortSpec,
    pub patients: Vec<PatientManifest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCohort {
    pub ground_truth: Cohort,
    pub delayed: Cohort,
    pub manifest: Manifest,
}

pub fn generate_cohort(spec: &CohortSpec) -> Result<GeneratedCohort> {
    spec.ranges.validate()?;
    spec.policy.validate()?;
    let width = spec.patients.max(1).to_string().len().max(3);
    let mut truth = Vec::with_capacity(spec.patients);
    let mut delayed = Vec::with_capacity(spec.patients);
    let mut manifest = Vec::with_capacity(spec.patients);
    for i in 0..spec.patients {
        let patient_id = format!("{}-{:0width$}", spec.name, i + 1);
        let model = draw_model(&spec.ranges, patient_seed(spec.seed, &spec.name, i));
        let (g, d) = simulate_patient(&patient_id, &model, &spec.policy, spec.occasions)?;
        truth.push(g);
        delayed.push(d);
        manifest.push(PatientManifest { patient_id, model });
    }
    Ok(GeneratedCohort {
        ground_truth: Cohort::new(spec.name.clone(), truth)?,
        delayed: Cohort::new(spec.name.clone(), delayed)?,
        manifest: Manifest {
            generator: format!("aisacs-synth {}", env!("CARGO_PKG_VERSION")),
            rng: "ChaCha8 (rand_chacha 0.3); patient seeds from SHA-256 of cohort seed, name and index".into(),
            spec: spec.clone(),
            patients: manifest,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::label_histogram;
    use crate::rectifier::rectify;

    fn model() -> PatientModel {
        PatientModel {
            hb_equilibrium: 8.0,
            esa_sensitivity: 0.09,
            relaxation: 0.15,
            iron_store: 150.0,
            tsat_state: 25.0,
            mcv_state: 92.0,
            noise_sd: 0.25,
            seed: 7,
        }
    }

    #[test]
    fn hand_evaluated_step() {
        let m = PatientModel {
            hb_equilibrium: 10.0,
            esa_sensitivity: 0.3,
            relaxation: 0.1,
            noise_sd: 0.0,
            ..model()
        };
        assert!((hb_step(10.0, &m, 1.0, 1.0, 0.0) - 10.3).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let m = PatientModel { noise_sd: 0.0, ..model() };
        let mut hb = m.hb_equilibrium;
        for _ in 0..100 {
            hb = hb_step(hb, &m, 0.0, 1.0, 0.0);
        }
        assert_eq!(hb, m.hb_equilibrium);
    }

    #[test]
    fn too_few_occasions() {
        assert!(simulate_patient("p", &model(), &PhysicianPolicy::default(), 7).is_err());
    }

    #[test]
    fn runaway_hb_is_flagged() {
        let m = PatientModel {
            hb_equilibrium: 22.0,
            ..model()
        };
        let policy = PhysicianPolicy {
            esa_adherence: 0.0,
            ..PhysicianPolicy::default()
        };
        let err = simulate_patient("p", &m, &policy, 40).unwrap_err();
        assert_eq!(err.category(), "simulation");
    }

    #[test]
    fn no_delay_means_identical_variants() {
        let policy = PhysicianPolicy {
            p_delay: 0.0,
            ..PhysicianPolicy::default()
        };
        let (g, d) = simulate_patient("p", &model(), &policy, 60).unwrap();
        assert_eq!(g, d);
    }

    #[test]
    fn ground_truth_does_not_depend_on_delay_probability() {
        let a = simulate_patient("p", &model(), &PhysicianPolicy::default(), 60).unwrap().0;
        let policy = PhysicianPolicy {
            p_delay: 0.0,
            ..PhysicianPolicy::default()
        };
        let b = simulate_patient("p", &model(), &policy, 60).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn labs_every_fourth_occasion() {
        let (g, _) = simulate_patient("p", &model(), &PhysicianPolicy::default(), 20).unwrap();
        for o in g.occasions() {
            assert_eq!(o.panel.ferritin.is_some(), o.occasion_index % LAB_INTERVAL == 0);
            assert_eq!(o.panel.tsat.is_some(), o.occasion_index % LAB_INTERVAL == 0);
        }
    }

    #[test]
    fn refractory_period_blocks_changes() {
        let p = PhysicianPolicy::default();
        assert_eq!(p.esa_intent(&[9.0], 3, Some(1)), Direction::Stay);
        assert_eq!(p.esa_intent(&[9.0], 3, Some(3)), Direction::Up);
        assert_eq!(p.esa_intent(&[12.5], 0, None), Direction::Stay);
        assert_eq!(p.esa_intent(&[10.5, 10.2], 3, None), Direction::Up);
        assert_eq!(p.esa_intent(&[10.1, 10.2], 3, None), Direction::Stay);
    }

    #[test]
    fn decisions_ignore_later_panels() {
        // The intent at t depends only on the observed prefix, so appending
        // arbitrary future values to a copy cannot change it.
        let p = PhysicianPolicy::default();
        let history = [10.6, 10.4, 10.25];
        let at_t = p.esa_intent(&history, 4, None);
        for future in [4.0, 11.0, 19.0] {
            let extended = [history.as_slice(), &[future]].concat();
            assert_eq!(p.esa_intent(&extended[..history.len()], 4, None), at_t);
        }
    }

    #[test]
    fn iron_courses_never_exceed_six_weeks() {
        let c = generate_cohort(&Preset::S2.spec(3)).unwrap();
        for p in c.ground_truth.patients() {
            assert!(p.occasions().iter().all(|o| o.is_active_weeks <= MAX_IRON_COURSE_WEEKS));
        }
    }

    #[test]
    fn same_seed_same_cohort() {
        let a = generate_cohort(&Preset::K1.spec(11)).unwrap();
        let b = generate_cohort(&Preset::K1.spec(11)).unwrap();
        assert_eq!(a, b);
        let c = generate_cohort(&Preset::K1.spec(12)).unwrap();
        assert_ne!(a.ground_truth, c.ground_truth);
    }

    #[test]
    fn rectify_recovers_ground_truth() {
        let c = generate_cohort(&Preset::S2.spec(5)).unwrap();
        let (r, log) = rectify(&c.delayed, 2).unwrap();
        assert_eq!(log.conflicts(), 0);
        assert!(!log.entries.is_empty());
        assert_eq!(r, c.ground_truth);
    }

    #[test]
    fn stay_is_the_majority() {
        let c = generate_cohort(&Preset::S1.spec(0)).unwrap();
        let h = label_histogram(&c.ground_truth, Medication::Esa);
        assert!(h.stay as f64 / h.total() as f64 > 0.6, "{h:?}");
        assert!(h.up > 0 && h.down > 0);
    }
}
