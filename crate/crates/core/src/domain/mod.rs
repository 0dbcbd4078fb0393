//! Dialysis occasion records, patient timelines and cohorts.
//!
//! Values are validated on construction and immutable afterwards, so a
//! [`Cohort`] can be shared read-only between threads.

mod csv_io;

pub use csv_io::{export_csv, ingest_csv, write_csv, CSV_COLUMNS};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest iron course, in weeks, the stop rule allows.
pub const MAX_IRON_COURSE_WEEKS: u32 = 6;

/// Minimum occasions per patient timeline.
pub const MIN_OCCASIONS: usize = 3;

/// A dosage direction issued by the physician (or proposed by the model).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    Up,
    Stay,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Up, Direction::Stay, Direction::Down];

    /// Signed code used in dosage histories: DOWN=-1, STAY=0, UP=+1.
    pub fn code(self) -> f64 {
        match self {
            Direction::Up => 1.0,
            Direction::Stay => 0.0,
            Direction::Down => -1.0,
        }
    }

    pub fn is_stay(self) -> bool {
        self == Direction::Stay
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "UP",
            Direction::Stay => "STAY",
            Direction::Down => "DOWN",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "UP" => Ok(Direction::Up),
            "STAY" => Ok(Direction::Stay),
            "DOWN" => Ok(Direction::Down),
            other => Err(format!("unknown direction {other:?} (expected UP, STAY or DOWN)")),
        }
    }
}

/// The two medications the system directs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Medication {
    /// Erythropoiesis-stimulating agent: ternary UP/STAY/DOWN.
    #[serde(rename = "ESA")]
    Esa,
    /// Iron supplement: binary UP/STAY.
    #[serde(rename = "IS")]
    Iron,
}

impl Medication {
    pub fn as_str(self) -> &'static str {
        match self {
            Medication::Esa => "ESA",
            Medication::Iron => "IS",
        }
    }

    /// Directions this medication can carry, in class-index order.
    pub fn classes(self) -> &'static [Direction] {
        match self {
            Medication::Esa => &[Direction::Up, Direction::Stay, Direction::Down],
            Medication::Iron => &[Direction::Up, Direction::Stay],
        }
    }

    pub fn class_index(self, direction: Direction) -> Option<usize> {
        self.classes().iter().position(|&d| d == direction)
    }
}

impl fmt::Display for Medication {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Medication {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ESA" => Ok(Medication::Esa),
            "IS" | "IRON" => Ok(Medication::Iron),
            other => Err(format!("unknown medication {other:?} (expected ESA or IS)")),
        }
    }
}

/// One blood examination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BloodPanel {
    /// Hemoglobin, g/dl.
    pub hb: f64,
    /// Mean corpuscular volume, fl.
    pub mcv: f64,
    /// Ferritin, ng/ml. Measured less often than hb/mcv.
    pub ferritin: Option<f64>,
    /// Transferrin saturation, percent.
    pub tsat: Option<f64>,
}

impl BloodPanel {
    fn check(&self) -> std::result::Result<(), String> {
        if !(self.hb.is_finite() && self.hb > 0.0 && self.hb < 25.0) {
            return Err(format!("hb {} outside (0, 25) g/dl", self.hb));
        }
        if !(self.mcv.is_finite() && self.mcv > 0.0) {
            return Err(format!("mcv {} must be positive", self.mcv));
        }
        if let Some(f) = self.ferritin {
            if !(f.is_finite() && f >= 0.0) {
                return Err(format!("ferritin {f} must be non-negative"));
            }
        }
        if let Some(t) = self.tsat {
            if !(t.is_finite() && (0.0..=100.0).contains(&t)) {
                return Err(format!("tsat {t} outside [0, 100] percent"));
            }
        }
        Ok(())
    }
}

/// One hemodialysis occasion: the exam and the directions recorded with it.
///
/// The JSON form is flat and uses the CSV column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccasionRecord {
    pub occasion_index: usize,
    pub exam_date: NaiveDate,
    #[serde(flatten)]
    pub panel: BloodPanel,
    pub esa_direction: Direction,
    /// ESA dose in effect, µg per interval.
    pub esa_dose: f64,
    pub is_direction: Direction,
    /// Weeks since the current iron course began; 0 when no course is active.
    pub is_active_weeks: u32,
    /// Occasions between the exam this ESA decision was based on and its record.
    #[serde(default)]
    pub esa_basis_lag: Option<usize>,
    #[serde(default)]
    pub is_basis_lag: Option<usize>,
}

impl OccasionRecord {
    pub fn direction(&self, medication: Medication) -> Direction {
        match medication {
            Medication::Esa => self.esa_direction,
            Medication::Iron => self.is_direction,
        }
    }

    pub fn set_direction(&mut self, medication: Medication, direction: Direction) {
        match medication {
            Medication::Esa => self.esa_direction = direction,
            Medication::Iron => self.is_direction = direction,
        }
    }

    pub fn basis_lag(&self, medication: Medication) -> Option<usize> {
        match medication {
            Medication::Esa => self.esa_basis_lag,
            Medication::Iron => self.is_basis_lag,
        }
    }

    pub fn set_basis_lag(&mut self, medication: Medication, lag: Option<usize>) {
        match medication {
            Medication::Esa => self.esa_basis_lag = lag,
            Medication::Iron => self.is_basis_lag = lag,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        self.panel.check()?;
        if self.is_direction == Direction::Down {
            return Err("iron direction cannot be DOWN".into());
        }
        if !(self.esa_dose.is_finite() && self.esa_dose >= 0.0) {
            return Err(format!("esa_dose {} must be non-negative", self.esa_dose));
        }
        for (name, lag) in [("esa_basis_lag", self.esa_basis_lag), ("is_basis_lag", self.is_basis_lag)] {
            if let Some(lag) = lag {
                if lag > self.occasion_index {
                    return Err(format!(
                        "{name} {lag} points before the first occasion"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Ordered occasions of one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTimeline")]
pub struct PatientTimeline {
    patient_id: String,
    occasions: Vec<OccasionRecord>,
}

#[derive(Deserialize)]
struct RawTimeline {
    patient_id: String,
    occasions: Vec<OccasionRecord>,
}

impl TryFrom<RawTimeline> for PatientTimeline {
    type Error = Error;

    fn try_from(raw: RawTimeline) -> Result<Self> {
        PatientTimeline::new(raw.patient_id, raw.occasions)
    }
}

impl PatientTimeline {
    /// Validates and builds a timeline. Errors name the patient and occasion.
    pub fn new(patient_id: impl Into<String>, occasions: Vec<OccasionRecord>) -> Result<Self> {
        let patient_id = patient_id.into();
        let invalid = |occasion: usize, message: String| Error::Validation {
            patient_id: patient_id.clone(),
            occasion,
            message,
        };
        if occasions.len() < MIN_OCCASIONS {
            return Err(invalid(
                occasions.len().saturating_sub(1),
                format!(
                    "timeline has {} occasions, at least {MIN_OCCASIONS} required",
                    occasions.len()
                ),
            ));
        }
        for (expected, occ) in occasions.iter().enumerate() {
            if occ.occasion_index != expected {
                return Err(invalid(
                    occ.occasion_index,
                    format!("occasion_index {} out of sequence (expected {expected})", occ.occasion_index),
                ));
            }
            occ.check().map_err(|m| invalid(occ.occasion_index, m))?;
        }
        for pair in occasions.windows(2) {
            if pair[1].exam_date <= pair[0].exam_date {
                return Err(invalid(
                    pair[1].occasion_index,
                    format!(
                        "exam_date {} is not after the previous exam ({})",
                        pair[1].exam_date, pair[0].exam_date
                    ),
                ));
            }
        }
        Ok(PatientTimeline {
            patient_id,
            occasions,
        })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn occasions(&self) -> &[OccasionRecord] {
        &self.occasions
    }

    pub fn len(&self) -> usize {
        self.occasions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occasions.is_empty()
    }

    pub fn into_parts(self) -> (String, Vec<OccasionRecord>) {
        (self.patient_id, self.occasions)
    }

    /// Rebuilds the timeline after `edit` mutates its occasions.
    pub fn map_occasions(self, edit: impl FnOnce(&mut Vec<OccasionRecord>)) -> Result<Self> {
        let (id, mut occasions) = self.into_parts();
        edit(&mut occasions);
        PatientTimeline::new(id, occasions)
    }

    /// Soft invariant violations that raw data may carry.
    pub fn warnings(&self) -> Vec<String> {
        self.occasions
            .iter()
            .filter(|o| o.is_active_weeks > MAX_IRON_COURSE_WEEKS)
            .map(|o| {
                format!(
                    "patient {} occasion {}: iron course at week {} exceeds the {}-week stop rule",
                    self.patient_id, o.occasion_index, o.is_active_weeks, MAX_IRON_COURSE_WEEKS
                )
            })
            .collect()
    }
}

/// A named collection of patient timelines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    name: String,
    patients: Vec<PatientTimeline>,
}

impl Cohort {
    pub fn new(name: impl Into<String>, patients: Vec<PatientTimeline>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &patients {
            if !seen.insert(p.patient_id()) {
                return Err(Error::Cohort(format!("duplicate patient_id {}", p.patient_id())));
            }
        }
        Ok(Cohort {
            name: name.into(),
            patients,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn patients(&self) -> &[PatientTimeline] {
        &self.patients
    }

    pub fn patient(&self, id: &str) -> Option<&PatientTimeline> {
        self.patients.iter().find(|p| p.patient_id() == id)
    }

    /// Number of patients, N.
    pub fn num_patients(&self) -> usize {
        self.patients.len()
    }

    /// Total occasions over all patients, W.
    pub fn num_occasions(&self) -> usize {
        self.patients.iter().map(PatientTimeline::len).sum()
    }

    pub fn into_patients(self) -> Vec<PatientTimeline> {
        self.patients
    }

    /// Cohort restricted to patients accepted by `keep`, order preserved.
    pub fn filter(&self, name: impl Into<String>, mut keep: impl FnMut(&PatientTimeline) -> bool) -> Cohort {
        Cohort {
            name: name.into(),
            patients: self.patients.iter().filter(|p| keep(p)).cloned().collect(),
        }
    }

    pub fn warnings(&self) -> Vec<String> {
        self.patients.iter().flat_map(PatientTimeline::warnings).collect()
    }
}

/// Direction counts for one medication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelHistogram {
    pub up: usize,
    pub stay: usize,
    pub down: usize,
}

impl LabelHistogram {
    pub fn total(&self) -> usize {
        self.up + self.stay + self.down
    }

    pub fn count(&self, direction: Direction) -> usize {
        match direction {
            Direction::Up => self.up,
            Direction::Stay => self.stay,
            Direction::Down => self.down,
        }
    }

    pub fn add(&mut self, direction: Direction) {
        match direction {
            Direction::Up => self.up += 1,
            Direction::Stay => self.stay += 1,
            Direction::Down => self.down += 1,
        }
    }
}

pub fn label_histogram(cohort: &Cohort, medication: Medication) -> LabelHistogram {
    let mut hist = LabelHistogram::default();
    for occ in cohort.patients().iter().flat_map(|p| p.occasions()) {
        hist.add(occ.direction(medication));
    }
    hist
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn occasion(index: usize, hb: f64) -> OccasionRecord {
        OccasionRecord {
            occasion_index: index,
            exam_date: NaiveDate::from_ymd_opt(2019, 1, 7).unwrap() + chrono::Days::new(7 * index as u64),
            panel: BloodPanel {
                hb,
                mcv: 90.0,
                ferritin: None,
                tsat: None,
            },
            esa_direction: Direction::Stay,
            esa_dose: 20.0,
            is_direction: Direction::Stay,
            is_active_weeks: 0,
            esa_basis_lag: None,
            is_basis_lag: None,
        }
    }

    pub fn timeline(id: &str, hbs: &[f64]) -> PatientTimeline {
        let occ = hbs.iter().enumerate().map(|(i, &hb)| occasion(i, hb)).collect();
        PatientTimeline::new(id, occ).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn rejects_decreasing_dates() {
        let mut occ: Vec<_> = (0..4).map(|i| occasion(i, 10.5)).collect();
        occ[2].exam_date = occ[1].exam_date;
        let err = PatientTimeline::new("p7", occ).unwrap_err();
        match err {
            Error::Validation { patient_id, occasion, .. } => {
                assert_eq!(patient_id, "p7");
                assert_eq!(occasion, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_future_basis_lag_and_iron_down() {
        let mut occ: Vec<_> = (0..4).map(|i| occasion(i, 10.5)).collect();
        occ[1].esa_basis_lag = Some(2);
        assert!(PatientTimeline::new("p", occ.clone()).is_err());
        occ[1].esa_basis_lag = Some(1);
        occ[3].is_direction = Direction::Down;
        let err = PatientTimeline::new("p", occ).unwrap_err();
        assert!(err.to_string().contains("occasion 3"), "{err}");
    }

    #[test]
    fn rejects_short_and_gapped_timelines() {
        let occ: Vec<_> = (0..2).map(|i| occasion(i, 10.5)).collect();
        assert!(PatientTimeline::new("p", occ).is_err());
        let occ = vec![occasion(0, 10.0), occasion(1, 10.0), occasion(3, 10.0)];
        assert!(PatientTimeline::new("p", occ).is_err());
    }

    #[test]
    fn panel_bounds() {
        let mut occ: Vec<_> = (0..3).map(|i| occasion(i, 10.5)).collect();
        occ[0].panel.hb = 25.0;
        assert!(PatientTimeline::new("p", occ.clone()).is_err());
        occ[0].panel.hb = 10.0;
        occ[0].panel.tsat = Some(100.5);
        assert!(PatientTimeline::new("p", occ).is_err());
    }

    #[test]
    fn duplicate_patient_ids_rejected() {
        let a = timeline("a", &[10.0, 10.0, 10.0]);
        assert!(Cohort::new("c", vec![a.clone(), a]).is_err());
    }

    #[test]
    fn histogram_of_all_stay() {
        let c = Cohort::new("c", vec![timeline("a", &[10.0; 5]), timeline("b", &[11.0; 4])]).unwrap();
        let h = label_histogram(&c, Medication::Esa);
        assert_eq!(h, LabelHistogram { up: 0, stay: 9, down: 0 });
        assert_eq!(h.total(), c.num_occasions());
    }

    #[test]
    fn long_iron_course_is_only_a_warning() {
        let mut occ: Vec<_> = (0..3).map(|i| occasion(i, 10.5)).collect();
        occ[2].is_active_weeks = 8;
        let t = PatientTimeline::new("p", occ).unwrap();
        assert_eq!(t.warnings().len(), 1);
    }

    #[test]
    fn occasion_json_is_flat() {
        let json = serde_json::to_value(occasion(0, 10.2)).unwrap();
        assert_eq!(json["hb"], 10.2);
        assert!(json.get("panel").is_none());
        assert_eq!(json["esa_direction"], "STAY");
    }
}
