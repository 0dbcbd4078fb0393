//! Repair of delayed decisions.
//!
//! A direction recorded one or two occasions after the exam it was based on is
//! moved back to that exam's occasion. Delay metadata (`*_basis_lag`) drives
//! the moves; [`detect_delayed_heuristic`] can fill that metadata for raw
//! extracts that lack it, and its flags are kept so the log shows which moves
//! came from the heuristic.

use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{Cohort, Direction, Medication, OccasionRecord, PatientTimeline};
use crate::error::Result;

pub const DEFAULT_MAX_LAG: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveSource {
    Metadata,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MoveEntry {
    pub patient_id: String,
    pub medication: Medication,
    pub from_occasion: usize,
    pub to_occasion: usize,
    pub source: MoveSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// The target occasion already carries a non-STAY direction.
    Conflict,
    /// The recorded lag exceeds `max_lag`.
    LagTooLarge,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SkippedMove {
    pub patient_id: String,
    pub medication: Medication,
    pub occasion: usize,
    pub lag: usize,
    pub reason: SkipReason,
}

/// Record of every move and every skipped move, sorted by patient then occasion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RectificationLog {
    pub entries: Vec<MoveEntry>,
    pub skipped: Vec<SkippedMove>,
}

impl RectificationLog {
    pub fn conflicts(&self) -> usize {
        self.skipped.iter().filter(|s| s.reason == SkipReason::Conflict).count()
    }

    /// Writes moves as CSV: patient_id, medication, from_occasion, to_occasion, source.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["patient_id", "medication", "from_occasion", "to_occasion", "source"])?;
        for e in &self.entries {
            w.serialize((&e.patient_id, e.medication, e.from_occasion, e.to_occasion, e.source))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Occasion flagged by the heuristic: (patient_id, medication, occasion_index).
pub type HeuristicFlag = (String, Medication, usize);

pub fn rectify(cohort: &Cohort, max_lag: usize) -> Result<(Cohort, RectificationLog)> {
    rectify_with_provenance(cohort, max_lag, &HashSet::new())
}

/// As [`rectify`], tagging moves whose lag was filled by the heuristic.
pub fn rectify_with_provenance(
    cohort: &Cohort,
    max_lag: usize,
    heuristic: &HashSet<HeuristicFlag>,
) -> Result<(Cohort, RectificationLog)> {
    assert!(max_lag >= 1, "max_lag must be at least 1");
    let mut log = RectificationLog::default();
    let mut patients = Vec::with_capacity(cohort.num_patients());
    for p in cohort.patients() {
        let (timeline, entries, skipped) = rectify_patient(p, max_lag, heuristic)?;
        log.entries.extend(entries);
        log.skipped.extend(skipped);
        patients.push(timeline);
    }
    log.entries.sort();
    log.skipped.sort();
    Ok((Cohort::new(cohort.name(), patients)?, log))
}

fn rectify_patient(
    timeline: &PatientTimeline,
    max_lag: usize,
    heuristic: &HashSet<HeuristicFlag>,
) -> Result<(PatientTimeline, Vec<MoveEntry>, Vec<SkippedMove>)> {
    let pid = timeline.patient_id().to_string();
    let mut occasions: Vec<OccasionRecord> = timeline.occasions().to_vec();
    let mut entries = Vec::new();
    let mut skipped = Vec::new();

    for medication in [Medication::Esa, Medication::Iron] {
        for t in 0..occasions.len() {
            let direction = occasions[t].direction(medication);
            let lag = match occasions[t].basis_lag(medication) {
                Some(lag) if lag >= 1 && !direction.is_stay() => lag,
                _ => continue,
            };
            if lag > max_lag {
                skipped.push(SkippedMove {
                    patient_id: pid.clone(),
                    medication,
                    occasion: t,
                    lag,
                    reason: SkipReason::LagTooLarge,
                });
                continue;
            }
            let target = t - lag;
            if !occasions[target].direction(medication).is_stay() {
                skipped.push(SkippedMove {
                    patient_id: pid.clone(),
                    medication,
                    occasion: t,
                    lag,
                    reason: SkipReason::Conflict,
                });
                continue;
            }
            // Both occasions now hold decisions aligned with their own exam.
            occasions[target].set_direction(medication, direction);
            occasions[target].set_basis_lag(medication, Some(0));
            occasions[t].set_direction(medication, Direction::Stay);
            occasions[t].set_basis_lag(medication, Some(0));
            let source = if heuristic.contains(&(pid.clone(), medication, t)) {
                MoveSource::Heuristic
            } else {
                MoveSource::Metadata
            };
            entries.push(MoveEntry {
                patient_id: pid.clone(),
                medication,
                from_occasion: t,
                to_occasion: target,
                source,
            });
        }
    }
    Ok((PatientTimeline::new(pid, occasions)?, entries, skipped))
}

/// Fills `esa_basis_lag = 1` on ESA directions that contradict their own
/// exam but follow from the previous one: an UP whose previous hb sat below
/// `target_low` (a DOWN: above `target_high`) while the current hb is back
/// inside the band. Present lags are never overwritten.
///
/// Iron decisions follow monthly ferritin/tsat draws, so a one-occasion shift
/// is not visible in the panel and they are left untouched.
pub fn detect_delayed_heuristic(
    cohort: &Cohort,
    target_low: f64,
    target_high: f64,
) -> Result<(Cohort, HashSet<HeuristicFlag>)> {
    let mut flags = HashSet::new();
    let mut patients = Vec::with_capacity(cohort.num_patients());
    for p in cohort.patients() {
        let mut occasions = p.occasions().to_vec();
        for t in 1..occasions.len() {
            if occasions[t].esa_basis_lag.is_some() {
                continue;
            }
            let prev = occasions[t - 1].panel.hb;
            let cur = occasions[t].panel.hb;
            let in_band = (target_low..=target_high).contains(&cur);
            let delayed = match occasions[t].esa_direction {
                Direction::Up => prev < target_low && in_band,
                Direction::Down => prev > target_high && in_band,
                Direction::Stay => false,
            };
            if delayed {
                occasions[t].esa_basis_lag = Some(1);
                flags.insert((p.patient_id().to_string(), Medication::Esa, t));
            }
        }
        patients.push(PatientTimeline::new(p.patient_id(), occasions)?);
    }
    Ok((Cohort::new(cohort.name(), patients)?, flags))
}

/// Copy of `cohort` with all basis-lag metadata removed, as in a raw extract.
pub fn strip_basis_lags(cohort: &Cohort) -> Cohort {
    let patients = cohort
        .patients()
        .iter()
        .map(|p| {
            let mut occ = p.occasions().to_vec();
            for o in &mut occ {
                o.esa_basis_lag = None;
                o.is_basis_lag = None;
            }
            PatientTimeline::new(p.patient_id(), occ).expect("removing lags keeps a timeline valid")
        })
        .collect();
    Cohort::new(cohort.name(), patients).expect("ids unchanged")
}
