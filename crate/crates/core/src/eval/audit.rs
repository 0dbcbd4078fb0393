use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::classifier::classify;
use crate::domain::{Direction, Medication};
use crate::error::{Error, Result};
use crate::features::TrainingExample;
use crate::nn::ClassProbabilities;

/// Occasions searched after a mismatch for the physician's matching decision.
pub const DEFAULT_LOOKAHEAD: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Correct,
    /// The model proposed the physician's next UP/DOWN ahead of time.
    BeforePhysician,
    /// Any other disagreement; left for expert review.
    OtherMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub patient_id: String,
    pub occasion_index: usize,
    pub ai_direction: Direction,
    /// The physician's recorded direction.
    pub md_direction: Direction,
    pub probabilities: ClassProbabilities,
    pub category: Category,
}

/// Per-occasion comparison of model and physician, ordered per patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionAudit {
    pub medication: Medication,
    pub rows: Vec<AuditRow>,
}

impl DecisionAudit {
    /// Classifies each probability vector at `threshold` and compares it with
    /// the example's label.
    pub fn build(medication: Medication, examples: &[TrainingExample], probabilities: &[ClassProbabilities], threshold: f64) -> Self {
        assert_eq!(examples.len(), probabilities.len(), "one probability vector per example");
        let rows = examples
            .iter()
            .zip(probabilities)
            .map(|(e, p)| {
                let md = match medication {
                    Medication::Esa => e.esa_label,
                    Medication::Iron => e.is_label,
                };
                let ai = classify(medication, p, threshold);
                AuditRow {
                    patient_id: e.patient_id.clone(),
                    occasion_index: e.occasion_index,
                    ai_direction: ai,
                    md_direction: md,
                    probabilities: *p,
                    category: if ai == md { Category::Correct } else { Category::OtherMismatch },
                }
            })
            .collect();
        DecisionAudit { medication, rows }
    }

    pub fn concat(medication: Medication, parts: impl IntoIterator<Item = DecisionAudit>) -> Self {
        DecisionAudit {
            medication,
            rows: parts.into_iter().flat_map(|a| a.rows).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["patient_id", "occasion_index", "ai_direction", "md_direction", "p_up", "p_stay", "p_down", "category"])?;
        for r in &self.rows {
            w.serialize((
                &r.patient_id,
                r.occasion_index,
                r.ai_direction,
                r.md_direction,
                r.probabilities.p_up,
                r.probabilities.p_stay,
                r.probabilities.p_down,
                r.category,
            ))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mismatches needing a physician's judgement, with blank reviewer columns.
    pub fn write_review_worksheet<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "patient_id",
            "occasion_index",
            "medication",
            "ai_direction",
            "md_direction",
            "p_up",
            "p_stay",
            "p_down",
            "clinically_appropriate",
            "reviewer_notes",
        ])?;
        for r in self.rows.iter().filter(|r| r.category == Category::OtherMismatch) {
            w.serialize((
                &r.patient_id,
                r.occasion_index,
                self.medication,
                r.ai_direction,
                r.md_direction,
                r.probabilities.p_up,
                r.probabilities.p_stay,
                r.probabilities.p_down,
                "",
                "",
            ))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCount {
    pub total: usize,
    pub correct: usize,
}

/// Correct-classification rates. Class rates are restricted to occasions whose
/// physician direction is that class and are absent when no such occasion exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatesReport {
    pub r_total: f64,
    pub r_up: Option<f64>,
    pub r_stay: Option<f64>,
    pub r_down: Option<f64>,
    pub up: ClassCount,
    pub stay: ClassCount,
    pub down: ClassCount,
    pub before_physician_rate: f64,
    pub total: usize,
}

impl RatesReport {
    pub fn class_rate(&self, direction: Direction) -> Option<f64> {
        match direction {
            Direction::Up => self.r_up,
            Direction::Stay => self.r_stay,
            Direction::Down => self.r_down,
        }
    }

    /// Class rates that are defined, in UP, STAY, DOWN order.
    pub fn present_rates(&self) -> Vec<f64> {
        [self.r_up, self.r_stay, self.r_down].into_iter().flatten().collect()
    }

    pub fn min_class_rate(&self) -> f64 {
        self.present_rates().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Largest minus smallest defined class rate.
    pub fn spread(&self) -> f64 {
        let r = self.present_rates();
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = r.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

pub fn rates(audit: &DecisionAudit) -> Result<RatesReport> {
    if audit.rows.is_empty() {
        return Err(Error::Evaluation("rates of an empty audit".into()));
    }
    let mut counts: HashMap<Direction, ClassCount> = HashMap::new();
    let mut correct = 0usize;
    let mut before = 0usize;
    for r in &audit.rows {
        let c = counts.entry(r.md_direction).or_default();
        c.total += 1;
        if r.ai_direction == r.md_direction {
            c.correct += 1;
            correct += 1;
        }
        if r.category == Category::BeforePhysician {
            before += 1;
        }
    }
    let count = |d| counts.get(&d).copied().unwrap_or_default();
    let rate = |c: ClassCount| (c.total > 0).then(|| c.correct as f64 / c.total as f64);
    let n = audit.rows.len();
    Ok(RatesReport {
        r_total: correct as f64 / n as f64,
        r_up: rate(count(Direction::Up)),
        r_stay: rate(count(Direction::Stay)),
        r_down: rate(count(Direction::Down)),
        up: count(Direction::Up),
        stay: count(Direction::Stay),
        down: count(Direction::Down),
        before_physician_rate: before as f64 / n as f64,
        total: n,
    })
}

/// Tags mismatches where the model's UP/DOWN at a physician STAY is matched
/// by the physician's same direction within the next `lookahead` occasions of
/// the same patient.
pub fn categorize_before_physician(audit: &DecisionAudit, lookahead: usize) -> DecisionAudit {
    let md: HashMap<(&str, usize), Direction> = audit
        .rows
        .iter()
        .map(|r| ((r.patient_id.as_str(), r.occasion_index), r.md_direction))
        .collect();
    let rows = audit
        .rows
        .iter()
        .map(|r| {
            let category = if r.ai_direction == r.md_direction {
                Category::Correct
            } else if !r.ai_direction.is_stay()
                && r.md_direction.is_stay()
                && (1..=lookahead).any(|k| md.get(&(r.patient_id.as_str(), r.occasion_index + k)) == Some(&r.ai_direction))
            {
                Category::BeforePhysician
            } else {
                Category::OtherMismatch
            };
            AuditRow { category, ..r.clone() }
        })
        .collect();
    DecisionAudit {
        medication: audit.medication,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pid: &str, occ: usize, ai: Direction, md: Direction) -> AuditRow {
        AuditRow {
            patient_id: pid.into(),
            occasion_index: occ,
            ai_direction: ai,
            md_direction: md,
            probabilities: ClassProbabilities { p_up: 0.2, p_stay: 0.6, p_down: Some(0.2) },
            category: if ai == md { Category::Correct } else { Category::OtherMismatch },
        }
    }

    fn audit(rows: Vec<AuditRow>) -> DecisionAudit {
        DecisionAudit { medication: Medication::Esa, rows }
    }

    use Direction::{Down, Stay, Up};

    #[test]
    fn eight_of_ten() {
        let mut rows: Vec<_> = (0..8).map(|i| row("a", i, Stay, Stay)).collect();
        rows.push(row("a", 8, Up, Stay));
        rows.push(row("a", 9, Stay, Down));
        let r = rates(&audit(rows)).unwrap();
        assert_eq!(r.r_total, 0.8);
        assert_eq!(r.r_stay, Some(8.0 / 9.0));
        assert_eq!(r.r_down, Some(0.0));
        assert_eq!(r.r_up, None);
    }

    #[test]
    fn absent_classes_are_none_not_zero() {
        let r = rates(&audit((0..5).map(|i| row("a", i, Stay, Stay)).collect())).unwrap();
        assert_eq!((r.r_stay, r.r_up, r.r_down), (Some(1.0), None, None));
        assert_eq!(r.spread(), 0.0);
    }

    #[test]
    fn empty_audit_is_an_error() {
        assert!(rates(&audit(vec![])).is_err());
    }

    #[test]
    fn before_physician_next_occasion() {
        let a = audit(vec![row("p", 5, Up, Stay), row("p", 6, Stay, Up)]);
        let c = categorize_before_physician(&a, 3);
        assert_eq!(c.rows[0].category, Category::BeforePhysician);
        assert_eq!(c.rows[1].category, Category::OtherMismatch);
    }

    #[test]
    fn opposite_direction_is_other_mismatch() {
        let a = audit(vec![row("p", 5, Up, Stay), row("p", 6, Stay, Down)]);
        let c = categorize_before_physician(&a, 3);
        assert_eq!(c.rows[0].category, Category::OtherMismatch);
    }

    #[test]
    fn physician_must_have_stayed() {
        let a = audit(vec![row("p", 5, Up, Down), row("p", 6, Stay, Up)]);
        assert_eq!(categorize_before_physician(&a, 3).rows[0].category, Category::OtherMismatch);
    }

    #[test]
    fn other_patient_does_not_count() {
        let a = audit(vec![row("p", 5, Down, Stay), row("q", 6, Down, Down)]);
        assert_eq!(categorize_before_physician(&a, 3).rows[0].category, Category::OtherMismatch);
    }

    #[test]
    fn rates_count_before_physician() {
        let a = audit(vec![row("p", 5, Up, Stay), row("p", 6, Up, Up), row("p", 7, Stay, Stay), row("p", 8, Stay, Stay)]);
        let r = rates(&categorize_before_physician(&a, 3)).unwrap();
        assert_eq!(r.before_physician_rate, 0.25);
        assert_eq!(r.r_total, 0.75);
    }

    #[test]
    fn worksheet_lists_only_other_mismatches() {
        let a = categorize_before_physician(&audit(vec![row("p", 5, Up, Stay), row("p", 6, Up, Up), row("p", 7, Down, Stay)]), 3);
        let mut out = Vec::new();
        a.write_review_worksheet(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("p,7,ESA,DOWN,STAY"));
    }
}
