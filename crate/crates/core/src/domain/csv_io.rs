use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{BloodPanel, Cohort, Direction, OccasionRecord, PatientTimeline};
use crate::error::{Error, Result};

/// Column order of the occasion CSV format.
pub const CSV_COLUMNS: [&str; 13] = [
    "patient_id",
    "occasion_index",
    "exam_date",
    "hb",
    "mcv",
    "ferritin",
    "tsat",
    "esa_direction",
    "esa_dose",
    "is_direction",
    "is_active_weeks",
    "esa_basis_lag",
    "is_basis_lag",
];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    patient_id: String,
    occasion_index: usize,
    exam_date: NaiveDate,
    hb: f64,
    mcv: f64,
    ferritin: Option<f64>,
    tsat: Option<f64>,
    esa_direction: Direction,
    esa_dose: f64,
    is_direction: Direction,
    is_active_weeks: u32,
    esa_basis_lag: Option<usize>,
    is_basis_lag: Option<usize>,
}

impl Row {
    fn from_record(patient_id: &str, o: &OccasionRecord) -> Row {
        Row {
            patient_id: patient_id.to_string(),
            occasion_index: o.occasion_index,
            exam_date: o.exam_date,
            hb: o.panel.hb,
            mcv: o.panel.mcv,
            ferritin: o.panel.ferritin,
            tsat: o.panel.tsat,
            esa_direction: o.esa_direction,
            esa_dose: o.esa_dose,
            is_direction: o.is_direction,
            is_active_weeks: o.is_active_weeks,
            esa_basis_lag: o.esa_basis_lag,
            is_basis_lag: o.is_basis_lag,
        }
    }

    fn into_record(self) -> (String, OccasionRecord) {
        (
            self.patient_id,
            OccasionRecord {
                occasion_index: self.occasion_index,
                exam_date: self.exam_date,
                panel: BloodPanel {
                    hb: self.hb,
                    mcv: self.mcv,
                    ferritin: self.ferritin,
                    tsat: self.tsat,
                },
                esa_direction: self.esa_direction,
                esa_dose: self.esa_dose,
                is_direction: self.is_direction,
                is_active_weeks: self.is_active_weeks,
                esa_basis_lag: self.esa_basis_lag,
                is_basis_lag: self.is_basis_lag,
            },
        )
    }
}

/// Reads a cohort from CSV. Rows may arrive in any order; patients keep the
/// order of their first row.
pub fn ingest_csv<R: Read>(source: R, name: &str) -> Result<Cohort> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != CSV_COLUMNS {
        return Err(Error::Parse {
            row: 1,
            message: format!("header must be {:?}, found {:?}", CSV_COLUMNS.join(","), got.join(",")),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, BTreeMap<usize, OccasionRecord>> = BTreeMap::new();
    for (i, result) in reader.deserialize::<Row>().enumerate() {
        // header is row 1
        let row_number = i + 2;
        let row = result.map_err(|e| Error::Parse {
            row: row_number,
            message: match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => match err.field() {
                    Some(f) => format!("column {}: {}", CSV_COLUMNS.get(f as usize).unwrap_or(&"?"), err.kind()),
                    None => err.kind().to_string(),
                },
                _ => e.to_string(),
            },
        })?;
        let (pid, record) = row.into_record();
        let occasions = grouped.entry(pid.clone()).or_insert_with(|| {
            order.push(pid.clone());
            BTreeMap::new()
        });
        let index = record.occasion_index;
        if occasions.insert(index, record).is_some() {
            return Err(Error::Validation {
                patient_id: pid,
                occasion: index,
                message: "duplicate (patient_id, occasion_index)".into(),
            });
        }
    }

    let mut patients = Vec::with_capacity(order.len());
    for pid in order {
        let occasions = grouped.remove(&pid).unwrap_or_default().into_values().collect();
        patients.push(PatientTimeline::new(pid, occasions)?);
    }
    Cohort::new(name, patients)
}

/// Writes `cohort` as CSV into `sink`. Absent values become empty cells.
pub fn write_csv<W: Write>(cohort: &Cohort, sink: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    writer.write_record(CSV_COLUMNS)?;
    for p in cohort.patients() {
        for o in p.occasions() {
            writer.serialize(Row::from_record(p.patient_id(), o))?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn export_csv(cohort: &Cohort) -> Vec<u8> {
    let mut out = Vec::new();
    write_csv(cohort, &mut out).expect("writing to memory cannot fail");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::timeline;
    use crate::domain::{label_histogram, Medication};

    const HEADER: &str = "patient_id,occasion_index,exam_date,hb,mcv,ferritin,tsat,esa_direction,esa_dose,is_direction,is_active_weeks,esa_basis_lag,is_basis_lag\n";

    fn rows(pid: &str, n: usize) -> String {
        (0..n)
            .map(|i| {
                format!(
                    "{pid},{i},2019-01-{:02},10.{i},90.1,{},{},STAY,20.0,STAY,0,,\n",
                    7 + i,
                    if i == 0 { "55.0" } else { "" },
                    if i == 0 { "21.5" } else { "" }
                )
            })
            .collect()
    }

    #[test]
    fn two_patients_by_four() {
        let csv = format!("{HEADER}{}{}", rows("a", 4), rows("b", 4));
        let c = ingest_csv(csv.as_bytes(), "t").unwrap();
        assert_eq!(c.num_patients(), 2);
        assert_eq!(c.num_occasions(), 8);
        let first = &c.patients()[0].occasions()[0];
        assert_eq!(first.panel.ferritin, Some(55.0));
        assert_eq!(c.patients()[0].occasions()[1].panel.ferritin, None);
        assert_eq!(c.patients()[0].occasions()[1].panel.tsat, None);
    }

    #[test]
    fn rows_out_of_order_are_sorted() {
        let r = rows("a", 4);
        let mut lines: Vec<&str> = r.lines().collect();
        lines.reverse();
        let csv = format!("{HEADER}{}\n", lines.join("\n"));
        let c = ingest_csv(csv.as_bytes(), "t").unwrap();
        let idx: Vec<usize> = c.patients()[0].occasions().iter().map(|o| o.occasion_index).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn duplicate_occasion_rejected() {
        let r = rows("a", 3);
        let dup = r.lines().nth(1).unwrap();
        let csv = format!("{HEADER}{r}{dup}\n");
        match ingest_csv(csv.as_bytes(), "t").unwrap_err() {
            Error::Validation { patient_id, occasion, .. } => {
                assert_eq!((patient_id.as_str(), occasion), ("a", 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let csv = format!("{HEADER}{}", rows("a", 3).replacen("90.1", "abc", 2));
        match ingest_csv(csv.as_bytes(), "t").unwrap_err() {
            Error::Parse { row, message } => {
                assert_eq!(row, 2);
                assert!(message.contains("mcv"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decreasing_dates_name_patient_and_occasion() {
        let csv = format!("{HEADER}{}", rows("zz", 4).replace("2019-01-09", "2019-01-01"));
        let err = ingest_csv(csv.as_bytes(), "t").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("zz") && msg.contains("occasion 2"), "{msg}");
    }

    #[test]
    fn wrong_header_rejected() {
        let csv = "patient_id,hb\na,10\n";
        assert!(matches!(ingest_csv(csv.as_bytes(), "t"), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn empty_cohort_exports_header_only() {
        let c = Cohort::new("empty", vec![]).unwrap();
        assert_eq!(String::from_utf8(export_csv(&c)).unwrap(), HEADER);
        let back = ingest_csv(HEADER.as_bytes(), "empty").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn absent_tsat_exports_empty_cell() {
        let c = Cohort::new("c", vec![timeline("a", &[10.0, 10.1, 10.2])]).unwrap();
        let text = String::from_utf8(export_csv(&c)).unwrap();
        let line = text.lines().nth(1).unwrap();
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[5], "");
        assert_eq!(cells[6], "");
        assert_eq!(ingest_csv(text.as_bytes(), "c").unwrap(), c);
    }

    #[test]
    fn histogram_matches_naive_scan() {
        let csv = format!("{HEADER}{}", rows("a", 5))
            .replacen(",STAY,20.0", ",UP,20.0", 1)
            .replacen("4,2019-01-11,10.4,90.1,,,STAY", "4,2019-01-11,10.4,90.1,,,DOWN", 1);
        let c = ingest_csv(csv.as_bytes(), "t").unwrap();
        let h = label_histogram(&c, Medication::Esa);
        let naive = |d: &str| csv.lines().skip(1).filter(|l| l.split(',').nth(7) == Some(d)).count();
        assert_eq!((h.up, h.stay, h.down), (naive("UP"), naive("STAY"), naive("DOWN")));
        assert_eq!((h.up, h.down), (1, 1));
    }
}
