//! Network inputs per occasion.
//!
//! Layout of a [`FeatureVector`] with the default history length of 4:
//!
//! | index  | content                                             |
//! |--------|-----------------------------------------------------|
//! | 0..4   | hb, mcv, ferritin (LOCF), tsat (LOCF)               |
//! | 4..8   | trends of the same items                            |
//! | 8..12  | ESA directions at t-4..t-1 (DOWN=-1, STAY=0, UP=+1)  |
//! | 12..16 | iron administered at t-4..t-1 (0/1)                 |
//!
//! Trends of ferritin/tsat are taken between their two most recent actual
//! observations, not between carried-forward fillings.

use std::io::Write;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::domain::{Cohort, Direction, OccasionRecord, PatientTimeline};
use crate::error::{Error, Result};

/// Lab values plus their trends; the only components that get normalized.
pub const CONTINUOUS_DIM: usize = 8;

const VALUE_NAMES: [&str; 4] = ["hb", "mcv", "ferritin", "tsat"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub history_len: usize,
    /// Used before the first ferritin observation of a patient.
    pub default_ferritin: f64,
    /// Used before the first tsat observation of a patient.
    pub default_tsat: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            history_len: 4,
            default_ferritin: 100.0,
            default_tsat: 25.0,
        }
    }
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        CONTINUOUS_DIM + 2 * self.history_len
    }

    /// Occasions a timeline needs before its first example.
    pub fn min_occasions(&self) -> usize {
        self.history_len + 1
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = VALUE_NAMES.iter().map(|n| n.to_string()).collect();
        names.extend(VALUE_NAMES.iter().map(|n| format!("{n}_trend")));
        for prefix in ["esa_hist", "is_hist"] {
            names.extend((1..=self.history_len).rev().map(|k| format!("{prefix}_t-{k}")));
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0[0..4]
    }

    pub fn trends(&self) -> &[f64] {
        &self.0[4..8]
    }

    pub fn esa_history(&self) -> &[f64] {
        let h = (self.0.len() - CONTINUOUS_DIM) / 2;
        &self.0[CONTINUOUS_DIM..CONTINUOUS_DIM + h]
    }

    pub fn is_history(&self) -> &[f64] {
        let h = (self.0.len() - CONTINUOUS_DIM) / 2;
        &self.0[CONTINUOUS_DIM + h..]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub patient_id: String,
    pub occasion_index: usize,
    pub features: FeatureVector,
    /// Features of the preceding occasion, for the recurrent iron model.
    pub sequence_prev: Option<FeatureVector>,
    pub esa_label: Direction,
    pub is_label: Direction,
}

/// Most recent and previous observation of a sparse lab at or before `t`.
fn last_two(occasions: &[OccasionRecord], t: usize, get: impl Fn(&OccasionRecord) -> Option<f64>) -> (Option<f64>, Option<f64>) {
    let mut seen = occasions[..=t].iter().rev().filter_map(get);
    let last = seen.next();
    let prev = seen.next();
    (last, prev)
}

/// Feature vector for occasion `t` of `timeline`. Reads panels at or before
/// `t` and directions strictly before `t`.
pub fn features_at(timeline: &PatientTimeline, t: usize, config: &FeatureConfig) -> Result<FeatureVector> {
    let occ = timeline.occasions();
    if t >= occ.len() || t < config.history_len || t == 0 {
        return Err(Error::TooShortTimeline {
            have: t.min(occ.len()) + 1,
            need: config.min_occasions().max(2),
        });
    }
    let cur = &occ[t].panel;
    let prev = &occ[t - 1].panel;
    let (fer, fer_prev) = last_two(occ, t, |o| o.panel.ferritin);
    let (tsat, tsat_prev) = last_two(occ, t, |o| o.panel.tsat);
    let trend = |last: Option<f64>, prev: Option<f64>| match (last, prev) {
        (Some(a), Some(b)) => a - b,
        _ => 0.0,
    };

    let mut v = Vec::with_capacity(config.dim());
    v.extend([
        cur.hb,
        cur.mcv,
        fer.unwrap_or(config.default_ferritin),
        tsat.unwrap_or(config.default_tsat),
        cur.hb - prev.hb,
        cur.mcv - prev.mcv,
        trend(fer, fer_prev),
        trend(tsat, tsat_prev),
    ]);
    let window = &occ[t - config.history_len..t];
    v.extend(window.iter().map(|o| o.esa_direction.code()));
    v.extend(window.iter().map(|o| if o.is_active_weeks > 0 { 1.0 } else { 0.0 }));
    Ok(FeatureVector(v))
}

/// One example per occasion with index >= `history_len`. Patients too short
/// to yield any example are skipped with a debug log entry.
pub fn build_examples(cohort: &Cohort, config: &FeatureConfig) -> Vec<TrainingExample> {
    let mut out = Vec::new();
    for p in cohort.patients() {
        out.extend(patient_examples(p, config));
    }
    out
}

pub fn patient_examples(timeline: &PatientTimeline, config: &FeatureConfig) -> Vec<TrainingExample> {
    let first = config.history_len.max(1);
    if timeline.len() <= first {
        debug!(
            "patient {} has {} occasions, needs {} for an example",
            timeline.patient_id(),
            timeline.len(),
            first + 1
        );
        return Vec::new();
    }
    let mut out = Vec::with_capacity(timeline.len() - first);
    let mut prev: Option<FeatureVector> = None;
    for t in first..timeline.len() {
        let features = features_at(timeline, t, config).expect("index checked above");
        let o = &timeline.occasions()[t];
        out.push(TrainingExample {
            patient_id: timeline.patient_id().to_string(),
            occasion_index: t,
            features: features.clone(),
            sequence_prev: prev.take(),
            esa_label: o.esa_direction,
            is_label: o.is_direction,
        });
        prev = Some(features);
    }
    out
}

/// Per-component z-score parameters for the continuous components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Fits mean and population standard deviation over the examples'
    /// current-occasion features. Constant components get std = 1.
    pub fn fit(examples: &[TrainingExample]) -> Result<Self> {
        if examples.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "normalization needs at least 2 examples, got {}",
                examples.len()
            )));
        }
        let n = examples.len() as f64;
        let mut mean = vec![0.0; CONTINUOUS_DIM];
        for e in examples {
            for (m, x) in mean.iter_mut().zip(&e.features.0[..CONTINUOUS_DIM]) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; CONTINUOUS_DIM];
        for e in examples {
            for (i, x) in e.features.0[..CONTINUOUS_DIM].iter().enumerate() {
                var[i] += (x - mean[i]).powi(2);
            }
        }
        let names = FeatureConfig::default().column_names();
        let std = var
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let s = (v / n).sqrt();
                // Rounding leaves a residue of order 1e-17 · |mean| on constant columns.
                if s > 1e-12 * (1.0 + mean[i].abs()) && s.is_finite() {
                    s
                } else {
                    warn!("feature {} is constant over the training split; std set to 1", names[i]);
                    1.0
                }
            })
            .collect();
        Ok(NormalizationStats { mean, std })
    }

    pub fn apply(&self, features: &FeatureVector) -> FeatureVector {
        let mut v = features.0.clone();
        for i in 0..CONTINUOUS_DIM {
            v[i] = (v[i] - self.mean[i]) / self.std[i];
        }
        FeatureVector(v)
    }

    pub fn invert(&self, features: &FeatureVector) -> FeatureVector {
        let mut v = features.0.clone();
        for i in 0..CONTINUOUS_DIM {
            v[i] = v[i] * self.std[i] + self.mean[i];
        }
        FeatureVector(v)
    }

    /// Normalizes both timesteps of every example.
    pub fn apply_examples(&self, examples: &[TrainingExample]) -> Vec<TrainingExample> {
        examples
            .iter()
            .map(|e| TrainingExample {
                features: self.apply(&e.features),
                sequence_prev: e.sequence_prev.as_ref().map(|p| self.apply(p)),
                ..e.clone()
            })
            .collect()
    }
}

/// Writes examples as CSV: provenance, feature columns, then both labels.
pub fn write_examples_csv<W: Write>(examples: &[TrainingExample], config: &FeatureConfig, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["patient_id".to_string(), "occasion_index".to_string()];
    header.extend(config.column_names());
    header.extend(["esa_label".to_string(), "is_label".to_string()]);
    w.write_record(&header)?;
    for e in examples {
        let mut row = vec![e.patient_id.clone(), e.occasion_index.to_string()];
        row.extend(e.features.0.iter().map(|x| x.to_string()));
        row.extend([e.esa_label.to_string(), e.is_label.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::timeline;

    fn cfg() -> FeatureConfig {
        FeatureConfig::default()
    }

    #[test]
    fn sixteen_components_by_default() {
        let t = timeline("a", &[10.0, 10.1, 10.2, 10.3, 10.4]);
        let f = features_at(&t, 4, &cfg()).unwrap();
        assert_eq!(f.len(), 16);
        assert_eq!(cfg().column_names().len(), 16);
    }

    #[test]
    fn hb_trend_is_first_difference() {
        let t = timeline("a", &[9.0, 9.0, 9.0, 10.0, 10.4]);
        let f = features_at(&t, 4, &cfg()).unwrap();
        assert!((f.trends()[0] - 0.4).abs() < 1e-12);
        assert_eq!(f.values()[0], 10.4);
    }

    #[test]
    fn sparse_lab_carried_forward_with_zero_trend() {
        let t = timeline("a", &[10.0; 6]).map_occasions(|o| o[0].panel.ferritin = Some(50.0)).unwrap();
        let c = FeatureConfig { history_len: 3, ..cfg() };
        let f = features_at(&t, 3, &c).unwrap();
        assert_eq!(f.values()[2], 50.0);
        assert_eq!(f.trends()[2], 0.0);
        // tsat never observed: configured default
        assert_eq!(f.values()[3], c.default_tsat);
    }

    #[test]
    fn sparse_trend_uses_observations_not_fillings() {
        let t = timeline("a", &[10.0; 9])
            .map_occasions(|o| {
                o[0].panel.tsat = Some(20.0);
                o[4].panel.tsat = Some(26.0);
            })
            .unwrap();
        let f = features_at(&t, 7, &cfg()).unwrap();
        assert_eq!(f.values()[3], 26.0);
        assert_eq!(f.trends()[3], 6.0);
    }

    #[test]
    fn esa_history_encoding() {
        let t = timeline("a", &[10.0; 5])
            .map_occasions(|o| {
                o[0].esa_direction = Direction::Up;
                o[3].esa_direction = Direction::Down;
                o[2].is_active_weeks = 1;
                o[3].is_active_weeks = 2;
                o[3].is_direction = Direction::Up;
            })
            .unwrap();
        let f = features_at(&t, 4, &cfg()).unwrap();
        assert_eq!(f.esa_history(), &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(f.is_history(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn future_occasions_do_not_leak() {
        let base = timeline("a", &[10.0, 10.5, 11.0, 10.2, 10.8, 11.3, 9.9]);
        let perturbed = base
            .clone()
            .map_occasions(|o| {
                for x in &mut o[5..] {
                    x.panel.hb = 15.0;
                    x.panel.ferritin = Some(999.0);
                    x.esa_direction = Direction::Down;
                    x.is_active_weeks = 3;
                }
                // current occasion's own direction is the label, not an input
                o[4].esa_direction = Direction::Up;
            })
            .unwrap();
        assert_eq!(features_at(&base, 4, &cfg()).unwrap(), features_at(&perturbed, 4, &cfg()).unwrap());
    }

    #[test]
    fn example_count_per_patient() {
        for n in 3..9 {
            let t = timeline("a", &vec![10.0; n]);
            assert_eq!(patient_examples(&t, &cfg()).len(), n.saturating_sub(4));
        }
    }

    #[test]
    fn sequence_prev_links_previous_example() {
        let t = timeline("a", &[10.0, 10.1, 10.2, 10.3, 10.4, 10.5, 10.6]);
        let ex = patient_examples(&t, &cfg());
        assert!(ex[0].sequence_prev.is_none());
        assert_eq!(ex[1].sequence_prev.as_ref(), Some(&ex[0].features));
        assert_eq!(ex[2].sequence_prev.as_ref(), Some(&ex[1].features));
    }

    fn example_with(values: &[f64]) -> TrainingExample {
        let mut f = vec![0.0; 16];
        f[..values.len()].copy_from_slice(values);
        TrainingExample {
            patient_id: "x".into(),
            occasion_index: 4,
            features: FeatureVector(f),
            sequence_prev: None,
            esa_label: Direction::Stay,
            is_label: Direction::Stay,
        }
    }

    #[test]
    fn population_std_and_constant_components() {
        let ex = vec![example_with(&[1.0, 5.0]), example_with(&[3.0, 5.0])];
        let s = NormalizationStats::fit(&ex).unwrap();
        assert_eq!(s.mean[0], 2.0);
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.mean[1], 5.0);
        assert_eq!(s.std[1], 1.0);
        assert!(NormalizationStats::fit(&ex[..1]).is_err());
    }

    #[test]
    fn apply_and_invert() {
        let ex = vec![example_with(&[1.0, 2.0, 3.0]), example_with(&[4.0, 8.0, 5.5]), example_with(&[2.5, 1.0, 0.0])];
        let s = NormalizationStats::fit(&ex).unwrap();
        let mut mean_vec = FeatureVector(vec![0.0; 16]);
        mean_vec.0[..8].copy_from_slice(&s.mean);
        mean_vec.0[9] = 1.0;
        let z = s.apply(&mean_vec);
        assert!(z.0[..8].iter().all(|x| x.abs() < 1e-15));
        assert_eq!(z.0[9], 1.0);
        let x = ex[1].features.clone();
        let back = s.invert(&s.apply(&x));
        for (a, b) in back.0.iter().zip(&x.0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_columns_have_zero_mean() {
        let ex: Vec<_> = (0..50)
            .map(|i| {
                let i = i as f64;
                example_with(&[9.0 + 0.07 * i, 80.0 + (i * 1.3).sin(), 40.0 + i * i, 20.0, 0.1 * i, -0.2, 3.0, (i * 0.7).cos()])
            })
            .collect();
        let s = NormalizationStats::fit(&ex).unwrap();
        let z = s.apply_examples(&ex);
        for c in 0..CONTINUOUS_DIM {
            let m: f64 = z.iter().map(|e| e.features.0[c]).sum::<f64>() / z.len() as f64;
            assert!(m.abs() < 1e-9, "column {c} mean {m}");
        }
    }
}
