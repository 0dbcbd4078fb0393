//! Recommendation for the latest occasion of one patient.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify, Threshold};
use crate::domain::{Direction, Medication, PatientTimeline};
use crate::error::{Error, Result};
use crate::features::{features_at, FeatureConfig};
use crate::nn::{version_id, ClassProbabilities, Mode, ModelParameters};

/// Classification thresholds per medication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub esa: f64,
    pub is: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            esa: Threshold::default_for(Medication::Esa).t,
            is: Threshold::default_for(Medication::Iron).t,
        }
    }
}

impl Thresholds {
    pub fn get(&self, medication: Medication) -> f64 {
        match medication {
            Medication::Esa => self.esa,
            Medication::Iron => self.is,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Threshold::new(self.esa, Medication::Esa)?;
        Threshold::new(self.is, Medication::Iron)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedicationRecommendation {
    pub probabilities: ClassProbabilities,
    pub direction: Direction,
    pub threshold: f64,
    pub model_version: String,
}

/// Raw (unnormalized) inputs the networks saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSnapshot {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    /// Previous occasion's features, fed to the recurrent iron model.
    pub previous: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub patient_id: String,
    pub occasion_index: usize,
    pub exam_date: NaiveDate,
    pub esa: MedicationRecommendation,
    pub is: MedicationRecommendation,
    pub features: FeatureSnapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhatIfRow {
    pub threshold: f64,
    pub esa: Direction,
    pub is: Direction,
}

/// A pair of trained models sharing one feature configuration.
#[derive(Debug, Clone)]
pub struct Recommender {
    esa: ModelParameters,
    is: ModelParameters,
    esa_version: String,
    is_version: String,
}

impl Recommender {
    pub fn new(esa: ModelParameters, is: ModelParameters) -> Result<Self> {
        if esa.medication != Medication::Esa || is.medication != Medication::Iron {
            return Err(Error::Config(format!(
                "expected an ESA and an IS model, got {} and {}",
                esa.medication, is.medication
            )));
        }
        if esa.features != is.features {
            return Err(Error::Config(format!(
                "models disagree on the feature configuration: ESA {:?}, IS {:?}",
                esa.features, is.features
            )));
        }
        let esa_version = version_id(&esa.save());
        let is_version = version_id(&is.save());
        Ok(Recommender {
            esa,
            is,
            esa_version,
            is_version,
        })
    }

    /// Loads both models from their document bytes. Versions hash the bytes
    /// as given, so any edit to a model file changes its version.
    pub fn from_documents(esa: &[u8], is: &[u8]) -> Result<Self> {
        let mut r = Recommender::new(
            ModelParameters::load_for(esa, Medication::Esa)?,
            ModelParameters::load_for(is, Medication::Iron)?,
        )?;
        r.esa_version = version_id(esa);
        r.is_version = version_id(is);
        Ok(r)
    }

    pub fn model(&self, medication: Medication) -> &ModelParameters {
        match medication {
            Medication::Esa => &self.esa,
            Medication::Iron => &self.is,
        }
    }

    pub fn version(&self, medication: Medication) -> &str {
        match medication {
            Medication::Esa => &self.esa_version,
            Medication::Iron => &self.is_version,
        }
    }

    pub fn features(&self) -> &FeatureConfig {
        &self.esa.features
    }

    /// Thresholds selected at training time, falling back to the defaults.
    pub fn stored_thresholds(&self) -> Thresholds {
        let d = Thresholds::default();
        Thresholds {
            esa: self.esa.metadata.selected_threshold.unwrap_or(d.esa),
            is: self.is.metadata.selected_threshold.unwrap_or(d.is),
        }
    }

    /// Recommends directions for the latest occasion of `timeline`.
    pub fn recommend(&self, timeline: &PatientTimeline, thresholds: &Thresholds) -> Result<Recommendation> {
        thresholds.validate()?;
        let cfg = self.features();
        let need = cfg.min_occasions().max(2);
        if timeline.len() < need {
            return Err(Error::TooShortTimeline {
                have: timeline.len(),
                need,
            });
        }
        let t = timeline.len() - 1;
        let raw = features_at(timeline, t, cfg)?;
        let raw_prev = if t > cfg.history_len {
            Some(features_at(timeline, t - 1, cfg)?)
        } else {
            None
        };
        let run = |m: &ModelParameters, version: &str| -> Result<MedicationRecommendation> {
            let x = m.normalization.apply(&raw);
            let prev = raw_prev.as_ref().map(|p| m.normalization.apply(p));
            let probabilities = m.forward(&x, prev.as_ref(), Mode::Infer)?;
            let threshold = thresholds.get(m.medication);
            Ok(MedicationRecommendation {
                probabilities,
                direction: classify(m.medication, &probabilities, threshold),
                threshold,
                model_version: version.to_string(),
            })
        };
        let last = &timeline.occasions()[t];
        Ok(Recommendation {
            patient_id: timeline.patient_id().to_string(),
            occasion_index: last.occasion_index,
            exam_date: last.exam_date,
            esa: run(&self.esa, &self.esa_version)?,
            is: run(&self.is, &self.is_version)?,
            features: FeatureSnapshot {
                names: cfg.column_names(),
                values: raw.0,
                previous: raw_prev.map(|p| p.0),
            },
        })
    }
}

/// Directions the stored probabilities give at each threshold in `sweep`.
pub fn what_if(esa: &ClassProbabilities, is: &ClassProbabilities, sweep: &[f64]) -> Vec<WhatIfRow> {
    sweep
        .iter()
        .map(|&t| WhatIfRow {
            threshold: t,
            esa: classify(Medication::Esa, esa, t),
            is: classify(Medication::Iron, is, t),
        })
        .collect()
}

pub fn what_if_threshold(recommendation: &Recommendation, sweep: &[f64]) -> Vec<WhatIfRow> {
    what_if(&recommendation.esa.probabilities, &recommendation.is.probabilities, sweep)
}

/// `n` evenly spaced thresholds from 0 to 1 inclusive.
pub fn uniform_sweep(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}
