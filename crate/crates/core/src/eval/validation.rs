use std::collections::HashSet;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::audit::{categorize_before_physician, rates, DecisionAudit, RatesReport};
use super::roc::{roc_auto, select_threshold};
use crate::classifier::Threshold;
use crate::domain::{label_histogram, Cohort, Direction, Medication};
use crate::error::{Error, Result};
use crate::features::{build_examples, patient_examples, FeatureConfig, TrainingExample};
use crate::nn::{train, ClassWeights, ModelParameters, NetConfig};

/// Everything needed to fit one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpec {
    pub medication: Medication,
    pub features: FeatureConfig,
    pub network: NetConfig,
    pub class_weights: ClassWeights,
}

impl TrainingSpec {
    pub fn fit(&self, examples: &[TrainingExample]) -> Result<ModelParameters> {
        Ok(train(self.medication, &self.features, &self.network, examples, &self.class_weights)?.model)
    }

    pub fn with_weights(&self, class_weights: ClassWeights) -> Self {
        TrainingSpec {
            class_weights,
            ..self.clone()
        }
    }
}

/// How a fold picks its classification threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    Fixed { value: f64 },
    /// Nearest-corner point of the ROC curve over the fold's own training data.
    TrainingRoc,
}

impl ThresholdPolicy {
    pub fn default_for(medication: Medication) -> Self {
        ThresholdPolicy::Fixed {
            value: Threshold::default_for(medication).t,
        }
    }

    fn resolve(&self, model: &ModelParameters, training: &[TrainingExample]) -> Result<f64> {
        match *self {
            ThresholdPolicy::Fixed { value } => Ok(Threshold::new(value, model.medication)?.t),
            ThresholdPolicy::TrainingRoc => {
                let probs = model.predict(training)?;
                let refs: Vec<Direction> = training.iter().map(|e| label(e, model.medication)).collect();
                match roc_auto(&probs, &refs) {
                    Ok(curve) => Ok(select_threshold(&curve)),
                    Err(e) => {
                        let t = Threshold::default_for(model.medication).t;
                        warn!("training ROC unavailable ({e}); using threshold {t}");
                        Ok(t)
                    }
                }
            }
        }
    }
}

fn label(e: &TrainingExample, medication: Medication) -> Direction {
    match medication {
        Medication::Esa => e.esa_label,
        Medication::Iron => e.is_label,
    }
}

/// Trains on `training`, picks a threshold and audits `held_out`.
fn train_and_audit(
    spec: &TrainingSpec,
    training: &[TrainingExample],
    held_out: &[TrainingExample],
    policy: ThresholdPolicy,
) -> Result<(DecisionAudit, f64)> {
    let model = spec.fit(training)?;
    let threshold = policy.resolve(&model, training)?;
    let probs = model.predict(held_out)?;
    Ok((DecisionAudit::build(spec.medication, held_out, &probs, threshold), threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub patient_id: String,
    pub training_examples: usize,
    pub held_out_examples: usize,
    pub threshold: f64,
    pub rates: RatesReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LopoReport {
    pub medication: Medication,
    /// Rates over the union of all held-out decisions.
    pub aggregate: RatesReport,
    pub folds: Vec<FoldReport>,
    /// Patients without a usable occasion, for which no fold was run.
    pub skipped: Vec<String>,
    pub audit: DecisionAudit,
}

/// Leave-one-patient-out validation. Folds run in parallel and are merged in
/// cohort order, so the result does not depend on scheduling.
pub fn lopo(cohort: &Cohort, spec: &TrainingSpec, policy: ThresholdPolicy, lookahead: usize) -> Result<LopoReport> {
    if cohort.num_patients() < 2 {
        return Err(Error::InsufficientData(format!(
            "LOPO needs at least 2 patients, cohort {} has {}",
            cohort.name(),
            cohort.num_patients()
        )));
    }
    let per_patient: Vec<Vec<TrainingExample>> = cohort.patients().iter().map(|p| patient_examples(p, &spec.features)).collect();
    let mut skipped = Vec::new();
    let mut folds = Vec::new();
    for (i, p) in cohort.patients().iter().enumerate() {
        if per_patient[i].is_empty() {
            warn!("patient {} has no usable occasion; LOPO fold skipped", p.patient_id());
            skipped.push(p.patient_id().to_string());
        } else {
            folds.push(i);
        }
    }
    let n_folds = folds.len();
    let results: Vec<(DecisionAudit, FoldReport)> = folds
        .par_iter()
        .map(|&i| {
            let training: Vec<TrainingExample> = per_patient
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .flat_map(|(_, ex)| ex.iter().cloned())
                .collect();
            let held_out = &per_patient[i];
            let (audit, threshold) = train_and_audit(spec, &training, held_out, policy)?;
            let audit = categorize_before_physician(&audit, lookahead);
            let fold = FoldReport {
                patient_id: cohort.patients()[i].patient_id().to_string(),
                training_examples: training.len(),
                held_out_examples: held_out.len(),
                threshold,
                rates: rates(&audit)?,
            };
            info!(
                "LOPO {} fold {} of {n_folds}: r_total {:.3}",
                spec.medication, fold.patient_id, fold.rates.r_total
            );
            Ok((audit, fold))
        })
        .collect::<Result<_>>()?;
    let (audits, folds): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let audit = DecisionAudit::concat(spec.medication, audits);
    Ok(LopoReport {
        medication: spec.medication,
        aggregate: rates(&audit)?,
        folds,
        skipped,
        audit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdvReport {
    pub medication: Medication,
    pub training_cohort: String,
    pub validation_cohort: String,
    pub threshold: f64,
    pub rates: RatesReport,
    pub audit: DecisionAudit,
}

/// Trains once on `train_cohort` and audits every usable occasion of the
/// independent `valid_cohort`.
pub fn rdv(train_cohort: &Cohort, valid_cohort: &Cohort, spec: &TrainingSpec, policy: ThresholdPolicy, lookahead: usize) -> Result<RdvReport> {
    let train_ids: HashSet<&str> = train_cohort.patients().iter().map(|p| p.patient_id()).collect();
    let overlap: Vec<&str> = valid_cohort
        .patients()
        .iter()
        .map(|p| p.patient_id())
        .filter(|id| train_ids.contains(id))
        .collect();
    if !overlap.is_empty() {
        return Err(Error::Cohort(format!(
            "training and validation cohorts share patient ids: {}",
            overlap.join(", ")
        )));
    }
    let training = build_examples(train_cohort, &spec.features);
    let held_out = build_examples(valid_cohort, &spec.features);
    if held_out.is_empty() {
        return Err(Error::InsufficientData(format!(
            "validation cohort {} has no usable occasion",
            valid_cohort.name()
        )));
    }
    let (audit, threshold) = train_and_audit(spec, &training, &held_out, policy)?;
    let audit = categorize_before_physician(&audit, lookahead);
    Ok(RdvReport {
        medication: spec.medication,
        training_cohort: train_cohort.name().to_string(),
        validation_cohort: valid_cohort.name().to_string(),
        threshold,
        rates: rates(&audit)?,
        audit,
    })
}

/// Seeded patient-level split: returns (training, holdout) with
/// `ceil(fraction · N)` patients held out, at least one on each side.
pub fn holdout_split(cohort: &Cohort, fraction: f64, seed: u64) -> Result<(Cohort, Cohort)> {
    let n = cohort.num_patients();
    if n < 2 {
        return Err(Error::InsufficientData("a holdout split needs at least 2 patients".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    let mut ids: Vec<&str> = cohort.patients().iter().map(|p| p.patient_id()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held: HashSet<String> = ids[..k].iter().map(|s| s.to_string()).collect();
    let train = cohort.filter(format!("{}-train", cohort.name()), |p| !held.contains(p.patient_id()));
    let hold = cohort.filter(format!("{}-holdout", cohort.name()), |p| held.contains(p.patient_id()));
    Ok((train, hold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub holdout_fraction: f64,
    /// Factors tried on one minority-class weight at a time.
    pub multipliers: Vec<f64>,
    /// Passes over the minority classes; the search also stops after a pass
    /// without improvement.
    pub rounds: usize,
    /// Maximum number of trained models, including the starting point.
    pub budget: usize,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            holdout_fraction: 0.25,
            multipliers: vec![0.5, 0.75, 1.5, 2.0],
            rounds: 3,
            budget: 25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneTrial {
    pub weights: ClassWeights,
    pub min_rate: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub initial: ClassWeights,
    pub weights: ClassWeights,
    /// Holdout rates of the returned weights.
    pub rates: RatesReport,
    pub spread: f64,
    pub min_rate: f64,
    pub evaluations: usize,
    /// True when the budget ran out before the search converged.
    pub budget_exhausted: bool,
    pub trials: Vec<TuneTrial>,
}

/// Higher minimum class rate wins; equal minima prefer the smaller spread.
fn better(a: &TuneTrial, b: &TuneTrial) -> bool {
    a.min_rate > b.min_rate || (a.min_rate == b.min_rate && a.spread < b.spread)
}

/// Coordinate search over multiplicative adjustments of the minority-class
/// weights, starting from inverse-frequency weights of `cohort`. Each
/// candidate is trained on the training part of a patient-level split and
/// scored on the held-out part.
pub fn tune_class_weights(cohort: &Cohort, spec: &TrainingSpec, policy: ThresholdPolicy, config: &TuneConfig) -> Result<TuneOutcome> {
    let medication = spec.medication;
    let hist = label_histogram(cohort, medication);
    let counts: Vec<usize> = medication.classes().iter().map(|&d| hist.count(d)).collect();
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InsufficientData(format!(
            "class weight tuning needs every {medication} class; {} is absent",
            medication.classes()[k]
        )));
    }
    if config.budget == 0 {
        return Err(Error::Config("tuning budget must be at least 1".into()));
    }
    let majority = counts.iter().copied().max().expect("non-empty");
    let minority: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] < majority).collect();

    let (train_part, hold_part) = holdout_split(cohort, config.holdout_fraction, config.seed)?;
    let training = build_examples(&train_part, &spec.features);
    let held_out = build_examples(&hold_part, &spec.features);
    if held_out.is_empty() || training.is_empty() {
        return Err(Error::InsufficientData("tuning split left one side without usable occasions".into()));
    }

    let mut trials = Vec::new();
    let mut evaluate = |w: &ClassWeights| -> Result<(TuneTrial, RatesReport)> {
        let (audit, _) = train_and_audit(&spec.with_weights(w.clone()), &training, &held_out, policy)?;
        let r = rates(&audit)?;
        let trial = TuneTrial {
            weights: w.clone(),
            min_rate: r.min_class_rate(),
            spread: r.spread(),
        };
        info!("class weights {:?}: min rate {:.3}, spread {:.3}", w.0, trial.min_rate, trial.spread);
        trials.push(trial.clone());
        Ok((trial, r))
    };

    let initial = ClassWeights::inverse_frequency(&hist, medication);
    let (mut best, mut best_rates) = evaluate(&initial)?;
    let mut evaluations = 1;
    let mut exhausted = false;
    'search: for _ in 0..config.rounds {
        let mut improved = false;
        for &k in &minority {
            for &m in &config.multipliers {
                if evaluations >= config.budget {
                    exhausted = true;
                    break 'search;
                }
                let mut w = best.weights.clone();
                w.0[k] *= m;
                let (trial, r) = evaluate(&w)?;
                evaluations += 1;
                if better(&trial, &best) {
                    best = trial;
                    best_rates = r;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    if exhausted {
        warn!("class weight search budget of {} models exhausted; returning best so far", config.budget);
    }
    Ok(TuneOutcome {
        initial,
        weights: best.weights,
        spread: best.spread,
        min_rate: best.min_rate,
        rates: best_rates,
        evaluations,
        budget_exhausted: exhausted,
        trials,
    })
}
