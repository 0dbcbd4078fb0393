use log::{debug, warn};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::NetConfig;
use super::network::{self, Batch};
use super::params::{AdamHyper, AdamState, ParamSet, TensorDoc, TensorSpec};
use crate::domain::{Direction, LabelHistogram, Medication};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureVector, NormalizationStats, TrainingExample, CONTINUOUS_DIM};

pub const DOCUMENT_FORMAT: &str = "aisacs-model";
pub const DOCUMENT_VERSION: u32 = 1;

/// Softmax output. `p_down` is absent for the binary iron model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub p_up: f64,
    pub p_stay: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_down: Option<f64>,
}

impl ClassProbabilities {
    pub fn from_row(medication: Medication, row: &[f64]) -> Self {
        match medication {
            Medication::Esa => ClassProbabilities {
                p_up: row[0],
                p_stay: row[1],
                p_down: Some(row[2]),
            },
            Medication::Iron => ClassProbabilities {
                p_up: row[0],
                p_stay: row[1],
                p_down: None,
            },
        }
    }

    pub fn sum(&self) -> f64 {
        self.p_up + self.p_stay + self.p_down.unwrap_or(0.0)
    }

    /// True when every entry lies in [0, 1] and they sum to 1 within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        in_unit(self.p_up) && in_unit(self.p_stay) && self.p_down.map_or(true, in_unit) && (self.sum() - 1.0).abs() <= tol
    }

    pub fn get(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Up => self.p_up,
            Direction::Stay => self.p_stay,
            Direction::Down => self.p_down.unwrap_or(0.0),
        }
    }
}

/// Per-class loss multipliers, in [`Medication::classes`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(medication: Medication) -> Self {
        ClassWeights(vec![1.0; medication.classes().len()])
    }

    /// Majority count over class count, so the majority class weighs 1.
    /// Absent classes get weight 1.
    pub fn inverse_frequency(hist: &LabelHistogram, medication: Medication) -> Self {
        let counts: Vec<usize> = medication.classes().iter().map(|&d| hist.count(d)).collect();
        let max = counts.iter().copied().max().unwrap_or(0) as f64;
        ClassWeights(
            counts
                .iter()
                .map(|&c| if c == 0 { 1.0 } else { max / c as f64 })
                .collect(),
        )
    }

    pub fn get(&self, medication: Medication, direction: Direction) -> Option<f64> {
        medication.class_index(direction).map(|i| self.0[i])
    }

    fn check(&self, medication: Medication) -> Result<()> {
        let n = medication.classes().len();
        if self.0.len() != n {
            return Err(Error::Config(format!(
                "{medication} needs {n} class weights, got {}",
                self.0.len()
            )));
        }
        if self.0.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("class weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Provenance stored alongside the tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelMetadata {
    pub training_cohort: Option<String>,
    pub training_examples: usize,
    /// Threshold chosen from this model's ROC curve, if one was selected.
    pub selected_threshold: Option<f64>,
}

/// Everything a trained classifier needs to predict and to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub medication: Medication,
    pub features: FeatureConfig,
    pub network: NetConfig,
    pub normalization: NormalizationStats,
    pub class_weights: ClassWeights,
    pub params: ParamSet,
    pub optimizer: AdamState,
    pub metadata: ModelMetadata,
}

pub enum Mode<'a> {
    Infer,
    /// Dropout active, masks drawn from the given generator.
    Train(&'a mut ChaCha8Rng),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParameters,
    /// Mean mini-batch objective per epoch.
    pub loss_trace: Vec<f64>,
}

fn label_index(medication: Medication, e: &TrainingExample) -> usize {
    let label = match medication {
        Medication::Esa => e.esa_label,
        Medication::Iron => e.is_label,
    };
    medication.class_index(label).expect("validated label")
}

/// Normalized design matrices for a set of examples.
struct Design {
    current: Array2<f64>,
    previous: Option<Array2<f64>>,
    labels: Vec<usize>,
}

impl Design {
    fn build(examples: &[TrainingExample], stats: &NormalizationStats, medication: Medication, recurrent: bool, dim: usize) -> Design {
        let n = examples.len();
        let mut current = Array2::zeros((n, dim));
        let mut previous = if recurrent { Some(Array2::zeros((n, dim))) } else { None };
        let mut duplicated = 0usize;
        for (i, e) in examples.iter().enumerate() {
            let x = stats.apply(&e.features);
            current.row_mut(i).assign(&ndarray::ArrayView1::from(&x.0[..]));
            if let Some(prev) = previous.as_mut() {
                let p = match &e.sequence_prev {
                    Some(p) => stats.apply(p),
                    None => {
                        duplicated += 1;
                        x
                    }
                };
                prev.row_mut(i).assign(&ndarray::ArrayView1::from(&p.0[..]));
            }
        }
        if duplicated > 0 {
            debug!("{duplicated} examples lack a predecessor; current features used for both timesteps");
        }
        Design {
            current,
            previous,
            labels: examples.iter().map(|e| label_index(medication, e)).collect(),
        }
    }

    fn batch(&self, rows: &[usize]) -> Batch {
        Batch {
            current: self.current.select(Axis(0), rows),
            previous: self.previous.as_ref().map(|p| p.select(Axis(0), rows)),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    fn all(&self) -> Batch {
        Batch {
            current: self.current.clone(),
            previous: self.previous.clone(),
            labels: self.labels.clone(),
        }
    }
}

fn check_examples(medication: Medication, features: &FeatureConfig, examples: &[TrainingExample]) -> Result<()> {
    for e in examples {
        if e.features.len() != features.dim() {
            return Err(Error::Shape {
                field: "features".into(),
                message: format!(
                    "example {}@{} has {} components, expected {}",
                    e.patient_id,
                    e.occasion_index,
                    e.features.len(),
                    features.dim()
                ),
            });
        }
        if medication == Medication::Iron && e.is_label == Direction::Down {
            return Err(Error::Config(format!(
                "iron label DOWN at {}@{}",
                e.patient_id, e.occasion_index
            )));
        }
    }
    Ok(())
}

/// Trains a classifier from raw (unnormalized) examples. Normalization is
/// fitted on `examples` alone. Deterministic given the config seed and data.
pub fn train(
    medication: Medication,
    features: &FeatureConfig,
    network_config: &NetConfig,
    examples: &[TrainingExample],
    class_weights: &ClassWeights,
) -> Result<TrainOutcome> {
    network_config.validate()?;
    class_weights.check(medication)?;
    let d = network_config.dense();
    if d.input_dim != features.dim() {
        return Err(Error::Config(format!(
            "network input_dim {} does not match the {} feature components",
            d.input_dim,
            features.dim()
        )));
    }
    if d.output_classes != medication.classes().len() {
        return Err(Error::Config(format!(
            "{medication} needs {} output classes, config has {}",
            medication.classes().len(),
            d.output_classes
        )));
    }
    check_examples(medication, features, examples)?;
    let normalization = NormalizationStats::fit(examples)?;
    let design = Design::build(
        examples,
        &normalization,
        medication,
        network_config.cell_width().is_some(),
        features.dim(),
    );
    for (k, &class) in medication.classes().iter().enumerate() {
        if !design.labels.contains(&k) {
            warn!("no {medication} training example labelled {class}");
        }
    }

    let specs = network::layout(network_config);
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
    let mut params = network::init_params(network_config, &mut rng);
    let mut optimizer = AdamState::new(&params);
    let hyper = AdamHyper::new(d.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trace = Vec::with_capacity(d.epochs);

    for epoch in 0..d.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for rows in order.chunks(d.batch_size) {
            let batch = design.batch(rows);
            let cache = network::forward(network_config, &params, &batch, Some(&mut rng));
            let (loss, grads) = network::backward(network_config, &params, &batch, &cache, &class_weights.0);
            if !loss.is_finite() {
                trace.push(loss);
                return Err(Error::Diverged { epoch, loss, trace });
            }
            optimizer.step(&mut params, &grads, &specs, &hyper)?;
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        trace.push(mean);
        if !params.all_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: mean,
                trace,
            });
        }
    }

    Ok(TrainOutcome {
        model: ModelParameters {
            medication,
            features: *features,
            network: network_config.clone(),
            normalization,
            class_weights: class_weights.clone(),
            params,
            optimizer,
            metadata: ModelMetadata {
                training_examples: examples.len(),
                ..ModelMetadata::default()
            },
        },
        loss_trace: trace,
    })
}

impl ModelParameters {
    pub fn layout(&self) -> Vec<TensorSpec> {
        network::layout(&self.network)
    }

    pub fn is_recurrent(&self) -> bool {
        self.network.cell_width().is_some()
    }

    /// Class probabilities for already-normalized features.
    pub fn forward(&self, features: &FeatureVector, sequence_prev: Option<&FeatureVector>, mode: Mode<'_>) -> Result<ClassProbabilities> {
        let dim = self.network.dense().input_dim;
        for (name, v) in [("features", Some(features)), ("sequence_prev", sequence_prev)] {
            if let Some(v) = v {
                if v.len() != dim {
                    return Err(Error::Shape {
                        field: name.into(),
                        message: format!("expected {dim} components, got {}", v.len()),
                    });
                }
            }
        }
        let row = |v: &FeatureVector| Array2::from_shape_vec((1, dim), v.0.clone()).expect("length checked");
        let previous = if self.is_recurrent() {
            Some(match sequence_prev {
                Some(p) => row(p),
                None => {
                    debug!("no predecessor occasion; duplicating current features");
                    row(features)
                }
            })
        } else {
            None
        };
        let batch = Batch {
            current: row(features),
            previous,
            labels: vec![],
        };
        let cache = match mode {
            Mode::Infer => network::forward_infer(&self.network, &self.params, &batch),
            Mode::Train(rng) => network::forward(&self.network, &self.params, &batch, Some(rng)),
        };
        let p = cache.probabilities.row(0).to_vec();
        Ok(ClassProbabilities::from_row(self.medication, &p))
    }

    /// Inference over raw examples; normalization is applied here.
    pub fn predict(&self, examples: &[TrainingExample]) -> Result<Vec<ClassProbabilities>> {
        if examples.is_empty() {
            return Ok(Vec::new());
        }
        for e in examples {
            if e.features.len() != self.features.dim() {
                return Err(Error::Shape {
                    field: "features".into(),
                    message: format!("expected {} components, got {}", self.features.dim(), e.features.len()),
                });
            }
        }
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(512) {
            let design = Design::build(chunk, &self.normalization, self.medication, self.is_recurrent(), self.features.dim());
            let batch = Batch {
                current: design.current,
                previous: design.previous,
                labels: vec![],
            };
            let cache = network::forward_infer(&self.network, &self.params, &batch);
            for row in cache.probabilities.rows() {
                out.push(ClassProbabilities::from_row(self.medication, row.as_slice().expect("contiguous")));
            }
        }
        Ok(out)
    }

    /// Dropout-free objective over raw examples (labels must be valid).
    pub fn loss(&self, examples: &[TrainingExample]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::InsufficientData("loss of an empty batch".into()));
        }
        check_examples(self.medication, &self.features, examples)?;
        let design = Design::build(examples, &self.normalization, self.medication, self.is_recurrent(), self.features.dim());
        Ok(network::loss(&self.network, &self.params, &design.all(), &self.class_weights.0))
    }

    /// One Adam step on a batch of raw examples, dropout drawn from `rng`.
    pub fn backward_and_step(&mut self, examples: &[TrainingExample], rng: &mut ChaCha8Rng) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        check_examples(self.medication, &self.features, examples)?;
        let design = Design::build(examples, &self.normalization, self.medication, self.is_recurrent(), self.features.dim());
        let batch = design.all();
        let cache = network::forward(&self.network, &self.params, &batch, Some(rng));
        let (loss, grads) = network::backward(&self.network, &self.params, &batch, &cache, &self.class_weights.0);
        let hyper = AdamHyper::new(self.network.dense().learning_rate);
        let layout = self.layout();
        self.optimizer.step(&mut self.params, &grads, &layout, &hyper)?;
        Ok(loss)
    }

    pub fn save(&self) -> Vec<u8> {
        let layout = self.layout();
        let doc = ModelDocument {
            format: DOCUMENT_FORMAT.to_string(),
            version: DOCUMENT_VERSION,
            medication: self.medication,
            features: self.features,
            network: self.network.clone(),
            normalization: self.normalization.clone(),
            class_weights: self.class_weights.clone(),
            tensors: TensorDoc::from_set(&self.params, &layout),
            optimizer: OptimizerDoc {
                step: self.optimizer.step,
                first_moment: TensorDoc::from_set(&self.optimizer.first_moment, &layout),
                second_moment: TensorDoc::from_set(&self.optimizer.second_moment, &layout),
            },
            metadata: self.metadata.clone(),
        };
        serde_json::to_vec(&doc).expect("model document serializes")
    }

    pub fn load(bytes: &[u8]) -> Result<ModelParameters> {
        let doc_err = |field: &str, message: String| Error::Document {
            field: field.to_string(),
            message,
        };
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| doc_err("document", e.to_string()))?;
        match value.get("format").and_then(|v| v.as_str()) {
            Some(DOCUMENT_FORMAT) => {}
            other => return Err(doc_err("format", format!("expected {DOCUMENT_FORMAT:?}, found {other:?}"))),
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == DOCUMENT_VERSION as u64 => {}
            other => return Err(doc_err("version", format!("expected {DOCUMENT_VERSION}, found {other:?}"))),
        }
        let doc: ModelDocument = serde_json::from_value(value).map_err(|e| doc_err("document", e.to_string()))?;
        doc.network.validate()?;
        let layout = network::layout(&doc.network);
        let d = doc.network.dense();
        if d.output_classes != doc.medication.classes().len() {
            return Err(Error::Shape {
                field: "network.output_classes".into(),
                message: format!("{} output classes for a {} model", d.output_classes, doc.medication),
            });
        }
        if d.input_dim != doc.features.dim() {
            return Err(Error::Shape {
                field: "network.input_dim".into(),
                message: format!("{} inputs for {} feature components", d.input_dim, doc.features.dim()),
            });
        }
        if doc.normalization.mean.len() != CONTINUOUS_DIM || doc.normalization.std.len() != CONTINUOUS_DIM {
            return Err(Error::Shape {
                field: "normalization".into(),
                message: format!("expected {CONTINUOUS_DIM} means and deviations"),
            });
        }
        doc.class_weights.check(doc.medication).map_err(|e| Error::Shape {
            field: "class_weights".into(),
            message: e.to_string(),
        })?;
        let params = TensorDoc::to_set(&doc.tensors, &layout, "tensors")?;
        let first_moment = TensorDoc::to_set(&doc.optimizer.first_moment, &layout, "optimizer.first_moment")?;
        let second_moment = TensorDoc::to_set(&doc.optimizer.second_moment, &layout, "optimizer.second_moment")?;
        Ok(ModelParameters {
            medication: doc.medication,
            features: doc.features,
            network: doc.network,
            normalization: doc.normalization,
            class_weights: doc.class_weights,
            params,
            optimizer: AdamState {
                first_moment,
                second_moment,
                step: doc.optimizer.step,
            },
            metadata: doc.metadata,
        })
    }

    /// Loads a document and checks it was trained for `medication`.
    pub fn load_for(bytes: &[u8], medication: Medication) -> Result<ModelParameters> {
        let model = Self::load(bytes)?;
        if model.medication != medication {
            return Err(Error::Shape {
                field: "medication".into(),
                message: format!(
                    "document holds a {} model with {} outputs; a {medication} model needs {}",
                    model.medication,
                    model.network.dense().output_classes,
                    medication.classes().len()
                ),
            });
        }
        Ok(model)
    }
}

/// Short content hash identifying a model document.
pub fn version_id(document: &[u8]) -> String {
    let digest = Sha256::digest(document);
    hex::encode(&digest[..8])
}

#[derive(Serialize, Deserialize)]
struct OptimizerDoc {
    step: u64,
    first_moment: Vec<TensorDoc>,
    second_moment: Vec<TensorDoc>,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    medication: Medication,
    features: FeatureConfig,
    network: NetConfig,
    normalization: NormalizationStats,
    class_weights: ClassWeights,
    tensors: Vec<TensorDoc>,
    optimizer: OptimizerDoc,
    metadata: ModelMetadata,
}
