//! One declarative run configuration, read from TOML and overridden by flags.

use std::path::{Path, PathBuf};

use aisacs_core::eval::{ThresholdPolicy, TrainingSpec, TuneConfig, DEFAULT_LOOKAHEAD};
use aisacs_core::rectifier::DEFAULT_MAX_LAG;
use aisacs_core::{ClassWeights, Error as CoreError, FeatureConfig, LabelHistogram, Medication, NetConfig, Thresholds};
use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub features: FeatureConfig,
    pub esa_network: NetConfig,
    pub is_network: NetConfig,
    pub thresholds: Thresholds,
    pub class_weights: ClassWeightSettings,
    pub rectify: RectifySettings,
    pub evaluation: EvaluationSettings,
    pub tuning: TuneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            features: FeatureConfig::default(),
            esa_network: NetConfig::for_medication(Medication::Esa),
            is_network: NetConfig::for_medication(Medication::Iron),
            thresholds: Thresholds::default(),
            class_weights: ClassWeightSettings::default(),
            rectify: RectifySettings::default(),
            evaluation: EvaluationSettings::default(),
            tuning: TuneConfig::default(),
        }
    }
}

/// Explicit per-class weights in UP, STAY[, DOWN] order. Absent means
/// inverse class frequency of the training data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassWeightSettings {
    pub esa: Option<Vec<f64>>,
    pub is: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RectifySettings {
    pub max_lag: usize,
    /// Fill missing ESA lags with the band-crossing heuristic.
    pub heuristic: bool,
    pub target_low: f64,
    pub target_high: f64,
}

impl Default for RectifySettings {
    fn default() -> Self {
        RectifySettings {
            max_lag: DEFAULT_MAX_LAG,
            heuristic: false,
            target_low: 10.0,
            target_high: 12.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSelection {
    /// Use `thresholds.esa` / `thresholds.is`.
    Fixed,
    /// Nearest-corner ROC point on each fold's training data.
    TrainingRoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub lookahead: usize,
    pub threshold_selection: ThresholdSelection,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            lookahead: DEFAULT_LOOKAHEAD,
            threshold_selection: ThresholdSelection::Fixed,
        }
    }
}

/// Flags shared by every subcommand that trains or evaluates.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for both networks.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    /// Units per hidden layer; also the LSTM cell width.
    #[arg(long)]
    pub units: Option<usize>,
    /// L1 coefficient for both networks.
    #[arg(long)]
    pub l1: Option<f64>,
    #[arg(long)]
    pub threshold_esa: Option<f64>,
    #[arg(long)]
    pub threshold_is: Option<f64>,
    #[arg(long)]
    pub lookahead: Option<usize>,
    #[arg(long)]
    pub max_lag: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        RunConfig::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Defaults, then the config file, then flags. The result is logged.
    pub fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
        let mut cfg = match &args.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(args);
        cfg.normalize();
        cfg.validate()?;
        log::info!("resolved configuration:\n{}", cfg.to_toml());
        Ok(cfg)
    }

    pub fn apply(&mut self, args: &ConfigArgs) {
        for net in [&mut self.esa_network, &mut self.is_network] {
            if let Some(u) = args.units {
                if let NetConfig::Recurrent(r) = net {
                    r.cell_width = u;
                }
            }
            let d = net.dense_mut();
            if let Some(s) = args.seed {
                d.seed = s;
            }
            if let Some(e) = args.epochs {
                d.epochs = e;
            }
            if let Some(h) = args.hidden_layers {
                d.hidden_layers = h;
            }
            if let Some(u) = args.units {
                d.units_per_layer = u;
            }
            if let Some(l) = args.l1 {
                d.l1_coefficient = l;
            }
        }
        if let Some(t) = args.threshold_esa {
            self.thresholds.esa = t;
        }
        if let Some(t) = args.threshold_is {
            self.thresholds.is = t;
        }
        if let Some(l) = args.lookahead {
            self.evaluation.lookahead = l;
        }
        if let Some(l) = args.max_lag {
            self.rectify.max_lag = l;
        }
    }

    /// Input width and class count follow from the features and medication.
    pub fn normalize(&mut self) {
        let dim = self.features.dim();
        for (net, med) in [(&mut self.esa_network, Medication::Esa), (&mut self.is_network, Medication::Iron)] {
            let d = net.dense_mut();
            d.input_dim = dim;
            d.output_classes = med.classes().len();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.esa_network.validate()?;
        self.is_network.validate()?;
        self.thresholds.validate()?;
        if self.rectify.max_lag == 0 {
            return Err(CoreError::Config("rectify.max_lag must be at least 1".into()).into());
        }
        if self.features.history_len == 0 {
            return Err(CoreError::Config("features.history_len must be at least 1".into()).into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn network(&self, medication: Medication) -> &NetConfig {
        match medication {
            Medication::Esa => &self.esa_network,
            Medication::Iron => &self.is_network,
        }
    }

    /// Configured weights, or inverse frequency of `histogram`.
    pub fn class_weights(&self, medication: Medication, histogram: &LabelHistogram) -> ClassWeights {
        let explicit = match medication {
            Medication::Esa => &self.class_weights.esa,
            Medication::Iron => &self.class_weights.is,
        };
        match explicit {
            Some(w) => ClassWeights(w.clone()),
            None => ClassWeights::inverse_frequency(histogram, medication),
        }
    }

    pub fn training_spec(&self, medication: Medication, histogram: &LabelHistogram) -> TrainingSpec {
        TrainingSpec {
            medication,
            features: self.features,
            network: self.network(medication).clone(),
            class_weights: self.class_weights(medication, histogram),
        }
    }

    pub fn threshold_policy(&self, medication: Medication) -> ThresholdPolicy {
        match self.evaluation.threshold_selection {
            ThresholdSelection::Fixed => ThresholdPolicy::Fixed {
                value: self.thresholds.get(medication),
            },
            ThresholdSelection::TrainingRoc => ThresholdPolicy::TrainingRoc,
        }
    }
}
