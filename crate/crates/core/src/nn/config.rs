use serde::{Deserialize, Serialize};

use crate::domain::Medication;
use crate::error::{Error, Result};

/// Feed-forward classifier hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenseNetConfig {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub units_per_layer: usize,
    pub dropout_rate: f64,
    /// Multiplies the plain sum of absolute weight values (biases excluded).
    pub l1_coefficient: f64,
    pub output_classes: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DenseNetConfig {
    fn default() -> Self {
        DenseNetConfig {
            input_dim: 16,
            hidden_layers: 10,
            units_per_layer: 512,
            dropout_rate: 0.20,
            l1_coefficient: 0.3,
            output_classes: 3,
            learning_rate: 1e-3,
            epochs: 1000,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl DenseNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.input_dim == 0 || self.units_per_layer == 0 || self.output_classes < 2 {
            return bad("input_dim and units_per_layer must be positive, output_classes at least 2");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.l1_coefficient >= 0.0 && self.l1_coefficient.is_finite()) {
            return bad("l1_coefficient must be non-negative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

/// Recurrent classifier: an LSTM cell over two successive occasions feeding
/// the dense stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecurrentNetConfig {
    pub dense: DenseNetConfig,
    pub sequence_len: usize,
    pub cell_width: usize,
}

impl Default for RecurrentNetConfig {
    fn default() -> Self {
        RecurrentNetConfig {
            dense: DenseNetConfig {
                output_classes: 2,
                ..DenseNetConfig::default()
            },
            sequence_len: 2,
            cell_width: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "snake_case")]
pub enum NetConfig {
    Dense(DenseNetConfig),
    Recurrent(RecurrentNetConfig),
}

impl NetConfig {
    /// The default architecture for a medication: dense for ESA, recurrent for iron.
    pub fn for_medication(medication: Medication) -> NetConfig {
        match medication {
            Medication::Esa => NetConfig::Dense(DenseNetConfig::default()),
            Medication::Iron => NetConfig::Recurrent(RecurrentNetConfig::default()),
        }
    }

    pub fn dense(&self) -> &DenseNetConfig {
        match self {
            NetConfig::Dense(d) => d,
            NetConfig::Recurrent(r) => &r.dense,
        }
    }

    pub fn dense_mut(&mut self) -> &mut DenseNetConfig {
        match self {
            NetConfig::Dense(d) => d,
            NetConfig::Recurrent(r) => &mut r.dense,
        }
    }

    pub fn cell_width(&self) -> Option<usize> {
        match self {
            NetConfig::Dense(_) => None,
            NetConfig::Recurrent(r) => Some(r.cell_width),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dense().validate()?;
        if let NetConfig::Recurrent(r) = self {
            if r.sequence_len != 2 {
                return Err(Error::Config(format!(
                    "recurrent model consumes exactly 2 timesteps, sequence_len = {}",
                    r.sequence_len
                )));
            }
            if r.cell_width == 0 {
                return Err(Error::Config("cell_width must be positive".into()));
            }
        }
        Ok(())
    }

    /// Scales every width and the schedule, keeping the architecture. Used by
    /// desk-scale runs and tests.
    pub fn scaled(mut self, hidden_layers: usize, units: usize, epochs: usize) -> NetConfig {
        if let NetConfig::Recurrent(r) = &mut self {
            r.cell_width = units;
        }
        let d = self.dense_mut();
        d.hidden_layers = hidden_layers;
        d.units_per_layer = units;
        d.epochs = epochs;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_network_sizes() {
        let d = DenseNetConfig::default();
        assert_eq!((d.input_dim, d.hidden_layers, d.units_per_layer, d.epochs), (16, 10, 512, 1000));
        assert_eq!(d.dropout_rate, 0.20);
        assert_eq!(d.l1_coefficient, 0.3);
        assert_eq!(RecurrentNetConfig::default().dense.output_classes, 2);
        assert_eq!(RecurrentNetConfig::default().sequence_len, 2);
    }

    #[test]
    fn rejects_bad_values() {
        let mut d = DenseNetConfig::default();
        d.dropout_rate = 1.0;
        assert!(d.validate().is_err());
        let mut r = RecurrentNetConfig::default();
        r.sequence_len = 3;
        assert!(NetConfig::Recurrent(r).validate().is_err());
    }

    #[test]
    fn tagged_json() {
        let json = serde_json::to_value(NetConfig::for_medication(Medication::Iron)).unwrap();
        assert_eq!(json["architecture"], "recurrent");
        assert_eq!(json["cell_width"], 512);
    }
}
