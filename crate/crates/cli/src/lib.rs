//! Command-line workflow: generate, rectify, train, validate, analyze,
//! recommend and serve.

pub mod commands;
pub mod config;
pub mod service;

use std::net::IpAddr;
use std::path::PathBuf;

use aisacs_core::synth::Preset;
use aisacs_core::Medication;
use clap::{Parser, Subcommand, ValueEnum};

pub use config::{ConfigArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "aisacs", version, about = "Anemia-control decision support: learn and recommend ESA/iron directions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MedicationArg {
    Esa,
    Is,
    Both,
}

impl MedicationArg {
    pub fn medications(self) -> Vec<Medication> {
        match self {
            MedicationArg::Esa => vec![Medication::Esa],
            MedicationArg::Is => vec![Medication::Iron],
            MedicationArg::Both => vec![Medication::Esa, Medication::Iron],
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic cohorts with ground truth, delayed variant and manifest.
    Synth {
        /// Presets to generate (s1, s2, k1); all when omitted.
        #[arg(long = "preset")]
        presets: Vec<Preset>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        occasions: Option<usize>,
        /// Probability that a decision is recorded late.
        #[arg(long)]
        p_delay: Option<f64>,
    },
    /// Ingest a cohort CSV and report counts and invariant warnings.
    ValidateData {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Move delayed decisions back to the occasion they were based on.
    Rectify {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// CSV log of every move.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Fill missing ESA lags with the band-crossing heuristic first.
        #[arg(long)]
        heuristic: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train one or both classifiers.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        medication: MedicationArg,
        /// Skip rectification.
        #[arg(long)]
        raw: bool,
        /// Store the nearest-corner ROC threshold on the training data in the model.
        #[arg(long)]
        select_threshold: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Leave-one-patient-out validation.
    Lopo {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        medication: MedicationArg,
        #[arg(long)]
        raw: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train on one cohort, validate on an independent one.
    Rdv {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        validate: PathBuf,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        medication: MedicationArg,
        /// Skip rectification of the training cohort.
        #[arg(long)]
        raw: bool,
        /// Also rectify the validation cohort.
        #[arg(long)]
        rectify_validation: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// ROC curve of a trained model on a cohort, plus the selected threshold.
    Roc {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        max_lag: Option<usize>,
    },
    /// Search class weights on a patient-level holdout split.
    TuneWeights {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        medication: MedicationArg,
        #[arg(long)]
        raw: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Project training examples onto their leading principal components.
    Pca {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = aisacs_core::eval::DEFAULT_COMPONENTS)]
        k: usize,
        #[arg(long)]
        raw: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Recommend directions for the latest occasion of one timeline.
    Recommend {
        #[arg(long)]
        esa_model: PathBuf,
        #[arg(long)]
        is_model: PathBuf,
        /// Timeline as JSON ({patient_id, occasions}) or cohort CSV.
        #[arg(long)]
        timeline: PathBuf,
        /// Patient to pick from a multi-patient CSV.
        #[arg(long)]
        patient: Option<String>,
        #[arg(long)]
        threshold_esa: Option<f64>,
        #[arg(long)]
        threshold_is: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        esa_model: Option<PathBuf>,
        #[arg(long)]
        is_model: Option<PathBuf>,
        /// Synthetic cohort manifest reported by /api/model-info.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

/// Machine-readable category of a failure: the core error category when
/// one is in the chain, otherwise io, config or internal.
pub fn error_category(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<aisacs_core::Error>() {
            return e.category();
        }
        if cause.is::<toml::de::Error>() {
            return "config";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "internal"
}

/// One-line JSON error report written to stderr on failure.
pub fn error_report(err: &anyhow::Error) -> String {
    serde_json::json!({
        "error": {
            "category": error_category(err),
            "message": format!("{err:#}"),
        }
    })
    .to_string()
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    commands::dispatch(cli.command)
}
