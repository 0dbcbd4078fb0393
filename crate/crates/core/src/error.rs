use thiserror::Error;

/// Errors raised by the core pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("validation error for patient {patient_id} at occasion {occasion}: {message}")]
    Validation {
        patient_id: String,
        occasion: usize,
        message: String,
    },

    #[error("invalid cohort: {0}")]
    Cohort(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("timeline too short: {have} occasions, need at least {need}")]
    TooShortTimeline { have: usize, need: usize },

    #[error("shape mismatch in {field}: {message}")]
    Shape { field: String, message: String },

    #[error("model document error in {field}: {message}")]
    Document { field: String, message: String },

    #[error("non-finite gradient in {layer}")]
    NonFiniteGradient { layer: String },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged {
        epoch: usize,
        loss: f64,
        trace: Vec<f64>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("simulation invalid for patient {patient_id}: {message}")]
    Simulation { patient_id: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, used by the CLI and the HTTP service.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation { .. } | Error::Cohort(_) => "validation",
            Error::InsufficientData(_) => "insufficient_data",
            Error::TooShortTimeline { .. } => "too_short_timeline",
            Error::Shape { .. } | Error::Document { .. } => "model_document",
            Error::NonFiniteGradient { .. } | Error::Diverged { .. } => "training",
            Error::Config(_) => "config",
            Error::Evaluation(_) => "evaluation",
            Error::Simulation { .. } => "simulation",
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
