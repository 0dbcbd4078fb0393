//! HTTP inference service: recommendations, what-if sweeps and model metadata.
//!
//! Models are loaded once at startup and never mutated; every handler reads
//! shared immutable state.

use std::sync::Arc;

use aisacs_core::nn::version_id;
use aisacs_core::pipeline::{uniform_sweep, what_if, WhatIfRow};
use aisacs_core::{
    ClassProbabilities, Error as CoreError, FeatureConfig, Medication, NetConfig, OccasionRecord, PatientTimeline,
    Recommendation, Recommender, Thresholds,
};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

/// Tolerance on the sum of submitted probabilities.
pub const PROBABILITY_TOLERANCE: f64 = 1e-6;

/// Sweep length when a what-if request names neither `sweep` nor `points`.
pub const DEFAULT_SWEEP_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub category: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub detail: serde_json::Value,
}

struct Failure {
    status: StatusCode,
    body: ApiError,
}

impl Failure {
    fn new(status: StatusCode, category: &str, message: impl Into<String>) -> Self {
        Failure {
            status,
            body: ApiError {
                category: category.into(),
                message: message.into(),
                detail: serde_json::Value::Null,
            },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Failure::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn detail(mut self, detail: serde_json::Value) -> Self {
        self.body.detail = detail;
        self
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let message = e.to_string();
        match e {
            CoreError::TooShortTimeline { have, need } => {
                Failure::new(StatusCode::UNPROCESSABLE_ENTITY, "too_short_timeline", message)
                    .detail(serde_json::json!({ "have": have, "need": need }))
            }
            CoreError::Validation {
                patient_id, occasion, ..
            } => Failure::bad_request(message)
                .detail(serde_json::json!({ "patient_id": patient_id, "occasion": occasion })),
            CoreError::Parse { .. } | CoreError::Config(_) | CoreError::Cohort(_) => Failure::bad_request(message),
            _ => Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub medication: Medication,
    pub version: String,
    pub network: NetConfig,
    pub training_cohort: Option<String>,
    pub training_examples: usize,
    pub selected_threshold: Option<f64>,
}

/// Returned by `GET /api/model-info`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub esa: ModelSummary,
    pub is: ModelSummary,
    /// Hash over both model documents.
    pub config_hash: String,
    pub features: FeatureConfig,
    /// Thresholds used when a request does not supply its own.
    pub thresholds: Thresholds,
    /// Synthetic cohort manifest of the training data, when supplied at startup.
    pub manifest: Option<serde_json::Value>,
}

pub struct LoadedModels {
    recommender: Recommender,
    info: ModelInfo,
}

impl LoadedModels {
    /// Loads both model documents; `manifest` is passed through to model-info.
    pub fn from_documents(esa: &[u8], is: &[u8], manifest: Option<serde_json::Value>) -> aisacs_core::Result<Self> {
        let recommender = Recommender::from_documents(esa, is)?;
        let summary = |m: Medication| {
            let model = recommender.model(m);
            ModelSummary {
                medication: m,
                version: recommender.version(m).to_string(),
                network: model.network.clone(),
                training_cohort: model.metadata.training_cohort.clone(),
                training_examples: model.metadata.training_examples,
                selected_threshold: model.metadata.selected_threshold,
            }
        };
        let info = ModelInfo {
            esa: summary(Medication::Esa),
            is: summary(Medication::Iron),
            config_hash: version_id(&[esa, is].concat()),
            features: *recommender.features(),
            thresholds: recommender.stored_thresholds(),
            manifest,
        };
        Ok(LoadedModels { recommender, info })
    }

    pub fn info(&self) -> &ModelInfo {
        &self.info
    }
}

#[derive(Clone)]
pub struct AppState {
    models: Option<Arc<LoadedModels>>,
}

impl AppState {
    pub fn new(models: Option<LoadedModels>) -> Self {
        AppState {
            models: models.map(Arc::new),
        }
    }

    fn models(&self) -> Result<&LoadedModels, Failure> {
        self.models
            .as_deref()
            .ok_or_else(|| Failure::new(StatusCode::SERVICE_UNAVAILABLE, "model_unavailable", "no model loaded"))
    }
}

/// Body of `POST /api/recommend`: a timeline in the CSV field names plus
/// optional thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    pub patient_id: String,
    pub occasions: Vec<OccasionRecord>,
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
}

/// Body of `POST /api/what-if`. Give `sweep` explicitly or a number of
/// evenly spaced `points` over [0, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub esa: ClassProbabilities,
    pub is: ClassProbabilities,
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
    #[serde(default)]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub rows: Vec<WhatIfRow>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/recommend", post(recommend))
        .route("/api/what-if", post(what_if_handler))
        .route("/api/model-info", get(model_info))
        .with_state(state)
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, Failure> {
    serde_json::from_slice(body).map_err(|e| {
        Failure::bad_request(format!("request body does not match the schema: {e}"))
            .detail(serde_json::json!({ "line": e.line(), "column": e.column() }))
    })
}

async fn recommend(State(state): State<AppState>, body: Bytes) -> Result<Json<Recommendation>, Failure> {
    let models = state.models()?;
    let req: RecommendRequest = parse(&body)?;
    let timeline = PatientTimeline::new(req.patient_id, req.occasions)?;
    let thresholds = req.thresholds.unwrap_or(models.info.thresholds);
    Ok(Json(models.recommender.recommend(&timeline, &thresholds)?))
}

fn check_probabilities(name: &str, p: &ClassProbabilities, medication: Medication) -> Result<(), Failure> {
    if p.p_down.is_some() != (medication == Medication::Esa) {
        return Err(Failure::bad_request(match medication {
            Medication::Esa => format!("{name}: ESA probabilities need p_up, p_stay and p_down"),
            Medication::Iron => format!("{name}: IS probabilities take p_up and p_stay only"),
        }));
    }
    if !p.is_valid(PROBABILITY_TOLERANCE) {
        return Err(Failure::bad_request(format!(
            "{name}: probabilities must lie in [0, 1] and sum to 1 within {PROBABILITY_TOLERANCE}"
        ))
        .detail(serde_json::json!({ "sum": p.sum() })));
    }
    Ok(())
}

async fn what_if_handler(body: Bytes) -> Result<Json<WhatIfResponse>, Failure> {
    let req: WhatIfRequest = parse(&body)?;
    check_probabilities("esa", &req.esa, Medication::Esa)?;
    check_probabilities("is", &req.is, Medication::Iron)?;
    let sweep = match (req.sweep, req.points) {
        (Some(_), Some(_)) => return Err(Failure::bad_request("give either sweep or points, not both")),
        (Some(s), None) => s,
        (None, n) => uniform_sweep(n.unwrap_or(DEFAULT_SWEEP_POINTS)),
    };
    if let Some(bad) = sweep.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Failure::bad_request(format!("sweep value {bad} outside [0, 1]")));
    }
    Ok(Json(WhatIfResponse {
        rows: what_if(&req.esa, &req.is, &sweep),
    }))
}

async fn model_info(State(state): State<AppState>) -> Result<Json<ModelInfo>, Failure> {
    Ok(Json(state.models()?.info.clone()))
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
