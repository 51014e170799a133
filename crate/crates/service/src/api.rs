//! Request and response documents.

use awaire_core::alpha::AlphaParams;
use awaire_core::engine::{AuditConfig, AuditState, AuditStatus, StatusDoc, DEFAULT_MAX_CANDIDATES};
use awaire_core::weights::SchemeSpec;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

/// Hardest alt-orders included in a ballot reply.
pub const REPLY_HARDEST: usize = 5;
/// Default hardest alt-orders in a status document.
pub const STATUS_HARDEST: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Client-chosen id; generated when absent.
    #[serde(default)]
    pub id: Option<String>,
    pub candidates: Vec<String>,
    pub reported_winner: String,
    #[serde(rename = "N", alias = "population")]
    pub population: u64,
    #[serde(default = "default_risk", alias = "risk_limit")]
    pub risk: f64,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    #[serde(default = "default_d")]
    pub d: f64,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub max_candidates: Option<usize>,
}

fn default_risk() -> f64 {
    0.05
}

fn default_scheme() -> String {
    "largest".to_string()
}

fn default_eta0() -> f64 {
    AlphaParams::recommended_default().eta0
}

fn default_d() -> f64 {
    AlphaParams::recommended_default().d
}

impl CreateSession {
    pub fn to_config(&self) -> Result<AuditConfig, String> {
        let reported_winner = self
            .candidates
            .iter()
            .position(|c| *c == self.reported_winner)
            .ok_or_else(|| format!("reported winner {:?} is not a candidate", self.reported_winner))?;
        let scheme: SchemeSpec = self.scheme.parse().map_err(|e| format!("{e}"))?;
        let defaults = AlphaParams::new(self.eta0, self.d).map_err(|e| e.to_string())?;
        let alpha = AlphaParams::with_tuning(
            self.eta0,
            self.d,
            self.c.unwrap_or(defaults.c),
            self.eps.unwrap_or(defaults.eps),
        )
        .map_err(|e| e.to_string())?;
        let mut config =
            AuditConfig::new(self.candidates.clone(), reported_winner, self.population, self.risk, scheme, alpha);
        config.max_candidates = self.max_candidates.unwrap_or(DEFAULT_MAX_CANDIDATES);
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmitBallot {
    pub ranking: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub candidates: Vec<String>,
    pub reported_winner: String,
    #[serde(rename = "N")]
    pub population: u64,
    pub risk: f64,
    pub scheme: String,
    pub eta0: f64,
    pub d: f64,
    pub c: f64,
    pub eps: f64,
}

impl From<&AuditConfig> for ConfigSummary {
    fn from(c: &AuditConfig) -> Self {
        ConfigSummary {
            candidates: c.candidates.clone(),
            reported_winner: c.candidates[c.reported_winner].clone(),
            population: c.population,
            risk: c.risk_limit,
            scheme: c.scheme.to_string(),
            eta0: c.alpha_params.eta0,
            d: c.alpha_params.d,
            c: c.alpha_params.c,
            eps: c.alpha_params.eps,
        }
    }
}

/// Session metadata plus the engine status document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionDoc {
    pub id: String,
    pub created: u64,
    pub config: ConfigSummary,
    #[serde(flatten)]
    pub status: StatusDoc,
}

impl SessionDoc {
    pub fn new(id: &str, created: u64, state: &AuditState, hardest: usize) -> Self {
        SessionDoc {
            id: id.to_string(),
            created,
            config: ConfigSummary::from(state.config()),
            status: state.status_with(hardest),
        }
    }
}

/// Reply to a submitted ballot: the draw's newly rejected alt-orders and
/// the status after it, with the five hardest alt-orders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallotReply {
    pub id: String,
    pub draw: u64,
    pub newly_rejected: Vec<usize>,
    #[serde(flatten)]
    pub status: StatusDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UndoReply {
    pub id: String,
    pub undone: Vec<String>,
    #[serde(flatten)]
    pub status: StatusDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionListing {
    pub id: String,
    pub created: u64,
    pub status: AuditStatus,
    pub draws_seen: u64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session {id:?}"))
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}
