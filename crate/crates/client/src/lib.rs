//! Typed client for the session service.
//!
//! Every request and response is a versioned document; errors from the
//! service come back as [`ClientError::Api`] with the stable error code.

use std::time::Duration;

use deanchor_core::harness::report::METRICS_KIND;
use deanchor_core::harness::StratifiedMetrics;
use deanchor_core::schema::{self, SchemaError};
use deanchor_core::session::{
    AdvanceAck, AnswerAck, AnswerSubmission, CreateSession, ErrorBody, Health, SessionStatus, SurveyResponse,
    TrialPayload, ADVANCE_ACK_KIND, ANSWER_ACK_KIND, ANSWER_KIND, CREATE_KIND, ERROR_KIND, HEALTH_KIND, STATUS_KIND,
    SURVEY_KIND, TRIAL_KIND,
};
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{status} {code}: {message}")]
    Api {
        status: u16,
        code: String,
        message: String,
        remaining_seconds: Option<f64>,
    },
    #[error("unexpected response ({status}): {source}")]
    Schema {
        status: u16,
        #[source]
        source: SchemaError,
    },
}

impl ClientError {
    /// The service error code, if the service answered with one.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Result<Self, ClientError> {
        let http = reqwest::Client::builder().timeout(Duration::from_secs(30)).build()?;
        Ok(Self {
            base: base.trim_end_matches('/').to_string(),
            http,
        })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn send<T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<String>,
        kind: &str,
    ) -> Result<T, ClientError> {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(body) = body {
            req = req.header(reqwest::header::CONTENT_TYPE, "application/json").body(body);
        }
        let resp = req.send().await?;
        let status = resp.status();
        let text = resp.text().await?;
        let schema_err = |source| ClientError::Schema {
            status: status.as_u16(),
            source,
        };
        if status.is_success() {
            return schema::from_document(kind, &text).map_err(schema_err);
        }
        let e: ErrorBody = schema::from_document(ERROR_KIND, &text).map_err(schema_err)?;
        Err(ClientError::Api {
            status: status.as_u16(),
            code: e.error,
            message: e.message,
            remaining_seconds: e.remaining_seconds,
        })
    }

    fn encode<T: Serialize>(kind: &str, body: &T) -> Result<String, ClientError> {
        schema::to_document(kind, body).map_err(|source| ClientError::Schema {
            status: StatusCode::OK.as_u16(),
            source,
        })
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.send(Method::GET, "/healthz", None, HEALTH_KIND).await
    }

    pub async fn create_session(&self, req: &CreateSession) -> Result<SessionStatus, ClientError> {
        let body = Self::encode(CREATE_KIND, req)?;
        self.send(Method::POST, "/sessions", Some(body), STATUS_KIND).await
    }

    pub async fn status(&self, id: &str) -> Result<SessionStatus, ClientError> {
        self.send(Method::GET, &format!("/sessions/{id}"), None, STATUS_KIND).await
    }

    /// The current trial; repeated calls before advancing return the same one.
    pub async fn next_trial(&self, id: &str) -> Result<TrialPayload, ClientError> {
        self.send(Method::GET, &format!("/sessions/{id}/trial"), None, TRIAL_KIND).await
    }

    pub async fn answer(&self, id: &str, sub: &AnswerSubmission) -> Result<AnswerAck, ClientError> {
        let body = Self::encode(ANSWER_KIND, sub)?;
        self.send(Method::POST, &format!("/sessions/{id}/answer"), Some(body), ANSWER_ACK_KIND)
            .await
    }

    pub async fn advance(&self, id: &str) -> Result<AdvanceAck, ClientError> {
        self.send(Method::POST, &format!("/sessions/{id}/advance"), None, ADVANCE_ACK_KIND)
            .await
    }

    pub async fn survey(&self, id: &str, resp: &SurveyResponse) -> Result<SessionStatus, ClientError> {
        let body = Self::encode(SURVEY_KIND, resp)?;
        self.send(Method::POST, &format!("/sessions/{id}/survey"), Some(body), STATUS_KIND)
            .await
    }

    pub async fn summary(&self, id: &str) -> Result<StratifiedMetrics, ClientError> {
        self.send(Method::GET, &format!("/sessions/{id}/summary"), None, METRICS_KIND)
            .await
    }
}
