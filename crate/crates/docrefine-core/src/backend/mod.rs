//! Model backend abstraction.
//!
//! Every model interaction in the pipeline goes through the [`Backend`]
//! trait: a structured-output completion call plus a text embedder. Two
//! implementations ship here — a deterministic scripted mock
//! ([`mock::MockBackend`]) keyed by request digest, and (behind the `live`
//! feature) an HTTP client for a chat-completion style endpoint
//! ([`live::LiveBackend`]). No other module constructs network traffic.

pub mod capture;
#[cfg(feature = "live")]
pub mod live;
pub mod mock;
pub mod repair;
pub mod schema;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canon;
pub use schema::SchemaId;

/// Pipeline stage issuing a request. Scripted mocks key on this tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageTag {
    #[serde(rename = "LSA")]
    Lsa,
    #[serde(rename = "MCU")]
    Mcu,
    #[serde(rename = "IDA")]
    Ida,
    #[serde(rename = "CRA")]
    Cra,
    #[serde(rename = "SGA")]
    Sga,
    #[serde(rename = "FCV")]
    Fcv,
}

impl StageTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::Lsa => "LSA",
            StageTag::Mcu => "MCU",
            StageTag::Ida => "IDA",
            StageTag::Cra => "CRA",
            StageTag::Sga => "SGA",
            StageTag::Fcv => "FCV",
        }
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One part of a request's user content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserPart {
    Text(String),
    /// Reference to an image payload (path or opaque handle).
    ImageRef(String),
}

/// Typed envelope for one model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub stage: StageTag,
    pub system_text: String,
    pub user_parts: Vec<UserPart>,
    pub schema: SchemaId,
    /// Sampling temperature in `[0, 1]`. All stages default to 0 so that a
    /// full run is reproducible.
    pub temperature: f64,
}

impl BackendRequest {
    pub fn new(stage: StageTag, schema: SchemaId) -> Self {
        Self {
            stage,
            system_text: String::new(),
            user_parts: Vec::new(),
            schema,
            temperature: 0.0,
        }
    }

    pub fn system(mut self, text: impl Into<String>) -> Self {
        self.system_text = text.into();
        self
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.user_parts.push(UserPart::Text(text.into()));
        self
    }

    pub fn image(mut self, image_ref: impl Into<String>) -> Self {
        self.user_parts.push(UserPart::ImageRef(image_ref.into()));
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.user_parts.is_empty() {
            return Err(BackendError::InvalidRequest(
                "request carries no user parts".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Completion result: the raw model text plus its schema-validated parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub raw_text: String,
    pub parsed: serde_json::Value,
    /// True when the parse only succeeded after extracting the largest
    /// balanced JSON span from noisy output.
    pub repair_applied: bool,
}

impl BackendResponse {
    /// Deserializes the validated parse into its typed form.
    pub fn parse_as<T: serde::de::DeserializeOwned>(&self) -> Result<T, BackendError> {
        serde_json::from_value(self.parsed.clone()).map_err(|e| BackendError::Schema {
            schema: SchemaId::OpPlan,
            message: format!("validated payload no longer deserializes: {e}"),
            raw_text: self.raw_text.clone(),
        })
    }
}

/// Fixed dimension of the deterministic mock embedder.
pub const EMBED_DIM: usize = 256;

/// Unit-L2-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values` to unit length. Returns `None` for a zero vector.
    pub fn unit(values: Vec<f64>) -> Option<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        Some(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Backend operating mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    Mock,
}

/// Connection settings for the live backend, also carried in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Base URL of a chat-completion style endpoint.
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub concurrency_limit: usize,
    pub mode: BackendMode,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            api_key_env: "DOCREFINE_API_KEY".to_string(),
            timeout_secs: 60.0,
            max_retries: 2,
            concurrency_limit: 4,
            mode: BackendMode::Mock,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.timeout_secs > 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "timeout_secs must be positive, got {}",
                self.timeout_secs
            )));
        }
        if self.concurrency_limit == 0 {
            return Err(BackendError::InvalidRequest(
                "concurrency_limit must be at least 1".into(),
            ));
        }
        if self.mode == BackendMode::Live && self.endpoint.is_empty() {
            return Err(BackendError::InvalidRequest(
                "live mode requires an endpoint URL".into(),
            ));
        }
        Ok(())
    }
}

/// Backend failure.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("response failed `{schema}` schema validation: {message}")]
    Schema {
        schema: SchemaId,
        message: String,
        raw_text: String,
    },
    #[error("no mock script entry for stage {stage}, digest {digest}, and no default")]
    MockMiss { stage: StageTag, digest: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("recording conflict: {key} was answered with two different responses")]
    RecordingConflict { key: String },
}

/// Abstraction over the underlying model: structured completion + embedding.
///
/// Implementations are safe for concurrent use; independent requests may be
/// issued in parallel, bounded by the implementation's admission control.
pub trait Backend: Send + Sync {
    /// Runs one completion. The returned payload validates against the
    /// request's schema; malformed output gets exactly one repair pass
    /// (largest balanced JSON span) before failing.
    fn complete(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError>;

    /// Embeds each text into a unit-norm vector, order-preserving.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).complete(req)
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        (**self).embed(texts)
    }
}

/// Digest of a canonicalized request: SHA-256 over its canonical JSON, hex.
/// Mock scripts key on `(stage, digest)`.
pub fn request_digest(req: &BackendRequest) -> String {
    let bytes = canon::to_canonical_json(req).expect("request serialization cannot fail");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Shared postprocessing for raw model text: parse, validate against the
/// schema, and on failure run the single repair pass.
pub(crate) fn finalize_response(
    schema: SchemaId,
    raw_text: &str,
) -> Result<BackendResponse, BackendError> {
    let direct = serde_json::from_str::<serde_json::Value>(raw_text)
        .map_err(|e| e.to_string())
        .and_then(|v| schema::validate(schema, &v).map(|_| v));
    match direct {
        Ok(parsed) => Ok(BackendResponse {
            raw_text: raw_text.to_string(),
            parsed,
            repair_applied: false,
        }),
        Err(first_error) => {
            let repaired = repair::largest_balanced_span(raw_text)
                .and_then(|span| serde_json::from_str::<serde_json::Value>(span).ok())
                .and_then(|v| schema::validate(schema, &v).ok().map(|_| v));
            match repaired {
                // A repair that yields the byte-identical parse would have
                // succeeded directly, so reaching here means real extraction.
                Some(parsed) => Ok(BackendResponse {
                    raw_text: raw_text.to_string(),
                    parsed,
                    repair_applied: true,
                }),
                None => Err(BackendError::Schema {
                    schema,
                    message: first_error,
                    raw_text: raw_text.to_string(),
                }),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let a = BackendRequest::new(StageTag::Ida, SchemaId::OpPlan).text("hello");
        let b = BackendRequest::new(StageTag::Ida, SchemaId::OpPlan).text("hello");
        let c = BackendRequest::new(StageTag::Ida, SchemaId::OpPlan).text("world");
        assert_eq!(request_digest(&a), request_digest(&b));
        assert_ne!(request_digest(&a), request_digest(&c));
        assert_eq!(request_digest(&a).len(), 64);
    }

    #[test]
    fn request_without_parts_is_invalid() {
        let req = BackendRequest::new(StageTag::Cra, SchemaId::Rewrite);
        assert!(matches!(
            req.validate(),
            Err(BackendError::InvalidRequest(_))
        ));
    }

    #[test]
    fn finalize_accepts_clean_json() {
        let resp = finalize_response(SchemaId::Rewrite, r#"{"text": "done"}"#).unwrap();
        assert!(!resp.repair_applied);
        assert_eq!(resp.parsed["text"], "done");
    }

    #[test]
    fn finalize_repairs_noisy_json() {
        // Oracle: the balanced-brace extractor applied to the fixture.
        let raw = r#"noise {"ops":[]} noise"#;
        assert_eq!(repair::largest_balanced_span(raw), Some(r#"{"ops":[]}"#));

        let resp = finalize_response(SchemaId::OpPlan, raw).unwrap();
        assert!(resp.repair_applied);
        assert_eq!(resp.parsed, serde_json::json!({"ops": []}));
        assert_eq!(resp.raw_text, raw);
    }

    #[test]
    fn finalize_reports_schema_error_with_raw_text() {
        let err = finalize_response(SchemaId::Rewrite, "not json at all").unwrap_err();
        match err {
            BackendError::Schema { raw_text, .. } => assert_eq!(raw_text, "not json at all"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn unit_vector_is_normalized() {
        let v = EmbeddingVector::unit(vec![3.0, 4.0]).unwrap();
        assert!((v.norm() - 1.0).abs() <= 1e-12);
        assert!(EmbeddingVector::unit(vec![0.0, 0.0]).is_none());
    }
}
