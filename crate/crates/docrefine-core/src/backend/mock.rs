//! Deterministic scripted mock backend.
//!
//! The mock answers completions from a script keyed by
//! `(stage, digest-of-canonicalized-request)`, with optional defaults per
//! stage or per `(stage, schema)`. It is a pure function of
//! `(script, request)`: repeated calls return byte-identical responses, which
//! is what makes end-to-end pipeline runs replayable and testable offline.
//!
//! Embeddings are computed locally: character trigrams hashed into a
//! fixed-dimension bag, then L2-normalized. Deterministic across runs and
//! platforms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    finalize_response, request_digest, Backend, BackendError, BackendRequest, BackendResponse,
    EmbeddingVector, SchemaId, StageTag, EMBED_DIM,
};

/// Script file contents (`mock.json`).
///
/// `entries` maps `"STAGE:digest"` to raw response text. `defaults` maps
/// `"STAGE"` or `"STAGE:schema_id"` to a fallback response; the schema-scoped
/// default wins over the stage-wide one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub entries: BTreeMap<String, String>,
    #[serde(default)]
    pub defaults: BTreeMap<String, String>,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_entry(
        &mut self,
        stage: StageTag,
        digest: impl Into<String>,
        response: impl Into<String>,
    ) {
        self.entries
            .insert(format!("{}:{}", stage.as_str(), digest.into()), response.into());
    }

    /// Registers the canned response for one concrete request.
    pub fn insert_for(&mut self, req: &BackendRequest, response: impl Into<String>) {
        self.insert_entry(req.stage, request_digest(req), response);
    }

    pub fn set_default(&mut self, stage: StageTag, response: impl Into<String>) {
        self.defaults.insert(stage.as_str().to_string(), response.into());
    }

    pub fn set_schema_default(
        &mut self,
        stage: StageTag,
        schema: SchemaId,
        response: impl Into<String>,
    ) {
        self.defaults
            .insert(format!("{}:{}", stage.as_str(), schema.as_str()), response.into());
    }

    /// Resolves a request to its scripted response text.
    pub fn lookup(&self, stage: StageTag, schema: SchemaId, digest: &str) -> Option<&str> {
        self.entries
            .get(&format!("{}:{digest}", stage.as_str()))
            .or_else(|| self.defaults.get(&format!("{}:{}", stage.as_str(), schema.as_str())))
            .or_else(|| self.defaults.get(stage.as_str()))
            .map(String::as_str)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn to_json(&self) -> Vec<u8> {
        crate::canon::to_canonical_json(self).expect("script serialization cannot fail")
    }

    /// Merges another script into this one; `other` wins on key collisions.
    pub fn merge(&mut self, other: MockScript) {
        self.entries.extend(other.entries);
        self.defaults.extend(other.defaults);
    }
}

/// Scripted mock backend. See the module docs for lookup semantics.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    script: MockScript,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self { script }
    }

    /// A mock with an empty script: every completion misses, but the
    /// embedder works. Handy when only embeddings are needed.
    pub fn embedder_only() -> Self {
        Self::default()
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl Backend for MockBackend {
    fn complete(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        req.validate()?;
        let digest = request_digest(req);
        match self.script.lookup(req.stage, req.schema, &digest) {
            Some(raw) => finalize_response(req.schema, raw),
            None => Err(BackendError::MockMiss {
                stage: req.stage,
                digest,
            }),
        }
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::InvalidRequest("embed of empty list".into()));
        }
        Ok(texts.iter().map(|t| mock_embedding(t)).collect())
    }
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic bag-of-trigrams embedding, unit L2 norm.
///
/// Text is lowercased and whitespace-collapsed; each character trigram is
/// FNV-hashed into one of [`EMBED_DIM`] buckets. Inputs shorter than three
/// characters contribute a single whole-string gram, so the vector is never
/// zero.
pub fn mock_embedding(text: &str) -> EmbeddingVector {
    let normalized: Vec<char> = text
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .chars()
        .collect();

    let mut bag = vec![0.0f64; EMBED_DIM];
    let mut add = |gram: &str| {
        let bucket = (fnv1a(gram.as_bytes()) % EMBED_DIM as u64) as usize;
        bag[bucket] += 1.0;
    };

    if normalized.len() < 3 {
        add(&normalized.iter().collect::<String>());
    } else {
        for window in normalized.windows(3) {
            add(&window.iter().collect::<String>());
        }
    }

    EmbeddingVector::unit(bag).expect("bag always holds at least one gram")
}
