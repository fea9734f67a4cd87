//! Script capture: planned responses plus request recording.
//!
//! [`SequenceBackend`] answers completions from per-`(stage, schema)` queues
//! — useful when the requests a run will make are known only by order, not
//! by digest. [`RecordingBackend`] wraps any backend and captures every
//! `(stage, digest) -> response` pair; the capture replays byte-identically
//! through a [`MockBackend`](super::mock::MockBackend). Together they turn
//! one planned run into a standalone `mock.json`.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use super::mock::{mock_embedding, MockScript};
use super::{
    finalize_response, request_digest, Backend, BackendError, BackendRequest, BackendResponse,
    EmbeddingVector, SchemaId, StageTag,
};

/// Answers completions from FIFO queues keyed by `(stage, schema)`, falling
/// back to schema- then stage-level defaults. Embeddings use the mock
/// embedder, so metric math matches a later scripted replay exactly.
#[derive(Debug, Default)]
pub struct SequenceBackend {
    queues: Mutex<BTreeMap<(StageTag, SchemaId), VecDeque<String>>>,
    defaults: BTreeMap<(StageTag, Option<SchemaId>), String>,
}

impl SequenceBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the next response for `(stage, schema)`.
    pub fn push_response(&mut self, stage: StageTag, schema: SchemaId, text: impl Into<String>) {
        self.queues
            .get_mut()
            .expect("queue lock")
            .entry((stage, schema))
            .or_default()
            .push_back(text.into());
    }

    pub fn set_default(&mut self, stage: StageTag, text: impl Into<String>) {
        self.defaults.insert((stage, None), text.into());
    }

    pub fn set_schema_default(
        &mut self,
        stage: StageTag,
        schema: SchemaId,
        text: impl Into<String>,
    ) {
        self.defaults.insert((stage, Some(schema)), text.into());
    }
}

impl Backend for SequenceBackend {
    fn complete(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        req.validate()?;
        let queued = self
            .queues
            .lock()
            .expect("queue lock")
            .get_mut(&(req.stage, req.schema))
            .and_then(VecDeque::pop_front);
        let raw = queued
            .or_else(|| self.defaults.get(&(req.stage, Some(req.schema))).cloned())
            .or_else(|| self.defaults.get(&(req.stage, None)).cloned())
            .ok_or_else(|| BackendError::MockMiss {
                stage: req.stage,
                digest: request_digest(req),
            })?;
        finalize_response(req.schema, &raw)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::InvalidRequest("embed of empty list".into()));
        }
        Ok(texts.iter().map(|t| mock_embedding(t)).collect())
    }
}

/// Wraps a backend and records every completion as a digest-keyed script
/// entry. A request that recurs with a different response is a scripting
/// bug (the capture could not replay deterministically) and fails loudly.
pub struct RecordingBackend<B> {
    inner: B,
    entries: Mutex<BTreeMap<String, String>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            entries: Mutex::new(BTreeMap::new()),
        }
    }

    /// The capture so far, as a replayable script.
    pub fn script(&self) -> MockScript {
        MockScript {
            entries: self.entries.lock().expect("entry lock").clone(),
            defaults: BTreeMap::new(),
        }
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let resp = self.inner.complete(req)?;
        let key = format!("{}:{}", req.stage.as_str(), request_digest(req));
        let mut entries = self.entries.lock().expect("entry lock");
        if let Some(existing) = entries.get(&key) {
            if existing != &resp.raw_text {
                return Err(BackendError::RecordingConflict { key });
            }
        } else {
            entries.insert(key, resp.raw_text.clone());
        }
        Ok(resp)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        self.inner.embed(texts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::MockBackend;

    #[test]
    fn queue_pops_in_order_then_falls_back_to_default() {
        let mut seq = SequenceBackend::new();
        seq.push_response(StageTag::Cra, SchemaId::Rewrite, r#"{"text": "first"}"#);
        seq.push_response(StageTag::Cra, SchemaId::Rewrite, r#"{"text": "second"}"#);
        seq.set_default(StageTag::Cra, r#"{"text": "fallback"}"#);
        let r = BackendRequest::new(StageTag::Cra, SchemaId::Rewrite).text("x");
        assert_eq!(seq.complete(&r).unwrap().parsed["text"], "first");
        assert_eq!(seq.complete(&r).unwrap().parsed["text"], "second");
        assert_eq!(seq.complete(&r).unwrap().parsed["text"], "fallback");
    }

    #[test]
    fn capture_replays_through_the_scripted_mock() {
        let mut seq = SequenceBackend::new();
        seq.push_response(StageTag::Cra, SchemaId::Rewrite, r#"{"text": "polished"}"#);
        let recorder = RecordingBackend::new(seq);
        let r = BackendRequest::new(StageTag::Cra, SchemaId::Rewrite).text("polish p1");
        let live_answer = recorder.complete(&r).unwrap();

        let replay = MockBackend::new(recorder.script());
        let replayed = replay.complete(&r).unwrap();
        assert_eq!(live_answer, replayed);
    }

    #[test]
    fn conflicting_duplicate_recording_fails() {
        let mut seq = SequenceBackend::new();
        seq.push_response(StageTag::Cra, SchemaId::Rewrite, r#"{"text": "one"}"#);
        seq.push_response(StageTag::Cra, SchemaId::Rewrite, r#"{"text": "two"}"#);
        let recorder = RecordingBackend::new(seq);
        let r = BackendRequest::new(StageTag::Cra, SchemaId::Rewrite).text("same request");
        recorder.complete(&r).unwrap();
        assert!(matches!(
            recorder.complete(&r).unwrap_err(),
            BackendError::RecordingConflict { .. }
        ));
    }
}
