//! The mask-predictor boundary.
//!
//! A [`LogitsProvider`] receives the prompt context plus a description of which
//! response slots are masked and which tokens are admissible, and answers with
//! one probability row per masked slot. [`SyntheticOracle`] is a seeded test
//! double. [`RemoteProvider`] talks JSON over HTTP and its answers can be
//! captured into a [`ReplayStore`] for offline reruns.

mod prompt;
mod remote;
mod replay;
mod synthetic;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::ProviderError;
use crate::types::{CandidateList, Document, ProbMatrix, Query};

pub use prompt::{PromptTemplates, MASK_TOKEN};
pub use remote::{RemoteProvider, DEFAULT_TIMEOUT, REMOTE_URL_ENV};
pub use replay::{replay_key, RecordingProvider, ReplayRecord, ReplayRequest, ReplayStore};
pub use synthetic::{OracleConfig, SyntheticOracle};

pub const DEFAULT_TEMPLATE_ID: &str = "default";

/// Relevance-label tokens used by the pointwise and logits-listwise prompts.
pub const BINARY_TOKENS: [&str; 2] = ["0", "1"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Pointwise,
    LogitsList,
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedDoc {
    pub label: String,
    pub doc: Document,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub kind: PromptKind,
    pub query: Query,
    pub tagged_docs: Vec<TaggedDoc>,
    pub template_id: String,
}

impl PromptContext {
    pub fn pointwise(query: Query, doc: Document, template_id: impl Into<String>) -> Self {
        PromptContext {
            kind: PromptKind::Pointwise,
            query,
            tagged_docs: vec![TaggedDoc {
                label: "A".to_string(),
                doc,
            }],
            template_id: template_id.into(),
        }
    }

    pub fn listwise(
        kind: PromptKind,
        cands: &CandidateList,
        template_id: impl Into<String>,
    ) -> Self {
        PromptContext {
            kind,
            query: cands.query.clone(),
            tagged_docs: cands
                .tagged()
                .map(|(label, doc)| TaggedDoc {
                    label: label.to_string(),
                    doc: doc.clone(),
                })
                .collect(),
            template_id: template_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.tagged_docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tagged_docs.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.tagged_docs.iter().map(|t| t.label.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskQuery {
    pub masked_positions: Vec<usize>,
    pub allowed_tokens: Vec<String>,
    pub filled_slots: Vec<(usize, String)>,
}

impl MaskQuery {
    pub fn binary(masked_positions: Vec<usize>) -> Self {
        MaskQuery {
            masked_positions,
            allowed_tokens: BINARY_TOKENS.iter().map(|t| t.to_string()).collect(),
            filled_slots: Vec::new(),
        }
    }

    pub fn is_binary(&self) -> bool {
        self.allowed_tokens
            .iter()
            .all(|t| BINARY_TOKENS.contains(&t.as_str()))
    }

    /// Structural checks plus consistency with `ctx`'s labels.
    pub fn validate(&self, ctx: &PromptContext) -> Result<(), ProviderError> {
        if self.allowed_tokens.is_empty() {
            return Err(ProviderError::Request("allowed_tokens is empty".into()));
        }
        let mut tokens: Vec<&str> = self.allowed_tokens.iter().map(String::as_str).collect();
        tokens.sort_unstable();
        if let Some(w) = tokens.windows(2).find(|w| w[0] == w[1]) {
            return Err(ProviderError::Request(format!(
                "allowed token {} repeated",
                w[0]
            )));
        }
        let mut labels: Vec<&str> = ctx.labels().collect();
        labels.sort_unstable();
        let known = |t: &str| labels.binary_search(&t).is_ok();
        if !self.is_binary() {
            if let Some(bad) = self.allowed_tokens.iter().find(|t| !known(t)) {
                return Err(ProviderError::Request(format!(
                    "allowed token {bad} is neither a relevance label nor a candidate identifier"
                )));
            }
        }
        let slots = ctx.len().max(1);
        let mut masked = vec![false; slots];
        for &pos in &self.masked_positions {
            if pos >= slots {
                return Err(ProviderError::Request(format!(
                    "masked position {pos} outside a {slots}-slot response"
                )));
            }
            if std::mem::replace(&mut masked[pos], true) {
                return Err(ProviderError::Request("masked positions repeat".into()));
            }
        }
        for (pos, label) in &self.filled_slots {
            if masked.get(*pos).copied().unwrap_or(false) {
                return Err(ProviderError::Request(format!(
                    "slot {pos} is both masked and filled"
                )));
            }
            if !known(label) {
                return Err(ProviderError::Request(format!(
                    "filled slot {pos} holds unknown identifier {label}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsResponse {
    pub rows: ProbMatrix,
    #[serde(default)]
    pub provider_meta: BTreeMap<String, String>,
}

impl LogitsResponse {
    /// Wraps raw rows after checking them against the request shape.
    pub fn checked(rows: Vec<Vec<f64>>, mq: &MaskQuery) -> Result<Self, ProviderError> {
        let expected_rows = mq.masked_positions.len();
        let expected_cols = mq.allowed_tokens.len();
        let cols = rows.first().map_or(0, Vec::len);
        if rows.len() != expected_rows || rows.iter().any(|r| r.len() != expected_cols) {
            return Err(ProviderError::Dimension {
                expected_rows,
                expected_cols,
                rows: rows.len(),
                cols: rows
                    .iter()
                    .map(Vec::len)
                    .find(|&c| c != expected_cols)
                    .unwrap_or(cols),
            });
        }
        let rows =
            ProbMatrix::from_rows(rows).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        Ok(LogitsResponse {
            rows,
            provider_meta: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.provider_meta.insert(key.to_string(), value.into());
        self
    }
}

pub trait LogitsProvider: Send + Sync {
    fn provide(&self, ctx: &PromptContext, mq: &MaskQuery)
        -> Result<LogitsResponse, ProviderError>;
}

impl<P: LogitsProvider + ?Sized> LogitsProvider for &P {
    fn provide(
        &self,
        ctx: &PromptContext,
        mq: &MaskQuery,
    ) -> Result<LogitsResponse, ProviderError> {
        (**self).provide(ctx, mq)
    }
}

impl<P: LogitsProvider + ?Sized> LogitsProvider for Box<P> {
    fn provide(
        &self,
        ctx: &PromptContext,
        mq: &MaskQuery,
    ) -> Result<LogitsResponse, ProviderError> {
        (**self).provide(ctx, mq)
    }
}

impl<P: LogitsProvider + ?Sized> LogitsProvider for Arc<P> {
    fn provide(
        &self,
        ctx: &PromptContext,
        mq: &MaskQuery,
    ) -> Result<LogitsResponse, ProviderError> {
        (**self).provide(ctx, mq)
    }
}

/// Counts calls reaching the wrapped provider.
pub struct CountingProvider<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P: LogitsProvider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        CountingProvider {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<P: LogitsProvider> LogitsProvider for CountingProvider<P> {
    fn provide(
        &self,
        ctx: &PromptContext,
        mq: &MaskQuery,
    ) -> Result<LogitsResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.provide(ctx, mq)
    }
}
