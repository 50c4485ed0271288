use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LogitsProvider, LogitsResponse, MaskQuery, PromptContext, PromptKind};
use crate::error::ProviderError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayDoc {
    pub label: String,
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayFilled {
    pub pos: usize,
    pub label: String,
}

/// Canonical echo of a `(PromptContext, MaskQuery)` pair. Field order is fixed,
/// so its JSON encoding is the hashing input for [`replay_key`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRequest {
    pub template_id: String,
    pub strategy: PromptKind,
    pub query_id: String,
    pub query_text: String,
    pub docs: Vec<ReplayDoc>,
    pub masked_positions: Vec<usize>,
    pub filled: Vec<ReplayFilled>,
    pub allowed_tokens: Vec<String>,
}

impl ReplayRequest {
    pub fn new(ctx: &PromptContext, mq: &MaskQuery) -> Self {
        ReplayRequest {
            template_id: ctx.template_id.clone(),
            strategy: ctx.kind,
            query_id: ctx.query.query_id.clone(),
            query_text: ctx.query.text.clone(),
            docs: ctx
                .tagged_docs
                .iter()
                .map(|t| ReplayDoc {
                    label: t.label.clone(),
                    doc_id: t.doc.doc_id.clone(),
                    text: t.doc.text.clone(),
                })
                .collect(),
            masked_positions: mq.masked_positions.clone(),
            filled: mq
                .filled_slots
                .iter()
                .map(|(pos, label)| ReplayFilled {
                    pos: *pos,
                    label: label.clone(),
                })
                .collect(),
            allowed_tokens: mq.allowed_tokens.clone(),
        }
    }

    pub fn key(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Hex SHA-256 of the canonical request encoding.
pub fn replay_key(ctx: &PromptContext, mq: &MaskQuery) -> String {
    ReplayRequest::new(ctx, mq).key()
}

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub key: String,
    pub request: ReplayRequest,
    pub rows: Vec<Vec<f64>>,
}

/// Recorded provider responses, backed by a JSON-lines file.
///
/// Records are kept sorted by key so the file bytes only depend on content.
#[derive(Debug, Default)]
pub struct ReplayStore {
    path: Option<PathBuf>,
    records: Mutex<BTreeMap<String, ReplayRecord>>,
}

impl ReplayStore {
    pub fn in_memory() -> Self {
        ReplayStore::default()
    }

    /// Loads `path` if it exists; later recordings are persisted there.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref().to_path_buf();
        let mut records = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(fs::File::open(&path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: ReplayRecord = serde_json::from_str(&line).map_err(|e| {
                    ProviderError::Malformed(format!("{}:{}: {e}", path.display(), n + 1))
                })?;
                records.insert(record.key.clone(), record);
            }
        }
        Ok(ReplayStore {
            path: Some(path),
            records: Mutex::new(records),
        })
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<ReplayRecord> {
        self.records.lock().unwrap().values().cloned().collect()
    }

    /// Stores `resp` under the key of `(ctx, mq)`, replacing any previous
    /// recording. Nothing reaches disk until [`ReplayStore::save`].
    pub fn record(
        &self,
        ctx: &PromptContext,
        mq: &MaskQuery,
        resp: &LogitsResponse,
    ) -> Result<String, ProviderError> {
        let request = ReplayRequest::new(ctx, mq);
        let key = request.key();
        let mut records = self.records.lock().unwrap();
        records.insert(
            key.clone(),
            ReplayRecord {
                key: key.clone(),
                request,
                rows: resp.rows.to_rows(),
            },
        );
        Ok(key)
    }

    /// Atomically rewrites the backing file, records sorted by key.
    pub fn save(&self) -> Result<(), ProviderError> {
        if let Some(path) = &self.path {
            write_records(path, self.records.lock().unwrap().values())?;
        }
        Ok(())
    }
}

fn write_records<'a>(
    path: &Path,
    records: impl Iterator<Item = &'a ReplayRecord>,
) -> Result<(), ProviderError> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut out = std::io::BufWriter::new(fs::File::create(&tmp)?);
        for record in records {
            serde_json::to_writer(&mut out, record)
                .map_err(|e| ProviderError::Malformed(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

impl LogitsProvider for ReplayStore {
    fn provide(
        &self,
        ctx: &PromptContext,
        mq: &MaskQuery,
    ) -> Result<LogitsResponse, ProviderError> {
        let key = replay_key(ctx, mq);
        let rows = self
            .records
            .lock()
            .unwrap()
            .get(&key)
            .map(|r| r.rows.clone())
            .ok_or_else(|| ProviderError::CacheMiss(key.clone()))?;
        Ok(LogitsResponse::checked(rows, mq)?
            .with_meta("backend", "replay")
            .with_meta("key", key))
    }
}

/// Forwards to `inner` and records every response into `store`; call
/// [`ReplayStore::save`] afterwards to persist them.
pub struct RecordingProvider<'a, P> {
    inner: P,
    store: &'a ReplayStore,
}

impl<'a, P: LogitsProvider> RecordingProvider<'a, P> {
    pub fn new(inner: P, store: &'a ReplayStore) -> Self {
        RecordingProvider { inner, store }
    }
}

impl<P: LogitsProvider> LogitsProvider for RecordingProvider<'_, P> {
    fn provide(
        &self,
        ctx: &PromptContext,
        mq: &MaskQuery,
    ) -> Result<LogitsResponse, ProviderError> {
        let resp = self.inner.provide(ctx, mq)?;
        self.store.record(ctx, mq, &resp)?;
        Ok(resp)
    }
}
