//! Strategy dispatch and sliding-window reranking over top-k candidate lists.
//!
//! Windows run back to front: the first window processed covers the tail of
//! the list, each following window is shifted `step_size` towards the head,
//! and every window's local order is written back before the next one is cut.

use std::ops::Range;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assign::decode_assign;
use crate::error::{Error, Result};
use crate::provider::{CountingProvider, LogitsProvider, PromptContext, PromptKind};
use crate::sampler::{sample_permutation, SamplerConfig, SamplingMode, StepTrace};
use crate::scoring::{logits_listwise_scores, pointwise_score, rank_by_scores};
use crate::types::{CandidateList, Document, Permutation, Query, RankedEntry, RankedList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Pointwise,
    LogitsList,
    PermSamp,
    PermAssign,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Pointwise,
        Strategy::LogitsList,
        Strategy::PermSamp,
        Strategy::PermAssign,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Pointwise => "pointwise",
            Strategy::LogitsList => "logits_list",
            Strategy::PermSamp => "perm_samp",
            Strategy::PermAssign => "perm_assign",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s || st.name().replace('_', "-") == s)
            .ok_or_else(|| Error::validation(format!("unknown strategy {s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_size: usize,
    pub step_size: usize,
    pub top_k: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_size: 20,
            step_size: 10,
            top_k: 100,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.step_size
            && self.step_size <= self.window_size
            && self.window_size <= self.top_k)
        {
            return Err(Error::validation(format!(
                "window config needs 1 <= step ({}) <= window ({}) <= top_k ({})",
                self.step_size, self.window_size, self.top_k
            )));
        }
        Ok(())
    }

    /// Windows in processing order for a list of `len` candidates. The head
    /// window shrinks when the schedule overshoots the start of the list.
    pub fn schedule(&self, len: usize) -> Vec<Range<usize>> {
        let n = len.min(self.top_k);
        if n == 0 {
            return Vec::new();
        }
        if n <= self.window_size {
            return vec![Range { start: 0, end: n }];
        }
        let w = self.window_size as isize;
        let mut start = (n - self.window_size) as isize;
        let mut out = vec![Range {
            start: start as usize,
            end: n,
        }];
        while start > 0 {
            start -= self.step_size as isize;
            let end = (start + w) as usize;
            out.push(start.max(0) as usize..end);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankJob {
    pub strategy: Strategy,
    /// Present exactly when `strategy` is [`Strategy::PermSamp`].
    pub sampler: Option<SamplerConfig>,
    pub window: WindowConfig,
    pub template_id: String,
    pub seed: u64,
}

impl RerankJob {
    pub fn new(strategy: Strategy, window: WindowConfig) -> Self {
        RerankJob {
            strategy,
            sampler: (strategy == Strategy::PermSamp).then(|| SamplerConfig::constrained(4)),
            window,
            template_id: crate::provider::DEFAULT_TEMPLATE_ID.to_string(),
            seed: 0,
        }
    }

    pub fn with_sampler(mut self, sampler: SamplerConfig) -> Self {
        self.sampler = Some(sampler);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        match (self.strategy, &self.sampler) {
            (Strategy::PermSamp, Some(s)) => s.validate(),
            (Strategy::PermSamp, None) => {
                Err(Error::validation("perm_samp requires a sampler config"))
            }
            (_, Some(_)) => Err(Error::validation(format!(
                "sampler config given for strategy {}",
                self.strategy.name()
            ))),
            (_, None) => Ok(()),
        }
    }
}

/// Decoded output of one window, as recorded in trace files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTrace {
    pub query_id: String,
    pub window: usize,
    pub n: usize,
    pub k: usize,
    pub mode: SamplingMode,
    /// Raw slot labels before repair.
    pub raw: Vec<String>,
    pub valid: bool,
    pub steps: Vec<StepTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    /// Local order: position `i` holds window index `order[i]`.
    pub order: Permutation,
    pub scores: Option<Vec<f64>>,
    pub trace: Option<WindowTrace>,
}

/// Orders one window with the job's strategy.
pub fn rerank_window<P: LogitsProvider + ?Sized>(
    cands: &CandidateList,
    job: &RerankJob,
    provider: &P,
) -> Result<WindowResult> {
    match job.strategy {
        Strategy::Pointwise => {
            let scores = cands
                .docs()
                .iter()
                .map(|d| {
                    pointwise_score(&cands.query, d, provider, &job.template_id).map(|s| s.value)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(WindowResult {
                order: rank_by_scores(&scores),
                scores: Some(scores),
                trace: None,
            })
        }
        Strategy::LogitsList => {
            let scores: Vec<f64> = logits_listwise_scores(cands, provider, &job.template_id)?
                .iter()
                .map(|s| s.value)
                .collect();
            Ok(WindowResult {
                order: rank_by_scores(&scores),
                scores: Some(scores),
                trace: None,
            })
        }
        Strategy::PermAssign => {
            let ctx = PromptContext::listwise(PromptKind::Permutation, cands, &job.template_id);
            Ok(WindowResult {
                order: decode_assign(&ctx, provider)?.permutation,
                scores: None,
                trace: None,
            })
        }
        Strategy::PermSamp => {
            let cfg = job
                .sampler
                .ok_or_else(|| Error::validation("perm_samp requires a sampler config"))?;
            let ctx = PromptContext::listwise(PromptKind::Permutation, cands, &job.template_id);
            let outcome = sample_permutation(&ctx, provider, &cfg)?;
            let trace = WindowTrace {
                query_id: cands.query.query_id.clone(),
                window: 0,
                n: cands.len(),
                k: cfg.steps,
                mode: cfg.mode,
                raw: outcome.raw_labels(cands.used_labels()),
                valid: outcome.valid,
                steps: outcome.steps,
            };
            Ok(WindowResult {
                order: outcome.permutation,
                scores: None,
                trace: Some(trace),
            })
        }
    }
}

/// Per-query run-log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogRecord {
    pub query_id: String,
    pub strategy: Strategy,
    pub provider_calls: usize,
    pub wall_ms: u64,
    pub windows: usize,
    pub validity_flags: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    pub ranking: RankedList,
    pub log: RunLogRecord,
    pub traces: Vec<WindowTrace>,
}

/// Reranks the first `top_k` candidates; anything beyond keeps its place at
/// the tail.
pub fn sliding_rerank<P: LogitsProvider + ?Sized>(
    query: &Query,
    candidates: &[Document],
    job: &RerankJob,
    provider: &P,
) -> Result<RerankOutcome> {
    job.validate()?;
    if candidates.is_empty() {
        return Err(Error::validation(format!(
            "query {} has no candidates",
            query.query_id
        )));
    }
    let started = Instant::now();
    let counter = CountingProvider::new(provider);
    let head = candidates.len().min(job.window.top_k);
    let mut traces = Vec::new();

    let (ranking, windows) = if job.strategy == Strategy::Pointwise {
        let cands =
            CandidateList::with_standard_alphabet(query.clone(), candidates[..head].to_vec())?;
        let result = rerank_window(&cands, job, &counter)?;
        let scores = result.scores.expect("pointwise yields scores");
        let mut entries: Vec<RankedEntry> = result
            .order
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &k)| RankedEntry {
                doc_id: candidates[k].doc_id.clone(),
                score: scores[k],
                rank: i + 1,
            })
            .collect();
        for (j, doc) in candidates[head..].iter().enumerate() {
            entries.push(RankedEntry {
                doc_id: doc.doc_id.clone(),
                score: -((j + 1) as f64),
                rank: head + j + 1,
            });
        }
        (
            RankedList {
                query_id: query.query_id.clone(),
                entries,
            },
            1,
        )
    } else {
        let mut order: Vec<Document> = candidates.to_vec();
        let schedule = job.window.schedule(order.len());
        for (index, range) in schedule.iter().enumerate() {
            let window_docs = order[range.clone()].to_vec();
            let cands = CandidateList::with_standard_alphabet(query.clone(), window_docs.clone())?;
            let result = rerank_window(&cands, job, &counter).map_err(|e| Error::Window {
                index,
                source: Box::new(e),
            })?;
            if let Some(mut trace) = result.trace {
                trace.window = index;
                traces.push(trace);
            }
            for (slot, doc) in order[range.clone()]
                .iter_mut()
                .zip(result.order.apply(&window_docs))
            {
                *slot = doc;
            }
        }
        (
            RankedList::from_order(
                query.query_id.clone(),
                order.into_iter().map(|d| d.doc_id).collect(),
            ),
            schedule.len(),
        )
    };

    let log = RunLogRecord {
        query_id: query.query_id.clone(),
        strategy: job.strategy,
        provider_calls: counter.calls(),
        wall_ms: started.elapsed().as_millis() as u64,
        windows,
        validity_flags: traces.iter().map(|t| t.valid).collect(),
        error: None,
    };
    Ok(RerankOutcome {
        ranking,
        log,
        traces,
    })
}

/// One query's candidates in retrieval order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankInput {
    pub query: Query,
    pub docs: Vec<Document>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub outcome: RerankOutcome,
    /// Set when reranking failed and the input order was kept.
    pub failed: bool,
}

/// Reranks every query on a pool of `jobs` workers. Output order follows
/// `inputs`; a failing query falls back to its retrieval order.
pub fn rerank_batch<P: LogitsProvider + ?Sized>(
    inputs: &[RerankInput],
    job: &RerankJob,
    provider: &P,
    jobs: usize,
) -> Result<Vec<BatchItem>> {
    job.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::validation(format!("worker pool: {e}")))?;
    Ok(pool.install(|| {
        inputs
            .par_iter()
            .map(
                |input| match sliding_rerank(&input.query, &input.docs, job, provider) {
                    Ok(outcome) => BatchItem {
                        outcome,
                        failed: false,
                    },
                    Err(e) => {
                        warn!(
                            "query {} failed, keeping retrieval order: {e}",
                            input.query.query_id
                        );
                        let ranking = RankedList::from_order(
                            input.query.query_id.clone(),
                            input.docs.iter().map(|d| d.doc_id.clone()).collect(),
                        );
                        BatchItem {
                            outcome: RerankOutcome {
                                ranking,
                                log: RunLogRecord {
                                    query_id: input.query.query_id.clone(),
                                    strategy: job.strategy,
                                    provider_calls: 0,
                                    wall_ms: 0,
                                    windows: 0,
                                    validity_flags: Vec::new(),
                                    error: Some(e.to_string()),
                                },
                                traces: Vec::new(),
                            },
                            failed: true,
                        }
                    }
                },
            )
            .collect()
    }))
}
