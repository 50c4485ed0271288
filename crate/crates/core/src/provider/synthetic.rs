use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LogitsProvider, LogitsResponse, MaskQuery, PromptContext};
use crate::error::ProviderError;

/// Parameters of the synthetic mask predictor.
///
/// For identifier rows the oracle scores slot `i` against identifier `j` with
/// `-beta * w(i) * |i - truerank(j)| + gamma * g(i, j)`, softmaxed over the
/// allowed identifiers, where `truerank` orders the context's documents by
/// descending hidden relevance, `w(i) = 1 + lambda * |2i - (N-1)| / (N-1)`
/// sharpens the ends of the list and `g` is seeded hash noise in `[-1, 1]`.
/// Binary (`"0"`/`"1"`) rows are `(1 - rel, rel)`, with `rel` jittered by
/// `gamma / 4 * g` and clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub seed: u64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// query_id -> doc_id -> hidden relevance in `[0, 1]`.
    #[serde(default)]
    pub relevance: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            seed: 0,
            beta: 5.0,
            gamma: 0.0,
            lambda: 0.0,
            relevance: BTreeMap::new(),
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("oracle {name} must be finite and >= 0, got {v}"));
            }
        }
        for (q, docs) in &self.relevance {
            if let Some((d, r)) = docs.iter().find(|(_, r)| !(0.0..=1.0).contains(*r)) {
                return Err(format!("relevance of ({q}, {d}) is {r}, outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn set_relevance(&mut self, query_id: &str, doc_id: &str, rel: f64) {
        self.relevance
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), rel);
    }

    /// Unknown pairs count as irrelevant.
    pub fn relevance_of(&self, query_id: &str, doc_id: &str) -> f64 {
        self.relevance
            .get(query_id)
            .and_then(|docs| docs.get(doc_id))
            .copied()
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    cfg: OracleConfig,
}

impl SyntheticOracle {
    pub fn new(cfg: OracleConfig) -> Result<Self, ProviderError> {
        cfg.validate().map_err(ProviderError::Request)?;
        Ok(SyntheticOracle { cfg })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    /// `truerank[j]`: position of document `j` when sorted by descending
    /// relevance, ties by candidate order.
    pub fn true_ranks(&self, ctx: &PromptContext) -> Vec<usize> {
        let rels = self.relevances(ctx);
        let mut order: Vec<usize> = (0..rels.len()).collect();
        order.sort_by(|&a, &b| rels[b].total_cmp(&rels[a]).then(a.cmp(&b)));
        let mut ranks = vec![0; rels.len()];
        for (pos, &j) in order.iter().enumerate() {
            ranks[j] = pos;
        }
        ranks
    }

    fn relevances(&self, ctx: &PromptContext) -> Vec<f64> {
        ctx.tagged_docs
            .iter()
            .map(|t| self.cfg.relevance_of(&ctx.query.query_id, &t.doc.doc_id))
            .collect()
    }

    fn noise(&self, query_hash: u64, slot: usize, doc_hash: u64) -> f64 {
        let h = mix(self.cfg.seed ^ mix(query_hash ^ mix(slot as u64 ^ 0x9e37_79b9) ^ doc_hash));
        // top 53 bits -> [0, 1) -> [-1, 1)
        (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn binary_rows(&self, ctx: &PromptContext, mq: &MaskQuery) -> Vec<Vec<f64>> {
        let qh = fnv1a(&ctx.query.query_id);
        mq.masked_positions
            .iter()
            .map(|&slot| {
                let doc_index = if ctx.len() == 1 {
                    0
                } else {
                    slot.min(ctx.len() - 1)
                };
                let doc = &ctx.tagged_docs[doc_index].doc;
                let mut rel = self.cfg.relevance_of(&ctx.query.query_id, &doc.doc_id);
                if self.cfg.gamma > 0.0 {
                    rel += 0.25 * self.cfg.gamma * self.noise(qh, slot, fnv1a(&doc.doc_id));
                }
                let rel = rel.clamp(0.0, 1.0);
                mq.allowed_tokens
                    .iter()
                    .map(|t| if t == "1" { rel } else { 1.0 - rel })
                    .collect()
            })
            .collect()
    }

    fn identifier_rows(&self, ctx: &PromptContext, mq: &MaskQuery) -> Vec<Vec<f64>> {
        let n = ctx.len();
        let ranks = self.true_ranks(ctx);
        let qh = fnv1a(&ctx.query.query_id);
        let mut by_label: Vec<(&str, usize)> = ctx
            .tagged_docs
            .iter()
            .enumerate()
            .map(|(j, t)| (t.label.as_str(), j))
            .collect();
        by_label.sort_unstable();
        let columns: Vec<(usize, u64)> = mq
            .allowed_tokens
            .iter()
            .map(|label| {
                let j = by_label[by_label
                    .binary_search_by(|(l, _)| (*l).cmp(label.as_str()))
                    .expect("validated label")]
                .1;
                (ranks[j], fnv1a(&ctx.tagged_docs[j].doc.doc_id))
            })
            .collect();
        let mut logits = vec![0.0; columns.len()];
        mq.masked_positions
            .iter()
            .map(|&slot| {
                let weight = if n > 1 {
                    let spread = (2.0 * slot as f64 - (n - 1) as f64).abs() / (n - 1) as f64;
                    1.0 + self.cfg.lambda * spread
                } else {
                    1.0
                };
                for (logit, &(rank, doc_hash)) in logits.iter_mut().zip(&columns) {
                    let dist = (slot as f64 - rank as f64).abs();
                    *logit = -self.cfg.beta * weight * dist;
                    if self.cfg.gamma > 0.0 {
                        *logit += self.cfg.gamma * self.noise(qh, slot, doc_hash);
                    }
                }
                softmax(&logits)
            })
            .collect()
    }
}

impl LogitsProvider for SyntheticOracle {
    fn provide(
        &self,
        ctx: &PromptContext,
        mq: &MaskQuery,
    ) -> Result<LogitsResponse, ProviderError> {
        mq.validate(ctx)?;
        let rows = if mq.is_binary() {
            self.binary_rows(ctx, mq)
        } else {
            self.identifier_rows(ctx, mq)
        };
        Ok(LogitsResponse::checked(rows, mq)?.with_meta("backend", "synthetic"))
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
