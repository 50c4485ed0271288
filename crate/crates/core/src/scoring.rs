//! Score-based strategies: pointwise and logits-listwise relevance.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ProviderError, Result};
use crate::provider::{LogitsProvider, MaskQuery, PromptContext, PromptKind};
use crate::types::{CandidateList, Document, Permutation, Query};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScore {
    /// `p1 / (p0 + p1)`, or 0.5 when both are zero.
    pub value: f64,
    pub p0: f64,
    pub p1: f64,
    pub degenerate: bool,
}

impl RelevanceScore {
    pub fn from_probs(p0: f64, p1: f64) -> Self {
        let total = p0 + p1;
        if total > 0.0 {
            RelevanceScore {
                value: p1 / total,
                p0,
                p1,
                degenerate: false,
            }
        } else {
            RelevanceScore {
                value: 0.5,
                p0,
                p1,
                degenerate: true,
            }
        }
    }
}

fn binary_columns(mq: &MaskQuery) -> (usize, usize) {
    let col = |t: &str| {
        mq.allowed_tokens
            .iter()
            .position(|x| x == t)
            .expect("binary token")
    };
    (col("0"), col("1"))
}

/// One masked slot appended after the prompt, restricted to `"0"`/`"1"`.
pub fn pointwise_score<P: LogitsProvider + ?Sized>(
    query: &Query,
    doc: &Document,
    provider: &P,
    template_id: &str,
) -> Result<RelevanceScore> {
    let ctx = PromptContext::pointwise(query.clone(), doc.clone(), template_id);
    let mq = MaskQuery::binary(vec![0]);
    let resp = provider.provide(&ctx, &mq)?;
    let (c0, c1) = binary_columns(&mq);
    let score = RelevanceScore::from_probs(resp.rows.get(0, c0), resp.rows.get(0, c1));
    if score.degenerate {
        warn!(
            "query {} doc {}: p0 = p1 = 0, scoring 0.5",
            query.query_id, doc.doc_id
        );
    }
    Ok(score)
}

/// One provider call with a masked relevance slot per document; scores are
/// returned in candidate order.
pub fn logits_listwise_scores<P: LogitsProvider + ?Sized>(
    cands: &CandidateList,
    provider: &P,
    template_id: &str,
) -> Result<Vec<RelevanceScore>> {
    let n = cands.len();
    let ctx = PromptContext::listwise(PromptKind::LogitsList, cands, template_id);
    let mq = MaskQuery::binary((0..n).collect());
    let resp = provider.provide(&ctx, &mq)?;
    if resp.rows.rows() != n {
        return Err(Error::Provider(ProviderError::Dimension {
            expected_rows: n,
            expected_cols: 2,
            rows: resp.rows.rows(),
            cols: resp.rows.cols(),
        }));
    }
    let (c0, c1) = binary_columns(&mq);
    Ok((0..n)
        .map(|i| {
            let score = RelevanceScore::from_probs(resp.rows.get(i, c0), resp.rows.get(i, c1));
            if score.degenerate {
                warn!(
                    "query {} doc {}: p0 = p1 = 0, scoring 0.5",
                    cands.query.query_id,
                    cands.docs()[i].doc_id
                );
            }
            score
        })
        .collect())
}

/// Orders indices by descending score; ties keep the original order.
pub fn rank_by_scores(scores: &[f64]) -> Permutation {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Permutation::new(order).expect("sorted indices form a permutation")
}
