//! Seeded synthetic benchmark whose qrels and oracle share one hidden
//! relevance table.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::evalx::Qrels;
use crate::io;
use crate::orchestrate::RerankInput;
use crate::provider::OracleConfig;
use crate::types::{Document, Query, RankedList};

/// Standard deviation of the noise added to relevance to form the
/// first-stage order.
pub const FIRST_STAGE_NOISE: f64 = 0.3;

const WORDS: &[&str] = &[
    "river", "market", "protein", "engine", "harbor", "climate", "theorem", "violin", "glacier",
    "ledger", "orbit", "canyon", "vaccine", "lantern", "mosaic", "tariff", "neuron", "quartz",
    "saddle", "tundra", "archive", "beacon", "cipher", "dialect",
];

/// Graded label for a hidden relevance value.
pub fn grade_for(rel: f64) -> u32 {
    if rel >= 0.9 {
        3
    } else if rel >= 0.75 {
        2
    } else if rel >= 0.5 {
        1
    } else {
        0
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub corpus: Vec<Document>,
    pub queries: Vec<Query>,
    /// First-stage ranking per query, noisy relevance order.
    pub candidates: Vec<RankedList>,
    pub qrels: Qrels,
    /// Oracle defaults with the hidden relevance table filled in.
    pub oracle: OracleConfig,
}

impl SyntheticDataset {
    pub fn inputs(&self) -> Vec<RerankInput> {
        let docs: std::collections::HashMap<&str, &Document> =
            self.corpus.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        self.queries
            .iter()
            .zip(&self.candidates)
            .map(|(q, run)| RerankInput {
                query: q.clone(),
                docs: run.doc_ids().map(|id| docs[id].clone()).collect(),
            })
            .collect()
    }

    /// Writes `corpus.jsonl`, `queries.tsv`, `candidates.run`, `qrels.txt`
    /// and `oracle.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        io::write_corpus(&self.corpus, dir.join("corpus.jsonl"))?;
        io::write_queries(&self.queries, dir.join("queries.tsv"))?;
        io::write_run(
            &self.candidates,
            dir.join("candidates.run"),
            "synth-first-stage",
        )?;
        io::write_qrels(&self.qrels, dir.join("qrels.txt"))?;
        std::fs::write(
            dir.join("oracle.json"),
            serde_json::to_string_pretty(&self.oracle)? + "\n",
        )?;
        Ok(())
    }
}

/// Hidden relevance is `rel ~ U(0, 1)` per (query, doc), graded with
/// [`grade_for`]. The first-stage order sorts by `rel + N(0, FIRST_STAGE_NOISE)`.
pub fn generate_synthetic(
    num_queries: usize,
    num_docs: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    if num_queries == 0 || num_docs == 0 {
        return Err(Error::validation(
            "synthetic dataset needs at least one query and one document",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, FIRST_STAGE_NOISE).expect("valid normal");
    let mut corpus = Vec::with_capacity(num_queries * num_docs);
    let mut queries = Vec::with_capacity(num_queries);
    let mut candidates = Vec::with_capacity(num_queries);
    let mut qrels = Qrels::new();
    let mut oracle = OracleConfig {
        seed,
        ..OracleConfig::default()
    };
    for q in 0..num_queries {
        let qid = format!("q{q}");
        let topic: Vec<&str> = WORDS.choose_multiple(&mut rng, 3).copied().collect();
        queries.push(Query::new(qid.clone(), topic.join(" "))?);
        let mut first_stage = Vec::with_capacity(num_docs);
        for d in 0..num_docs {
            let doc_id = format!("q{q}-d{d}");
            let rel: f64 = rng.random();
            let words: Vec<&str> = (0..8)
                .map(|_| {
                    if rng.random::<f64>() < rel * 0.5 {
                        topic[rng.random_range(0..topic.len())]
                    } else {
                        WORDS[rng.random_range(0..WORDS.len())]
                    }
                })
                .collect();
            corpus.push(Document::new(doc_id.clone(), words.join(" "))?);
            qrels.insert(&qid, &doc_id, grade_for(rel))?;
            oracle.set_relevance(&qid, &doc_id, rel);
            first_stage.push((doc_id, rel + noise.sample(&mut rng)));
        }
        candidates.push(RankedList::from_scores(qid, first_stage));
    }
    Ok(SyntheticDataset {
        corpus,
        queries,
        candidates,
        qrels,
        oracle,
    })
}
