//! Desk-scale training math.
//!
//! Distillation losses over relevance scores (listwise cross-entropy and
//! RankNet), the reweighted masked-denoising loss on a toy categorical
//! predictor, a linear toy scorer trained by full-batch gradient descent,
//! and a central-difference gradient checker.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corruption::{corrupt_with_rng, sample_noise_level, CorruptionConfig, MaskedSequence};
use crate::error::{Error, Result};
use crate::evalx::{ndcg_at_k, Gain, Qrels};
use crate::types::{IdentifierAlphabet, Query, RankedList};

/// Max-shifted log-sum-exp.
fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln softmax(scores)[top1]` and its gradient `softmax - onehot(top1)`.
pub fn ce_loss(scores: &[f64], top1: usize) -> Result<(f64, Vec<f64>)> {
    if top1 >= scores.len() {
        return Err(Error::validation(format!(
            "top-1 index {top1} out of range for {} scores",
            scores.len()
        )));
    }
    let logp = log_softmax(scores);
    let mut grad: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    grad[top1] -= 1.0;
    Ok((-logp[top1], grad))
}

/// Sum over pairs with `ranks[i] < ranks[j]` of `ln(1 + e^{s_j - s_i})`.
///
/// Lower rank means preferred by the teacher, so minimizing pushes preferred
/// documents to higher scores.
pub fn ranknet_loss(scores: &[f64], ranks: &[usize]) -> Result<(f64, Vec<f64>)> {
    if scores.len() != ranks.len() {
        return Err(Error::validation(format!(
            "{} scores but {} ranks",
            scores.len(),
            ranks.len()
        )));
    }
    let n = scores.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if ranks[i] < ranks[j] {
                let diff = scores[j] - scores[i];
                loss += softplus(diff);
                let g = sigmoid(diff);
                grad[j] += g;
                grad[i] -= g;
            }
        }
    }
    Ok((loss, grad))
}

/// A teacher's ordering of documents, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherRanking {
    pub query_id: String,
    pub doc_ids: Vec<String>,
}

impl TeacherRanking {
    /// 1-based teacher rank of each of `doc_ids`.
    pub fn ranks_for(&self, doc_ids: &[String]) -> Result<Vec<usize>> {
        let pos: HashMap<&str, usize> = self
            .doc_ids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.as_str(), i + 1))
            .collect();
        if pos.len() != self.doc_ids.len() {
            return Err(Error::validation(format!(
                "teacher ranking for {} repeats a doc_id",
                self.query_id
            )));
        }
        doc_ids
            .iter()
            .map(|d| {
                pos.get(d.as_str()).copied().ok_or_else(|| {
                    Error::validation(format!(
                        "teacher ranking for {} does not cover {d}",
                        self.query_id
                    ))
                })
            })
            .collect()
    }
}

/// Position-and-context conditioned categorical predictor over a small
/// vocabulary: the logit of token `v` at response offset `r` is
/// `pos[r][v] + (1/R) * sum_u ctx[u][v]` over unmasked response tokens `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPredictor {
    pub vocab: Vec<String>,
    pub max_len: usize,
    /// `max_len x |vocab|`, row-major.
    pub position_logits: Vec<f64>,
    /// `|vocab| x |vocab|`, row-major.
    pub context_weights: Vec<f64>,
}

impl ToyPredictor {
    pub fn zeros(vocab: Vec<String>, max_len: usize) -> Self {
        let v = vocab.len();
        ToyPredictor {
            vocab,
            max_len,
            position_logits: vec![0.0; max_len * v],
            context_weights: vec![0.0; v * v],
        }
    }

    pub fn random<R: Rng + ?Sized>(
        vocab: Vec<String>,
        max_len: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(vocab, max_len);
        let normal = Normal::new(0.0, scale).expect("finite scale");
        for x in p
            .position_logits
            .iter_mut()
            .chain(p.context_weights.iter_mut())
        {
            *x = normal.sample(rng);
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.position_logits.len() + self.context_weights.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = self.position_logits.clone();
        out.extend_from_slice(&self.context_weights);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let split = self.position_logits.len();
        self.position_logits.copy_from_slice(&params[..split]);
        self.context_weights.copy_from_slice(&params[split..]);
    }

    fn token_index(&self, token: &str) -> Option<usize> {
        self.vocab.iter().position(|v| v == token)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftItem {
    pub seq: MaskedSequence,
    /// Uncorrupted tokens, same length as `seq.tokens`.
    pub clean: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SftBatch {
    pub items: Vec<SftItem>,
}

/// Mean over items of `(1/|response|) * sum_masked (1/p_i) * -ln q(clean_i)`
/// and its gradient with respect to [`ToyPredictor::params`].
pub fn sft_loss(predictor: &ToyPredictor, batch: &SftBatch) -> Result<(f64, Vec<f64>)> {
    if batch.items.is_empty() {
        return Err(Error::validation("empty SFT batch"));
    }
    let v = predictor.vocab.len();
    let split = predictor.position_logits.len();
    let mut grad = vec![0.0; predictor.num_params()];
    let mut total = 0.0;
    for (n, item) in batch.items.iter().enumerate() {
        let seq = &item.seq;
        if item.clean.len() != seq.tokens.len() {
            return Err(Error::validation(format!(
                "item {n}: clean/corrupted length mismatch"
            )));
        }
        let r_len = seq.response_len();
        if r_len == 0 {
            continue;
        }
        if r_len > predictor.max_len {
            return Err(Error::validation(format!(
                "item {n}: response length {r_len} exceeds predictor capacity {}",
                predictor.max_len
            )));
        }
        let context: Vec<usize> = (seq.prompt_len..seq.tokens.len())
            .filter(|&i| !seq.mask_flags[i])
            .filter_map(|i| predictor.token_index(&seq.tokens[i]))
            .collect();
        let ctx_scale = 1.0 / r_len as f64;
        let mut ctx_logits = vec![0.0; v];
        for &u in &context {
            for (k, c) in ctx_logits.iter_mut().enumerate() {
                *c += ctx_scale * predictor.context_weights[u * v + k];
            }
        }
        let mut item_loss = 0.0;
        for i in seq.masked_positions() {
            let p_i = seq.mask_probs[i];
            if p_i <= 0.0 {
                return Err(Error::validation(format!(
                    "item {n}: masked position {i} has masking probability {p_i}"
                )));
            }
            let target = predictor.token_index(&item.clean[i]).ok_or_else(|| {
                Error::validation(format!(
                    "item {n}: token {} not in vocabulary",
                    item.clean[i]
                ))
            })?;
            let r = i - seq.prompt_len;
            let logits: Vec<f64> = (0..v)
                .map(|k| predictor.position_logits[r * v + k] + ctx_logits[k])
                .collect();
            let logp = log_softmax(&logits);
            item_loss += -logp[target] / p_i;
            // d(loss)/d(logit_k) scaled by item and batch normalisation
            let w = 1.0 / (p_i * r_len as f64 * batch.items.len() as f64);
            for k in 0..v {
                let d = w * (logp[k].exp() - if k == target { 1.0 } else { 0.0 });
                grad[r * v + k] += d;
                for &u in &context {
                    grad[split + u * v + k] += d * ctx_scale;
                }
            }
        }
        total += item_loss / r_len as f64;
    }
    Ok((total / batch.items.len() as f64, grad))
}

/// Largest per-coordinate deviation between `grad_fn`'s analytic gradient at
/// `point` and central differences with step `h`, measured as
/// `|a - n| / max(1, |a|, |n|)`.
pub fn finite_difference_check<F>(grad_fn: F, point: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    assert!(h > 0.0, "step must be positive");
    let (_, analytic) = grad_fn(point);
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let up = grad_fn(&x).0;
        x[i] = point[i] - h;
        let down = grad_fn(&x).0;
        x[i] = point[i];
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1.0);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// The three training objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    RankNet,
    Sft,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Ce, LossKind::RankNet, LossKind::Sft];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::RankNet => "ranknet",
            LossKind::Sft => "sft",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown loss {s}")))
    }
}

/// Central-difference step used by [`gradcheck_suite`].
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Worst [`finite_difference_check`] deviation of `loss` over `instances`
/// random problems drawn from `seed`.
pub fn gradcheck_suite(loss: LossKind, instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let dev = match loss {
            LossKind::Ce | LossKind::RankNet => {
                let n = rng.random_range(2..12);
                let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                if loss == LossKind::Ce {
                    let top = rng.random_range(0..n);
                    finite_difference_check(
                        |s| ce_loss(s, top).expect("valid index"),
                        &scores,
                        GRADCHECK_STEP,
                    )
                } else {
                    let mut ranks: Vec<usize> = (1..=n).collect();
                    for i in (1..n).rev() {
                        ranks.swap(i, rng.random_range(0..=i));
                    }
                    finite_difference_check(
                        |s| ranknet_loss(s, &ranks).expect("matching lengths"),
                        &scores,
                        GRADCHECK_STEP,
                    )
                }
            }
            LossKind::Sft => {
                let v = rng.random_range(2..6);
                let vocab: Vec<String> = (0..v).map(|i| format!("t{i}")).collect();
                let r = rng.random_range(1..6);
                let pred = ToyPredictor::random(vocab.clone(), r, 1.0, &mut rng);
                let cfg = CorruptionConfig {
                    epsilon: 0.05,
                    strategy: crate::corruption::MaskStrategy::RandomMask,
                    seed: 0,
                };
                let items: Vec<SftItem> = (0..rng.random_range(1..4))
                    .map(|_| {
                        let prompt_len = rng.random_range(0..3);
                        let len = rng.random_range(1..=r);
                        let clean: Vec<String> = (0..prompt_len)
                            .map(|i| format!("p{i}"))
                            .chain((0..len).map(|_| vocab[rng.random_range(0..v)].clone()))
                            .collect();
                        let t = rng.random_range(0.2..1.0);
                        let seq = corrupt_with_rng(&clean, prompt_len, t, &cfg, &[], &mut rng)
                            .expect("valid corruption input");
                        SftItem { seq, clean }
                    })
                    .collect();
                let batch = SftBatch { items };
                finite_difference_check(
                    |p| {
                        let mut moved = pred.clone();
                        moved.set_params(p);
                        sft_loss(&moved, &batch).expect("valid batch")
                    },
                    &pred.params(),
                    GRADCHECK_STEP,
                )
            }
        };
        worst = worst.max(dev);
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainDoc {
    pub doc_id: String,
    #[serde(default)]
    pub text: String,
    /// Explicit feature vector; lexical hashed features are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

/// One line of the training JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainInstance {
    pub query: Query,
    pub docs: Vec<TrainDoc>,
    pub teacher_order: Vec<String>,
}

impl TrainInstance {
    pub fn teacher(&self) -> TeacherRanking {
        TeacherRanking {
            query_id: self.query.query_id.clone(),
            doc_ids: self.teacher_order.clone(),
        }
    }

    fn doc_ids(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.doc_id.clone()).collect()
    }
}

pub const HASHED_FEATURE_DIM: usize = 16;

/// `phi(q, d)`: explicit features when given, else query-term hits hashed
/// into [`HASHED_FEATURE_DIM`] buckets.
pub fn features(query: &Query, doc: &TrainDoc) -> Vec<f64> {
    if let Some(f) = &doc.features {
        return f.clone();
    }
    let doc_terms: Vec<String> = doc.text.split_whitespace().map(str::to_lowercase).collect();
    let mut out = vec![0.0; HASHED_FEATURE_DIM];
    for term in query.text.split_whitespace().map(str::to_lowercase) {
        let hits = doc_terms.iter().filter(|t| **t == term).count() as f64;
        let bucket = term.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        }) as usize
            % HASHED_FEATURE_DIM;
        out[bucket] += hits.ln_1p();
    }
    out
}

/// Linear scorer `s = <theta, phi(q, d)>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyScorer {
    pub theta: Vec<f64>,
}

impl ToyScorer {
    pub fn score(&self, phi: &[f64]) -> f64 {
        self.theta.iter().zip(phi).map(|(a, b)| a * b).sum()
    }

    pub fn rank(&self, inst: &TrainInstance) -> RankedList {
        let scored = inst
            .docs
            .iter()
            .map(|d| (d.doc_id.clone(), self.score(&features(&inst.query, d))))
            .collect();
        RankedList::from_scores(inst.query.query_id.clone(), scored)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreLoss {
    Ce,
    RankNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport<M> {
    pub model: M,
    /// Mean loss per epoch, measured before that epoch's update.
    pub curve: Vec<f64>,
}

struct Prepared {
    phi: Vec<Vec<f64>>,
    ranks: Vec<usize>,
    top1: usize,
}

fn prepare(instances: &[TrainInstance]) -> Result<(Vec<Prepared>, usize)> {
    let mut dim = None;
    let mut out = Vec::with_capacity(instances.len());
    for inst in instances {
        if inst.docs.is_empty() {
            return Err(Error::validation(format!(
                "training instance {} has no documents",
                inst.query.query_id
            )));
        }
        let phi: Vec<Vec<f64>> = inst.docs.iter().map(|d| features(&inst.query, d)).collect();
        for f in &phi {
            match dim {
                None => dim = Some(f.len()),
                Some(d) if d != f.len() => {
                    return Err(Error::validation(format!(
                        "feature length {} differs from {d} in {}",
                        f.len(),
                        inst.query.query_id
                    )))
                }
                _ => {}
            }
        }
        let ranks = inst.teacher().ranks_for(&inst.doc_ids())?;
        let top1 = ranks
            .iter()
            .position(|&r| r == 1)
            .ok_or_else(|| Error::validation("teacher's best document is not a candidate"))?;
        out.push(Prepared { phi, ranks, top1 });
    }
    Ok((out, dim.unwrap_or(0)))
}

fn batch_loss(theta: &[f64], data: &[Prepared], loss: ScoreLoss) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0;
    let mut grad = vec![0.0; theta.len()];
    let scorer = ToyScorer {
        theta: theta.to_vec(),
    };
    for p in data {
        let scores: Vec<f64> = p.phi.iter().map(|f| scorer.score(f)).collect();
        let (l, g) = match loss {
            ScoreLoss::Ce => ce_loss(&scores, p.top1)?,
            ScoreLoss::RankNet => ranknet_loss(&scores, &p.ranks)?,
        };
        total += l;
        for (gk, f) in g.iter().zip(&p.phi) {
            for (acc, x) in grad.iter_mut().zip(f) {
                *acc += gk * x;
            }
        }
    }
    let m = data.len() as f64;
    grad.iter_mut().for_each(|g| *g /= m);
    Ok((total / m, grad))
}

/// Full-batch gradient descent on a [`ToyScorer`].
pub fn train_toy(
    instances: &[TrainInstance],
    loss: ScoreLoss,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainReport<ToyScorer>> {
    if instances.is_empty() {
        return Err(Error::validation("no training instances"));
    }
    let (data, dim) = prepare(instances)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.01).expect("valid normal");
    let mut theta: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (l, g) = batch_loss(&theta, &data, loss)?;
        if !l.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { epoch, loss: l });
        }
        curve.push(l);
        for (t, gk) in theta.iter_mut().zip(&g) {
            *t -= lr * gk;
        }
    }
    Ok(TrainReport {
        model: ToyScorer { theta },
        curve,
    })
}

/// Mean NDCG@k of the scorer's rankings over `instances`.
pub fn evaluate_scorer(
    scorer: &ToyScorer,
    instances: &[TrainInstance],
    qrels: &Qrels,
    k: usize,
) -> f64 {
    if instances.is_empty() {
        return 0.0;
    }
    instances
        .iter()
        .map(|inst| ndcg_at_k(&scorer.rank(inst), qrels, k, Gain::Exponential))
        .sum::<f64>()
        / instances.len() as f64
}

/// Grades by teacher position: top 2 -> 3, next 3 -> 2, next 5 -> 1, rest 0.
pub fn teacher_grade(rank: usize) -> u32 {
    match rank {
        1..=2 => 3,
        3..=5 => 2,
        6..=10 => 1,
        _ => 0,
    }
}

pub fn teacher_qrels(instances: &[TrainInstance]) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for inst in instances {
        for (i, d) in inst.teacher_order.iter().enumerate() {
            qrels.insert(&inst.query.query_id, d, teacher_grade(i + 1))?;
        }
    }
    Ok(qrels)
}

/// Queries whose documents carry Gaussian features and whose teacher order
/// sorts them by a hidden linear function of those features.
pub fn synthetic_training_set(
    num_queries: usize,
    docs_per_query: usize,
    dim: usize,
    seed: u64,
) -> Result<(Vec<TrainInstance>, Qrels)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let hidden: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
    let mut instances = Vec::with_capacity(num_queries);
    for q in 0..num_queries {
        let query = Query::new(format!("tq{q}"), format!("training query {q}"))?;
        let docs: Vec<TrainDoc> = (0..docs_per_query)
            .map(|d| TrainDoc {
                doc_id: format!("tq{q}_d{d}"),
                text: String::new(),
                features: Some((0..dim).map(|_| normal.sample(&mut rng)).collect()),
            })
            .collect();
        let mut order: Vec<(f64, String)> = docs
            .iter()
            .map(|d| {
                let rel: f64 = d
                    .features
                    .as_ref()
                    .unwrap()
                    .iter()
                    .zip(&hidden)
                    .map(|(a, b)| a * b)
                    .sum();
                (rel, d.doc_id.clone())
            })
            .collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0));
        instances.push(TrainInstance {
            query,
            docs,
            teacher_order: order.into_iter().map(|(_, id)| id).collect(),
        });
    }
    let qrels = teacher_qrels(&instances)?;
    Ok((instances, qrels))
}

/// Separator between identifiers in an SFT response.
pub const RESPONSE_SEPARATOR: &str = ">";

/// Prompt tokens followed by the teacher order written as identifier labels
/// (candidate `k` gets label `k`) joined by [`RESPONSE_SEPARATOR`].
pub fn sft_tokens(
    inst: &TrainInstance,
    alphabet: &IdentifierAlphabet,
) -> Result<(Vec<String>, usize)> {
    let mut tokens: Vec<String> = inst
        .query
        .text
        .split_whitespace()
        .map(String::from)
        .collect();
    let prompt_len = tokens.len();
    let ids = inst.doc_ids();
    for (i, d) in inst.teacher_order.iter().enumerate() {
        let k = ids
            .iter()
            .position(|x| x == d)
            .ok_or_else(|| Error::validation(format!("teacher doc {d} is not a candidate")))?;
        let label = alphabet.label(k).ok_or(Error::Capacity {
            capacity: alphabet.len(),
            requested: ids.len(),
        })?;
        if i > 0 {
            tokens.push(RESPONSE_SEPARATOR.to_string());
        }
        tokens.push(label.to_string());
    }
    Ok((tokens, prompt_len))
}

/// Trains a [`ToyPredictor`] on freshly corrupted responses each epoch.
pub fn train_sft(
    instances: &[TrainInstance],
    corruption: CorruptionConfig,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainReport<ToyPredictor>> {
    if instances.is_empty() {
        return Err(Error::validation("no training instances"));
    }
    let max_docs = instances.iter().map(|i| i.docs.len()).max().unwrap_or(0);
    let alphabet = IdentifierAlphabet::standard(max_docs);
    let sequences = instances
        .iter()
        .map(|inst| sft_tokens(inst, &alphabet))
        .collect::<Result<Vec<_>>>()?;
    let max_len = sequences
        .iter()
        .map(|(t, p)| t.len() - p)
        .max()
        .unwrap_or(0);
    let mut vocab = alphabet.labels().to_vec();
    vocab.push(RESPONSE_SEPARATOR.to_string());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut predictor = ToyPredictor::random(vocab, max_len, 0.01, &mut rng);
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut items = Vec::with_capacity(sequences.len());
        for (tokens, prompt_len) in &sequences {
            let t = sample_noise_level(&mut rng);
            let seq = corrupt_with_rng(
                tokens,
                *prompt_len,
                t,
                &corruption,
                alphabet.labels(),
                &mut rng,
            )?;
            items.push(SftItem {
                seq,
                clean: tokens.clone(),
            });
        }
        let (l, g) = sft_loss(&predictor, &SftBatch { items })?;
        if !l.is_finite() {
            return Err(Error::Diverged { epoch, loss: l });
        }
        curve.push(l);
        let updated: Vec<f64> = predictor
            .params()
            .iter()
            .zip(&g)
            .map(|(p, gk)| p - lr * gk)
            .collect();
        predictor.set_params(&updated);
    }
    Ok(TrainReport {
        model: predictor,
        curve,
    })
}

/// Writes `epoch,loss` rows.
pub fn write_loss_curve<W: std::io::Write>(out: W, curve: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "loss"])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for (i, l) in curve.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{l:.9}")])
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
