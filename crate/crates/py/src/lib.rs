//! Python bindings. Build with `maturin develop` from this directory.

use std::collections::HashMap;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use diffurank_core::assign::{
    brute_force_assignment, hungarian as hungarian_core, AssignmentResult,
};
use diffurank_core::corruption::{self, CorruptionConfig, MaskStrategy};
use diffurank_core::evalx::{self, Gain, Qrels};
use diffurank_core::orchestrate::{sliding_rerank, RerankJob, Strategy, WindowConfig};
use diffurank_core::provider::{
    LogitsProvider, LogitsResponse, MaskQuery, OracleConfig, PromptContext, PromptKind,
    SyntheticOracle, DEFAULT_TEMPLATE_ID,
};
use diffurank_core::sampler::{self, SamplerConfig, SamplingMode};
use diffurank_core::{
    train, CandidateList, CostMatrix, Document, ProviderError, Query, RankedList,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn from_provider(e: &diffurank_core::Error) -> bool {
    use diffurank_core::Error::*;
    match e {
        Provider(_) | Step { .. } => true,
        Window { source, .. } => from_provider(source),
        _ => false,
    }
}

/// Provider failures become `RuntimeError`, file errors `OSError`, the rest
/// `ValueError`.
fn core_err(e: diffurank_core::Error) -> PyErr {
    if from_provider(&e) {
        PyRuntimeError::new_err(e.to_string())
    } else if let diffurank_core::Error::Io(io) = e {
        PyOSError::new_err(io.to_string())
    } else {
        value_err(e)
    }
}

fn assignment(r: AssignmentResult) -> (Vec<usize>, f64) {
    (r.permutation.as_slice().to_vec(), r.total_cost)
}

/// Minimum-cost assignment; returns `(perm, cost)` with `perm[row] = col`.
#[pyfunction]
fn hungarian(cost: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, f64)> {
    let c = CostMatrix::from_rows(cost).map_err(core_err)?;
    hungarian_core(&c).map(assignment).map_err(core_err)
}

/// Exhaustive search, same tie-breaking as `hungarian`; at most 9x9.
#[pyfunction]
fn brute_force(cost: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, f64)> {
    let c = CostMatrix::from_rows(cost).map_err(core_err)?;
    brute_force_assignment(&c).map(assignment).map_err(core_err)
}

/// Synthetic mask predictor with a hidden relevance table.
#[pyclass(name = "Oracle", module = "diffurank", from_py_object)]
#[derive(Clone)]
struct PyOracle {
    cfg: OracleConfig,
}

impl PyOracle {
    fn build(&self) -> PyResult<SyntheticOracle> {
        SyntheticOracle::new(self.cfg.clone()).map_err(value_err)
    }
}

#[pymethods]
impl PyOracle {
    #[new]
    #[pyo3(signature = (beta = 5.0, gamma = 0.0, lambda_ = 0.0, seed = 0))]
    fn new(beta: f64, gamma: f64, lambda_: f64, seed: u64) -> PyResult<Self> {
        let cfg = OracleConfig {
            seed,
            beta,
            gamma,
            lambda: lambda_,
            ..OracleConfig::default()
        };
        cfg.validate().map_err(PyValueError::new_err)?;
        Ok(PyOracle { cfg })
    }

    fn set_relevance(&mut self, query_id: &str, doc_id: &str, rel: f64) -> PyResult<()> {
        if !(0.0..=1.0).contains(&rel) {
            return Err(PyValueError::new_err(format!(
                "relevance {rel} outside [0, 1]"
            )));
        }
        self.cfg.set_relevance(query_id, doc_id, rel);
        Ok(())
    }

    fn relevance(&self, query_id: &str, doc_id: &str) -> f64 {
        self.cfg.relevance_of(query_id, doc_id)
    }

    /// Full slot-by-document probability matrix for a candidate window.
    fn probabilities(
        &self,
        query_id: &str,
        query_text: &str,
        docs: Vec<(String, String)>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let ctx = PromptContext::listwise(
            PromptKind::Permutation,
            &candidates(query_id, query_text, docs)?,
            DEFAULT_TEMPLATE_ID,
        );
        let mq = MaskQuery {
            masked_positions: (0..ctx.tagged_docs.len()).collect(),
            allowed_tokens: ctx.labels().map(String::from).collect(),
            filled_slots: vec![],
        };
        let resp = self
            .build()?
            .provide(&ctx, &mq)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(resp.rows.to_rows())
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.cfg.beta
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.cfg.gamma
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.cfg.lambda
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    fn __repr__(&self) -> String {
        format!(
            "Oracle(beta={}, gamma={}, lambda_={}, seed={})",
            self.cfg.beta, self.cfg.gamma, self.cfg.lambda, self.cfg.seed
        )
    }
}

/// Calls a Python function `f(request: dict) -> list[list[float]]`.
struct CallbackProvider {
    func: Py<PyAny>,
}

impl LogitsProvider for CallbackProvider {
    fn provide(
        &self,
        ctx: &PromptContext,
        mq: &MaskQuery,
    ) -> Result<LogitsResponse, ProviderError> {
        mq.validate(ctx)?;
        Python::attach(|py| {
            let build = || -> PyResult<Bound<'_, PyDict>> {
                let req = PyDict::new(py);
                req.set_item("template_id", &ctx.template_id)?;
                req.set_item("query_id", &ctx.query.query_id)?;
                req.set_item("query_text", &ctx.query.text)?;
                let docs: Vec<(&str, &str, &str)> = ctx
                    .tagged_docs
                    .iter()
                    .map(|t| (t.label.as_str(), t.doc.doc_id.as_str(), t.doc.text.as_str()))
                    .collect();
                req.set_item("docs", docs)?;
                req.set_item("masked_positions", &mq.masked_positions)?;
                req.set_item("filled", mq.filled_slots.clone())?;
                req.set_item("allowed_tokens", &mq.allowed_tokens)?;
                Ok(req)
            };
            let req = build().map_err(|e| ProviderError::Request(e.to_string()))?;
            let out = self
                .func
                .call1(py, (req,))
                .map_err(|e| ProviderError::Transport(format!("python provider raised {e}")))?;
            let rows: Vec<Vec<f64>> = out
                .extract(py)
                .map_err(|e: PyErr| ProviderError::Malformed(e.to_string()))?;
            LogitsResponse::checked(rows, mq)
        })
    }
}

enum AnyProvider {
    Oracle(SyntheticOracle),
    Callback(CallbackProvider),
}

impl AnyProvider {
    fn from_py(obj: &Bound<'_, PyAny>) -> PyResult<Self> {
        if let Ok(o) = obj.extract::<PyRef<'_, PyOracle>>() {
            return Ok(AnyProvider::Oracle(o.build()?));
        }
        if obj.is_callable() {
            return Ok(AnyProvider::Callback(CallbackProvider {
                func: obj.clone().unbind(),
            }));
        }
        Err(PyValueError::new_err(
            "provider must be an Oracle or a callable",
        ))
    }

    fn get(&self) -> &dyn LogitsProvider {
        match self {
            AnyProvider::Oracle(o) => o,
            AnyProvider::Callback(c) => c,
        }
    }
}

fn candidates(
    query_id: &str,
    query_text: &str,
    docs: Vec<(String, String)>,
) -> PyResult<CandidateList> {
    let query = Query::new(query_id, query_text).map_err(core_err)?;
    let docs = documents(docs)?;
    CandidateList::with_standard_alphabet(query, docs).map_err(core_err)
}

fn documents(docs: Vec<(String, String)>) -> PyResult<Vec<Document>> {
    docs.into_iter()
        .map(|(id, text)| Document::new(id, text).map_err(core_err))
        .collect()
}

fn parse_mode(mode: &str) -> PyResult<SamplingMode> {
    match mode {
        "constrained" => Ok(SamplingMode::Constrained),
        "vanilla" => Ok(SamplingMode::Vanilla),
        _ => Err(PyValueError::new_err(format!("unknown mode {mode}"))),
    }
}

/// Reranks `docs` (a list of `(doc_id, text)`) and returns `[(doc_id, score)]`.
#[pyfunction]
#[pyo3(signature = (query_id, query_text, docs, provider, strategy = "perm_assign", steps = 4,
    mode = "constrained", window_size = 20, step_size = 10, top_k = 100, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn rerank(
    query_id: &str,
    query_text: &str,
    docs: Vec<(String, String)>,
    provider: &Bound<'_, PyAny>,
    strategy: &str,
    steps: usize,
    mode: &str,
    window_size: usize,
    step_size: usize,
    top_k: usize,
    seed: u64,
) -> PyResult<Vec<(String, f64)>> {
    let strategy: Strategy = strategy.parse().map_err(core_err)?;
    let window = WindowConfig {
        window_size,
        step_size,
        top_k,
    };
    let mut job = RerankJob::new(strategy, window);
    if strategy == Strategy::PermSamp {
        job = job.with_sampler(SamplerConfig {
            steps,
            mode: parse_mode(mode)?,
        });
    }
    job.seed = seed;
    let query = Query::new(query_id, query_text).map_err(core_err)?;
    let provider = AnyProvider::from_py(provider)?;
    let out = sliding_rerank(&query, &documents(docs)?, &job, provider.get()).map_err(core_err)?;
    Ok(out
        .ranking
        .entries
        .into_iter()
        .map(|e| (e.doc_id, e.score))
        .collect())
}

/// One window of iterative unmasking. Returns a dict with `permutation`,
/// `raw`, `valid`, `provider_calls` and the slots each step kept in `filled`.
#[pyfunction]
#[pyo3(signature = (query_text, docs, provider, steps = 4, mode = "constrained", query_id = "q"))]
fn sample_permutation<'py>(
    py: Python<'py>,
    query_text: &str,
    docs: Vec<(String, String)>,
    provider: &Bound<'py, PyAny>,
    steps: usize,
    mode: &str,
    query_id: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cands = candidates(query_id, query_text, docs)?;
    let ctx = PromptContext::listwise(PromptKind::Permutation, &cands, DEFAULT_TEMPLATE_ID);
    let cfg = SamplerConfig {
        steps,
        mode: parse_mode(mode)?,
    };
    let provider = AnyProvider::from_py(provider)?;
    let out = sampler::sample_permutation(&ctx, provider.get(), &cfg).map_err(core_err)?;
    let d = PyDict::new(py);
    d.set_item("permutation", out.permutation.as_slice().to_vec())?;
    d.set_item("raw", out.raw)?;
    d.set_item("valid", out.valid)?;
    d.set_item("provider_calls", out.provider_calls)?;
    let filled: Vec<Vec<usize>> = out
        .steps
        .iter()
        .map(|s| s.filled.iter().map(|f| f.pos).collect())
        .collect();
    d.set_item("filled", filled)?;
    Ok(d)
}

/// Keeps the first occurrence of every identifier and fills the rest in order.
#[pyfunction]
fn repair(raw: Vec<Option<usize>>) -> Vec<usize> {
    sampler::repair_invalid(&raw).as_slice().to_vec()
}

#[pyfunction]
#[pyo3(signature = (ranking, qrels, k = 10, gain = "exponential"))]
fn ndcg(ranking: Vec<String>, qrels: HashMap<String, u32>, k: usize, gain: &str) -> PyResult<f64> {
    let gain = match gain {
        "exponential" | "exp" => Gain::Exponential,
        "linear" => Gain::Linear,
        _ => return Err(PyValueError::new_err(format!("unknown gain {gain}"))),
    };
    let mut q = Qrels::new();
    for (doc, grade) in &qrels {
        q.insert("q", doc, *grade).map_err(core_err)?;
    }
    Ok(evalx::ndcg_at_k(
        &RankedList::from_order("q", ranking),
        &q,
        k,
        gain,
    ))
}

/// Paired two-sided t-test on `a - b`.
#[pyfunction]
fn paired_ttest<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let t = evalx::paired_ttest(&a, &b).map_err(core_err)?;
    let d = PyDict::new(py);
    d.set_item("t", t.t)?;
    d.set_item("p", t.p)?;
    d.set_item("df", t.df)?;
    d.set_item("mean_diff", t.mean_diff)?;
    Ok(d)
}

/// Softmax cross-entropy against the teacher's top document; `(loss, grad)`.
#[pyfunction]
fn ce_loss(scores: Vec<f64>, top1: usize) -> PyResult<(f64, Vec<f64>)> {
    train::ce_loss(&scores, top1).map_err(core_err)
}

/// Pairwise logistic loss over teacher ranks (0 is best); `(loss, grad)`.
#[pyfunction]
fn ranknet_loss(scores: Vec<f64>, ranks: Vec<usize>) -> PyResult<(f64, Vec<f64>)> {
    train::ranknet_loss(&scores, &ranks).map_err(core_err)
}

/// Forward masking of the response region. Returns `(tokens, mask_flags, mask_probs)`.
#[pyfunction]
#[pyo3(signature = (tokens, prompt_len, t, identifiers, epsilon = corruption::DEFAULT_EPSILON,
    strategy = "docid_mask", seed = 0))]
#[allow(clippy::type_complexity)]
fn corrupt(
    tokens: Vec<String>,
    prompt_len: usize,
    t: f64,
    identifiers: Vec<String>,
    epsilon: f64,
    strategy: &str,
    seed: u64,
) -> PyResult<(Vec<String>, Vec<bool>, Vec<f64>)> {
    let strategy = match strategy {
        "docid_mask" => MaskStrategy::DocidMask,
        "random_mask" => MaskStrategy::RandomMask,
        _ => {
            return Err(PyValueError::new_err(format!(
                "unknown strategy {strategy}"
            )))
        }
    };
    let cfg = CorruptionConfig {
        epsilon,
        strategy,
        seed,
    };
    let s = corruption::corrupt(&tokens, prompt_len, t, &cfg, &identifiers).map_err(core_err)?;
    Ok((s.tokens, s.mask_flags, s.mask_probs))
}

/// Seeded benchmark. Returns a dict with `queries` (`[(qid, text)]`),
/// `candidates` (`{qid: [(doc_id, text)]}` in first-stage order), `qrels`
/// (`{qid: {doc_id: grade}}`) and an `oracle` over the hidden relevance.
#[pyfunction]
#[pyo3(signature = (num_queries, num_docs, seed = 0, out_dir = None))]
fn generate_synthetic<'py>(
    py: Python<'py>,
    num_queries: usize,
    num_docs: usize,
    seed: u64,
    out_dir: Option<std::path::PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let ds =
        diffurank_core::synth::generate_synthetic(num_queries, num_docs, seed).map_err(core_err)?;
    if let Some(dir) = out_dir {
        ds.write_to(dir).map_err(core_err)?;
    }
    let queries: Vec<(String, String)> = ds
        .queries
        .iter()
        .map(|q| (q.query_id.clone(), q.text.clone()))
        .collect();
    let candidates = PyDict::new(py);
    for input in ds.inputs() {
        let docs: Vec<(String, String)> =
            input.docs.into_iter().map(|d| (d.doc_id, d.text)).collect();
        candidates.set_item(input.query.query_id, docs)?;
    }
    let qrels = PyDict::new(py);
    for (q, d, g) in ds.qrels.iter_sorted() {
        let inner = match qrels.get_item(q)? {
            Some(x) => x.cast_into::<PyDict>()?,
            None => {
                let x = PyDict::new(py);
                qrels.set_item(q, &x)?;
                x
            }
        };
        inner.set_item(d, g)?;
    }
    let out = PyDict::new(py);
    out.set_item("queries", queries)?;
    out.set_item("candidates", candidates)?;
    out.set_item("qrels", qrels)?;
    out.set_item("oracle", PyOracle { cfg: ds.oracle })?;
    Ok(out)
}

#[pymodule]
fn diffurank(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOracle>()?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force, m)?)?;
    m.add_function(wrap_pyfunction!(rerank, m)?)?;
    m.add_function(wrap_pyfunction!(sample_permutation, m)?)?;
    m.add_function(wrap_pyfunction!(repair, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg, m)?)?;
    m.add_function(wrap_pyfunction!(paired_ttest, m)?)?;
    m.add_function(wrap_pyfunction!(ce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ranknet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(corrupt, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    Ok(())
}
