//! Evaluation: NDCG@k, permutation validity, paired t-tests and the
//! per-step filling statistics of the permutation sampler.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::orchestrate::WindowTrace;
use crate::types::RankedList;

/// Graded judgments: query_id -> doc_id -> grade.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Qrels {
    judgments: BTreeMap<String, HashMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Qrels::default()
    }

    /// Fails if the pair was already judged.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Result<()> {
        let prev = self
            .judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
        if prev.is_some() {
            return Err(Error::validation(format!(
                "duplicate judgment for ({query_id}, {doc_id})"
            )));
        }
        Ok(())
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|d| d.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn for_query(&self, query_id: &str) -> Option<&HashMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(query_id, doc_id, grade)` sorted by query then doc.
    pub fn iter_sorted(&self) -> Vec<(&str, &str, u32)> {
        let mut out = Vec::with_capacity(self.len());
        for (q, docs) in &self.judgments {
            let mut ds: Vec<_> = docs.iter().collect();
            ds.sort();
            out.extend(ds.into_iter().map(|(d, g)| (q.as_str(), d.as_str(), *g)));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// `2^g - 1`
    #[default]
    Exponential,
    /// `g`
    Linear,
}

impl Gain {
    fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
            Gain::Linear => grade as f64,
        }
    }
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k of one ranked list; queries without relevant documents score 0.
pub fn ndcg_at_k(run: &RankedList, qrels: &Qrels, k: usize, gain: Gain) -> f64 {
    let k = k.max(1);
    let Some(judged) = qrels.for_query(&run.query_id) else {
        return 0.0;
    };
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return 0.0;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter().take(k).map(|g| gain.apply(g)));
    let actual = dcg(run
        .entries
        .iter()
        .take(k)
        .map(|e| gain.apply(qrels.grade(&run.query_id, &e.doc_id))));
    actual / idcg
}

pub fn mean_ndcg(runs: &[RankedList], qrels: &Qrels, k: usize, gain: Gain) -> f64 {
    if runs.is_empty() {
        return 0.0;
    }
    runs.iter()
        .map(|r| ndcg_at_k(r, qrels, k, gain))
        .sum::<f64>()
        / runs.len() as f64
}

/// Percentage of windows whose raw decoded output was a valid permutation;
/// `None` for an empty trace set.
pub fn correct_rate(traces: &[WindowTrace]) -> Option<f64> {
    if traces.is_empty() {
        return None;
    }
    let valid = traces.iter().filter(|t| t.valid).count();
    Some(100.0 * valid as f64 / traces.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub df: usize,
    pub mean_diff: f64,
}

impl TTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p <= alpha
    }
}

/// Paired Student's t-test on `a - b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::validation("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTest {
            t,
            p,
            df,
            mean_diff: mean,
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(TTest {
        t,
        p: two_sided_p(t, df as f64),
        df,
        mean_diff: mean,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom, via
/// `I_{df / (df + t^2)}(df / 2, 1 / 2)`.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// First-fill counts `h`, eligibility counts `e` and their ratio `p`, each
/// indexed `[step][position]` with steps 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillingDynamics {
    pub k: usize,
    pub positions: usize,
    pub traces: usize,
    pub h: Vec<Vec<u64>>,
    pub e: Vec<Vec<u64>>,
    pub p: Vec<Vec<f64>>,
}

impl FillingDynamics {
    /// Mean 1-based step at which `position` was first filled.
    pub fn mean_first_fill_step(&self, position: usize) -> Option<f64> {
        let total: u64 = self.h.iter().map(|row| row[position]).sum();
        if total == 0 {
            return None;
        }
        let weighted: u64 = self
            .h
            .iter()
            .enumerate()
            .map(|(t, row)| (t as u64 + 1) * row[position])
            .sum();
        Some(weighted as f64 / total as f64)
    }

    /// Writes `p` as a steps x positions grid; cells with `e == 0` are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        header.extend((1..=self.positions).map(|i| format!("pos{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for t in 0..self.k {
            let mut row = vec![(t + 1).to_string()];
            row.extend((0..self.positions).map(|i| {
                if self.e[t][i] == 0 {
                    String::new()
                } else {
                    format!("{:.6}", self.p[t][i])
                }
            }));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes one of the count grids (`h` or `e`).
    pub fn write_counts_csv<W: Write>(&self, counts: &[Vec<u64>], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        header.extend((1..=self.positions).map(|i| format!("pos{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for (t, row) in counts.iter().enumerate() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Aggregates which positions each step filled first across `traces`.
///
/// Windows of different sizes may be mixed; a position only counts for
/// traces long enough to have it.
pub fn filling_dynamics(traces: &[WindowTrace], k: usize) -> Result<FillingDynamics> {
    if k == 0 {
        return Err(Error::validation("K must be >= 1"));
    }
    let positions = traces.iter().map(|t| t.n).max().unwrap_or(0);
    let mut h = vec![vec![0u64; positions]; k];
    let mut e = vec![vec![0u64; positions]; k];
    for (idx, trace) in traces.iter().enumerate() {
        if trace.k != k {
            return Err(Error::validation(format!(
                "trace {idx} ({} window {}) was decoded with K={}, expected {k}",
                trace.query_id, trace.window, trace.k
            )));
        }
        let mut first = vec![None; trace.n];
        for step in &trace.steps {
            if step.step == 0 || step.step > k {
                return Err(Error::validation(format!(
                    "trace {idx} has step {} outside 1..={k}",
                    step.step
                )));
            }
            for f in &step.filled {
                if f.pos >= trace.n {
                    return Err(Error::validation(format!(
                        "trace {idx} fills position {} of a {}-slot window",
                        f.pos, trace.n
                    )));
                }
                first[f.pos].get_or_insert(step.step - 1);
            }
        }
        for (pos, fill) in first.iter().enumerate() {
            let last_eligible = fill.unwrap_or(k - 1);
            for row in e.iter_mut().take(last_eligible + 1) {
                row[pos] += 1;
            }
            if let Some(t) = fill {
                h[*t][pos] += 1;
            }
        }
    }
    let p = h
        .iter()
        .zip(&e)
        .map(|(hr, er)| {
            hr.iter()
                .zip(er)
                .map(|(&hv, &ev)| if ev == 0 { 0.0 } else { hv as f64 / ev as f64 })
                .collect()
        })
        .collect();
    Ok(FillingDynamics {
        k,
        positions,
        traces: traces.len(),
        h,
        e,
        p,
    })
}

/// Per-query metric rows plus a final `all` row with the mean.
pub fn write_metric_report<W: Write>(
    out: W,
    metric: &str,
    per_query: &[(String, f64)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["query_id", "metric", "value"])
        .map_err(csv_err)?;
    for (q, v) in per_query {
        w.write_record([q.as_str(), metric, &format!("{v:.6}")])
            .map_err(csv_err)?;
    }
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.iter().map(|(_, v)| v).sum::<f64>() / per_query.len() as f64
    };
    w.write_record(["all", metric, &format!("{mean:.6}")])
        .map_err(csv_err)?;
    w.flush()?;
    Ok(())
}
