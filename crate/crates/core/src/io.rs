//! Loaders and writers for corpora, queries, TREC run/qrels files and
//! JSON-lines traces.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalx::Qrels;
use crate::orchestrate::{RerankInput, RunLogRecord, WindowTrace};
use crate::types::{Document, Query, RankedEntry, RankedList};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Nonblank lines with their 1-based line numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Debug, Deserialize)]
struct CorpusLine {
    doc_id: String,
    text: String,
    #[serde(default)]
    title: Option<String>,
}

/// Documents in file order with an id index.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_docs(docs: Vec<Document>) -> Result<Self> {
        let mut index = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if index.insert(d.doc_id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate doc_id {}", d.doc_id)));
            }
        }
        Ok(Corpus { docs, index })
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.index.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// JSON lines `{doc_id, text [, title]}`; a title is prepended to the text.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in lines(path)? {
        let rec: CorpusLine =
            serde_json::from_str(&line).map_err(|e| parse_err(path, n, e.to_string()))?;
        let text = match rec.title.filter(|t| !t.is_empty()) {
            Some(title) => format!("{title} {}", rec.text),
            None => rec.text,
        };
        let doc = Document::new(rec.doc_id, text).map_err(|e| parse_err(path, n, e.to_string()))?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(parse_err(
                path,
                n,
                format!("duplicate doc_id {}", doc.doc_id),
            ));
        }
        docs.push(doc);
    }
    Corpus::from_docs(docs)
}

pub fn write_corpus(docs: &[Document], path: impl AsRef<Path>) -> Result<()> {
    let mut w = create(path.as_ref())?;
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Tab-separated `query_id \t text`.
pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in lines(path)? {
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, n, "expected query_id<TAB>text"))?;
        let q =
            Query::new(id.trim(), text.trim()).map_err(|e| parse_err(path, n, e.to_string()))?;
        if !seen.insert(q.query_id.clone()) {
            return Err(parse_err(
                path,
                n,
                format!("duplicate query_id {}", q.query_id),
            ));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn write_queries(queries: &[Query], path: impl AsRef<Path>) -> Result<()> {
    let mut w = create(path.as_ref())?;
    for q in queries {
        writeln!(w, "{}\t{}", q.query_id, q.text)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a TREC run file: `query_id Q0 doc_id rank score tag`. Queries keep
/// first-appearance order; entries are ordered by rank, which must run
/// `1..=n` without gaps or repeated documents.
pub fn load_run(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    let path = path.as_ref();
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(usize, RankedEntry)>> = HashMap::new();
    for (n, line) in lines(path)? {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(parse_err(
                path,
                n,
                format!("expected 6 fields, found {}", f.len()),
            ));
        }
        let rank: usize = f[3]
            .parse()
            .map_err(|_| parse_err(path, n, format!("bad rank {:?}", f[3])))?;
        let score: f64 = f[4]
            .parse()
            .map_err(|_| parse_err(path, n, format!("bad score {:?}", f[4])))?;
        if rank == 0 {
            return Err(parse_err(path, n, "ranks start at 1"));
        }
        let qid = f[0].to_string();
        let group = groups.entry(qid.clone()).or_insert_with(|| {
            order.push(qid.clone());
            Vec::new()
        });
        group.push((
            n,
            RankedEntry {
                doc_id: f[2].to_string(),
                score,
                rank,
            },
        ));
    }
    let mut out = Vec::with_capacity(order.len());
    for qid in order {
        let mut entries = groups.remove(&qid).unwrap_or_default();
        entries.sort_by_key(|(_, e)| e.rank);
        let mut seen = HashSet::new();
        for (i, (n, e)) in entries.iter().enumerate() {
            if e.rank != i + 1 {
                return Err(parse_err(
                    path,
                    *n,
                    format!("query {qid}: ranks are not consecutive at rank {}", e.rank),
                ));
            }
            if !seen.insert(e.doc_id.clone()) {
                return Err(parse_err(
                    path,
                    *n,
                    format!("query {qid}: doc {} repeated", e.doc_id),
                ));
            }
        }
        out.push(RankedList {
            query_id: qid,
            entries: entries.into_iter().map(|(_, e)| e).collect(),
        });
    }
    Ok(out)
}

/// First-stage candidates: a TREC run truncated to `top_k` per query and
/// resolved against the corpus.
pub fn load_candidates(
    path: impl AsRef<Path>,
    corpus: &Corpus,
    top_k: usize,
) -> Result<Vec<(String, Vec<Document>)>> {
    let runs = load_run(path)?;
    let mut missing: Vec<String> = Vec::new();
    let mut out = Vec::with_capacity(runs.len());
    for run in runs {
        let mut docs = Vec::with_capacity(run.len().min(top_k));
        for e in run.entries.into_iter().take(top_k) {
            match corpus.get(&e.doc_id) {
                Some(d) => docs.push(d.clone()),
                None => {
                    if !missing.contains(&e.doc_id) {
                        missing.push(e.doc_id)
                    }
                }
            }
        }
        out.push((run.query_id, docs));
    }
    if !missing.is_empty() {
        return Err(Error::MissingDocuments(missing));
    }
    Ok(out)
}

/// Joins candidates with query texts; queries without candidates are skipped.
pub fn rerank_inputs(
    queries: &[Query],
    candidates: Vec<(String, Vec<Document>)>,
) -> Result<Vec<RerankInput>> {
    let by_id: HashMap<&str, &Query> = queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    candidates
        .into_iter()
        .map(|(qid, docs)| {
            let query = by_id
                .get(qid.as_str())
                .ok_or_else(|| Error::validation(format!("candidates for unknown query {qid}")))?;
            Ok(RerankInput {
                query: (*query).clone(),
                docs,
            })
        })
        .collect()
}

/// TREC qrels: `query_id iteration doc_id grade`.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let mut qrels = Qrels::new();
    for (n, line) in lines(path)? {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(parse_err(
                path,
                n,
                format!("expected 4 fields, found {}", f.len()),
            ));
        }
        let grade: i64 = f[3]
            .parse()
            .map_err(|_| parse_err(path, n, format!("bad grade {:?}", f[3])))?;
        // negative judgments are treated as non-relevant
        qrels
            .insert(f[0], f[2], grade.max(0) as u32)
            .map_err(|e| parse_err(path, n, e.to_string()))?;
    }
    Ok(qrels)
}

pub fn write_qrels(qrels: &Qrels, path: impl AsRef<Path>) -> Result<()> {
    let mut w = create(path.as_ref())?;
    for (q, d, g) in qrels.iter_sorted() {
        writeln!(w, "{q} 0 {d} {g}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_run_to<W: Write>(results: &[RankedList], mut out: W, tag: &str) -> Result<()> {
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(Error::validation(format!(
            "run tag {tag:?} must be one nonblank word"
        )));
    }
    for list in results {
        list.validate()?;
        for e in &list.entries {
            writeln!(
                out,
                "{} Q0 {} {} {:.6} {tag}",
                list.query_id, e.doc_id, e.rank, e.score
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `query_id Q0 doc_id rank score tag` lines, queries in input order.
pub fn write_run(results: &[RankedList], path: impl AsRef<Path>, tag: &str) -> Result<()> {
    write_run_to(results, create(path.as_ref())?, tag)
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut w = create(path.as_ref())?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    lines(path)?
        .into_iter()
        .map(|(n, line)| serde_json::from_str(&line).map_err(|e| parse_err(path, n, e.to_string())))
        .collect()
}

/// One record per decoded window.
pub fn write_traces(traces: &[WindowTrace], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(traces, path)
}

pub fn read_traces(path: impl AsRef<Path>) -> Result<Vec<WindowTrace>> {
    read_jsonl(path)
}

pub fn write_run_log(records: &[RunLogRecord], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(records, path)
}

/// Default location of the run log next to a run file.
pub fn run_log_path(run_path: &Path) -> PathBuf {
    let mut name = run_path.file_name().unwrap_or_default().to_os_string();
    name.push(".log.jsonl");
    run_path.with_file_name(name)
}
