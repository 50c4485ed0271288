//! Domain types shared by every decoder: queries, documents, identifier
//! alphabets, permutations, ranked lists and probability/cost matrices.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to probabilities before taking `-ln` so zero cells stay finite.
pub const COST_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let query = Query {
            query_id: query_id.into(),
            text: text.into(),
        };
        if query.query_id.is_empty() {
            return Err(Error::validation("query_id must be nonempty"));
        }
        if query.text.is_empty() {
            return Err(Error::validation(format!(
                "query {} has empty text",
                query.query_id
            )));
        }
        Ok(query)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let doc = Document {
            doc_id: doc_id.into(),
            text: text.into(),
        };
        if doc.doc_id.is_empty() {
            return Err(Error::validation("doc_id must be nonempty"));
        }
        Ok(doc)
    }

    /// Keeps at most `max_words` whitespace-separated words.
    pub fn truncated(&self, max_words: usize) -> Document {
        let text = self
            .text
            .split_whitespace()
            .take(max_words)
            .collect::<Vec<_>>()
            .join(" ");
        Document {
            doc_id: self.doc_id.clone(),
            text,
        }
    }
}

/// Ordered set of distinct identifier labels handed out to candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifierAlphabet {
    labels: Vec<String>,
}

impl IdentifierAlphabet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for label in &labels {
            if label.is_empty() {
                return Err(Error::validation("identifier labels must be nonempty"));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate identifier label {label}"
                )));
            }
        }
        Ok(IdentifierAlphabet { labels })
    }

    /// `A`..`Z`, then `AA`, `BB`, .. `ZZ`, then `AAA`, ...
    pub fn standard(capacity: usize) -> Self {
        let labels = (0..capacity)
            .map(|k| {
                let letter = char::from(b'A' + (k % 26) as u8);
                std::iter::repeat_n(letter, k / 26 + 1).collect()
            })
            .collect();
        IdentifierAlphabet { labels }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// One reranking instance: a query and up to `alphabet.len()` tagged documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub query: Query,
    docs: Vec<Document>,
    alphabet: IdentifierAlphabet,
}

impl CandidateList {
    pub fn new(query: Query, docs: Vec<Document>, alphabet: IdentifierAlphabet) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::validation(format!(
                "query {} has no candidate documents",
                query.query_id
            )));
        }
        if docs.len() > alphabet.len() {
            return Err(Error::Capacity {
                capacity: alphabet.len(),
                requested: docs.len(),
            });
        }
        let mut seen = HashSet::new();
        for doc in &docs {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate doc_id {} for query {}",
                    doc.doc_id, query.query_id
                )));
            }
        }
        Ok(CandidateList {
            query,
            docs,
            alphabet,
        })
    }

    /// Uses a standard alphabet sized to the list.
    pub fn with_standard_alphabet(query: Query, docs: Vec<Document>) -> Result<Self> {
        let alphabet = IdentifierAlphabet::standard(docs.len());
        Self::new(query, docs, alphabet)
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn alphabet(&self) -> &IdentifierAlphabet {
        &self.alphabet
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Label of the `index`-th document.
    pub fn label(&self, index: usize) -> &str {
        &self.alphabet.labels()[index]
    }

    /// Only the labels actually handed out, in candidate order.
    pub fn used_labels(&self) -> &[String] {
        &self.alphabet.labels()[..self.docs.len()]
    }

    pub fn tagged(&self) -> impl Iterator<Item = (&str, &Document)> {
        self.used_labels()
            .iter()
            .map(String::as_str)
            .zip(self.docs.iter())
    }
}

/// Gives document `k` the `k`-th label of `alphabet`.
pub fn assign_identifiers(
    query: Query,
    docs: Vec<Document>,
    alphabet: IdentifierAlphabet,
) -> Result<CandidateList> {
    CandidateList::new(query, docs, alphabet)
}

/// Entry `i` is the identifier index placed at (0-based) rank position `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        if n == 0 {
            return Err(Error::validation("permutation must be nonempty"));
        }
        let mut seen = vec![false; n];
        for &idx in &mapping {
            if idx >= n {
                return Err(Error::validation(format!(
                    "permutation index {idx} out of range for length {n}"
                )));
            }
            if std::mem::replace(&mut seen[idx], true) {
                return Err(Error::validation(format!(
                    "permutation repeats index {idx}"
                )));
            }
        }
        Ok(Permutation(mapping))
    }

    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    /// `inverse()[id]` is the rank position of identifier `id`.
    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (pos, &id) in self.0.iter().enumerate() {
            inv[id] = pos;
        }
        Permutation(inv)
    }

    /// Reorders `items` so that position `i` holds `items[self[i]]`.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.0.iter().map(|&i| items[i].clone()).collect()
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(value: Vec<usize>) -> Result<Self> {
        Permutation::new(value)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Ranks documents already in final order, scoring position `i` as `M - i`.
    pub fn from_order(query_id: impl Into<String>, doc_ids: Vec<String>) -> Self {
        let m = doc_ids.len();
        let entries = doc_ids
            .into_iter()
            .enumerate()
            .map(|(i, doc_id)| RankedEntry {
                doc_id,
                score: (m - i) as f64,
                rank: i + 1,
            })
            .collect();
        RankedList {
            query_id: query_id.into(),
            entries,
        }
    }

    /// Sorts by descending score; equal scores keep their input order.
    pub fn from_scores(query_id: impl Into<String>, scored: Vec<(String, f64)>) -> Self {
        let mut order: Vec<usize> = (0..scored.len()).collect();
        order.sort_by(|&a, &b| scored[b].1.total_cmp(&scored[a].1).then(a.cmp(&b)));
        let entries = order
            .into_iter()
            .enumerate()
            .map(|(i, k)| RankedEntry {
                doc_id: scored[k].0.clone(),
                score: scored[k].1,
                rank: i + 1,
            })
            .collect();
        RankedList {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// Checks consecutive ranks, distinct ids and non-increasing scores.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.rank != i + 1 {
                return Err(Error::validation(format!(
                    "query {}: rank {} at position {}",
                    self.query_id,
                    e.rank,
                    i + 1
                )));
            }
            if !seen.insert(e.doc_id.as_str()) {
                return Err(Error::validation(format!(
                    "query {}: duplicate doc_id {}",
                    self.query_id, e.doc_id
                )));
            }
        }
        if self.entries.windows(2).any(|w| w[1].score > w[0].score) {
            return Err(Error::validation(format!(
                "query {}: scores increase with rank",
                self.query_id
            )));
        }
        Ok(())
    }

    /// Recovers the permutation of `cands` this list encodes.
    pub fn to_permutation(&self, cands: &CandidateList) -> Result<Permutation> {
        if self.entries.len() != cands.len() {
            return Err(Error::validation(format!(
                "ranking has {} entries, candidate list {}",
                self.entries.len(),
                cands.len()
            )));
        }
        let mapping = self
            .entries
            .iter()
            .map(|e| {
                cands
                    .docs()
                    .iter()
                    .position(|d| d.doc_id == e.doc_id)
                    .ok_or_else(|| {
                        Error::validation(format!("doc_id {} not among candidates", e.doc_id))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Permutation::new(mapping)
    }
}

/// Rank position `i` receives the document whose identifier index is `perm[i]`.
pub fn permutation_to_ranking(perm: &Permutation, cands: &CandidateList) -> Result<RankedList> {
    if perm.len() != cands.len() {
        return Err(Error::validation(format!(
            "permutation length {} does not match {} candidates",
            perm.len(),
            cands.len()
        )));
    }
    let ids = perm
        .as_slice()
        .iter()
        .map(|&k| cands.docs()[k].doc_id.clone())
        .collect();
    Ok(RankedList::from_order(cands.query.query_id.clone(), ids))
}

/// Nonnegative scores, one row per masked position, one column per allowed token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ProbMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::validation(format!(
                    "ragged probability rows: row {i} has {} columns, expected {n_cols}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::validation(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            if !row.iter().any(|&p| p > 0.0) {
                return Err(Error::validation(format!("row {i} has no positive entry")));
            }
            data.extend(row);
        }
        Ok(ProbMatrix {
            rows: n_rows,
            cols: n_cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Assignment costs; built from probabilities as `-ln(p + COST_FLOOR)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_probs(probs: &ProbMatrix) -> Self {
        CostMatrix {
            rows: probs.rows,
            cols: probs.cols,
            data: probs.data.iter().map(|p| -(p + COST_FLOOR).ln()).collect(),
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::validation(format!(
                    "ragged cost rows: row {i} has {} columns, expected {n_cols}",
                    row.len()
                )));
            }
            if row.iter().any(|c| !c.is_finite()) {
                return Err(Error::validation(format!("cost row {i} is not finite")));
            }
            data.extend(row);
        }
        Ok(CostMatrix {
            rows: n_rows,
            cols: n_cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn data(&self) -> &[f64] {
        &self.data
    }

    /// `sum_i C[i, perm[i]]`, accumulated in row order.
    pub fn total(&self, perm: &[usize]) -> f64 {
        perm.iter()
            .enumerate()
            .fold(0.0, |acc, (i, &j)| acc + self.get(i, j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(ids: &[&str]) -> Vec<Document> {
        ids.iter()
            .map(|id| Document::new(*id, format!("text of {id}")).unwrap())
            .collect()
    }

    fn query() -> Query {
        Query::new("q1", "what is a diffusion model").unwrap()
    }

    #[test]
    fn three_docs_get_abc() {
        let cands = assign_identifiers(
            query(),
            docs(&["x", "y", "z"]),
            IdentifierAlphabet::standard(26),
        )
        .unwrap();
        let labels: Vec<_> = cands.tagged().map(|(l, _)| l.to_string()).collect();
        assert_eq!(labels, ["A", "B", "C"]);
    }

    #[test]
    fn twenty_seventh_label_is_doubled() {
        let alphabet = IdentifierAlphabet::standard(60);
        assert_eq!(alphabet.label(25), Some("Z"));
        assert_eq!(alphabet.label(26), Some("AA"));
        assert_eq!(alphabet.label(27), Some("BB"));
        assert_eq!(alphabet.label(52), Some("AAA"));
        assert!(IdentifierAlphabet::new(alphabet.labels().to_vec()).is_ok());

        let ids: Vec<String> = (0..27).map(|i| format!("d{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let cands = CandidateList::with_standard_alphabet(query(), docs(&refs)).unwrap();
        assert_eq!(cands.label(26), "AA");
    }

    #[test]
    fn empty_and_oversized_lists_rejected() {
        assert!(matches!(
            assign_identifiers(query(), vec![], IdentifierAlphabet::standard(3)),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            assign_identifiers(
                query(),
                docs(&["a", "b", "c"]),
                IdentifierAlphabet::standard(2)
            ),
            Err(Error::Capacity {
                capacity: 2,
                requested: 3
            })
        ));
        assert!(
            assign_identifiers(query(), docs(&["a", "a"]), IdentifierAlphabet::standard(2))
                .is_err()
        );
    }

    #[test]
    fn alphabet_rejects_duplicates() {
        assert!(IdentifierAlphabet::new(vec!["A".into(), "A".into()]).is_err());
    }

    #[test]
    fn identity_and_reversal_rankings() {
        let two = CandidateList::with_standard_alphabet(query(), docs(&["dA", "dB"])).unwrap();
        let r = permutation_to_ranking(&Permutation::identity(2), &two).unwrap();
        assert_eq!(r.doc_ids().collect::<Vec<_>>(), ["dA", "dB"]);

        let three =
            CandidateList::with_standard_alphabet(query(), docs(&["dA", "dB", "dC"])).unwrap();
        let rev = Permutation::new(vec![2, 1, 0]).unwrap();
        let r = permutation_to_ranking(&rev, &three).unwrap();
        assert_eq!(r.doc_ids().collect::<Vec<_>>(), ["dC", "dB", "dA"]);
        assert_eq!(r.entries[0].score, 3.0);
        assert_eq!(r.entries[2].rank, 3);
        r.validate().unwrap();
        assert_eq!(r.to_permutation(&three).unwrap(), rev);
    }

    #[test]
    fn length_mismatch_rejected() {
        let two = CandidateList::with_standard_alphabet(query(), docs(&["dA", "dB"])).unwrap();
        assert!(permutation_to_ranking(&Permutation::identity(3), &two).is_err());
    }

    #[test]
    fn repeated_index_rejected() {
        assert!(Permutation::new(vec![0, 0, 2]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        assert!(serde_json::from_str::<Permutation>("[1,1]").is_err());
    }

    #[test]
    fn from_scores_ties_keep_input_order() {
        let r = RankedList::from_scores(
            "q",
            vec![("a".into(), 0.5), ("b".into(), 0.9), ("c".into(), 0.5)],
        );
        assert_eq!(r.doc_ids().collect::<Vec<_>>(), ["b", "a", "c"]);
        r.validate().unwrap();
    }

    #[test]
    fn cost_floor_keeps_zero_finite() {
        let p = ProbMatrix::from_rows(vec![vec![0.0, 1.0]]).unwrap();
        let c = CostMatrix::from_probs(&p);
        assert!(c.get(0, 0).is_finite());
        assert!((c.get(0, 0) - 27.631_021_115_928_547).abs() < 1e-9);
        assert!(c.get(0, 1).abs() < 1e-11);
    }

    #[test]
    fn prob_matrix_rejects_bad_rows() {
        assert!(ProbMatrix::from_rows(vec![vec![0.0, 0.0]]).is_err());
        assert!(ProbMatrix::from_rows(vec![vec![-0.1, 1.0]]).is_err());
        assert!(ProbMatrix::from_rows(vec![vec![0.5, 0.5], vec![1.0]]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn permutation_requires_bijection(mapping in prop::collection::vec(0usize..12, 1..12)) {
                let n = mapping.len();
                let mut sorted = mapping.clone();
                sorted.sort_unstable();
                let bijective = sorted == (0..n).collect::<Vec<_>>();
                prop_assert_eq!(Permutation::new(mapping).is_ok(), bijective);
            }

            #[test]
            fn ranking_round_trips(perm in (1usize..30).prop_flat_map(|n| Just((0..n).collect::<Vec<_>>()).prop_shuffle())) {
                let n = perm.len();
                let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
                let cands = CandidateList::with_standard_alphabet(
                    query(),
                    ids.iter().map(|id| Document::new(id.clone(), "t").unwrap()).collect(),
                ).unwrap();
                let perm = Permutation::new(perm).unwrap();
                let ranking = permutation_to_ranking(&perm, &cands).unwrap();
                ranking.validate().unwrap();
                prop_assert_eq!(ranking.to_permutation(&cands).unwrap(), perm);
            }
        }
    }
}
