//! Word-embedding table used to vet substitution candidates.
//!
//! The on-disk format is one word per line: the word itself followed by its
//! vector components, all whitespace-separated. The dimension is inferred
//! from the first line and every other line must agree. Vectors are
//! normalized to unit length at load time, so cosine similarity between two
//! table entries reduces to a dot product. Lookups are case-folded.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Unit-normalized word vectors with case-folded lookup.
#[derive(Debug, Clone)]
pub struct SynonymEmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
}

impl SynonymEmbeddingTable {
    /// Builds a table from `(word, vector)` rows. Rows are normalized;
    /// duplicate (case-folded) words and zero vectors are rejected.
    pub fn from_rows(rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::config("embedding table has no rows"));
        }
        let dim = rows[0].1.len();
        if dim == 0 {
            return Err(Error::config("embedding table vectors are empty"));
        }
        let mut words = Vec::with_capacity(rows.len());
        let mut index = HashMap::with_capacity(rows.len());
        let mut vectors = Array2::zeros((rows.len(), dim));
        for (i, (word, vec)) in rows.into_iter().enumerate() {
            if vec.len() != dim {
                return Err(Error::config(format!(
                    "embedding row {i} has {} components, expected {dim}",
                    vec.len()
                )));
            }
            let folded = word.to_lowercase();
            if index.insert(folded.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate table word `{folded}`")));
            }
            let norm = vec.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::config(format!(
                    "table word `{folded}` has a zero or non-finite vector"
                )));
            }
            for (j, v) in vec.iter().enumerate() {
                vectors[(i, j)] = v / norm;
            }
            words.push(folded);
        }
        Ok(Self { dim, words, index, vectors })
    }

    /// Loads the whitespace-separated text format described in the module
    /// docs. Blank lines are skipped; any malformed line is an error.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        let mut dim: Option<usize> = None;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts
                .next()
                .ok_or_else(|| Error::parse(lineno + 1, "missing word"))?
                .to_string();
            let vec: Vec<f64> = parts
                .map(|p| {
                    p.parse::<f64>()
                        .map_err(|_| Error::parse(lineno + 1, format!("bad float `{p}`")))
                })
                .collect::<Result<_>>()?;
            if vec.is_empty() {
                return Err(Error::parse(lineno + 1, "word has no vector components"));
            }
            match dim {
                None => dim = Some(vec.len()),
                Some(d) if d != vec.len() => {
                    return Err(Error::parse(
                        lineno + 1,
                        format!("expected {d} components, found {}", vec.len()),
                    ));
                }
                _ => {}
            }
            rows.push((word, vec));
        }
        Self::from_rows(rows)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// All words, in table order (case-folded).
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(&word.to_lowercase())
    }

    /// Unit vector for a word, if present.
    pub fn vector(&self, word: &str) -> Option<ArrayView1<'_, f64>> {
        self.index
            .get(&word.to_lowercase())
            .map(|&i| self.vectors.row(i))
    }

    /// Cosine similarity between two table words; `None` if either is absent.
    pub fn cosine(&self, a: &str, b: &str) -> Option<f64> {
        let va = self.vector(a)?;
        let vb = self.vector(b)?;
        Some(va.dot(&vb))
    }

    /// Up to `limit` nearest neighbours of `word` by cosine, descending, the
    /// word itself excluded. Ties break toward the lexicographically smaller
    /// word so the ordering is reproducible.
    pub fn neighbors(&self, word: &str, limit: usize) -> Vec<(String, f64)> {
        let folded = word.to_lowercase();
        let Some(&i) = self.index.get(&folded) else {
            return Vec::new();
        };
        let target = self.vectors.row(i);
        let mut scored: Vec<(String, f64)> = self
            .words
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, w)| (w.clone(), self.vectors.row(j).dot(&target)))
            .collect();
        scored.sort_by(|(wa, ca), (wb, cb)| {
            cb.partial_cmp(ca)
                .expect("cosines are finite")
                .then_with(|| wa.cmp(wb))
        });
        scored.truncate(limit);
        scored
    }
}

/// Keeps the candidates whose cosine similarity to `original` meets
/// `threshold`; candidates missing from the table are dropped. The second
/// return value reports whether the original word itself was missing, in
/// which case the kept set is empty by definition.
///
/// Candidates equal to the original (case-folded) are dropped, and
/// duplicates keep only their first occurrence, so the result is a set in
/// proposal order.
pub fn filter_candidates(
    original: &str,
    candidates: &[String],
    table: &SynonymEmbeddingTable,
    threshold: f64,
) -> (Vec<String>, bool) {
    let folded = original.to_lowercase();
    let Some(target) = table.vector(&folded) else {
        return (Vec::new(), true);
    };
    let mut seen = std::collections::HashSet::new();
    let mut kept = Vec::new();
    for cand in candidates {
        let cf = cand.to_lowercase();
        if cf == folded || !seen.insert(cf.clone()) {
            continue;
        }
        if let Some(v) = table.vector(&cf) {
            if v.dot(&target) >= threshold {
                kept.push(cf);
            }
        }
    }
    (kept, false)
}
