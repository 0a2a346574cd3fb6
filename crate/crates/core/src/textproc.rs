//! Tokenization, vocabulary statistics, stopword and idf-based filtering,
//! and sparse TF-IDF vectors.
//!
//! Token rule: a token is a maximal run of alphanumeric characters and
//! hyphens, with leading/trailing hyphens trimmed. Everything else is a
//! boundary, so punctuation-only fragments disappear. The idf is the plain
//! unsmoothed ln(n_docs / df), which makes a term present in every document
//! score exactly zero.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense identifier of a vocabulary term, contiguous in `[0, |vocab|)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TermId(pub u32);

impl TermId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || c == '-'
}

/// Unicode word segmentation with the hyphen rule above. Tokens consisting
/// solely of punctuation are discarded; lowercasing is applied on request.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    let mut tokens = Vec::new();
    for piece in text.split(|c: char| !is_token_char(c)) {
        let trimmed = piece.trim_matches('-');
        if trimmed.is_empty() {
            continue;
        }
        if lowercase {
            tokens.push(trimmed.to_lowercase());
        } else {
            tokens.push(trimmed.to_string());
        }
    }
    tokens
}

#[derive(Debug, Clone)]
struct TermStat {
    term: String,
    /// Number of documents the term occurs in.
    df: u32,
    /// Total occurrences across the corpus.
    count: u64,
}

/// Per-term document frequencies and corpus counts over a fixed corpus.
///
/// Term ids are assigned by sorting terms lexicographically, so a vocabulary
/// built from the same corpus is identical regardless of document processing
/// order or sharding.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    terms: Vec<TermStat>,
    index: HashMap<String, TermId>,
    n_docs: usize,
    total_token_count: u64,
}

impl Vocabulary {
    /// Count document and corpus frequencies over tokenized documents.
    /// Terms whose corpus frequency is below `min_count` are excluded.
    pub fn build<D, S>(docs: &[D], min_count: u64) -> Result<Self>
    where
        D: AsRef<[S]>,
        S: AsRef<str>,
    {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut counts: HashMap<&str, (u32, u64)> = HashMap::new();
        let mut total_token_count = 0u64;
        let mut seen: HashSet<&str> = HashSet::new();
        for doc in docs {
            seen.clear();
            for token in doc.as_ref() {
                let token = token.as_ref();
                total_token_count += 1;
                let entry = counts.entry(token).or_insert((0, 0));
                entry.1 += 1;
                if seen.insert(token) {
                    entry.0 += 1;
                }
            }
        }

        let mut terms: Vec<TermStat> = counts
            .into_iter()
            .filter(|(_, (_, count))| *count >= min_count)
            .map(|(term, (df, count))| TermStat {
                term: term.to_string(),
                df,
                count,
            })
            .collect();
        terms.sort_by(|a, b| a.term.cmp(&b.term));

        let index = terms
            .iter()
            .enumerate()
            .map(|(i, stat)| (stat.term.clone(), TermId(i as u32)))
            .collect();

        Ok(Vocabulary {
            terms,
            index,
            n_docs: docs.len(),
            total_token_count,
        })
    }

    /// Rebuild from persisted per-term statistics. Terms must be unique;
    /// ids are reassigned by the usual lexicographic rule.
    pub fn from_stats(
        stats: Vec<(String, u32, u64)>,
        n_docs: usize,
        total_token_count: u64,
    ) -> Result<Self> {
        let mut terms: Vec<TermStat> = stats
            .into_iter()
            .map(|(term, df, count)| TermStat { term, df, count })
            .collect();
        terms.sort_by(|a, b| a.term.cmp(&b.term));
        let mut index = HashMap::with_capacity(terms.len());
        for (i, stat) in terms.iter().enumerate() {
            if index.insert(stat.term.clone(), TermId(i as u32)).is_some() {
                return Err(Error::Data(format!(
                    "duplicate term {:?} in vocabulary stats",
                    stat.term
                )));
            }
        }
        Ok(Vocabulary {
            terms,
            index,
            n_docs,
            total_token_count,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn total_token_count(&self) -> u64 {
        self.total_token_count
    }

    pub fn term_id(&self, term: &str) -> Option<TermId> {
        self.index.get(term).copied()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.index.contains_key(term)
    }

    pub fn term(&self, id: TermId) -> &str {
        &self.terms[id.index()].term
    }

    pub fn df(&self, id: TermId) -> u32 {
        self.terms[id.index()].df
    }

    pub fn count(&self, id: TermId) -> u64 {
        self.terms[id.index()].count
    }

    /// Iterate `(term, df, count)` in term-id order.
    pub fn iter_stats(&self) -> impl Iterator<Item = (&str, u32, u64)> + '_ {
        self.terms
            .iter()
            .map(|stat| (stat.term.as_str(), stat.df, stat.count))
    }

    /// Inverse document frequency, ln(n_docs / df).
    pub fn idf(&self, term: &str) -> Result<f64> {
        let id = self
            .term_id(term)
            .ok_or_else(|| Error::UnknownTerm(term.to_string()))?;
        Ok(self.idf_by_id(id))
    }

    pub fn idf_by_id(&self, id: TermId) -> f64 {
        (self.n_docs as f64 / self.df(id) as f64).ln()
    }
}

/// Drops stopwords, out-of-vocabulary tokens, and in-vocabulary tokens whose
/// idf falls below `idf_min`. Applying the filter twice equals applying it
/// once.
pub fn filter_function_words(
    tokens: &[String],
    vocab: &Vocabulary,
    stopwords: &HashSet<String>,
    idf_min: f64,
) -> Vec<String> {
    tokens
        .iter()
        .filter(|token| {
            if stopwords.contains(token.as_str()) {
                return false;
            }
            match vocab.term_id(token) {
                Some(id) => vocab.idf_by_id(id) >= idf_min,
                None => false,
            }
        })
        .cloned()
        .collect()
}

/// Sorted sparse vector of `(term_id, weight)` pairs over a fixed-width
/// id space. Zero weights are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector<T> {
    entries: Vec<(TermId, T)>,
    dim: usize,
}

impl<T: Scalar> SparseVector<T> {
    /// Builds from unsorted entries; duplicate ids are summed and zero
    /// weights dropped.
    pub fn from_entries(mut entries: Vec<(TermId, T)>, dim: usize) -> Self {
        entries.sort_by_key(|(id, _)| *id);
        let mut merged: Vec<(TermId, T)> = Vec::with_capacity(entries.len());
        for (id, w) in entries {
            match merged.last_mut() {
                Some((last_id, last_w)) if *last_id == id => *last_w += w,
                _ => merged.push((id, w)),
            }
        }
        merged.retain(|(_, w)| *w != T::zero());
        SparseVector {
            entries: merged,
            dim,
        }
    }

    pub fn zero(dim: usize) -> Self {
        SparseVector {
            entries: Vec::new(),
            dim,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(TermId, T)] {
        &self.entries
    }

    pub fn norm(&self) -> T {
        self.entries
            .iter()
            .map(|&(_, w)| w * w)
            .fold(T::zero(), |acc, x| acc + x)
            .sqrt()
    }

    /// Scales all weights so the L2 norm is one; a zero vector stays zero.
    pub fn normalize(&mut self) {
        let norm = self.norm();
        if norm > T::zero() {
            for (_, w) in &mut self.entries {
                *w = *w / norm;
            }
        }
    }

    pub fn dot(&self, other: &SparseVector<T>) -> Result<T> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let mut acc = T::zero();
        let (mut i, mut j) = (0usize, 0usize);
        while i < self.entries.len() && j < other.entries.len() {
            let (ida, wa) = self.entries[i];
            let (idb, wb) = other.entries[j];
            match ida.cmp(&idb) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += wa * wb;
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(acc)
    }

    /// Cosine similarity; zero if either side is the zero vector.
    pub fn cosine(&self, other: &SparseVector<T>) -> Result<T> {
        let denom = self.norm() * other.norm();
        if denom == T::zero() {
            return Ok(T::zero());
        }
        let cos = self.dot(other)? / denom;
        Ok(cos.min(T::one()).max(-T::one()))
    }
}

/// TF-IDF vector of a token list: weight(t) = count(t) * idf(t), then
/// L2-normalized. Tokens outside the vocabulary are skipped; an input whose
/// every weight vanishes yields the zero vector.
pub fn tfidf_vector<T: Scalar>(tokens: &[String], vocab: &Vocabulary) -> SparseVector<T> {
    let mut counts: HashMap<TermId, u64> = HashMap::new();
    for token in tokens {
        if let Some(id) = vocab.term_id(token) {
            *counts.entry(id).or_insert(0) += 1;
        }
    }
    let entries = counts
        .into_iter()
        .map(|(id, count)| {
            let weight = count as f64 * vocab.idf_by_id(id);
            (id, T::from_f64_lossy(weight))
        })
        .collect();
    let mut vector = SparseVector::from_entries(entries, vocab.len());
    vector.normalize();
    vector
}

/// Loads a stopword file: UTF-8, one token per line, `#` lines ignored.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut stopwords = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        stopwords.insert(trimmed.to_string());
    }
    Ok(stopwords)
}
