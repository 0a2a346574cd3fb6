//! Article embeddings: a from-scratch PV-DBOW trainer with negative
//! sampling, plus a deterministic TF-IDF fallback embedder. Both produce
//! unit-normalized [`DocVector`]s consumed through one cosine interface.

mod io;
mod pvdbow;

pub use io::{load_doc_vectors, load_model, save_doc_vectors, save_model};
pub use pvdbow::train_pvdbow;

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::ingest::Article;
use crate::scalar::{log_sigmoid, sigmoid, Scalar};
use crate::textproc::{filter_function_words, tfidf_vector, tokenize, SparseVector, Vocabulary};

/// PV-DBOW hyperparameters. Defaults follow the classic paragraph-vector
/// lineage; every field is config-overridable.
#[derive(Debug, Clone, PartialEq)]
pub struct PvDbowParams {
    pub dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for PvDbowParams {
    fn default() -> Self {
        PvDbowParams {
            dim: 100,
            negatives: 5,
            epochs: 20,
            lr_start: 0.025,
            lr_end: 0.0001,
            min_count: 5,
            seed: 42,
        }
    }
}

impl PvDbowParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.negatives < 1 {
            return Err(Error::Config("negatives must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr_start > self.lr_end && self.lr_end > 0.0) {
            return Err(Error::Config(format!(
                "learning rates must satisfy lr_start > lr_end > 0, got {} -> {}",
                self.lr_start, self.lr_end
            )));
        }
        Ok(())
    }
}

/// An article's paragraphs as token lists, the trainer's input unit.
#[derive(Debug, Clone)]
pub struct TokenizedDoc {
    pub article_id: String,
    pub paragraphs: Vec<Vec<String>>,
}

/// Tokenizes every paragraph of every article, preserving order.
pub fn tokenize_articles(articles: &[Article], lowercase: bool) -> Vec<TokenizedDoc> {
    articles
        .iter()
        .map(|article| TokenizedDoc {
            article_id: article.id.clone(),
            paragraphs: article
                .paragraphs
                .iter()
                .map(|p| tokenize(p, lowercase))
                .collect(),
        })
        .collect()
}

/// Unigram noise distribution with probabilities proportional to
/// corpus frequency raised to 0.75. Sampling is a binary search over the
/// cumulative table, so a fixed RNG stream yields a fixed word stream.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    cumulative: Vec<f64>,
}

impl NoiseDistribution {
    pub fn from_vocab(vocab: &Vocabulary) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::Data("noise distribution over empty vocabulary".into()));
        }
        let weights: Vec<f64> = (0..vocab.len())
            .map(|i| (vocab.count(crate::textproc::TermId(i as u32)) as f64).powf(0.75))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w / total;
            cumulative.push(acc);
        }
        Ok(NoiseDistribution { cumulative })
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    /// Probability mass of one term.
    pub fn probability(&self, index: usize) -> f64 {
        let lo = if index == 0 { 0.0 } else { self.cumulative[index - 1] };
        self.cumulative[index] - lo
    }

    /// Maps a uniform draw in [0, 1) to a term index.
    pub fn sample_with(&self, u: f64) -> usize {
        let idx = self.cumulative.partition_point(|&c| c <= u);
        idx.min(self.cumulative.len() - 1)
    }
}

/// Vector payload of a document: dense rows from the PV-DBOW trainer or
/// sparse TF-IDF rows from the fallback embedder, behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Components<T> {
    Dense(Vec<T>),
    Sparse(SparseVector<T>),
}

impl<T: Scalar> Components<T> {
    pub fn dim(&self) -> usize {
        match self {
            Components::Dense(v) => v.len(),
            Components::Sparse(v) => v.dim(),
        }
    }

    pub fn norm(&self) -> T {
        match self {
            Components::Dense(v) => v
                .iter()
                .map(|&x| x * x)
                .fold(T::zero(), |acc, x| acc + x)
                .sqrt(),
            Components::Sparse(v) => v.norm(),
        }
    }

    pub fn dot(&self, other: &Components<T>) -> Result<T> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(match (self, other) {
            (Components::Dense(a), Components::Dense(b)) => {
                a.iter().zip(b).map(|(&x, &y)| x * y).fold(T::zero(), |s, x| s + x)
            }
            (Components::Sparse(a), Components::Sparse(b)) => a.dot(b)?,
            (Components::Dense(d), Components::Sparse(s))
            | (Components::Sparse(s), Components::Dense(d)) => s
                .entries()
                .iter()
                .map(|&(id, w)| w * d[id.index()])
                .fold(T::zero(), |acc, x| acc + x),
        })
    }

    /// Cosine of two possibly-unnormalized payloads, clamped to [-1, 1].
    /// Errors on a zero-norm side.
    pub fn cosine(&self, other: &Components<T>) -> Result<T> {
        let na = self.norm();
        let nb = other.norm();
        if na <= T::zero() || nb <= T::zero() {
            return Err(Error::DegenerateVector(
                "cosine of a zero-norm vector".into(),
            ));
        }
        let cos = self.dot(other)? / (na * nb);
        Ok(cos.min(T::one()).max(-T::one()))
    }

    fn scale(&mut self, factor: T) {
        match self {
            Components::Dense(v) => {
                for x in v.iter_mut() {
                    *x *= factor;
                }
            }
            Components::Sparse(v) => {
                let scaled = SparseVector::from_entries(
                    v.entries().iter().map(|&(id, w)| (id, w * factor)).collect(),
                    v.dim(),
                );
                *v = scaled;
            }
        }
    }
}

/// A document embedding keyed by its article. Unit-norm unless degenerate;
/// a degenerate vector keeps its (zero) payload and is excluded from
/// similarity work downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct DocVector<T> {
    pub article_id: String,
    pub components: Components<T>,
    pub is_degenerate: bool,
}

impl<T: Scalar> DocVector<T> {
    /// Normalizes the payload; a zero or non-finite norm marks the vector
    /// degenerate instead.
    pub fn from_components(article_id: String, mut components: Components<T>) -> Self {
        let norm = components.norm();
        if norm > T::zero() && norm.is_finite() {
            components.scale(T::one() / norm);
            DocVector {
                article_id,
                components,
                is_degenerate: false,
            }
        } else {
            DocVector {
                article_id,
                components,
                is_degenerate: true,
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.components.dim()
    }
}

/// Loss and exact gradients of the PV-DBOW negative-sampling objective
///
/// loss = −log σ(v·u⁺) − Σₖ log σ(−v·u⁻ₖ)
///
/// for one paragraph vector `v_para`, its positive word row `u_pos`, and
/// the sampled noise rows `u_negs`.
pub fn negative_sampling_loss_grad<T: Scalar>(
    v_para: &[T],
    u_pos: &[T],
    u_negs: &[&[T]],
) -> Result<(T, Vec<T>, Vec<T>, Vec<Vec<T>>)> {
    let mut grad_v = vec![T::zero(); v_para.len()];
    let mut grad_pos = vec![T::zero(); v_para.len()];
    let mut grad_negs = vec![vec![T::zero(); v_para.len()]; u_negs.len()];
    let mut grad_neg_slices: Vec<&mut [T]> =
        grad_negs.iter_mut().map(|g| g.as_mut_slice()).collect();
    let loss = negative_sampling_loss_grad_into(
        v_para,
        u_pos,
        u_negs,
        &mut grad_v,
        &mut grad_pos,
        &mut grad_neg_slices,
    )?;
    Ok((loss, grad_v, grad_pos, grad_negs))
}

/// Buffer-reusing form of [`negative_sampling_loss_grad`]; the hot loop of
/// the trainer calls this once per corpus position.
pub(crate) fn negative_sampling_loss_grad_into<T: Scalar>(
    v_para: &[T],
    u_pos: &[T],
    u_negs: &[&[T]],
    grad_v: &mut [T],
    grad_pos: &mut [T],
    grad_negs: &mut [&mut [T]],
) -> Result<T> {
    let dim = v_para.len();
    for other in std::iter::once(u_pos).chain(u_negs.iter().copied()) {
        if other.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: other.len(),
            });
        }
    }

    let dot_pos: T = v_para
        .iter()
        .zip(u_pos)
        .map(|(&a, &b)| a * b)
        .fold(T::zero(), |s, x| s + x);
    let mut loss = -log_sigmoid(dot_pos);
    // d/dv of −log σ(v·u⁺) is (σ(v·u⁺) − 1)·u⁺.
    let coeff_pos = sigmoid(dot_pos) - T::one();
    for i in 0..dim {
        grad_v[i] = coeff_pos * u_pos[i];
        grad_pos[i] = coeff_pos * v_para[i];
    }

    for (u_neg, grad_neg) in u_negs.iter().zip(grad_negs.iter_mut()) {
        let dot_neg: T = v_para
            .iter()
            .zip(u_neg.iter())
            .map(|(&a, &b)| a * b)
            .fold(T::zero(), |s, x| s + x);
        loss = loss - log_sigmoid(-dot_neg);
        let coeff_neg = sigmoid(dot_neg);
        for i in 0..dim {
            grad_v[i] += coeff_neg * u_neg[i];
            grad_neg[i] = coeff_neg * v_para[i];
        }
    }
    Ok(loss)
}

/// A trained PV-DBOW model: one row of `p` per paragraph (in corpus order),
/// one row of `w` per vocabulary term, both row-major `dim`-wide.
#[derive(Debug, Clone)]
pub struct EmbeddingModel<T> {
    pub(crate) params: PvDbowParams,
    pub(crate) vocab: Vocabulary,
    pub(crate) paragraph_keys: Vec<(String, u32)>,
    pub(crate) article_rows: BTreeMap<String, Vec<usize>>,
    pub(crate) p: Vec<T>,
    pub(crate) w: Vec<T>,
    pub(crate) epoch_losses: Vec<f64>,
}

impl<T: Scalar> EmbeddingModel<T> {
    pub fn params(&self) -> &PvDbowParams {
        &self.params
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn n_paragraphs(&self) -> usize {
        self.paragraph_keys.len()
    }

    /// Mean loss per epoch, recorded during training.
    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    pub fn paragraph_row(&self, index: usize) -> &[T] {
        let dim = self.params.dim;
        &self.p[index * dim..(index + 1) * dim]
    }

    pub fn word_row(&self, index: usize) -> &[T] {
        let dim = self.params.dim;
        &self.w[index * dim..(index + 1) * dim]
    }

    pub fn article_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.article_rows.keys().map(String::as_str)
    }

    pub(crate) fn rebuild_article_rows(
        keys: &[(String, u32)],
    ) -> BTreeMap<String, Vec<usize>> {
        let mut rows: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, (article_id, _)) in keys.iter().enumerate() {
            rows.entry(article_id.clone()).or_default().push(i);
        }
        rows
    }
}

/// Mean of an article's trained paragraph rows, L2-normalized. A zero mean
/// (e.g. perfectly opposed paragraph vectors) is flagged degenerate.
pub fn article_vector<T: Scalar>(
    model: &EmbeddingModel<T>,
    article_id: &str,
) -> Result<DocVector<T>> {
    let rows = model.article_rows.get(article_id).ok_or_else(|| {
        Error::Data(format!("article {article_id:?} has no embedded paragraphs"))
    })?;
    let dim = model.params.dim;
    let mut mean = vec![T::zero(); dim];
    for &row in rows {
        for (m, &x) in mean.iter_mut().zip(model.paragraph_row(row)) {
            *m += x;
        }
    }
    let count = T::from_f64_lossy(rows.len() as f64);
    for m in &mut mean {
        *m = *m / count;
    }
    Ok(DocVector::from_components(
        article_id.to_string(),
        Components::Dense(mean),
    ))
}

/// Embeds every trained article via [`article_vector`].
pub fn embed_corpus_pvdbow<T: Scalar>(
    model: &EmbeddingModel<T>,
) -> Result<BTreeMap<String, DocVector<T>>> {
    let mut vectors = BTreeMap::new();
    for article_id in model.article_rows.keys() {
        vectors.insert(article_id.clone(), article_vector(model, article_id)?);
    }
    Ok(vectors)
}

/// Fallback embedder: article vector = L2-normalized TF-IDF of its
/// concatenated filtered tokens. Fully deterministic — no RNG, no SGD.
/// An article whose every token is filtered out embeds degenerate.
pub fn embed_corpus_tfidf<T: Scalar>(
    docs: &[TokenizedDoc],
    vocab: &Vocabulary,
    stopwords: &HashSet<String>,
    idf_min: f64,
) -> BTreeMap<String, DocVector<T>> {
    let mut vectors = BTreeMap::new();
    for doc in docs {
        let all_tokens: Vec<String> = doc
            .paragraphs
            .iter()
            .flat_map(|p| p.iter().cloned())
            .collect();
        let filtered = filter_function_words(&all_tokens, vocab, stopwords, idf_min);
        let sparse: SparseVector<T> = tfidf_vector(&filtered, vocab);
        vectors.insert(
            doc.article_id.clone(),
            DocVector::from_components(doc.article_id.clone(), Components::Sparse(sparse)),
        );
    }
    vectors
}
