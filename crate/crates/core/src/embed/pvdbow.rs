//! PV-DBOW training loop: per corpus position, predict the word at that
//! position from its paragraph's vector against sampled noise words, and
//! take one SGD step on the negative-sampling objective.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::textproc::Vocabulary;

use super::{
    negative_sampling_loss_grad_into, EmbeddingModel, NoiseDistribution, PvDbowParams,
    TokenizedDoc,
};

/// Trains paragraph and word-output matrices over the corpus.
///
/// Strictly sequential: epochs in order, paragraphs in corpus order, words
/// left to right, one ChaCha stream for init and sampling — the result is a
/// pure function of (corpus, params), bit-identical across runs and thread
/// counts. The learning rate anneals linearly from `lr_start` to `lr_end`
/// over the global position counter.
pub fn train_pvdbow<T: Scalar>(
    docs: &[TokenizedDoc],
    params: &PvDbowParams,
) -> Result<EmbeddingModel<T>> {
    params.validate()?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let article_token_lists: Vec<Vec<String>> = docs
        .iter()
        .map(|doc| doc.paragraphs.iter().flatten().cloned().collect())
        .collect();
    let vocab = Vocabulary::build(&article_token_lists, params.min_count)?;
    if vocab.is_empty() {
        return Err(Error::Data(format!(
            "vocabulary is empty after min_count={} filtering",
            params.min_count
        )));
    }
    let noise = NoiseDistribution::from_vocab(&vocab)?;

    // One row of P per paragraph, in corpus order; words outside the
    // filtered vocabulary simply contribute no training positions.
    let mut paragraph_keys = Vec::new();
    let mut paragraph_words: Vec<Vec<usize>> = Vec::new();
    for doc in docs {
        for (p_idx, paragraph) in doc.paragraphs.iter().enumerate() {
            paragraph_keys.push((doc.article_id.clone(), p_idx as u32));
            paragraph_words.push(
                paragraph
                    .iter()
                    .filter_map(|token| vocab.term_id(token))
                    .map(|id| id.index())
                    .collect(),
            );
        }
    }

    let dim = params.dim;
    let n_paragraphs = paragraph_keys.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // Init: P uniform in [-0.5/dim, 0.5/dim] (drawn in f64 so the stream is
    // scalar-type independent), W all zero — first scores sit at σ(0).
    let half = 0.5 / dim as f64;
    let mut p: Vec<T> = (0..n_paragraphs * dim)
        .map(|_| T::from_f64_lossy(rng.random_range(-half..half)))
        .collect();
    let mut w: Vec<T> = vec![T::zero(); vocab.len() * dim];

    let positions_per_epoch: usize = paragraph_words.iter().map(Vec::len).sum();
    let total_positions = positions_per_epoch.saturating_mul(params.epochs);
    let lr_span = params.lr_start - params.lr_end;

    let mut grad_v = vec![T::zero(); dim];
    let mut grad_pos = vec![T::zero(); dim];
    let mut grad_negs: Vec<Vec<T>> = vec![vec![T::zero(); dim]; params.negatives];
    let mut neg_ids = Vec::with_capacity(params.negatives);

    let mut epoch_losses = Vec::with_capacity(params.epochs);
    let mut global_position = 0usize;

    for _epoch in 0..params.epochs {
        let mut epoch_loss = 0.0f64;
        for (row, words) in paragraph_words.iter().enumerate() {
            for &pos_word in words {
                let progress = if total_positions == 0 {
                    0.0
                } else {
                    global_position as f64 / total_positions as f64
                };
                let lr = T::from_f64_lossy(params.lr_start - lr_span * progress);
                global_position += 1;

                // Noise draws matching the positive word are skipped, so a
                // step occasionally uses fewer than `negatives` negatives.
                neg_ids.clear();
                for _ in 0..params.negatives {
                    let candidate = noise.sample_with(rng.random::<f64>());
                    if candidate != pos_word {
                        neg_ids.push(candidate);
                    }
                }

                let loss = {
                    let v_row = &p[row * dim..(row + 1) * dim];
                    let u_pos = &w[pos_word * dim..(pos_word + 1) * dim];
                    let u_negs: Vec<&[T]> = neg_ids
                        .iter()
                        .map(|&id| &w[id * dim..(id + 1) * dim])
                        .collect();
                    let mut grad_neg_slices: Vec<&mut [T]> = grad_negs
                        [..neg_ids.len()]
                        .iter_mut()
                        .map(|g| g.as_mut_slice())
                        .collect();
                    negative_sampling_loss_grad_into(
                        v_row,
                        u_pos,
                        &u_negs,
                        &mut grad_v,
                        &mut grad_pos,
                        &mut grad_neg_slices,
                    )?
                };
                epoch_loss += loss.as_f64();

                let v_row = &mut p[row * dim..(row + 1) * dim];
                for (x, g) in v_row.iter_mut().zip(&grad_v) {
                    *x -= lr * *g;
                }
                let u_pos = &mut w[pos_word * dim..(pos_word + 1) * dim];
                for (x, g) in u_pos.iter_mut().zip(&grad_pos) {
                    *x -= lr * *g;
                }
                for (&id, grad_neg) in neg_ids.iter().zip(&grad_negs) {
                    let u_neg = &mut w[id * dim..(id + 1) * dim];
                    for (x, g) in u_neg.iter_mut().zip(grad_neg) {
                        *x -= lr * *g;
                    }
                }
            }
        }
        epoch_losses.push(if positions_per_epoch == 0 {
            0.0
        } else {
            epoch_loss / positions_per_epoch as f64
        });
    }

    let article_rows = EmbeddingModel::<T>::rebuild_article_rows(&paragraph_keys);
    Ok(EmbeddingModel {
        params: params.clone(),
        vocab,
        paragraph_keys,
        article_rows,
        p,
        w,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{article_vector, embed_corpus_pvdbow};

    /// Two topics with disjoint 8-word content vocabularies; every
    /// paragraph draws 6 words from its topic, cyclically.
    fn planted_corpus(paragraphs_per_article: usize, articles_per_topic: usize) -> Vec<TokenizedDoc> {
        let topics: [Vec<String>; 2] = [
            (0..8).map(|i| format!("storm{i}")).collect(),
            (0..8).map(|i| format!("senate{i}")).collect(),
        ];
        let mut docs = Vec::new();
        for (t, words) in topics.iter().enumerate() {
            for a in 0..articles_per_topic {
                let paragraphs = (0..paragraphs_per_article)
                    .map(|p| {
                        (0..6)
                            .map(|j| words[(a + p * 2 + j) % words.len()].clone())
                            .collect()
                    })
                    .collect();
                docs.push(TokenizedDoc {
                    article_id: format!("t{t}-a{a}"),
                    paragraphs,
                });
            }
        }
        docs
    }

    fn small_params(seed: u64) -> PvDbowParams {
        PvDbowParams {
            dim: 16,
            negatives: 4,
            epochs: 30,
            lr_start: 0.05,
            lr_end: 0.001,
            min_count: 1,
            seed,
        }
    }

    #[test]
    fn shapes_match_corpus_and_vocab() {
        let docs = planted_corpus(5, 5);
        let model: EmbeddingModel<f64> = train_pvdbow(&docs, &small_params(7)).unwrap();
        assert_eq!(model.n_paragraphs(), 50);
        assert_eq!(model.vocab().len(), 16);
        assert_eq!(model.p.len(), 50 * 16);
        assert_eq!(model.w.len(), 16 * 16);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let docs = planted_corpus(3, 4);
        let a: EmbeddingModel<f64> = train_pvdbow(&docs, &small_params(11)).unwrap();
        let b: EmbeddingModel<f64> = train_pvdbow(&docs, &small_params(11)).unwrap();
        assert!(a.p.iter().zip(&b.p).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.w.iter().zip(&b.w).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn planted_topics_separate() {
        // Oracle: brute-force mean pairwise cosine over all paragraph pairs,
        // within topics vs across topics.
        let docs = planted_corpus(4, 5);
        let model: EmbeddingModel<f64> = train_pvdbow(&docs, &small_params(3)).unwrap();
        let n = model.n_paragraphs();
        let cosine = |a: usize, b: usize| {
            let (u, v) = (model.paragraph_row(a), model.paragraph_row(b));
            let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
            let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (nu * nv)
        };
        let topic_of = |row: usize| model.paragraph_keys[row].0.starts_with("t0");
        let (mut intra, mut inter) = ((0.0, 0usize), (0.0, 0usize));
        for a in 0..n {
            for b in (a + 1)..n {
                let cos = cosine(a, b);
                if topic_of(a) == topic_of(b) {
                    intra = (intra.0 + cos, intra.1 + 1);
                } else {
                    inter = (inter.0 + cos, inter.1 + 1);
                }
            }
        }
        let mean_intra = intra.0 / intra.1 as f64;
        let mean_inter = inter.0 / inter.1 as f64;
        assert!(
            mean_intra > mean_inter,
            "planted topics failed to separate: intra {mean_intra} vs inter {mean_inter}"
        );
    }

    #[test]
    fn epoch_losses_trend_down() {
        // The per-epoch mean is a noisy estimate (fresh negatives each
        // epoch), so the run must end while descent still dominates that
        // noise: a decent-sized corpus and few enough epochs.
        let docs = planted_corpus(8, 25);
        let mut params = small_params(5);
        params.epochs = 12;
        let model: EmbeddingModel<f64> = train_pvdbow(&docs, &params).unwrap();
        let losses = model.epoch_losses();
        assert_eq!(losses.len(), 12);
        // SGD is noisy: allow at most one epoch-to-epoch increase, and no
        // increase beyond 5%.
        let mut increases = 0;
        for pair in losses.windows(2) {
            if pair[1] > pair[0] {
                increases += 1;
                assert!(pair[1] <= pair[0] * 1.05, "loss jumped {} -> {}", pair[0], pair[1]);
            }
        }
        assert!(increases <= 1, "loss increased {increases} times");
        assert!(losses[losses.len() - 1] < losses[0]);
    }

    #[test]
    fn article_vector_is_normalized_paragraph_mean() {
        let docs = planted_corpus(3, 2);
        let model: EmbeddingModel<f64> = train_pvdbow(&docs, &small_params(9)).unwrap();
        let v = article_vector(&model, "t0-a0").unwrap();
        assert!(!v.is_degenerate);
        assert!((v.components.norm() - 1.0).abs() < 1e-6);

        // Hand-recompute the mean of the article's three paragraph rows.
        let rows: Vec<usize> = (0..model.n_paragraphs())
            .filter(|&i| model.paragraph_keys[i].0 == "t0-a0")
            .collect();
        assert_eq!(rows.len(), 3);
        let dim = model.params().dim;
        let mut mean = vec![0.0f64; dim];
        for &r in &rows {
            for (m, &x) in mean.iter_mut().zip(model.paragraph_row(r)) {
                *m += x;
            }
        }
        let norm: f64 = mean.iter().map(|x| (x / 3.0) * (x / 3.0)).sum::<f64>().sqrt();
        match &v.components {
            crate::embed::Components::Dense(got) => {
                for (g, m) in got.iter().zip(&mean) {
                    assert!((g - m / 3.0 / norm).abs() < 1e-12);
                }
            }
            _ => panic!("pvdbow vectors are dense"),
        }
    }

    #[test]
    fn article_vector_unknown_article_errors() {
        let docs = planted_corpus(2, 2);
        let model: EmbeddingModel<f64> = train_pvdbow(&docs, &small_params(1)).unwrap();
        assert!(article_vector(&model, "nope").is_err());
    }

    #[test]
    fn embed_corpus_covers_all_articles() {
        let docs = planted_corpus(2, 3);
        let model: EmbeddingModel<f64> = train_pvdbow(&docs, &small_params(2)).unwrap();
        let vectors = embed_corpus_pvdbow(&model).unwrap();
        assert_eq!(vectors.len(), 6);
        assert!(vectors.values().all(|v| !v.is_degenerate));
    }

    #[test]
    fn empty_corpus_and_empty_vocab_error() {
        let empty: Vec<TokenizedDoc> = Vec::new();
        assert!(matches!(
            train_pvdbow::<f64>(&empty, &small_params(0)),
            Err(Error::EmptyCorpus)
        ));
        let docs = vec![TokenizedDoc {
            article_id: "a".into(),
            paragraphs: vec![vec!["once".into()]],
        }];
        let mut params = small_params(0);
        params.min_count = 5;
        assert!(train_pvdbow::<f64>(&docs, &params).is_err());
    }

    #[test]
    fn f32_training_runs_and_separates() {
        let docs = planted_corpus(3, 4);
        let model: EmbeddingModel<f32> = train_pvdbow(&docs, &small_params(3)).unwrap();
        let v = article_vector(&model, "t0-a0").unwrap();
        assert!((v.components.norm() - 1.0).abs() < 1e-5);
    }
}
