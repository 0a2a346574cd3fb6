//! Binary persistence for embedding models and document vectors.
//!
//! Both formats are little-endian with a magic string, a format version,
//! and a scalar-width byte (4 = f32, 8 = f64). Round trips are bit-exact:
//! scalars are stored at their native width, and `f32 → f64 → f32` is
//! lossless, so values survive the single f64 staging hop unchanged.
//!
//! Model file (`EFPVDBOW`, version 1):
//! header, params, epoch losses, vocabulary stats (term, df, count in id
//! order), paragraph keys (article_id, paragraph index), then matrices P
//! and W row-major.
//!
//! Vector file (`EFDOCVEC`, version 1):
//! header, dim, entry count; per entry the article id, a degenerate flag,
//! and either a dense row (`D`) or a sparse row (`S`, nnz + id/weight
//! pairs), ids in ascending order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::textproc::{SparseVector, TermId, Vocabulary};

use super::{Components, DocVector, EmbeddingModel, PvDbowParams};

const MODEL_MAGIC: &[u8; 8] = b"EFPVDBOW";
const VECTOR_MAGIC: &[u8; 8] = b"EFDOCVEC";
const FORMAT_VERSION: u32 = 1;

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, x: u8) -> std::io::Result<()> {
        self.inner.write_all(&[x])
    }
    fn u32(&mut self, x: u32) -> std::io::Result<()> {
        self.inner.write_all(&x.to_le_bytes())
    }
    fn u64(&mut self, x: u64) -> std::io::Result<()> {
        self.inner.write_all(&x.to_le_bytes())
    }
    fn f64(&mut self, x: f64) -> std::io::Result<()> {
        self.inner.write_all(&x.to_le_bytes())
    }
    fn string(&mut self, s: &str) -> std::io::Result<()> {
        self.u64(s.len() as u64)?;
        self.inner.write_all(s.as_bytes())
    }
    fn scalar<T: Scalar>(&mut self, x: T) -> std::io::Result<()> {
        if std::mem::size_of::<T>() == 4 {
            self.inner.write_all(&(x.as_f64() as f32).to_le_bytes())
        } else {
            self.inner.write_all(&x.as_f64().to_le_bytes())
        }
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> std::io::Result<u8> {
        let mut buf = [0u8; 1];
        self.inner.read_exact(&mut buf)?;
        Ok(buf[0])
    }
    fn u32(&mut self) -> std::io::Result<u32> {
        let mut buf = [0u8; 4];
        self.inner.read_exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        let mut buf = [0u8; 8];
        self.inner.read_exact(&mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }
    fn f64(&mut self) -> std::io::Result<f64> {
        let mut buf = [0u8; 8];
        self.inner.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    }
    fn string(&mut self) -> Result<String> {
        let len = self.u64().map_err(Error::from_io_data)? as usize;
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf).map_err(Error::from_io_data)?;
        String::from_utf8(buf).map_err(|e| Error::Data(format!("invalid UTF-8 in file: {e}")))
    }
    fn scalar<T: Scalar>(&mut self) -> std::io::Result<T> {
        if std::mem::size_of::<T>() == 4 {
            let mut buf = [0u8; 4];
            self.inner.read_exact(&mut buf)?;
            Ok(T::from_f64_lossy(f32::from_le_bytes(buf) as f64))
        } else {
            let mut buf = [0u8; 8];
            self.inner.read_exact(&mut buf)?;
            Ok(T::from_f64_lossy(f64::from_le_bytes(buf)))
        }
    }
}

impl Error {
    fn from_io_data(e: std::io::Error) -> Error {
        Error::Data(format!("truncated or unreadable binary file: {e}"))
    }
}

fn check_header<R: Read>(
    reader: &mut Reader<R>,
    magic: &[u8; 8],
    scalar_width: usize,
) -> Result<()> {
    let mut got = [0u8; 8];
    reader
        .inner
        .read_exact(&mut got)
        .map_err(Error::from_io_data)?;
    if &got != magic {
        return Err(Error::Data(format!(
            "bad magic: expected {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = reader.u32().map_err(Error::from_io_data)?;
    if version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let width = reader.u8().map_err(Error::from_io_data)? as usize;
    if width != scalar_width {
        return Err(Error::Data(format!(
            "scalar width mismatch: file has {width}-byte scalars, loader expects {scalar_width}"
        )));
    }
    Ok(())
}

/// Writes a trained model; [`load_model`] restores it bit-exactly.
pub fn save_model<T: Scalar>(path: &Path, model: &EmbeddingModel<T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer {
        inner: BufWriter::new(file),
    };
    let io_err = |e: std::io::Error| Error::io(path, e);

    w.inner.write_all(MODEL_MAGIC).map_err(io_err)?;
    w.u32(FORMAT_VERSION).map_err(io_err)?;
    w.u8(std::mem::size_of::<T>() as u8).map_err(io_err)?;

    let p = &model.params;
    w.u64(p.dim as u64).map_err(io_err)?;
    w.u64(p.negatives as u64).map_err(io_err)?;
    w.u64(p.epochs as u64).map_err(io_err)?;
    w.f64(p.lr_start).map_err(io_err)?;
    w.f64(p.lr_end).map_err(io_err)?;
    w.u64(p.min_count).map_err(io_err)?;
    w.u64(p.seed).map_err(io_err)?;

    w.u64(model.epoch_losses.len() as u64).map_err(io_err)?;
    for &loss in &model.epoch_losses {
        w.f64(loss).map_err(io_err)?;
    }

    w.u64(model.vocab.len() as u64).map_err(io_err)?;
    w.u64(model.vocab.n_docs() as u64).map_err(io_err)?;
    w.u64(model.vocab.total_token_count()).map_err(io_err)?;
    for (term, df, count) in model.vocab.iter_stats() {
        w.string(term).map_err(io_err)?;
        w.u32(df).map_err(io_err)?;
        w.u64(count).map_err(io_err)?;
    }

    w.u64(model.paragraph_keys.len() as u64).map_err(io_err)?;
    for (article_id, index) in &model.paragraph_keys {
        w.string(article_id).map_err(io_err)?;
        w.u32(*index).map_err(io_err)?;
    }

    for &x in &model.p {
        w.scalar(x).map_err(io_err)?;
    }
    for &x in &model.w {
        w.scalar(x).map_err(io_err)?;
    }
    w.inner.flush().map_err(io_err)
}

/// Loads a model written by [`save_model`] with the same scalar type.
pub fn load_model<T: Scalar>(path: &Path) -> Result<EmbeddingModel<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    check_header(&mut r, MODEL_MAGIC, std::mem::size_of::<T>())?;
    let data_err = Error::from_io_data;

    let params = PvDbowParams {
        dim: r.u64().map_err(data_err)? as usize,
        negatives: r.u64().map_err(data_err)? as usize,
        epochs: r.u64().map_err(data_err)? as usize,
        lr_start: r.f64().map_err(data_err)?,
        lr_end: r.f64().map_err(data_err)?,
        min_count: r.u64().map_err(data_err)?,
        seed: r.u64().map_err(data_err)?,
    };

    let n_losses = r.u64().map_err(data_err)? as usize;
    let mut epoch_losses = Vec::with_capacity(n_losses);
    for _ in 0..n_losses {
        epoch_losses.push(r.f64().map_err(data_err)?);
    }

    let vocab_len = r.u64().map_err(data_err)? as usize;
    let n_docs = r.u64().map_err(data_err)? as usize;
    let total_token_count = r.u64().map_err(data_err)?;
    let mut stats = Vec::with_capacity(vocab_len);
    for _ in 0..vocab_len {
        let term = r.string()?;
        let df = r.u32().map_err(data_err)?;
        let count = r.u64().map_err(data_err)?;
        stats.push((term, df, count));
    }
    let vocab = Vocabulary::from_stats(stats, n_docs, total_token_count)?;
    if vocab.len() != vocab_len {
        return Err(Error::Data("vocabulary terms in file are not unique".into()));
    }

    let n_paragraphs = r.u64().map_err(data_err)? as usize;
    let mut paragraph_keys = Vec::with_capacity(n_paragraphs);
    for _ in 0..n_paragraphs {
        let article_id = r.string()?;
        let index = r.u32().map_err(data_err)?;
        paragraph_keys.push((article_id, index));
    }

    let mut p = Vec::with_capacity(n_paragraphs * params.dim);
    for _ in 0..n_paragraphs * params.dim {
        p.push(r.scalar::<T>().map_err(data_err)?);
    }
    let mut w = Vec::with_capacity(vocab_len * params.dim);
    for _ in 0..vocab_len * params.dim {
        w.push(r.scalar::<T>().map_err(data_err)?);
    }

    let article_rows = EmbeddingModel::<T>::rebuild_article_rows(&paragraph_keys);
    Ok(EmbeddingModel {
        params,
        vocab,
        paragraph_keys,
        article_rows,
        p,
        w,
        epoch_losses,
    })
}

/// Writes document vectors (dense or sparse) keyed by article id.
pub fn save_doc_vectors<T: Scalar>(
    path: &Path,
    vectors: &BTreeMap<String, DocVector<T>>,
) -> Result<()> {
    let dim = match vectors.values().next() {
        Some(v) => v.dim(),
        None => 0,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer {
        inner: BufWriter::new(file),
    };
    let io_err = |e: std::io::Error| Error::io(path, e);

    w.inner.write_all(VECTOR_MAGIC).map_err(io_err)?;
    w.u32(FORMAT_VERSION).map_err(io_err)?;
    w.u8(std::mem::size_of::<T>() as u8).map_err(io_err)?;
    w.u64(dim as u64).map_err(io_err)?;
    w.u64(vectors.len() as u64).map_err(io_err)?;

    for (article_id, vector) in vectors {
        if vector.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: vector.dim(),
            });
        }
        w.string(article_id).map_err(io_err)?;
        w.u8(vector.is_degenerate as u8).map_err(io_err)?;
        match &vector.components {
            Components::Dense(row) => {
                w.u8(b'D').map_err(io_err)?;
                for &x in row {
                    w.scalar(x).map_err(io_err)?;
                }
            }
            Components::Sparse(row) => {
                w.u8(b'S').map_err(io_err)?;
                w.u64(row.nnz() as u64).map_err(io_err)?;
                for &(id, weight) in row.entries() {
                    w.u32(id.0).map_err(io_err)?;
                    w.scalar(weight).map_err(io_err)?;
                }
            }
        }
    }
    w.inner.flush().map_err(io_err)
}

/// Loads vectors written by [`save_doc_vectors`] with the same scalar type.
pub fn load_doc_vectors<T: Scalar>(path: &Path) -> Result<BTreeMap<String, DocVector<T>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    check_header(&mut r, VECTOR_MAGIC, std::mem::size_of::<T>())?;
    let data_err = Error::from_io_data;

    let dim = r.u64().map_err(data_err)? as usize;
    let count = r.u64().map_err(data_err)? as usize;
    let mut vectors = BTreeMap::new();
    for _ in 0..count {
        let article_id = r.string()?;
        let is_degenerate = r.u8().map_err(data_err)? != 0;
        let kind = r.u8().map_err(data_err)?;
        let components = match kind {
            b'D' => {
                let mut row = Vec::with_capacity(dim);
                for _ in 0..dim {
                    row.push(r.scalar::<T>().map_err(data_err)?);
                }
                Components::Dense(row)
            }
            b'S' => {
                let nnz = r.u64().map_err(data_err)? as usize;
                let mut entries = Vec::with_capacity(nnz);
                for _ in 0..nnz {
                    let id = TermId(r.u32().map_err(data_err)?);
                    let weight = r.scalar::<T>().map_err(data_err)?;
                    entries.push((id, weight));
                }
                Components::Sparse(SparseVector::from_entries(entries, dim))
            }
            other => {
                return Err(Error::Data(format!(
                    "unknown vector kind tag {other:#x}"
                )))
            }
        };
        if vectors
            .insert(
                article_id.clone(),
                DocVector {
                    article_id: article_id.clone(),
                    components,
                    is_degenerate,
                },
            )
            .is_some()
        {
            return Err(Error::DuplicateId(article_id));
        }
    }
    Ok(vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{embed_corpus_pvdbow, train_pvdbow, TokenizedDoc};

    fn tiny_corpus() -> Vec<TokenizedDoc> {
        (0..6)
            .map(|a| TokenizedDoc {
                article_id: format!("a{a}"),
                paragraphs: (0..3)
                    .map(|p| (0..5).map(|j| format!("w{}", (a + p + j) % 7)).collect())
                    .collect(),
            })
            .collect()
    }

    fn tiny_params(seed: u64) -> PvDbowParams {
        PvDbowParams {
            dim: 8,
            negatives: 2,
            epochs: 3,
            lr_start: 0.05,
            lr_end: 0.001,
            min_count: 1,
            seed,
        }
    }

    #[test]
    fn model_roundtrip_is_bit_exact_f64() {
        let model: EmbeddingModel<f64> = train_pvdbow(&tiny_corpus(), &tiny_params(13)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&path, &model).unwrap();
        let back: EmbeddingModel<f64> = load_model(&path).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(back.paragraph_keys, model.paragraph_keys);
        assert_eq!(back.epoch_losses, model.epoch_losses);
        assert!(back.p.iter().zip(&model.p).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(back.w.iter().zip(&model.w).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.vocab.len(), model.vocab.len());
        for (a, b) in back.vocab.iter_stats().zip(model.vocab.iter_stats()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn model_roundtrip_is_bit_exact_f32() {
        let model: EmbeddingModel<f32> = train_pvdbow(&tiny_corpus(), &tiny_params(17)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model32.bin");
        save_model(&path, &model).unwrap();
        let back: EmbeddingModel<f32> = load_model(&path).unwrap();
        assert!(back.p.iter().zip(&model.p).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(back.w.iter().zip(&model.w).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn scalar_width_mismatch_is_rejected() {
        let model: EmbeddingModel<f64> = train_pvdbow(&tiny_corpus(), &tiny_params(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&path, &model).unwrap();
        assert!(load_model::<f32>(&path).is_err());
    }

    #[test]
    fn truncated_model_file_is_rejected() {
        let model: EmbeddingModel<f64> = train_pvdbow(&tiny_corpus(), &tiny_params(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&path, &model).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_model::<f64>(&path).is_err());
    }

    #[test]
    fn doc_vectors_roundtrip_dense_and_sparse() {
        let model: EmbeddingModel<f64> = train_pvdbow(&tiny_corpus(), &tiny_params(5)).unwrap();
        let mut vectors = embed_corpus_pvdbow(&model).unwrap();
        // Mix in one sparse and one degenerate entry.
        let dim = model.params().dim;
        vectors.insert(
            "sparse-extra".into(),
            DocVector {
                article_id: "sparse-extra".into(),
                components: Components::Sparse(SparseVector::from_entries(
                    vec![(TermId(1), 0.6), (TermId(4), 0.8)],
                    dim,
                )),
                is_degenerate: false,
            },
        );
        vectors.insert(
            "degenerate-extra".into(),
            DocVector {
                article_id: "degenerate-extra".into(),
                components: Components::Dense(vec![0.0; dim]),
                is_degenerate: true,
            },
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.bin");
        save_doc_vectors(&path, &vectors).unwrap();
        let back = load_doc_vectors::<f64>(&path).unwrap();
        assert_eq!(back.len(), vectors.len());
        for (id, vector) in &vectors {
            assert_eq!(&back[id], vector);
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTMAGIC rest").unwrap();
        assert!(load_model::<f64>(&path).is_err());
        assert!(load_doc_vectors::<f64>(&path).is_err());
    }
}
