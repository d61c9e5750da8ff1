//! Sentence encoders: mean-pooled word embeddings, trainable GRU / bi-GRU,
//! and precomputed sentence vectors. Bag-of-words lives in [`crate::textproc`]
//! since it is a pure counting transform over the vocabulary.
//!
//! The w2v table and precomputed vectors are frozen inputs; GRU parameters
//! (including the word-embedding matrix) are trained from scratch.

pub mod gru;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use crate::data::FeatureStore;
use crate::error::{Error, Result};
use crate::textproc::TokenSeq;
use crate::Real;

pub use gru::{gru_step, GruEncoder, GruGrads, GruParams, GruTapes};

/// A frozen word → dense-vector table (the w2v role).
#[derive(Debug, Clone)]
pub struct EmbeddingTable<F> {
    index: HashMap<String, usize>,
    matrix: Array2<F>,
}

impl<F: Real> EmbeddingTable<F> {
    pub fn from_rows(rows: Vec<(String, Vec<F>)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("embedding table with zero rows".into()));
        }
        let dim = rows[0].1.len();
        if dim == 0 {
            return Err(Error::Empty("embedding table with zero dimension".into()));
        }
        let mut index = HashMap::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, (word, vector)) in rows.iter().enumerate() {
            if vector.len() != dim {
                return Err(Error::Dimension {
                    context: format!("embedding row for {word:?}"),
                    expected: dim,
                    got: vector.len(),
                });
            }
            if index.insert(word.clone(), i).is_some() {
                return Err(Error::Format(format!(
                    "embedding table: duplicate word {word:?}"
                )));
            }
            values.extend_from_slice(vector);
        }
        let matrix = Array2::from_shape_vec((rows.len(), dim), values).expect("checked arity");
        Ok(EmbeddingTable { index, matrix })
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Vector for `word`; a miss is an explicit `None`, never a zero vector.
    pub fn lookup(&self, word: &str) -> Option<ArrayView1<'_, F>> {
        self.index.get(word).map(|&i| self.matrix.row(i))
    }

    /// `(word, vector)` pairs in stable row order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, ArrayView1<'_, F>)> {
        let mut order: Vec<(&str, usize)> =
            self.index.iter().map(|(w, &i)| (w.as_str(), i)).collect();
        order.sort_unstable_by_key(|&(_, i)| i);
        order.into_iter().map(|(w, i)| (w, self.matrix.row(i)))
    }

    pub fn cast<T: Real>(&self) -> EmbeddingTable<T> {
        EmbeddingTable {
            index: self.index.clone(),
            matrix: self.matrix.mapv(|v| T::from(v).unwrap()),
        }
    }
}

/// Parse the classic text embedding format: header `count dim`, then
/// `word v1 ... v_dim` per line.
pub fn load_embedding_table(path: &Path) -> Result<EmbeddingTable<f32>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Empty(format!("{}: empty embedding file", path.display())))?;
    let mut header_fields = header.split_whitespace();
    let (count, dim) = match (
        header_fields.next().and_then(|f| f.parse::<usize>().ok()),
        header_fields.next().and_then(|f| f.parse::<usize>().ok()),
        header_fields.next(),
    ) {
        (Some(c), Some(d), None) => (c, d),
        _ => {
            return Err(Error::Format(format!(
                "{}: bad header {header:?} (want `count dim`)",
                path.display()
            )))
        }
    };
    let mut rows = Vec::with_capacity(count);
    for (lineno, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("nonempty line");
        let vector: Vec<f32> = fields
            .map(|f| {
                f.parse::<f32>().map_err(|_| {
                    Error::Format(format!(
                        "{}: line {}: bad float in row for {word:?}",
                        path.display(),
                        lineno + 1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if vector.len() != dim {
            return Err(Error::Dimension {
                context: format!("{}: embedding row for {word:?}", path.display()),
                expected: dim,
                got: vector.len(),
            });
        }
        rows.push((word.to_owned(), vector));
    }
    if rows.len() != count {
        return Err(Error::Format(format!(
            "{}: header declares {count} rows, found {}",
            path.display(),
            rows.len()
        )));
    }
    EmbeddingTable::from_rows(rows)
}

/// Mean-pool the table vectors of the in-table tokens of `s`. Missing
/// tokens are skipped and do not enter the denominator; a sentence with no
/// in-table token yields the zero vector (with a logged warning) so the
/// query stays answerable through other encoders.
pub fn encode_w2v<F: Real>(s: &TokenSeq, table: &EmbeddingTable<F>) -> Array1<F> {
    let mut sum = Array1::<F>::zeros(table.dim());
    let mut hits = 0usize;
    for tok in s.iter() {
        if let Some(vector) = table.lookup(tok) {
            sum += &vector;
            hits += 1;
        }
    }
    if hits == 0 {
        log::warn!("no in-table token in sentence {:?}", s.tokens());
        return sum;
    }
    sum.mapv_into(|v| v / F::from(hits).unwrap())
}

/// Frozen per-sentence vectors produced offline (the BERT role), keyed by
/// sentence id and stored in the binary feature container.
#[derive(Debug, Clone)]
pub struct PrecomputedStore<F> {
    vectors: FeatureStore<F>,
    pub model_label: String,
    pub pooling_label: String,
}

impl<F: Real> PrecomputedStore<F> {
    pub fn new(
        vectors: FeatureStore<F>,
        model_label: impl Into<String>,
        pooling_label: impl Into<String>,
    ) -> Self {
        PrecomputedStore {
            vectors,
            model_label: model_label.into(),
            pooling_label: pooling_label.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.len() == 0
    }

    pub fn contains(&self, sentence_id: &str) -> bool {
        self.vectors.index_of(sentence_id).is_some()
    }

    pub fn vectors(&self) -> &FeatureStore<F> {
        &self.vectors
    }

    pub fn cast<T: Real>(&self) -> PrecomputedStore<T> {
        PrecomputedStore {
            vectors: self.vectors.cast(),
            model_label: self.model_label.clone(),
            pooling_label: self.pooling_label.clone(),
        }
    }
}

/// Load precomputed sentence vectors from the binary feature container.
pub fn load_precomputed(
    path: &Path,
    model_label: &str,
    pooling_label: &str,
) -> Result<PrecomputedStore<f32>> {
    Ok(PrecomputedStore::new(
        crate::data::load_feature_store(path)?,
        model_label,
        pooling_label,
    ))
}

/// Retrieve the stored sentence vector, unmodified. A missing id is a
/// training-data integrity failure and names the id.
pub fn encode_precomputed<F: Real>(
    sentence_id: &str,
    store: &PrecomputedStore<F>,
) -> Result<Array1<F>> {
    store
        .vectors
        .get(sentence_id)
        .map(|row| row.to_owned())
        .ok_or_else(|| Error::MissingId {
            what: format!("precomputed store ({})", store.model_label),
            id: sentence_id.to_owned(),
        })
}
