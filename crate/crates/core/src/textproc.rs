//! Text processing: tokenization, vocabulary construction, and sparse
//! bag-of-words encoding.
//!
//! Tokenization lowercases and splits on any non-alphanumeric character;
//! digits are kept, nothing is stemmed. Vocabularies come in two flavours:
//! the bag-of-words vocabulary (stopwords removed) and the sequential-model
//! vocabulary (stopwords kept, `<unk>` prepended for out-of-vocabulary
//! tokens).

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use ndarray::Array1;
use num_traits::Float;

use crate::error::{Error, Result};

/// Marker token mapped onto out-of-vocabulary words in sequential-model
/// vocabularies.
pub const UNK: &str = "<unk>";

/// An ordered sequence of lowercase tokens. Tokens never contain whitespace
/// and are never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    tokens: Vec<String>,
}

impl TokenSeq {
    pub fn new(tokens: Vec<String>) -> Self {
        debug_assert!(tokens
            .iter()
            .all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
        TokenSeq { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    /// Tokens in reverse order (used by the backward recurrent pass).
    pub fn reversed(&self) -> TokenSeq {
        let mut tokens = self.tokens.clone();
        tokens.reverse();
        TokenSeq { tokens }
    }
}

/// Lowercase `text` and split it on every non-alphanumeric character,
/// discarding empty fragments. Digits survive; punctuation and hyphens act
/// as separators.
pub fn tokenize(text: &str) -> TokenSeq {
    let lowered = text.to_lowercase();
    let tokens = lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect();
    TokenSeq { tokens }
}

/// Word → index map with corpus counts. Indices are contiguous starting at
/// zero; special tokens (only `<unk>` today) occupy the lowest indices.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    words: Vec<String>,
    counts: Vec<u64>,
    special_tokens: Vec<String>,
    includes_stopwords: bool,
}

impl Vocabulary {
    /// Build a vocabulary from a tokenized corpus. Words with corpus
    /// frequency below `min_count` are dropped. With `for_sequential` unset,
    /// stopwords are excluded; set, stopwords are kept and `<unk>` is
    /// prepended at index 0.
    ///
    /// Regular words are ordered by descending count, ties broken by first
    /// occurrence in the corpus, so builds are reproducible.
    pub fn build(
        corpus: &[TokenSeq],
        min_count: u64,
        for_sequential: bool,
        stopwords: &HashSet<String>,
    ) -> Result<Self> {
        if min_count < 1 {
            return Err(Error::Format("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<&str, (u64, usize)> = HashMap::new();
        let mut position = 0usize;
        for seq in corpus {
            for tok in seq.iter() {
                let entry = counts.entry(tok).or_insert((0, position));
                entry.0 += 1;
                position += 1;
            }
        }
        let mut kept: Vec<(&str, u64, usize)> = counts
            .into_iter()
            .filter(|(word, (count, _))| {
                *count >= min_count && (for_sequential || !stopwords.contains(*word))
            })
            .map(|(word, (count, first))| (word, count, first))
            .collect();
        if kept.is_empty() {
            return Err(Error::Empty(
                "vocabulary: no token meets min_count (corpus unusable)".into(),
            ));
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

        let special_tokens: Vec<String> = if for_sequential {
            vec![UNK.to_owned()]
        } else {
            Vec::new()
        };
        let mut words: Vec<String> = special_tokens.clone();
        let mut out_counts: Vec<u64> = vec![0; special_tokens.len()];
        for (word, count, _) in kept {
            words.push(word.to_owned());
            out_counts.push(count);
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(Vocabulary {
            index,
            words,
            counts: out_counts,
            special_tokens,
            includes_stopwords: for_sequential,
        })
    }

    /// Reassemble a vocabulary from explicit `(word, count)` rows in index
    /// order, recognizing a leading `<unk>` as the special token.
    pub fn from_rows(rows: Vec<(String, u64)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("vocabulary with zero entries".into()));
        }
        let special_tokens: Vec<String> = rows
            .iter()
            .take_while(|(w, _)| w == UNK)
            .map(|(w, _)| w.clone())
            .collect();
        let mut index = HashMap::new();
        let mut words = Vec::with_capacity(rows.len());
        let mut counts = Vec::with_capacity(rows.len());
        for (i, (word, count)) in rows.into_iter().enumerate() {
            if index.insert(word.clone(), i).is_some() {
                return Err(Error::Format(format!(
                    "vocabulary: duplicate word {word:?}"
                )));
            }
            words.push(word);
            counts.push(count);
        }
        let includes_stopwords = !special_tokens.is_empty();
        Ok(Vocabulary {
            index,
            words,
            counts,
            special_tokens,
            includes_stopwords,
        })
    }

    /// Vocabulary size m.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    /// All words in index order.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    pub fn special_tokens(&self) -> &[String] {
        &self.special_tokens
    }

    pub fn includes_stopwords(&self) -> bool {
        self.includes_stopwords
    }

    /// Index of `<unk>`, present only in sequential-model vocabularies.
    pub fn unk_index(&self) -> Option<usize> {
        self.index.get(UNK).copied()
    }

    /// Map a token to its index, falling back to `<unk>`. Errors when the
    /// vocabulary has no `<unk>` row (i.e. it is not a sequential one).
    pub fn index_or_unk(&self, word: &str) -> Result<usize> {
        self.get(word).map_or_else(
            || {
                self.unk_index().ok_or_else(|| {
                    Error::MissingId {
                        what: "non-sequential vocabulary (no <unk> fallback)".into(),
                        id: word.to_owned(),
                    }
                })
            },
            Ok,
        )
    }

    /// Serialize as a header line `m` followed by `word<TAB>index<TAB>count`
    /// lines in index order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("{}\n", self.len()));
        for (i, word) in self.words.iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{}\n", word, i, self.counts[i]));
        }
        fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format(format!("{}: empty vocabulary file", path.display())))?;
        let m: usize = header.trim().parse().map_err(|_| {
            Error::Format(format!("{}: bad header line {header:?}", path.display()))
        })?;
        let mut rows: Vec<(String, u64)> = Vec::with_capacity(m);
        for (lineno, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (word, idx, count) = match (parts.next(), parts.next(), parts.next(), parts.next())
            {
                (Some(w), Some(i), Some(c), None) => (w, i, c),
                _ => {
                    return Err(Error::Format(format!(
                        "{}: line {}: expected word<TAB>index<TAB>count",
                        path.display(),
                        lineno + 1
                    )))
                }
            };
            let idx: usize = idx.parse().map_err(|_| {
                Error::Format(format!("{}: line {}: bad index", path.display(), lineno + 1))
            })?;
            if idx != rows.len() {
                return Err(Error::Format(format!(
                    "{}: line {}: index {} out of order",
                    path.display(),
                    lineno + 1,
                    idx
                )));
            }
            let count: u64 = count.parse().map_err(|_| {
                Error::Format(format!("{}: line {}: bad count", path.display(), lineno + 1))
            })?;
            rows.push((word.to_owned(), count));
        }
        if rows.len() != m {
            return Err(Error::Format(format!(
                "{}: header says {} entries, found {}",
                path.display(),
                m,
                rows.len()
            )));
        }
        Self::from_rows(rows)
    }
}

/// A sparse bag-of-words vector: `(index, count)` pairs sorted by index over
/// a vocabulary of `dim` words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BowVector {
    dim: usize,
    entries: Vec<(usize, u32)>,
}

impl BowVector {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }

    /// Total count mass, i.e. the number of in-vocabulary tokens.
    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| u64::from(c)).sum()
    }

    pub fn to_dense<F: Float>(&self) -> Array1<F> {
        let mut dense = Array1::zeros(self.dim);
        for &(i, c) in &self.entries {
            dense[i] = F::from(c).unwrap();
        }
        dense
    }
}

/// Count vocabulary-word occurrences in `s`. Out-of-vocabulary tokens
/// contribute nothing; an all-OOV sentence yields the zero vector.
pub fn encode_bow(s: &TokenSeq, vocab: &Vocabulary) -> BowVector {
    let mut counts: HashMap<usize, u32> = HashMap::new();
    for tok in s.iter() {
        if let Some(idx) = vocab.get(tok) {
            *counts.entry(idx).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(usize, u32)> = counts.into_iter().collect();
    entries.sort_unstable();
    BowVector {
        dim: vocab.len(),
        entries,
    }
}

/// The fixed English stopword list shipped with the crate.
pub fn default_stopwords() -> &'static HashSet<String> {
    static LIST: OnceLock<HashSet<String>> = OnceLock::new();
    LIST.get_or_init(|| {
        include_str!("../data/stopwords_en.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect()
    })
}

/// Load a stopword list: one word per line, UTF-8.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}
