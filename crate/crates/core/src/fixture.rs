//! Seeded synthetic retrieval corpus: orthogonal one-hot "videos" with
//! templated captions, plus the side files every encoder kind consumes.
//! Small enough for smoke tests, rich enough to exercise the whole stack
//! (stopwords, every encoder, ranking, evaluation with a full judgment
//! pool).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{CaptionRecord, CaptionSet, FeatureStore};
use crate::encoders::{EmbeddingTable, PrecomputedStore};
use crate::error::{Error, Result};
use crate::metrics::{JudgedRecord, JudgmentPool};
use crate::textproc::{default_stopwords, tokenize, Vocabulary};
use crate::trainer::{EncoderResources, EvalData};

/// Number of (caption, video) pairs the corpus holds.
pub const FIXTURE_SIZE: usize = 32;
/// Width of the synthetic word-embedding table.
pub const FIXTURE_W2V_DIM: usize = 8;
/// Width of the synthetic precomputed sentence vectors.
pub const FIXTURE_BERT_DIM: usize = 16;

const NOUNS: [&str; FIXTURE_SIZE] = [
    "dog", "cat", "bird", "horse", "fish", "bear", "wolf", "pig", "fox", "deer", "goat", "lion",
    "tiger", "mouse", "rabbit", "snake", "eagle", "shark", "whale", "seal", "otter", "crow",
    "duck", "swan", "frog", "toad", "crab", "moth", "bee", "ant", "owl", "hawk",
];
const ADJECTIVES: [&str; 4] = ["red", "blue", "green", "black"];
const VERBS: [&str; 4] = ["runs", "sits", "jumps", "sleeps"];

/// The generated corpus, in memory. `bert` vectors are keyed twice: by the
/// caption sentence ids (`s0`…) and by the 1-based query aliases (`q1`…)
/// that ranking assigns to query-file lines.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub captions: CaptionSet,
    pub features: FeatureStore<f32>,
    pub w2v: EmbeddingTable<f32>,
    pub bert: PrecomputedStore<f32>,
    pub pool: JudgmentPool,
}

/// Where [`Fixture::write`] put each file.
#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub features: PathBuf,
    pub captions: PathBuf,
    pub w2v: PathBuf,
    pub bert: PathBuf,
    pub qrels: PathBuf,
    pub queries: PathBuf,
}

fn caption_text(i: usize) -> String {
    format!(
        "a {} {} {}",
        ADJECTIVES[i % ADJECTIVES.len()],
        NOUNS[i],
        VERBS[(i / ADJECTIVES.len()) % VERBS.len()]
    )
}

impl Fixture {
    /// Build the corpus. All randomness (embedding tables, sentence
    /// vectors) flows from `seed`.
    pub fn generate(seed: u64) -> Fixture {
        let n = FIXTURE_SIZE;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut records = Vec::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        let mut eye = Array2::<f32>::zeros((n, n));
        for i in 0..n {
            records.push(CaptionRecord {
                sentence_id: format!("s{i}"),
                video_id: format!("v{i}"),
                text: caption_text(i),
            });
            ids.push(format!("v{i}"));
            eye[(i, i)] = 1.0;
        }
        let captions = CaptionSet::from_records(records).expect("fixture ids are unique");
        let features = FeatureStore::from_parts(ids, eye).expect("fixture shape is square");

        let mut vocabulary: Vec<&str> = Vec::new();
        vocabulary.push("a");
        vocabulary.extend(ADJECTIVES);
        vocabulary.extend(NOUNS);
        vocabulary.extend(VERBS);
        let w2v_rows = vocabulary
            .into_iter()
            .map(|word| {
                let row: Vec<f32> = (0..FIXTURE_W2V_DIM)
                    .map(|_| rng.gen_range(-0.5..0.5))
                    .collect();
                (word.to_owned(), row)
            })
            .collect();
        let w2v = EmbeddingTable::from_rows(w2v_rows).expect("fixture words are unique");

        let mut bert_ids = Vec::with_capacity(2 * n);
        let mut bert_rows = Array2::<f32>::zeros((2 * n, FIXTURE_BERT_DIM));
        for i in 0..n {
            let row: Vec<f32> = (0..FIXTURE_BERT_DIM)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            for (slot, value) in bert_rows.row_mut(i).iter_mut().zip(&row) {
                *slot = *value;
            }
            for (slot, value) in bert_rows.row_mut(n + i).iter_mut().zip(&row) {
                *slot = *value;
            }
            bert_ids.push(format!("s{i}"));
        }
        for i in 0..n {
            bert_ids.push(format!("q{}", i + 1));
        }
        let bert = PrecomputedStore::new(
            FeatureStore::from_parts(bert_ids, bert_rows).expect("fixture ids are unique"),
            "synthetic",
            "mean",
        );

        let mut pool = JudgmentPool::new();
        for i in 0..n {
            for j in 0..n {
                pool.insert(
                    &format!("q{}", i + 1),
                    JudgedRecord {
                        video_id: format!("v{j}"),
                        relevant: i == j,
                        stratum: 0,
                        rate: 1.0,
                    },
                )
                .expect("rate 1.0 is valid");
            }
        }

        Fixture {
            captions,
            features,
            w2v,
            bert,
            pool,
        }
    }

    /// The corpus as a training/validation set.
    pub fn eval_data(&self) -> Result<EvalData> {
        EvalData::new(self.captions.train_pairs(), self.features.clone())
    }

    /// Encoder inputs derived from the corpus: a stopword-free bag-of-words
    /// vocabulary, a sequential vocabulary, and the synthetic tables.
    pub fn resources(&self, min_count: u64) -> Result<EncoderResources> {
        let corpus: Vec<_> = self
            .captions
            .records()
            .iter()
            .map(|rec| tokenize(&rec.text))
            .collect();
        let stopwords = default_stopwords();
        let bow_vocab = Vocabulary::build(&corpus, min_count, false, stopwords)?;
        let seq_vocab = Vocabulary::build(&corpus, min_count, true, stopwords)?;
        Ok(EncoderResources {
            bow_vocab: Some(Arc::new(bow_vocab)),
            seq_vocab: Some(Arc::new(seq_vocab)),
            w2v: Some(Arc::new(self.w2v.clone())),
            bert: Some(Arc::new(self.bert.clone())),
        })
    }

    /// Query texts in id order (`q1`… maps to line 1…).
    pub fn query_lines(&self) -> Vec<String> {
        self.captions
            .records()
            .iter()
            .map(|rec| rec.text.clone())
            .collect()
    }

    /// Write the corpus into `dir` as the standard file set.
    pub fn write(&self, dir: &Path) -> Result<FixturePaths> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let paths = FixturePaths {
            features: dir.join("features.bin"),
            captions: dir.join("captions.tsv"),
            w2v: dir.join("w2v.txt"),
            bert: dir.join("bert.bin"),
            qrels: dir.join("qrels.tsv"),
            queries: dir.join("queries.txt"),
        };

        self.features.write(&paths.features)?;

        let mut captions = String::new();
        for rec in self.captions.records() {
            captions.push_str(&format!(
                "{}\t{}\t{}\n",
                rec.sentence_id, rec.video_id, rec.text
            ));
        }
        write_text(&paths.captions, &captions)?;

        let mut w2v = format!("{} {}\n", self.w2v.len(), self.w2v.dim());
        for (word, row) in self.w2v.entries() {
            w2v.push_str(word);
            for v in row {
                w2v.push_str(&format!(" {v}"));
            }
            w2v.push('\n');
        }
        write_text(&paths.w2v, &w2v)?;

        self.bert.vectors().write(&paths.bert)?;

        let mut qrels = String::new();
        for i in 0..FIXTURE_SIZE {
            for j in 0..FIXTURE_SIZE {
                qrels.push_str(&format!(
                    "q{}\t0\tv{}\t{}\t1.0\n",
                    i + 1,
                    j,
                    u8::from(i == j)
                ));
            }
        }
        write_text(&paths.qrels, &qrels)?;

        let mut queries = self.query_lines().join("\n");
        queries.push('\n');
        write_text(&paths.queries, &queries)?;

        Ok(paths)
    }
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_caption_set, load_feature_store, load_judgments};
    use crate::encoders::{load_embedding_table, load_precomputed};

    #[test]
    fn generation_is_deterministic() {
        let a = Fixture::generate(7);
        let b = Fixture::generate(7);
        assert_eq!(
            a.w2v.lookup("dog").unwrap().to_vec(),
            b.w2v.lookup("dog").unwrap().to_vec(),
            "same seed, same table"
        );
        let c = Fixture::generate(8);
        assert_ne!(
            a.w2v.lookup("dog").unwrap().to_vec(),
            c.w2v.lookup("dog").unwrap().to_vec()
        );
    }

    #[test]
    fn features_are_orthonormal() {
        let fixture = Fixture::generate(0);
        assert_eq!(fixture.features.len(), FIXTURE_SIZE);
        assert_eq!(fixture.features.dim(), FIXTURE_SIZE);
        for i in 0..FIXTURE_SIZE {
            for j in 0..FIXTURE_SIZE {
                let dot: f32 = fixture
                    .features
                    .row(i)
                    .iter()
                    .zip(fixture.features.row(j).iter())
                    .map(|(a, b)| a * b)
                    .sum();
                assert_eq!(dot, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn captions_are_separable_after_stopword_removal() {
        let fixture = Fixture::generate(0);
        let resources = fixture.resources(1).unwrap();
        let bow = resources.bow_vocab.unwrap();
        assert!(bow.get("a").is_none(), "article is a stopword");
        let mut word_sets: Vec<Vec<usize>> = Vec::new();
        for rec in fixture.captions.records() {
            let mut set: Vec<usize> = tokenize(&rec.text)
                .iter()
                .filter_map(|w| bow.get(w))
                .collect();
            set.sort_unstable();
            assert!(!set.is_empty());
            word_sets.push(set);
        }
        for i in 0..word_sets.len() {
            for j in (i + 1)..word_sets.len() {
                assert_ne!(word_sets[i], word_sets[j], "captions {i} and {j} collide");
            }
        }
    }

    #[test]
    fn every_caption_word_is_in_the_w2v_table() {
        let fixture = Fixture::generate(3);
        for rec in fixture.captions.records() {
            for word in tokenize(&rec.text).iter() {
                assert!(fixture.w2v.lookup(word).is_some(), "missing {word:?}");
            }
        }
    }

    #[test]
    fn bert_rows_alias_queries_to_sentences() {
        let fixture = Fixture::generate(3);
        assert_eq!(fixture.bert.len(), 2 * FIXTURE_SIZE);
        let s0 = fixture.bert.vectors().require("s0").unwrap();
        let q1 = fixture.bert.vectors().require("q1").unwrap();
        assert_eq!(s0.to_vec(), q1.to_vec());
    }

    #[test]
    fn written_files_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let fixture = Fixture::generate(11);
        let paths = fixture.write(dir.path()).unwrap();

        let features = load_feature_store(&paths.features).unwrap();
        assert_eq!(features.len(), FIXTURE_SIZE);
        assert_eq!(features.require("v5").unwrap()[5], 1.0);

        let captions = load_caption_set(&paths.captions).unwrap();
        assert_eq!(captions.len(), FIXTURE_SIZE);
        captions.validate_against(&features).unwrap();

        let w2v = load_embedding_table(&paths.w2v).unwrap();
        assert_eq!(w2v.dim(), FIXTURE_W2V_DIM);
        for (word, row) in fixture.w2v.entries() {
            let reloaded = w2v.lookup(word).unwrap();
            for (a, b) in row.iter().zip(reloaded.iter()) {
                assert!((a - b).abs() < 1e-6, "{word}: {a} vs {b}");
            }
        }

        let bert = load_precomputed(&paths.bert, "synthetic", "mean").unwrap();
        assert_eq!(bert.len(), 2 * FIXTURE_SIZE);

        let pool = load_judgments(&paths.qrels).unwrap();
        let relevant = pool.relevant_sets();
        assert_eq!(relevant["q1"], std::iter::once("v0".to_owned()).collect());

        let queries = std::fs::read_to_string(&paths.queries).unwrap();
        assert_eq!(queries.lines().count(), FIXTURE_SIZE);
        assert_eq!(queries.lines().next().unwrap(), caption_text(0));
    }

    #[test]
    fn fixture_trains_and_memorizes_with_a_bow_encoder() {
        use crate::spaces::EncoderKind;
        use crate::trainer::{fit, validation_metric, TrainConfig, ValMetric};

        let fixture = Fixture::generate(0);
        let data = fixture.eval_data().unwrap();
        let resources = fixture.resources(1).unwrap();
        let config = TrainConfig {
            encoders: vec![EncoderKind::Bow],
            d_c: 24,
            batch_size: 8,
            restarts: 1,
            lr0: 2e-3,
            max_epochs: Some(30),
            ..TrainConfig::default()
        };
        let outcome = fit(&data, &data, &resources, &config).unwrap();
        let map = validation_metric(&outcome.model, &data, ValMetric::MeanAp).unwrap();
        assert!(map > 0.9, "fixture should be memorizable, mAP {map}");
    }
}
