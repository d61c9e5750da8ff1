//! Command-line front end for the retrieval engine: vocabulary building,
//! training, ranking, run-file evaluation, gradient verification, and a
//! synthetic demo corpus.
//!
//! Exit codes: 0 success, 1 usage, 2 data/format errors, 3 numerical
//! failures.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use sea_core::data::{load_caption_set, load_feature_store, load_judgments, make_batches};
use sea_core::encoders::{load_embedding_table, load_precomputed};
use sea_core::fixture::Fixture;
use sea_core::metrics::{
    evaluate, read_run_file, render_report, write_run_file, JudgedRecord, JudgmentPool,
    RankedList,
};
use sea_core::spaces::{load_checkpoint, save_checkpoint, CheckpointOverrides};
use sea_core::textproc::{default_stopwords, load_stopwords, tokenize, Vocabulary};
use sea_core::trainer::{fit, gradient_check, GradCheckOutcome};
use sea_core::{
    EncoderKind, EncoderResources, Error, EvalData, FusionMode, LossMode, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "sea",
    version,
    about = "Text-to-video retrieval over learned common spaces"
)]
struct Cli {
    /// Worker threads for indexing and ranking (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build bag-of-words and sequential vocabularies from captions.
    BuildVocab(BuildVocabArgs),
    /// Train a retrieval model and write a checkpoint.
    Train(TrainArgs),
    /// Rank a video collection for text queries, producing a run file.
    Rank(RankArgs),
    /// Score a run file against relevance judgments.
    Eval(EvalArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write the synthetic demo corpus.
    MakeFixture(MakeFixtureArgs),
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Caption TSV: sentence_id<TAB>video_id<TAB>text.
    #[arg(long)]
    captions: PathBuf,
    /// Output prefix; writes <out>.bow.vocab and <out>.seq.vocab.
    #[arg(long)]
    out: PathBuf,
    /// Minimum corpus frequency for vocabulary entries.
    #[arg(long, default_value_t = 5)]
    min_count: u64,
    /// Stopword list (one word per line); defaults to the built-in English
    /// list.
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// key=value configuration file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Video feature container for the training collection.
    #[arg(long)]
    features: PathBuf,
    /// Training captions (sentence_id<TAB>video_id<TAB>text).
    #[arg(long)]
    captions: PathBuf,
    /// Prebuilt vocabulary prefix (<prefix>.bow.vocab / <prefix>.seq.vocab);
    /// omitted, vocabularies are built from the training captions.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Word-embedding table (needed by the w2v encoder; also warm-starts
    /// recurrent embeddings when widths match).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Precomputed sentence-vector container (needed by the bert encoder).
    #[arg(long)]
    precomputed: Option<PathBuf>,
    /// Output prefix; writes <out>.ckpt, <out>.log and <out>.diversity.
    #[arg(long)]
    out: PathBuf,
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Encoder set override, e.g. bow,w2v,bigru,bert.
    #[arg(long)]
    encoders: Option<String>,
    /// Fusion mode override: sea|concat|transformed|avg.
    #[arg(long)]
    fusion: Option<String>,
    /// Loss mode override: combined|single.
    #[arg(long)]
    loss: Option<String>,
    /// Common-space dimensionality override.
    #[arg(long)]
    dc: Option<usize>,
}

#[derive(Args)]
struct RankArgs {
    /// Query file: one sentence per line; line N becomes query id qN.
    queries: PathBuf,
    /// Trained model checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Video feature container to rank.
    #[arg(long)]
    features: PathBuf,
    /// Override the checkpoint's vocabulary prefix.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Override the checkpoint's embedding-table path.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Override the checkpoint's precomputed-vector path.
    #[arg(long)]
    precomputed: Option<PathBuf>,
    /// Keep the best N videos per query.
    #[arg(long, default_value_t = 1000)]
    topn: usize,
    /// Run-file destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run file: query_id<TAB>rank<TAB>video_id<TAB>score.
    run: PathBuf,
    /// Sampled judgments: query<TAB>stratum<TAB>video<TAB>relevance<TAB>rate.
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Caption ground truth; used as a complete judgment pool (sampling
    /// rate 1) when --qrels is absent. Run query ids must then be caption
    /// sentence ids.
    #[arg(long)]
    captions: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the synthetic model, data and coordinate sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Encoder set for the checked model.
    #[arg(long, default_value = "bow,w2v,bigru")]
    encoders: String,
    /// Fusion mode: sea|concat|transformed|avg.
    #[arg(long, default_value = "sea")]
    fusion: String,
    /// Loss mode: combined|single.
    #[arg(long, default_value = "combined")]
    loss: String,
}

#[derive(Args)]
struct MakeFixtureArgs {
    /// Directory for the corpus files.
    #[arg(long)]
    out: PathBuf,
    /// Seed for the synthetic tables.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{err}");
            std::process::exit(0);
        }
        Err(err) => {
            eprint!("{err}");
            std::process::exit(1);
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            log::warn!("thread pool already initialized: {err}");
        }
    }
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err:#}");
        let code = match err.downcast_ref::<Error>() {
            Some(e) if e.is_numerical() => 3,
            _ => 2,
        };
        std::process::exit(code);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildVocab(args) => build_vocab(args),
        Command::Train(args) => train(args),
        Command::Rank(args) => rank(args),
        Command::Eval(args) => eval(args),
        Command::Gradcheck(args) => gradcheck(args),
        Command::MakeFixture(args) => make_fixture(args),
    }
}

fn bow_vocab_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, ".bow.vocab")
}

fn seq_vocab_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, ".seq.vocab")
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn build_vocab(args: BuildVocabArgs) -> Result<()> {
    let captions = load_caption_set(&args.captions)?;
    let corpus: Vec<_> = captions
        .records()
        .iter()
        .map(|rec| tokenize(&rec.text))
        .collect();
    let stopwords = match &args.stopwords {
        Some(path) => load_stopwords(path)?,
        None => default_stopwords().clone(),
    };
    let bow = Vocabulary::build(&corpus, args.min_count, false, &stopwords)?;
    let seq = Vocabulary::build(&corpus, args.min_count, true, &stopwords)?;
    let bow_path = bow_vocab_path(&args.out);
    let seq_path = seq_vocab_path(&args.out);
    bow.save(&bow_path)?;
    seq.save(&seq_path)?;
    println!("bow\t{}\t{}", bow.len(), bow_path.display());
    println!("seq\t{}\t{}", seq.len(), seq_path.display());
    Ok(())
}

/// Encoder sets may mix kinds but repeat none, and carry at most one
/// recurrent encoder.
fn validate_encoder_set(kinds: &[EncoderKind]) -> Result<()> {
    for (i, a) in kinds.iter().enumerate() {
        for b in &kinds[i + 1..] {
            if a == b {
                bail!(Error::Format(format!(
                    "encoder {:?} listed more than once",
                    a.tag()
                )));
            }
        }
    }
    let recurrent = kinds
        .iter()
        .filter(|k| matches!(k, EncoderKind::Gru | EncoderKind::BiGru))
        .count();
    if recurrent > 1 {
        bail!(Error::Format(
            "an encoder set holds at most one of gru|bigru".into()
        ));
    }
    Ok(())
}

fn parse_encoder_list(text: &str) -> Result<Vec<EncoderKind>> {
    let kinds = text
        .split(',')
        .map(|t| EncoderKind::parse(t.trim()))
        .collect::<sea_core::Result<Vec<_>>>()?;
    Ok(kinds)
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(encoders) = &args.encoders {
        config.encoders = parse_encoder_list(encoders)?;
    }
    if let Some(fusion) = &args.fusion {
        config.fusion = FusionMode::parse(fusion)?;
    }
    if let Some(loss) = &args.loss {
        config.loss = LossMode::parse(loss)?;
    }
    if let Some(dc) = args.dc {
        config.d_c = dc;
    }
    config.validate()?;
    validate_encoder_set(&config.encoders)?;

    let features = load_feature_store(&args.features)?;
    let captions = load_caption_set(&args.captions)?;
    captions.validate_against(&features)?;
    let train_set = EvalData::new(captions.train_pairs(), features)?;

    let val_set = match (&config.val_captions, &config.val_features) {
        (Some(cap), Some(feat)) => {
            let features = load_feature_store(feat)?;
            let captions = load_caption_set(cap)?;
            captions.validate_against(&features)?;
            EvalData::new(captions.train_pairs(), features)?
        }
        (None, None) => train_set.clone(),
        _ => bail!(Error::Format(
            "val_captions and val_features must be set together".into()
        )),
    };

    let needs_bow = config.encoders.contains(&EncoderKind::Bow);
    let needs_seq = config
        .encoders
        .iter()
        .any(|k| matches!(k, EncoderKind::Gru | EncoderKind::BiGru));
    let needs_w2v = config.encoders.contains(&EncoderKind::W2v);
    let needs_bert = config.encoders.contains(&EncoderKind::Bert);

    // resource paths are remembered so the checkpoint can reference them
    let mut bow_ref = None;
    let mut seq_ref = None;
    let mut resources = EncoderResources::default();
    match &args.vocab {
        Some(prefix) => {
            if needs_bow {
                let path = bow_vocab_path(prefix);
                resources.bow_vocab = Some(Arc::new(Vocabulary::load(&path)?));
                bow_ref = Some(path);
            }
            if needs_seq {
                let path = seq_vocab_path(prefix);
                resources.seq_vocab = Some(Arc::new(Vocabulary::load(&path)?));
                seq_ref = Some(path);
            }
        }
        None => {
            // build from the training captions and persist beside the model
            let corpus: Vec<_> = captions
                .records()
                .iter()
                .map(|rec| tokenize(&rec.text))
                .collect();
            let stopwords = default_stopwords();
            if needs_bow {
                let vocab =
                    Vocabulary::build(&corpus, config.min_count as u64, false, stopwords)?;
                let path = bow_vocab_path(&args.out);
                vocab.save(&path)?;
                resources.bow_vocab = Some(Arc::new(vocab));
                bow_ref = Some(path);
            }
            if needs_seq {
                let vocab = Vocabulary::build(&corpus, config.min_count as u64, true, stopwords)?;
                let path = seq_vocab_path(&args.out);
                vocab.save(&path)?;
                resources.seq_vocab = Some(Arc::new(vocab));
                seq_ref = Some(path);
            }
        }
    }
    if let Some(path) = &args.embeddings {
        resources.w2v = Some(Arc::new(load_embedding_table(path)?));
    } else if needs_w2v {
        bail!(Error::Format(
            "the w2v encoder needs --embeddings".into()
        ));
    }
    if let Some(path) = &args.precomputed {
        resources.bert = Some(Arc::new(load_precomputed(path, "precomputed", "mean")?));
    } else if needs_bert {
        bail!(Error::Format(
            "the bert encoder needs --precomputed".into()
        ));
    }

    let outcome = fit(&train_set, &val_set, &resources, &config)?;

    let resource_refs: Vec<String> = config
        .encoders
        .iter()
        .map(|kind| {
            let path = match kind {
                EncoderKind::Bow => bow_ref.clone(),
                EncoderKind::Gru | EncoderKind::BiGru => seq_ref.clone(),
                EncoderKind::W2v => args.embeddings.clone(),
                EncoderKind::Bert => args.precomputed.clone(),
            };
            path.expect("resource checked before training")
                .display()
                .to_string()
        })
        .collect();

    let ckpt_path = with_suffix(&args.out, ".ckpt");
    save_checkpoint(&outcome.model, &ckpt_path, &resource_refs)?;
    let log_path = with_suffix(&args.out, ".log");
    write_lines(&log_path, &outcome.log)?;
    let diversity_path = with_suffix(&args.out, ".diversity");
    write_lines(&diversity_path, &outcome.diversity)?;

    println!("checkpoint\t{}", ckpt_path.display());
    println!("best_restart\t{}", outcome.best_restart);
    println!("best_epoch\t{}", outcome.best_epoch);
    println!("best_val\t{:.6}", outcome.best_val);
    Ok(())
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| anyhow!(Error::io(path.display().to_string(), e)))
}

fn rank(args: RankArgs) -> Result<()> {
    let overrides = CheckpointOverrides {
        bow_vocab: args.vocab.as_deref().map(bow_vocab_path),
        seq_vocab: args.vocab.as_deref().map(seq_vocab_path),
        embeddings: args.embeddings.clone(),
        precomputed: args.precomputed.clone(),
    };
    let (model, _) = load_checkpoint(&args.checkpoint, &overrides)?;
    let collection = load_feature_store(&args.features)?;
    let index = model.index_videos(&collection)?;

    let text = std::fs::read_to_string(&args.queries)
        .map_err(|e| anyhow!(Error::io(args.queries.display().to_string(), e)))?;
    let mut lists: Vec<RankedList> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let query_id = format!("q{}", lineno + 1);
        let tokens = tokenize(line);
        let ranked = model
            .rank_with_index(&query_id, &tokens, &index)
            .with_context(|| format!("query {query_id} ({line:?})"))?;
        lists.push(ranked.truncated(args.topn));
    }
    if lists.is_empty() {
        bail!(Error::Empty(format!(
            "{}: no queries",
            args.queries.display()
        )));
    }
    match &args.out {
        Some(path) => write_run_file(path, &lists)?,
        None => {
            for list in &lists {
                for (i, (video_id, score)) in list.items().iter().enumerate() {
                    println!("{}\t{}\t{}\t{:.6}", list.query_id, i + 1, video_id, score);
                }
            }
        }
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let lists = read_run_file(&args.run)?;
    let pool = match (&args.qrels, &args.captions) {
        (Some(path), _) => load_judgments(path)?,
        (None, Some(path)) => {
            let captions = load_caption_set(path)?;
            let positives: HashMap<&str, &str> = captions
                .records()
                .iter()
                .map(|rec| (rec.sentence_id.as_str(), rec.video_id.as_str()))
                .collect();
            let mut pool = JudgmentPool::new();
            for list in &lists {
                let positive = positives.get(list.query_id.as_str()).ok_or_else(|| {
                    Error::MissingId {
                        what: "caption ground truth".into(),
                        id: list.query_id.clone(),
                    }
                })?;
                pool.insert(
                    &list.query_id,
                    JudgedRecord {
                        video_id: (*positive).to_owned(),
                        relevant: true,
                        stratum: 0,
                        rate: 1.0,
                    },
                )?;
                for (video_id, _) in list.items() {
                    if video_id.as_str() == *positive {
                        continue;
                    }
                    pool.insert(
                        &list.query_id,
                        JudgedRecord {
                            video_id: video_id.clone(),
                            relevant: false,
                            stratum: 0,
                            rate: 1.0,
                        },
                    )?;
                }
            }
            pool
        }
        (None, None) => bail!(Error::Format(
            "eval needs --qrels or --captions for ground truth".into()
        )),
    };
    let relevant = pool.relevant_sets();
    let (per_query, summary) = evaluate(&lists, &relevant, Some(&pool))?;
    print!("{}", render_report(&per_query, &summary));
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<()> {
    const TOLERANCE: f64 = 1e-4;
    const ATTEMPTS: usize = 5;

    let encoders = parse_encoder_list(&args.encoders)?;
    validate_encoder_set(&encoders)?;
    let fusion = FusionMode::parse(&args.fusion)?;
    let loss = LossMode::parse(&args.loss)?;

    let fixture = Fixture::generate(args.seed);
    let resources = fixture.resources(1)?;
    let data = fixture.eval_data()?;
    let features = data.features.cast::<f64>();

    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let built = resources.build_encoders(&encoders, fixture.w2v.dim(), 5, &mut rng)?;
    let model32 =
        sea_core::MultiSpaceModel::new(fusion, built, data.features.dim(), 6, 7, &mut rng)?;
    let model = model32.cast::<f64>();

    for attempt in 0..ATTEMPTS {
        let batches = make_batches(&data.pairs, 8, args.seed, attempt as u64)?;
        let outcome = gradient_check(
            &model,
            &batches[0],
            &features,
            loss,
            sea_core::loss::DEFAULT_ALPHA,
            TOLERANCE,
            args.seed.wrapping_add(attempt as u64),
        )?;
        match outcome {
            GradCheckOutcome::Checked(report) => {
                println!(
                    "checked {} coordinates, max relative error {:.3e} (tolerance {TOLERANCE:.0e}): {}",
                    report.coords_checked,
                    report.max_rel_err,
                    if report.passed { "PASS" } else { "FAIL" }
                );
                if report.passed {
                    return Ok(());
                }
                bail!(Error::Numeric(format!(
                    "gradient check failed: max relative error {:.3e} exceeds {TOLERANCE:.0e}",
                    report.max_rel_err
                )));
            }
            GradCheckOutcome::TieDetected => {
                log::info!("attempt {attempt}: similarity tie or hinge kink; resampling");
            }
        }
    }
    bail!(Error::Numeric(format!(
        "{ATTEMPTS} batches in a row hit similarity ties; no check performed"
    )))
}

fn make_fixture(args: MakeFixtureArgs) -> Result<()> {
    let fixture = Fixture::generate(args.seed);
    let paths = fixture.write(&args.out)?;
    println!("features\t{}", paths.features.display());
    println!("captions\t{}", paths.captions.display());
    println!("embeddings\t{}", paths.w2v.display());
    println!("precomputed\t{}", paths.bert.display());
    println!("qrels\t{}", paths.qrels.display());
    println!("queries\t{}", paths.queries.display());
    Ok(())
}
