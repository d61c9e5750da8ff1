//! End-to-end optimization: RMSProp with per-epoch learning-rate decay,
//! plateau halving, early stopping, multi-restart model selection, and a
//! finite-difference gradient-check harness.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{make_batches, Batch, FeatureStore, TrainPair};
use crate::encoders::{EmbeddingTable, GruEncoder, PrecomputedStore};
use crate::error::{Error, Result};
use crate::grad::{backward_batch, batch_loss, forward_batch, ModelGrads};
use crate::loss::{
    combined_loss, hardneg_diversity, render_diversity_line, single_loss, LossMode, LossReport,
};
use crate::metrics::evaluate;
use crate::spaces::{
    EncoderKind, FusionMode, MultiSpaceModel, SentenceEncoder, DEFAULT_D_C, DEFAULT_TRANSFORM_DIM,
};
use crate::textproc::Vocabulary;
use crate::{real, Real};

/// RMSProp smoothing constant.
pub const RMSPROP_RHO: f64 = 0.99;
/// RMSProp denominator stabilizer.
pub const RMSPROP_EPSILON: f64 = 1e-8;

/// Which validation quantity drives model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValMetric {
    /// Mean average precision over validation queries.
    MeanAp,
    /// R@1 + R@5 + R@10 (percentages).
    RecallSum,
}

impl ValMetric {
    pub fn tag(self) -> &'static str {
        match self {
            ValMetric::MeanAp => "mAP",
            ValMetric::RecallSum => "recall-sum",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "mAP" | "map" => Ok(ValMetric::MeanAp),
            "recall-sum" | "recall_sum" => Ok(ValMetric::RecallSum),
            other => Err(Error::Format(format!(
                "unknown validation metric {other:?} (want mAP|recall-sum)"
            ))),
        }
    }
}

impl std::fmt::Display for ValMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Everything `fit` needs to know; ingestible from a key=value file.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub alpha: f64,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    /// Halve the learning rate every this many epochs without a new best.
    pub plateau_patience: usize,
    /// Stop a restart after this many epochs without a new best.
    pub early_stop_patience: usize,
    pub restarts: usize,
    pub d_c: usize,
    pub seed: u64,
    pub val_metric: ValMetric,
    pub fusion: FusionMode,
    pub encoders: Vec<EncoderKind>,
    pub loss: LossMode,
    pub gru_hidden: usize,
    pub gru_embed: usize,
    pub transform_dim: usize,
    /// Minimum corpus frequency for vocabulary entries.
    pub min_count: usize,
    /// Optional hard cap on epochs per restart (early stopping still rules).
    pub max_epochs: Option<usize>,
    /// Optional validation caption/feature files (training set reused when
    /// absent); consumed by callers that assemble the data sets.
    pub val_captions: Option<PathBuf>,
    pub val_features: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: crate::loss::DEFAULT_ALPHA,
            batch_size: 128,
            lr0: 1e-4,
            lr_decay: 0.99,
            plateau_patience: 3,
            early_stop_patience: 10,
            restarts: 3,
            d_c: DEFAULT_D_C,
            seed: 0,
            val_metric: ValMetric::MeanAp,
            fusion: FusionMode::Sea,
            encoders: vec![EncoderKind::Bow, EncoderKind::W2v, EncoderKind::BiGru],
            loss: LossMode::Combined,
            gru_hidden: 1024,
            gru_embed: 500,
            transform_dim: DEFAULT_TRANSFORM_DIM,
            min_count: 5,
            max_epochs: None,
            val_captions: None,
            val_features: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("lr0", self.lr0),
            ("lr_decay", self.lr_decay),
        ];
        for (name, v) in positive {
            // negated form so NaN fails the check too
            if !(v > 0.0) {
                return Err(Error::Format(format!("{name} must be positive, got {v}")));
            }
        }
        if self.lr_decay > 1.0 {
            return Err(Error::Format("lr_decay must not exceed 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Format("batch_size must be at least 2".into()));
        }
        if self.plateau_patience < 1 || self.early_stop_patience < 1 {
            return Err(Error::Format("patience values must be at least 1".into()));
        }
        if self.restarts < 1 {
            return Err(Error::Format("restarts must be at least 1".into()));
        }
        if self.d_c == 0
            || self.gru_hidden == 0
            || self.gru_embed == 0
            || self.transform_dim == 0
        {
            return Err(Error::Format("model dimensions must be positive".into()));
        }
        if self.min_count < 1 {
            return Err(Error::Format("min_count must be at least 1".into()));
        }
        if self.encoders.is_empty() {
            return Err(Error::Empty("encoder set is empty".into()));
        }
        Ok(())
    }

    /// Apply one `key=value` setting (config-file line or CLI override).
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Format(format!("bad value {value:?} for config key {key}")))
        }
        match key {
            "alpha" => self.alpha = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr0" => self.lr0 = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "plateau_patience" => self.plateau_patience = num(key, value)?,
            "early_stop_patience" => self.early_stop_patience = num(key, value)?,
            "restarts" => self.restarts = num(key, value)?,
            "d_c" => self.d_c = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "val_metric" => self.val_metric = ValMetric::parse(value)?,
            "fusion" => self.fusion = FusionMode::parse(value)?,
            "encoders" => {
                self.encoders = value
                    .split(',')
                    .map(|t| EncoderKind::parse(t.trim()))
                    .collect::<Result<_>>()?;
            }
            "loss" => self.loss = LossMode::parse(value)?,
            "gru_hidden" => self.gru_hidden = num(key, value)?,
            "gru_embed" => self.gru_embed = num(key, value)?,
            "transform_dim" => self.transform_dim = num(key, value)?,
            "min_count" => self.min_count = num(key, value)?,
            "max_epochs" => self.max_epochs = Some(num(key, value)?),
            "val_captions" => self.val_captions = Some(PathBuf::from(value)),
            "val_features" => self.val_features = Some(PathBuf::from(value)),
            other => {
                return Err(Error::Format(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Parse a UTF-8 `key=value` configuration file (`#` comments allowed).
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut config = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!(
                    "{}: line {}: expected key=value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            config.apply_kv(key.trim(), value.trim())?;
        }
        Ok(config)
    }
}

/// One elementwise RMSProp update; returns the new parameter value.
/// `acc ← ρ·acc + (1−ρ)·g²; param ← param − lr·g/(√acc + ε)`.
pub fn rmsprop_scalar<F: Real>(param: F, grad: F, acc: &mut F, rho: F, eps: F, lr: F) -> F {
    *acc = rho * *acc + (F::one() - rho) * grad * grad;
    param - lr * grad / (acc.sqrt() + eps)
}

/// Per-tensor squared-gradient accumulators in the model's declared
/// parameter order, plus the current learning rate.
#[derive(Debug, Clone)]
pub struct OptimizerState<F> {
    acc: Vec<Vec<F>>,
    pub rho: F,
    pub eps: F,
    pub lr: F,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(model: &MultiSpaceModel<F>, lr: F) -> Self {
        let mut acc = Vec::new();
        model.visit_params(&mut |_, view| acc.push(vec![F::zero(); view.len()]));
        OptimizerState {
            acc,
            rho: real::<F>(RMSPROP_RHO),
            eps: real::<F>(RMSPROP_EPSILON),
            lr,
        }
    }

    /// Apply one RMSProp step over every trainable tensor. A non-finite
    /// gradient aborts before any parameter changes.
    pub fn step(&mut self, model: &mut MultiSpaceModel<F>, grads: &ModelGrads<F>) -> Result<()> {
        let mut flat: Vec<(String, Vec<F>)> = Vec::with_capacity(self.acc.len());
        let mut bad: Option<String> = None;
        grads.visit(&mut |name, view| {
            if bad.is_none() && view.iter().any(|v| !v.is_finite()) {
                bad = Some(name.clone());
            }
            flat.push((name, view.iter().copied().collect()));
        });
        if let Some(name) = bad {
            return Err(Error::NonFinite(format!(
                "non-finite gradient for tensor {name}"
            )));
        }
        if flat.len() != self.acc.len() {
            return Err(Error::Dimension {
                context: "optimizer tensor count".into(),
                expected: self.acc.len(),
                got: flat.len(),
            });
        }
        let (rho, eps, lr) = (self.rho, self.eps, self.lr);
        let mut idx = 0usize;
        model.visit_params_mut(&mut |name, mut view| {
            let (grad_name, grad) = &flat[idx];
            debug_assert_eq!(&name, grad_name, "optimizer visit order drifted");
            let acc = &mut self.acc[idx];
            for (slot, (p, g)) in view.iter_mut().zip(grad).enumerate() {
                *p = rmsprop_scalar(*p, *g, &mut acc[slot], rho, eps, lr);
            }
            idx += 1;
        });
        Ok(())
    }
}

/// A caption/feature pairing usable as a training or validation set.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub pairs: Vec<TrainPair>,
    pub features: FeatureStore<f32>,
}

impl EvalData {
    pub fn new(pairs: Vec<TrainPair>, features: FeatureStore<f32>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("data set with no sentence/video pairs".into()));
        }
        for pair in &pairs {
            features.require(&pair.video_id)?;
        }
        Ok(EvalData { pairs, features })
    }
}

/// The frozen inputs encoders are built from.
#[derive(Debug, Clone, Default)]
pub struct EncoderResources {
    pub bow_vocab: Option<Arc<Vocabulary>>,
    pub seq_vocab: Option<Arc<Vocabulary>>,
    pub w2v: Option<Arc<EmbeddingTable<f32>>>,
    pub bert: Option<Arc<PrecomputedStore<f32>>>,
}

impl EncoderResources {
    fn require<'a, T>(resource: &'a Option<T>, kind: EncoderKind, what: &str) -> Result<&'a T> {
        resource.as_ref().ok_or_else(|| {
            Error::Format(format!("{} encoder requested without {what}", kind.tag()))
        })
    }

    /// Instantiate the configured encoder set, drawing any trainable
    /// initializations from `rng`.
    pub fn build_encoders(
        &self,
        kinds: &[EncoderKind],
        gru_embed: usize,
        gru_hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<SentenceEncoder<f32>>> {
        kinds
            .iter()
            .map(|&kind| match kind {
                EncoderKind::Bow => {
                    let vocab = Self::require(&self.bow_vocab, kind, "a vocabulary")?;
                    Ok(SentenceEncoder::Bow {
                        vocab: Arc::clone(vocab),
                    })
                }
                EncoderKind::W2v => {
                    let table = Self::require(&self.w2v, kind, "an embedding table")?;
                    Ok(SentenceEncoder::W2v {
                        table: Arc::clone(table),
                    })
                }
                EncoderKind::Gru | EncoderKind::BiGru => {
                    let vocab = Self::require(&self.seq_vocab, kind, "a vocabulary")?;
                    let table = self.w2v.as_deref();
                    let enc = if kind == EncoderKind::BiGru {
                        GruEncoder::new_bigru(
                            Arc::clone(vocab),
                            gru_embed,
                            gru_hidden,
                            table,
                            rng,
                        )
                    } else {
                        GruEncoder::new_gru(Arc::clone(vocab), gru_embed, gru_hidden, table, rng)
                    };
                    Ok(SentenceEncoder::Recurrent(enc))
                }
                EncoderKind::Bert => {
                    let store = Self::require(&self.bert, kind, "precomputed vectors")?;
                    Ok(SentenceEncoder::Precomputed {
                        store: Arc::clone(store),
                    })
                }
            })
            .collect()
    }
}

/// What a training run returns: the selected model and where it came from.
#[derive(Debug)]
pub struct FitOutcome {
    pub model: MultiSpaceModel<f32>,
    pub best_restart: usize,
    pub best_epoch: usize,
    pub best_val: f64,
    /// One line per epoch: `restart<TAB>epoch<TAB>loss<TAB>val<TAB>lr`.
    pub log: Vec<String>,
    /// One diversity line per epoch.
    pub diversity: Vec<String>,
    /// Every batch loss in execution order (restarts concatenated).
    pub batch_loss_trace: Vec<f32>,
}

/// Validation score of a model over an evaluation set: every sentence
/// queries the set's video collection; its own video is the relevant item.
pub fn validation_metric(
    model: &MultiSpaceModel<f32>,
    val: &EvalData,
    metric: ValMetric,
) -> Result<f64> {
    let index = model.index_videos(&val.features)?;
    let mut lists = Vec::with_capacity(val.pairs.len());
    let mut relevant: HashMap<String, HashSet<String>> = HashMap::new();
    for pair in &val.pairs {
        lists.push(model.rank_with_index(&pair.sentence_id, &pair.tokens, &index)?);
        relevant
            .entry(pair.sentence_id.clone())
            .or_default()
            .insert(pair.video_id.clone());
    }
    let (_, summary) = evaluate(&lists, &relevant, None)?;
    let value = match metric {
        ValMetric::MeanAp => summary.mean_ap,
        ValMetric::RecallSum => summary.recall_pct.iter().sum(),
    };
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "validation metric {metric} is not finite"
        )));
    }
    Ok(value)
}

struct RestartOutcome {
    model: MultiSpaceModel<f32>,
    best_epoch: usize,
    best_val: f64,
}

/// Train with restarts and return the best checkpoint across them.
pub fn fit(
    train: &EvalData,
    val: &EvalData,
    resources: &EncoderResources,
    config: &TrainConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    if config.fusion == FusionMode::ModelAverage {
        return fit_model_average(train, val, resources, config);
    }
    fit_one_model(train, val, resources, config)
}

fn fit_one_model(
    train: &EvalData,
    val: &EvalData,
    resources: &EncoderResources,
    config: &TrainConfig,
) -> Result<FitOutcome> {
    let mut log = Vec::new();
    let mut diversity = Vec::new();
    let mut trace = Vec::new();
    let mut best: Option<(usize, RestartOutcome)> = None;
    let mut last_abort: Option<Error> = None;

    for restart in 0..config.restarts {
        match run_restart(
            train,
            val,
            resources,
            config,
            restart,
            &mut log,
            &mut diversity,
            &mut trace,
        ) {
            Ok(outcome) => {
                let better = match &best {
                    None => true,
                    Some((_, b)) => outcome.best_val > b.best_val,
                };
                if better {
                    best = Some((restart, outcome));
                }
            }
            Err(err) if matches!(err, Error::Numeric(_) | Error::NonFinite(_)) => {
                log::warn!("restart {restart} aborted: {err}");
                last_abort = Some(err);
            }
            Err(err) => return Err(err),
        }
    }

    match best {
        Some((best_restart, outcome)) => Ok(FitOutcome {
            model: outcome.model,
            best_restart,
            best_epoch: outcome.best_epoch,
            best_val: outcome.best_val,
            log,
            diversity,
            batch_loss_trace: trace,
        }),
        None => Err(last_abort.unwrap_or_else(|| {
            Error::Numeric("every restart aborted before a validation pass".into())
        })),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_restart(
    train: &EvalData,
    val: &EvalData,
    resources: &EncoderResources,
    config: &TrainConfig,
    restart: usize,
    log: &mut Vec<String>,
    diversity: &mut Vec<String>,
    trace: &mut Vec<f32>,
) -> Result<RestartOutcome> {
    let restart_seed = config.seed.wrapping_add(restart as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(restart_seed);
    let encoders =
        resources.build_encoders(&config.encoders, config.gru_embed, config.gru_hidden, &mut rng)?;
    let mut model = MultiSpaceModel::new(
        config.fusion,
        encoders,
        train.features.dim(),
        config.d_c,
        config.transform_dim,
        &mut rng,
    )?;
    let mut opt = OptimizerState::new(&model, config.lr0 as f32);
    let mut lr = config.lr0;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_model = model.clone();
    let mut since_best = 0usize;

    let alpha = config.alpha as f32;
    let mut epoch = 0usize;
    loop {
        if let Some(cap) = config.max_epochs {
            if epoch >= cap {
                break;
            }
        }
        let batches = make_batches(&train.pairs, config.batch_size, restart_seed, epoch as u64)?;
        opt.lr = lr as f32;
        let mut epoch_reports: Vec<LossReport<f32>> = Vec::with_capacity(batches.len());
        let mut epoch_loss = 0.0f64;
        for batch in &batches {
            let fwd = forward_batch(&model, batch, &train.features)?;
            let report = match config.loss {
                LossMode::Combined => combined_loss(&fwd.sims, &fwd.video_ids, alpha)?,
                LossMode::Single => single_loss(&fwd.sims, &fwd.video_ids, alpha)?,
            };
            let mut grads = ModelGrads::zeros(&model);
            backward_batch(&model, &fwd, &report, &mut grads);
            opt.step(&mut model, &grads)?;
            trace.push(report.combined);
            epoch_loss += report.combined as f64;
            epoch_reports.push(report);
        }
        epoch_loss /= batches.len() as f64;

        let val_value = validation_metric(&model, val, config.val_metric)?;
        log.push(format!(
            "{restart}\t{epoch}\t{epoch_loss:.6}\t{val_value:.6}\t{lr:.6e}"
        ));
        let stats = hardneg_diversity(&epoch_reports)?;
        diversity.push(render_diversity_line(epoch, &stats));

        if val_value > best_val {
            best_val = val_value;
            best_epoch = epoch;
            best_model = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.early_stop_patience {
            break;
        }
        if since_best > 0 && since_best % config.plateau_patience == 0 {
            lr *= 0.5;
        }
        lr *= config.lr_decay;
        epoch += 1;
    }

    Ok(RestartOutcome {
        model: best_model,
        best_epoch,
        best_val,
    })
}

/// Model averaging trains one single-encoder model per configured encoder,
/// independently, then assembles their spaces for averaged inference.
fn fit_model_average(
    train: &EvalData,
    val: &EvalData,
    resources: &EncoderResources,
    config: &TrainConfig,
) -> Result<FitOutcome> {
    let mut log = Vec::new();
    let mut diversity = Vec::new();
    let mut trace = Vec::new();
    let mut subnets = Vec::with_capacity(config.encoders.len());
    for (m, &kind) in config.encoders.iter().enumerate() {
        let sub_config = TrainConfig {
            fusion: FusionMode::Sea,
            encoders: vec![kind],
            seed: config.seed.wrapping_add((m as u64 + 1) * 1_000_003),
            ..config.clone()
        };
        let outcome = fit_one_model(train, val, resources, &sub_config)?;
        log.extend(outcome.log);
        diversity.extend(outcome.diversity);
        trace.extend(outcome.batch_loss_trace);
        let mut model = outcome.model;
        subnets.append(&mut model.subnets);
    }
    let model = MultiSpaceModel {
        fusion: FusionMode::ModelAverage,
        subnets,
        d_v: train.features.dim(),
    };
    let best_val = validation_metric(&model, val, config.val_metric)?;
    Ok(FitOutcome {
        model,
        best_restart: 0,
        best_epoch: 0,
        best_val,
        log,
        diversity,
        batch_loss_trace: trace,
    })
}

/// What one gradient check measured.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// A check either runs, or refuses because the batch sits on a mining tie
/// or a hinge kink (where finite differences are meaningless).
#[derive(Debug)]
pub enum GradCheckOutcome {
    Checked(GradCheckReport),
    TieDetected,
}

/// Minimum sampled coordinates per tensor.
const GRADCHECK_COORDS: usize = 32;
/// Central-difference step.
const GRADCHECK_H: f64 = 1e-5;
/// Sim gap below which hardest-negative selection counts as tied.
const TIE_GAP: f64 = 1e-4;

fn has_mining_ties(sims: &[Array2<f64>], report: &LossReport<f64>, alpha: f64) -> bool {
    let b = report.batch_size();
    let fused: Option<Array2<f64>> = match report.mode {
        LossMode::Single => {
            let mut m = sims[0].clone();
            for s in &sims[1..] {
                m += s;
            }
            Some(m / sims.len() as f64)
        }
        LossMode::Combined => None,
    };
    for (group, terms) in report.terms.iter().enumerate() {
        let matrix = fused.as_ref().unwrap_or(&sims[group]);
        for (i, term) in terms.iter().enumerate() {
            // a hinge sitting on its kink flips activation under perturbation
            if (alpha + term.neg_sim - term.pos_sim).abs() < TIE_GAP {
                return true;
            }
            for j in 0..b {
                if j == term.neg_index {
                    continue;
                }
                let gap = (matrix[(i, term.neg_index)] - matrix[(i, j)]).abs();
                if gap < TIE_GAP {
                    return true;
                }
            }
        }
    }
    false
}

/// Compare analytic gradients against central finite differences at 64-bit
/// precision, sampling at least [`GRADCHECK_COORDS`] coordinates per tensor.
pub fn gradient_check(
    model: &MultiSpaceModel<f64>,
    batch: &Batch,
    features: &FeatureStore<f64>,
    mode: LossMode,
    alpha: f64,
    tolerance: f64,
    sample_seed: u64,
) -> Result<GradCheckOutcome> {
    let fwd = forward_batch(model, batch, features)?;
    let report = match mode {
        LossMode::Combined => combined_loss(&fwd.sims, &fwd.video_ids, alpha)?,
        LossMode::Single => single_loss(&fwd.sims, &fwd.video_ids, alpha)?,
    };
    if has_mining_ties(&fwd.sims, &report, alpha) {
        return Ok(GradCheckOutcome::TieDetected);
    }
    let mut grads = ModelGrads::zeros(model);
    backward_batch(model, &fwd, &report, &mut grads);
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    grads.visit(&mut |_, view| analytic.push(view.iter().copied().collect()));
    let report = fd_compare(
        model, batch, features, mode, alpha, tolerance, sample_seed, &analytic,
    )?;
    Ok(GradCheckOutcome::Checked(report))
}

#[allow(clippy::too_many_arguments)]
fn fd_compare(
    model: &MultiSpaceModel<f64>,
    batch: &Batch,
    features: &FeatureStore<f64>,
    mode: LossMode,
    alpha: f64,
    tolerance: f64,
    sample_seed: u64,
    analytic: &[Vec<f64>],
) -> Result<GradCheckReport> {
    let mut tensor_lens = Vec::new();
    model.visit_params(&mut |_, view| tensor_lens.push(view.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut probe = model.clone();
    let mut max_rel_err = 0.0f64;
    let mut coords_checked = 0usize;
    for (t_idx, &len) in tensor_lens.iter().enumerate() {
        let coords: Vec<usize> = if len <= GRADCHECK_COORDS {
            (0..len).collect()
        } else {
            rand::seq::index::sample(&mut rng, len, GRADCHECK_COORDS).into_vec()
        };
        for flat in coords {
            let orig = set_coord(&mut probe, t_idx, flat, None);
            set_coord(&mut probe, t_idx, flat, Some(orig + GRADCHECK_H));
            let up = batch_loss(&probe, batch, features, mode, alpha)?;
            set_coord(&mut probe, t_idx, flat, Some(orig - GRADCHECK_H));
            let down = batch_loss(&probe, batch, features, mode, alpha)?;
            set_coord(&mut probe, t_idx, flat, Some(orig));
            let numeric = (up - down) / (2.0 * GRADCHECK_H);
            let a = analytic[t_idx][flat];
            let denom = a.abs().max(numeric.abs());
            let err = if denom >= 1e-8 {
                (a - numeric).abs() / denom
            } else {
                (a - numeric).abs()
            };
            max_rel_err = max_rel_err.max(err);
            coords_checked += 1;
        }
    }
    Ok(GradCheckReport {
        coords_checked,
        max_rel_err,
        passed: max_rel_err < tolerance,
    })
}

/// Read (and optionally overwrite) one flat coordinate of one tensor.
fn set_coord(model: &mut MultiSpaceModel<f64>, t_idx: usize, flat: usize, value: Option<f64>) -> f64 {
    let mut result = 0.0;
    let mut idx = 0usize;
    model.visit_params_mut(&mut |_, mut view| {
        if idx == t_idx {
            result = view.get_flat(flat);
            if let Some(v) = value {
                view.set_flat(flat, v);
            }
        }
        idx += 1;
    });
    result
}
