//! Common-space projection and similarity: every sentence encoder feeds an
//! affine+tanh pair (text side, video side) into its own space, where
//! relevance is cosine similarity; a model's score is the mean over its
//! spaces. Also hosts the single-space fusion baselines (concatenation,
//! transformed concatenation) and collection ranking.

mod checkpoint;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use rayon::prelude::*;

use crate::data::FeatureStore;
use crate::encoders::{
    encode_precomputed, encode_w2v, EmbeddingTable, GruEncoder, PrecomputedStore,
};
use crate::error::{Error, Result};
use crate::metrics::RankedList;
use crate::textproc::{encode_bow, BowVector, TokenSeq, Vocabulary};
use crate::{real, Real};
use std::sync::Arc;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointOverrides};

/// Default common-space dimensionality.
pub const DEFAULT_D_C: usize = 2048;
/// Default width of the per-encoder transform in transformed concatenation.
pub const DEFAULT_TRANSFORM_DIM: usize = 2048;

/// How encoder outputs are fused into similarity scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// One common space per encoder; similarities averaged.
    Sea,
    /// All encoder outputs concatenated into one shared space.
    Concat,
    /// Per-encoder affine+tanh transforms, then concatenation.
    TransformedConcat,
    /// Independently trained single-encoder models, averaged at inference.
    ModelAverage,
}

impl FusionMode {
    pub fn tag(self) -> &'static str {
        match self {
            FusionMode::Sea => "sea",
            FusionMode::Concat => "concat",
            FusionMode::TransformedConcat => "transformed_concat",
            FusionMode::ModelAverage => "model_average",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "sea" => Ok(FusionMode::Sea),
            "concat" => Ok(FusionMode::Concat),
            "transformed" | "transformed_concat" => Ok(FusionMode::TransformedConcat),
            "avg" | "model_average" => Ok(FusionMode::ModelAverage),
            other => Err(Error::Format(format!(
                "unknown fusion mode {other:?} (want sea|concat|transformed|avg)"
            ))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// The encoder families a model can bind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Bow,
    W2v,
    Gru,
    BiGru,
    Bert,
}

impl EncoderKind {
    pub fn tag(self) -> &'static str {
        match self {
            EncoderKind::Bow => "bow",
            EncoderKind::W2v => "w2v",
            EncoderKind::Gru => "gru",
            EncoderKind::BiGru => "bigru",
            EncoderKind::Bert => "bert",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "bow" => Ok(EncoderKind::Bow),
            "w2v" => Ok(EncoderKind::W2v),
            "gru" => Ok(EncoderKind::Gru),
            "bigru" => Ok(EncoderKind::BiGru),
            "bert" => Ok(EncoderKind::Bert),
            other => Err(Error::Format(format!(
                "unknown encoder {other:?} (want bow|w2v|gru|bigru|bert)"
            ))),
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// One sentence encoder bound into a model. The w2v table and precomputed
/// vectors are frozen; the recurrent encoder carries trainable tensors.
#[derive(Debug, Clone)]
pub enum SentenceEncoder<F> {
    Bow { vocab: Arc<Vocabulary> },
    W2v { table: Arc<EmbeddingTable<F>> },
    Recurrent(GruEncoder<F>),
    Precomputed { store: Arc<PrecomputedStore<F>> },
}

/// An encoder output, kept sparse for bag-of-words so that projection and
/// gradient work scale with the tokens present, not the vocabulary.
#[derive(Debug, Clone)]
pub enum EncodedText<F> {
    Dense(Array1<F>),
    Sparse(BowVector),
}

impl<F: Real> EncodedText<F> {
    pub fn dim(&self) -> usize {
        match self {
            EncodedText::Dense(v) => v.len(),
            EncodedText::Sparse(b) => b.dim(),
        }
    }
}

impl<F: Real> SentenceEncoder<F> {
    pub fn kind(&self) -> EncoderKind {
        match self {
            SentenceEncoder::Bow { .. } => EncoderKind::Bow,
            SentenceEncoder::W2v { .. } => EncoderKind::W2v,
            SentenceEncoder::Recurrent(enc) if enc.is_bidirectional() => EncoderKind::BiGru,
            SentenceEncoder::Recurrent(_) => EncoderKind::Gru,
            SentenceEncoder::Precomputed { .. } => EncoderKind::Bert,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            SentenceEncoder::Bow { vocab } => vocab.len(),
            SentenceEncoder::W2v { table } => table.dim(),
            SentenceEncoder::Recurrent(enc) => enc.output_dim(),
            SentenceEncoder::Precomputed { store } => store.dim(),
        }
    }

    pub fn encode(&self, sentence_id: &str, s: &TokenSeq) -> Result<EncodedText<F>> {
        match self {
            SentenceEncoder::Bow { vocab } => Ok(EncodedText::Sparse(encode_bow(s, vocab))),
            SentenceEncoder::W2v { table } => Ok(EncodedText::Dense(encode_w2v(s, table))),
            SentenceEncoder::Recurrent(enc) => Ok(EncodedText::Dense(enc.encode(s)?)),
            SentenceEncoder::Precomputed { store } => {
                Ok(EncodedText::Dense(encode_precomputed(sentence_id, store)?))
            }
        }
    }

    pub fn cast<T: Real>(&self) -> SentenceEncoder<T> {
        match self {
            SentenceEncoder::Bow { vocab } => SentenceEncoder::Bow {
                vocab: Arc::clone(vocab),
            },
            SentenceEncoder::W2v { table } => SentenceEncoder::W2v {
                table: Arc::new(table.cast()),
            },
            SentenceEncoder::Recurrent(enc) => SentenceEncoder::Recurrent(enc.cast()),
            SentenceEncoder::Precomputed { store } => SentenceEncoder::Precomputed {
                store: Arc::new(store.cast()),
            },
        }
    }
}

/// An affine map followed by elementwise tanh.
#[derive(Debug, Clone)]
pub struct AffineProjection<F> {
    /// `d_in × d_out`.
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Real> AffineProjection<F> {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        AffineProjection {
            w: Array2::zeros((d_in, d_out)),
            b: Array1::zeros(d_out),
        }
    }

    /// Weights uniform in `±1/sqrt(d_in)`, biases zero, keeping the tanh
    /// inputs in the near-linear regime at the start of training.
    pub fn init<R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(d_in, d_out);
        let bound = 1.0 / (d_in as f64).sqrt();
        for v in p.w.iter_mut() {
            *v = real::<F>(rng.gen_range(-bound..bound));
        }
        p
    }

    pub fn d_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Pre-activation contribution of one input part laid out at `offset`
    /// within the full input: `acc += x · W[offset .. offset+dim(x)]`.
    fn accumulate(&self, x: &EncodedText<F>, offset: usize, acc: &mut Array1<F>) {
        match x {
            EncodedText::Dense(v) => {
                let rows = self.w.slice(s![offset..offset + v.len(), ..]);
                *acc += &v.dot(&rows);
            }
            EncodedText::Sparse(bow) => {
                for &(row, count) in bow.entries() {
                    acc.scaled_add(real::<F>(count as f64), &self.w.row(offset + row));
                }
            }
        }
    }

    /// `tanh(x·W + b)` over a sequence of concatenated input parts.
    pub fn apply_parts(&self, parts: &[EncodedText<F>]) -> Result<Array1<F>> {
        let total: usize = parts.iter().map(EncodedText::dim).sum();
        if total != self.d_in() {
            return Err(Error::Dimension {
                context: "projection input".into(),
                expected: self.d_in(),
                got: total,
            });
        }
        let mut acc = self.b.clone();
        let mut offset = 0;
        for part in parts {
            self.accumulate(part, offset, &mut acc);
            offset += part.dim();
        }
        Ok(acc.mapv_into(F::tanh))
    }

    pub fn cast<T: Real>(&self) -> AffineProjection<T> {
        AffineProjection {
            w: self.w.mapv(|v| T::from(v).unwrap()),
            b: self.b.mapv(|v| T::from(v).unwrap()),
        }
    }
}

/// `tanh(x·W + b)` for a dense input.
pub fn project<F: Real>(x: ArrayView1<'_, F>, p: &AffineProjection<F>) -> Result<Array1<F>> {
    p.apply_parts(&[EncodedText::Dense(x.to_owned())])
}

/// `a·b / (‖a‖‖b‖)`; a zero-norm side is a degenerate embedding.
pub fn cosine_sim<F: Real>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> Result<F> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "cosine similarity".into(),
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == F::zero() || nb == F::zero() {
        return Err(Error::Degenerate(
            "cosine similarity of a zero-norm embedding".into(),
        ));
    }
    Ok(a.dot(&b) / (na * nb))
}

/// What feeds one common space: a single encoder, a concatenation of
/// encoders, or per-encoder transforms followed by concatenation.
#[derive(Debug, Clone)]
pub enum CompositeEncoder<F> {
    Single(SentenceEncoder<F>),
    Concat(Vec<SentenceEncoder<F>>),
    Transformed {
        encoders: Vec<SentenceEncoder<F>>,
        transforms: Vec<AffineProjection<F>>,
    },
}

impl<F: Real> CompositeEncoder<F> {
    pub fn encoders(&self) -> &[SentenceEncoder<F>] {
        match self {
            CompositeEncoder::Single(enc) => std::slice::from_ref(enc),
            CompositeEncoder::Concat(encs) => encs,
            CompositeEncoder::Transformed { encoders, .. } => encoders,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            CompositeEncoder::Single(enc) => enc.output_dim(),
            CompositeEncoder::Concat(encs) => encs.iter().map(SentenceEncoder::output_dim).sum(),
            CompositeEncoder::Transformed { transforms, .. } => {
                transforms.iter().map(AffineProjection::d_out).sum()
            }
        }
    }

    /// Encode into concatenation-ready parts (one per encoder).
    pub fn encode_parts(&self, sentence_id: &str, s: &TokenSeq) -> Result<Vec<EncodedText<F>>> {
        match self {
            CompositeEncoder::Single(enc) => Ok(vec![enc.encode(sentence_id, s)?]),
            CompositeEncoder::Concat(encs) => encs
                .iter()
                .map(|enc| enc.encode(sentence_id, s))
                .collect(),
            CompositeEncoder::Transformed {
                encoders,
                transforms,
            } => encoders
                .iter()
                .zip(transforms)
                .map(|(enc, t)| {
                    let raw = enc.encode(sentence_id, s)?;
                    Ok(EncodedText::Dense(t.apply_parts(&[raw])?))
                })
                .collect(),
        }
    }

    pub fn cast<T: Real>(&self) -> CompositeEncoder<T> {
        match self {
            CompositeEncoder::Single(enc) => CompositeEncoder::Single(enc.cast()),
            CompositeEncoder::Concat(encs) => {
                CompositeEncoder::Concat(encs.iter().map(SentenceEncoder::cast).collect())
            }
            CompositeEncoder::Transformed {
                encoders,
                transforms,
            } => CompositeEncoder::Transformed {
                encoders: encoders.iter().map(SentenceEncoder::cast).collect(),
                transforms: transforms.iter().map(AffineProjection::cast).collect(),
            },
        }
    }
}

/// One cross-modal matching subnetwork: an encoder side and the two
/// projections into its common space.
#[derive(Debug, Clone)]
pub struct SubNetwork<F> {
    pub encoder: CompositeEncoder<F>,
    pub text_proj: AffineProjection<F>,
    pub video_proj: AffineProjection<F>,
}

impl<F: Real> SubNetwork<F> {
    pub fn d_c(&self) -> usize {
        self.text_proj.d_out()
    }

    pub fn embed_text(&self, sentence_id: &str, s: &TokenSeq) -> Result<Array1<F>> {
        let parts = self.encoder.encode_parts(sentence_id, s)?;
        self.text_proj.apply_parts(&parts)
    }

    pub fn embed_video(&self, f: ArrayView1<'_, F>) -> Result<Array1<F>> {
        project(f, &self.video_proj)
    }

    pub fn cast<T: Real>(&self) -> SubNetwork<T> {
        SubNetwork {
            encoder: self.encoder.cast(),
            text_proj: self.text_proj.cast(),
            video_proj: self.video_proj.cast(),
        }
    }
}

/// Similarity in one space: cosine between the projected sentence and the
/// projected video feature.
pub fn cms_space<F: Real>(
    sentence_id: &str,
    s: &TokenSeq,
    video: ArrayView1<'_, F>,
    sub: &SubNetwork<F>,
) -> Result<F> {
    let t = sub.embed_text(sentence_id, s)?;
    let v = sub.embed_video(video)?;
    cosine_sim(t.view(), v.view())
}

/// The full retrieval model: k subnetworks under a fusion mode.
#[derive(Debug, Clone)]
pub struct MultiSpaceModel<F> {
    pub fusion: FusionMode,
    pub subnets: Vec<SubNetwork<F>>,
    pub d_v: usize,
}

impl<F: Real> MultiSpaceModel<F> {
    /// Assemble a model over prepared encoders. `sea` and `model_average`
    /// give every encoder its own space; `concat` shares one space over the
    /// concatenated outputs; `transformed_concat` additionally passes each
    /// encoder through its own affine+tanh of width `transform_dim` first.
    pub fn new<R: Rng>(
        fusion: FusionMode,
        encoders: Vec<SentenceEncoder<F>>,
        d_v: usize,
        d_c: usize,
        transform_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::with_zero_params(fusion, encoders, d_v, d_c, transform_dim)?;
        for sub in &mut model.subnets {
            if let CompositeEncoder::Transformed {
                encoders,
                transforms,
            } = &mut sub.encoder
            {
                for (enc, t) in encoders.iter().zip(transforms.iter_mut()) {
                    *t = AffineProjection::init(enc.output_dim(), transform_dim, rng);
                }
            }
            sub.text_proj = AffineProjection::init(sub.encoder.output_dim(), d_c, rng);
            sub.video_proj = AffineProjection::init(d_v, d_c, rng);
        }
        Ok(model)
    }

    /// Model skeleton with all projection tensors zeroed; checkpoint loading
    /// fills them in.
    pub fn with_zero_params(
        fusion: FusionMode,
        encoders: Vec<SentenceEncoder<F>>,
        d_v: usize,
        d_c: usize,
        transform_dim: usize,
    ) -> Result<Self> {
        if encoders.is_empty() {
            return Err(Error::Empty("a model needs at least one encoder".into()));
        }
        if d_c == 0 || d_v == 0 {
            return Err(Error::Format(
                "common-space and video dimensions must be positive".into(),
            ));
        }
        let subnets = match fusion {
            FusionMode::Sea | FusionMode::ModelAverage => encoders
                .into_iter()
                .map(|enc| {
                    let d_t = enc.output_dim();
                    SubNetwork {
                        encoder: CompositeEncoder::Single(enc),
                        text_proj: AffineProjection::zeros(d_t, d_c),
                        video_proj: AffineProjection::zeros(d_v, d_c),
                    }
                })
                .collect(),
            FusionMode::Concat => {
                let d_t: usize = encoders.iter().map(SentenceEncoder::output_dim).sum();
                vec![SubNetwork {
                    encoder: CompositeEncoder::Concat(encoders),
                    text_proj: AffineProjection::zeros(d_t, d_c),
                    video_proj: AffineProjection::zeros(d_v, d_c),
                }]
            }
            FusionMode::TransformedConcat => {
                if transform_dim == 0 {
                    return Err(Error::Format("transform width must be positive".into()));
                }
                let transforms = encoders
                    .iter()
                    .map(|enc| AffineProjection::zeros(enc.output_dim(), transform_dim))
                    .collect::<Vec<_>>();
                let d_t = transform_dim * encoders.len();
                vec![SubNetwork {
                    encoder: CompositeEncoder::Transformed {
                        encoders,
                        transforms,
                    },
                    text_proj: AffineProjection::zeros(d_t, d_c),
                    video_proj: AffineProjection::zeros(d_v, d_c),
                }]
            }
        };
        Ok(MultiSpaceModel {
            fusion,
            subnets,
            d_v,
        })
    }

    /// Number of common spaces.
    pub fn k(&self) -> usize {
        self.subnets.len()
    }

    pub fn d_c(&self) -> usize {
        self.subnets[0].d_c()
    }

    /// All bound encoders, in order, across subnetworks.
    pub fn flat_encoders(&self) -> impl Iterator<Item = &SentenceEncoder<F>> {
        self.subnets.iter().flat_map(|s| s.encoder.encoders().iter())
    }

    /// Per-space text embeddings for one sentence.
    pub fn text_embeddings(&self, sentence_id: &str, s: &TokenSeq) -> Result<Vec<Array1<F>>> {
        self.subnets
            .iter()
            .map(|sub| sub.embed_text(sentence_id, s))
            .collect()
    }

    /// The model's fusion similarity: mean of per-space cosine similarities
    /// (a single cosine for the concatenation baselines, where k = 1).
    pub fn similarity(&self, sentence_id: &str, s: &TokenSeq, video: ArrayView1<'_, F>) -> Result<F> {
        let mut total = F::zero();
        for sub in &self.subnets {
            total += cms_space(sentence_id, s, video, sub)?;
        }
        Ok(total / real::<F>(self.k() as f64))
    }

    /// Total trainable scalar count (projections, transforms, recurrent
    /// encoders including their word embeddings).
    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |_, view| count += view.len());
        count
    }

    pub fn cast<T: Real>(&self) -> MultiSpaceModel<T> {
        MultiSpaceModel {
            fusion: self.fusion,
            subnets: self.subnets.iter().map(SubNetwork::cast).collect(),
            d_v: self.d_v,
        }
    }

    /// Visit every trainable tensor in declared order: per subnetwork, the
    /// transforms (if any), the text projection, the video projection, then
    /// each recurrent encoder's tensors.
    pub fn visit_params(&self, f: &mut dyn FnMut(String, TensorView<'_, F>)) {
        for (i, sub) in self.subnets.iter().enumerate() {
            let p = format!("s{i}");
            if let CompositeEncoder::Transformed { transforms, .. } = &sub.encoder {
                for (j, t) in transforms.iter().enumerate() {
                    f(format!("{p}.transform{j}.w"), TensorView::M(t.w.view()));
                    f(format!("{p}.transform{j}.b"), TensorView::V(t.b.view()));
                }
            }
            f(format!("{p}.text.w"), TensorView::M(sub.text_proj.w.view()));
            f(format!("{p}.text.b"), TensorView::V(sub.text_proj.b.view()));
            f(format!("{p}.video.w"), TensorView::M(sub.video_proj.w.view()));
            f(format!("{p}.video.b"), TensorView::V(sub.video_proj.b.view()));
            for (j, enc) in sub.encoder.encoders().iter().enumerate() {
                if let SentenceEncoder::Recurrent(gru) = enc {
                    let e = format!("{p}.enc{j}");
                    f(format!("{e}.embedding"), TensorView::M(gru.embedding.view()));
                    visit_gru(&format!("{e}.fwd"), &gru.forward, f);
                    if let Some(bwd) = &gru.backward {
                        visit_gru(&format!("{e}.bwd"), bwd, f);
                    }
                }
            }
        }
    }

    /// Mutable counterpart of [`Self::visit_params`], same order.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, TensorViewMut<'_, F>)) {
        for (i, sub) in self.subnets.iter_mut().enumerate() {
            let p = format!("s{i}");
            if let CompositeEncoder::Transformed { transforms, .. } = &mut sub.encoder {
                for (j, t) in transforms.iter_mut().enumerate() {
                    f(format!("{p}.transform{j}.w"), TensorViewMut::M(t.w.view_mut()));
                    f(format!("{p}.transform{j}.b"), TensorViewMut::V(t.b.view_mut()));
                }
            }
            f(format!("{p}.text.w"), TensorViewMut::M(sub.text_proj.w.view_mut()));
            f(format!("{p}.text.b"), TensorViewMut::V(sub.text_proj.b.view_mut()));
            f(format!("{p}.video.w"), TensorViewMut::M(sub.video_proj.w.view_mut()));
            f(format!("{p}.video.b"), TensorViewMut::V(sub.video_proj.b.view_mut()));
            for (j, enc) in sub.encoder.encoders_mut().iter_mut().enumerate() {
                if let SentenceEncoder::Recurrent(gru) = enc {
                    let e = format!("{p}.enc{j}");
                    f(
                        format!("{e}.embedding"),
                        TensorViewMut::M(gru.embedding.view_mut()),
                    );
                    visit_gru_mut(&format!("{e}.fwd"), &mut gru.forward, f);
                    if let Some(bwd) = &mut gru.backward {
                        visit_gru_mut(&format!("{e}.bwd"), bwd, f);
                    }
                }
            }
        }
    }
}

impl<F: Real> CompositeEncoder<F> {
    pub fn encoders_mut(&mut self) -> &mut [SentenceEncoder<F>] {
        match self {
            CompositeEncoder::Single(enc) => std::slice::from_mut(enc),
            CompositeEncoder::Concat(encs) => encs,
            CompositeEncoder::Transformed { encoders, .. } => encoders,
        }
    }
}

fn visit_gru<F: Real>(
    prefix: &str,
    p: &crate::encoders::GruParams<F>,
    f: &mut dyn FnMut(String, TensorView<'_, F>),
) {
    f(format!("{prefix}.w_z"), TensorView::M(p.w_z.view()));
    f(format!("{prefix}.w_r"), TensorView::M(p.w_r.view()));
    f(format!("{prefix}.w_h"), TensorView::M(p.w_h.view()));
    f(format!("{prefix}.u_z"), TensorView::M(p.u_z.view()));
    f(format!("{prefix}.u_r"), TensorView::M(p.u_r.view()));
    f(format!("{prefix}.u_h"), TensorView::M(p.u_h.view()));
    f(format!("{prefix}.b_z"), TensorView::V(p.b_z.view()));
    f(format!("{prefix}.b_r"), TensorView::V(p.b_r.view()));
    f(format!("{prefix}.b_h"), TensorView::V(p.b_h.view()));
}

fn visit_gru_mut<F: Real>(
    prefix: &str,
    p: &mut crate::encoders::GruParams<F>,
    f: &mut dyn FnMut(String, TensorViewMut<'_, F>),
) {
    f(format!("{prefix}.w_z"), TensorViewMut::M(p.w_z.view_mut()));
    f(format!("{prefix}.w_r"), TensorViewMut::M(p.w_r.view_mut()));
    f(format!("{prefix}.w_h"), TensorViewMut::M(p.w_h.view_mut()));
    f(format!("{prefix}.u_z"), TensorViewMut::M(p.u_z.view_mut()));
    f(format!("{prefix}.u_r"), TensorViewMut::M(p.u_r.view_mut()));
    f(format!("{prefix}.u_h"), TensorViewMut::M(p.u_h.view_mut()));
    f(format!("{prefix}.b_z"), TensorViewMut::V(p.b_z.view_mut()));
    f(format!("{prefix}.b_r"), TensorViewMut::V(p.b_r.view_mut()));
    f(format!("{prefix}.b_h"), TensorViewMut::V(p.b_h.view_mut()));
}

/// Read-only view of one trainable tensor.
pub enum TensorView<'a, F> {
    M(ArrayView2<'a, F>),
    V(ArrayView1<'a, F>),
}

impl<F: Real> TensorView<'_, F> {
    pub fn len(&self) -> usize {
        match self {
            TensorView::M(m) => m.len(),
            TensorView::V(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(rows, cols)`; vectors report `(1, len)`.
    pub fn shape2(&self) -> (usize, usize) {
        match self {
            TensorView::M(m) => (m.nrows(), m.ncols()),
            TensorView::V(v) => (1, v.len()),
        }
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = &F> + '_> {
        match self {
            TensorView::M(m) => Box::new(m.iter()),
            TensorView::V(v) => Box::new(v.iter()),
        }
    }

    pub fn get_flat(&self, i: usize) -> F {
        match self {
            TensorView::M(m) => m[(i / m.ncols(), i % m.ncols())],
            TensorView::V(v) => v[i],
        }
    }
}

/// Mutable view of one trainable tensor.
pub enum TensorViewMut<'a, F> {
    M(ArrayViewMut2<'a, F>),
    V(ArrayViewMut1<'a, F>),
}

impl<F: Real> TensorViewMut<'_, F> {
    pub fn len(&self) -> usize {
        match self {
            TensorViewMut::M(m) => m.len(),
            TensorViewMut::V(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape2(&self) -> (usize, usize) {
        match self {
            TensorViewMut::M(m) => (m.nrows(), m.ncols()),
            TensorViewMut::V(v) => (1, v.len()),
        }
    }

    pub fn get_flat(&self, i: usize) -> F {
        match self {
            TensorViewMut::M(m) => m[(i / m.ncols(), i % m.ncols())],
            TensorViewMut::V(v) => v[i],
        }
    }

    pub fn set_flat(&mut self, i: usize, value: F) {
        match self {
            TensorViewMut::M(m) => {
                let cols = m.ncols();
                m[(i / cols, i % cols)] = value;
            }
            TensorViewMut::V(v) => v[i] = value,
        }
    }

    pub fn iter_mut(&mut self) -> Box<dyn Iterator<Item = &mut F> + '_> {
        match self {
            TensorViewMut::M(m) => Box::new(m.iter_mut()),
            TensorViewMut::V(v) => Box::new(v.iter_mut()),
        }
    }
}

/// The mean of per-space similarities for a multi-space model.
pub fn cms_combined<F: Real>(
    sentence_id: &str,
    s: &TokenSeq,
    video: ArrayView1<'_, F>,
    model: &MultiSpaceModel<F>,
) -> Result<F> {
    match model.fusion {
        FusionMode::Sea | FusionMode::ModelAverage => model.similarity(sentence_id, s, video),
        other => Err(Error::Format(format!(
            "combined similarity applies to sea/model_average models, not {other}"
        ))),
    }
}

/// Similarity under a concatenation baseline (a single shared space).
pub fn baseline_forward<F: Real>(
    sentence_id: &str,
    s: &TokenSeq,
    video: ArrayView1<'_, F>,
    model: &MultiSpaceModel<F>,
    mode: FusionMode,
) -> Result<F> {
    if model.fusion != mode
        || !matches!(mode, FusionMode::Concat | FusionMode::TransformedConcat)
    {
        return Err(Error::Format(format!(
            "model fusion {} does not match requested baseline {mode}",
            model.fusion
        )));
    }
    model.similarity(sentence_id, s, video)
}

/// Unweighted mean of independently trained models' similarities.
pub fn model_average_sim<F: Real>(
    sentence_id: &str,
    s: &TokenSeq,
    video: ArrayView1<'_, F>,
    models: &[MultiSpaceModel<F>],
) -> Result<F> {
    if models.is_empty() {
        return Err(Error::Empty("model averaging over zero models".into()));
    }
    let mut total = F::zero();
    for model in models {
        total += model.similarity(sentence_id, s, video)?;
    }
    Ok(total / real::<F>(models.len() as f64))
}

/// Per-space video embeddings for a whole collection, rows L2-normalized so
/// that scoring a query is one dot product per space.
#[derive(Debug, Clone)]
pub struct VideoIndex<F> {
    ids: Vec<String>,
    /// One `n × d_c` matrix of unit rows per space.
    spaces: Vec<Array2<F>>,
}

impl<F: Real> VideoIndex<F> {
    /// Build from already-projected per-space embeddings (rows per video).
    pub fn from_embeddings(ids: Vec<String>, spaces: Vec<Array2<F>>) -> Result<Self> {
        if spaces.is_empty() || ids.is_empty() {
            return Err(Error::Empty("video index with no spaces or videos".into()));
        }
        let mut normalized = Vec::with_capacity(spaces.len());
        for m in spaces {
            if m.nrows() != ids.len() {
                return Err(Error::Dimension {
                    context: "video index rows".into(),
                    expected: ids.len(),
                    got: m.nrows(),
                });
            }
            let mut m = m;
            for (row_idx, mut row) in m.rows_mut().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if norm == F::zero() {
                    return Err(Error::Degenerate(format!(
                        "zero-norm video embedding for {}",
                        ids[row_idx]
                    )));
                }
                row.mapv_inplace(|v| v / norm);
            }
            normalized.push(m);
        }
        Ok(VideoIndex {
            ids,
            spaces: normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Rank all indexed videos against per-space text embeddings. Scores
    /// are per-video means over spaces; each video is scored independently,
    /// so thread count cannot change the result.
    pub fn rank_text_embeddings(
        &self,
        query_id: &str,
        text_embs: &[Array1<F>],
    ) -> Result<RankedList> {
        if text_embs.len() != self.spaces.len() {
            return Err(Error::Dimension {
                context: "query spaces".into(),
                expected: self.spaces.len(),
                got: text_embs.len(),
            });
        }
        let mut units = Vec::with_capacity(text_embs.len());
        for t in text_embs {
            let norm = t.dot(t).sqrt();
            if norm == F::zero() {
                return Err(Error::Degenerate(format!(
                    "zero-norm text embedding for query {query_id}"
                )));
            }
            units.push(t.mapv(|v| v / norm));
        }
        let k = real::<F>(self.spaces.len() as f64);
        let scored: Vec<(String, f64)> = (0..self.len())
            .into_par_iter()
            .map(|row| {
                let mut total = F::zero();
                for (space, unit) in self.spaces.iter().zip(&units) {
                    total += space.row(row).dot(unit);
                }
                let score = (total / k).to_f64().expect("scalar fits f64");
                (self.ids[row].clone(), score)
            })
            .collect();
        for (id, score) in &scored {
            if !score.is_finite() {
                return Err(Error::NonFinite(format!(
                    "non-finite similarity for query {query_id}, video {id}"
                )));
            }
        }
        Ok(RankedList::from_scores(query_id, scored))
    }
}

impl<F: Real> MultiSpaceModel<F> {
    /// Project a feature collection into all spaces, ready for ranking.
    pub fn index_videos(&self, collection: &FeatureStore<F>) -> Result<VideoIndex<F>> {
        if collection.is_empty() {
            return Err(Error::Empty("ranking over an empty collection".into()));
        }
        let ids = collection.ids().to_vec();
        let mut spaces = Vec::with_capacity(self.k());
        for sub in &self.subnets {
            let rows: Vec<Array1<F>> = (0..collection.len())
                .into_par_iter()
                .map(|i| sub.embed_video(collection.row(i)))
                .collect::<Result<_>>()?;
            let mut m = Array2::zeros((collection.len(), sub.d_c()));
            for (i, row) in rows.into_iter().enumerate() {
                m.row_mut(i).assign(&row);
            }
            spaces.push(m);
        }
        VideoIndex::from_embeddings(ids, spaces)
    }

    pub fn rank_with_index(
        &self,
        query_id: &str,
        s: &TokenSeq,
        index: &VideoIndex<F>,
    ) -> Result<RankedList> {
        let text_embs = self.text_embeddings(query_id, s)?;
        index.rank_text_embeddings(query_id, &text_embs)
    }
}

/// Score every video in the collection against the sentence and sort
/// descending, ties broken by ascending video id.
pub fn rank_collection<F: Real>(
    query_id: &str,
    s: &TokenSeq,
    collection: &FeatureStore<F>,
    model: &MultiSpaceModel<F>,
) -> Result<RankedList> {
    let index = model.index_videos(collection)?;
    model.rank_with_index(query_id, s, &index)
}
