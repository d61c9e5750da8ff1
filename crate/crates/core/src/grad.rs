//! Taped batch forward pass and analytic backpropagation for training: from
//! the per-space similarity matrices back through cosine, the tanh
//! projections, the transform layers, and the recurrent encoders.

use ndarray::{Array1, Array2, ArrayView1};

use crate::data::Batch;
use crate::data::FeatureStore;
use crate::encoders::gru::add_outer;
use crate::encoders::{GruGrads, GruTapes};
use crate::error::{Error, Result};
use crate::loss::{LossMode, LossReport};
use crate::spaces::{
    AffineProjection, CompositeEncoder, EncodedText, MultiSpaceModel, SentenceEncoder, TensorView,
};
use crate::{real, Real};

/// Gradient accumulators for one affine+tanh layer.
#[derive(Debug, Clone)]
pub struct ProjGrads<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Real> ProjGrads<F> {
    fn zeros_like(p: &AffineProjection<F>) -> Self {
        ProjGrads {
            w: Array2::zeros(p.w.raw_dim()),
            b: Array1::zeros(p.b.raw_dim()),
        }
    }
}

/// Gradients for one subnetwork, mirroring its trainable tensors.
#[derive(Debug, Clone)]
pub struct SubnetGrads<F> {
    pub transforms: Vec<ProjGrads<F>>,
    pub text: ProjGrads<F>,
    pub video: ProjGrads<F>,
    /// Aligned with the subnetwork's encoders; `None` for frozen ones.
    pub encoders: Vec<Option<GruGrads<F>>>,
}

/// Gradients for a whole model, visitable in the same declared order as
/// [`MultiSpaceModel::visit_params`].
#[derive(Debug, Clone)]
pub struct ModelGrads<F> {
    pub subnets: Vec<SubnetGrads<F>>,
}

impl<F: Real> ModelGrads<F> {
    pub fn zeros(model: &MultiSpaceModel<F>) -> Self {
        let subnets = model
            .subnets
            .iter()
            .map(|sub| {
                let transforms = match &sub.encoder {
                    CompositeEncoder::Transformed { transforms, .. } => {
                        transforms.iter().map(ProjGrads::zeros_like).collect()
                    }
                    _ => Vec::new(),
                };
                let encoders = sub
                    .encoder
                    .encoders()
                    .iter()
                    .map(|enc| match enc {
                        SentenceEncoder::Recurrent(gru) => Some(gru.zero_grads()),
                        _ => None,
                    })
                    .collect();
                SubnetGrads {
                    transforms,
                    text: ProjGrads::zeros_like(&sub.text_proj),
                    video: ProjGrads::zeros_like(&sub.video_proj),
                    encoders,
                }
            })
            .collect();
        ModelGrads { subnets }
    }

    /// Visit every gradient tensor in the model's declared parameter order.
    pub fn visit(&self, f: &mut dyn FnMut(String, TensorView<'_, F>)) {
        for (i, sub) in self.subnets.iter().enumerate() {
            let p = format!("s{i}");
            for (j, t) in sub.transforms.iter().enumerate() {
                f(format!("{p}.transform{j}.w"), TensorView::M(t.w.view()));
                f(format!("{p}.transform{j}.b"), TensorView::V(t.b.view()));
            }
            f(format!("{p}.text.w"), TensorView::M(sub.text.w.view()));
            f(format!("{p}.text.b"), TensorView::V(sub.text.b.view()));
            f(format!("{p}.video.w"), TensorView::M(sub.video.w.view()));
            f(format!("{p}.video.b"), TensorView::V(sub.video.b.view()));
            for (j, enc) in sub.encoders.iter().enumerate() {
                if let Some(g) = enc {
                    let e = format!("{p}.enc{j}");
                    f(format!("{e}.embedding"), TensorView::M(g.embedding.view()));
                    visit_gru_grads(&format!("{e}.fwd"), &g.forward, f);
                    if let Some(bwd) = &g.backward {
                        visit_gru_grads(&format!("{e}.bwd"), bwd, f);
                    }
                }
            }
        }
    }
}

fn visit_gru_grads<F: Real>(
    prefix: &str,
    g: &crate::encoders::GruParams<F>,
    f: &mut dyn FnMut(String, TensorView<'_, F>),
) {
    f(format!("{prefix}.w_z"), TensorView::M(g.w_z.view()));
    f(format!("{prefix}.w_r"), TensorView::M(g.w_r.view()));
    f(format!("{prefix}.w_h"), TensorView::M(g.w_h.view()));
    f(format!("{prefix}.u_z"), TensorView::M(g.u_z.view()));
    f(format!("{prefix}.u_r"), TensorView::M(g.u_r.view()));
    f(format!("{prefix}.u_h"), TensorView::M(g.u_h.view()));
    f(format!("{prefix}.b_z"), TensorView::V(g.b_z.view()));
    f(format!("{prefix}.b_r"), TensorView::V(g.b_r.view()));
    f(format!("{prefix}.b_h"), TensorView::V(g.b_h.view()));
}

/// Everything one space recorded during the batch forward pass.
#[derive(Debug)]
struct SpaceTape<F> {
    /// `[sentence][encoder]` raw encoder outputs.
    raw_parts: Vec<Vec<EncodedText<F>>>,
    /// `[sentence][encoder]` recurrence records for recurrent encoders.
    gru_tapes: Vec<Vec<Option<GruTapes<F>>>>,
    /// `[sentence][encoder]` transform outputs (transformed mode only).
    transform_out: Vec<Vec<Array1<F>>>,
    /// `[sentence]` text embeddings (tanh outputs).
    text_emb: Vec<Array1<F>>,
    /// `[video]` video embeddings (tanh outputs).
    video_emb: Vec<Array1<F>>,
    text_norm: Vec<F>,
    video_norm: Vec<F>,
}

/// A taped forward pass over one batch: per-space similarity matrices plus
/// every intermediate needed to run the model backward.
#[derive(Debug)]
pub struct BatchForward<F> {
    /// Batch-aligned positive video ids.
    pub video_ids: Vec<String>,
    /// `sims[space][(i, j)]` = similarity of sentence i with video j.
    pub sims: Vec<Array2<F>>,
    video_rows: Vec<Array1<F>>,
    spaces: Vec<SpaceTape<F>>,
}

/// Run the model forward over a batch, recording tapes.
pub fn forward_batch<F: Real>(
    model: &MultiSpaceModel<F>,
    batch: &Batch,
    features: &FeatureStore<F>,
) -> Result<BatchForward<F>> {
    let pairs = batch.pairs();
    let b = pairs.len();
    let mut video_ids = Vec::with_capacity(b);
    let mut video_rows = Vec::with_capacity(b);
    for pair in pairs {
        video_ids.push(pair.video_id.clone());
        video_rows.push(features.require(&pair.video_id)?.to_owned());
    }

    let mut spaces = Vec::with_capacity(model.k());
    let mut sims = Vec::with_capacity(model.k());
    for sub in &model.subnets {
        let encoders = sub.encoder.encoders();
        let is_transformed =
            matches!(&sub.encoder, CompositeEncoder::Transformed { .. });
        let mut raw_parts = Vec::with_capacity(b);
        let mut gru_tapes = Vec::with_capacity(b);
        let mut transform_out = Vec::with_capacity(b);
        let mut text_emb = Vec::with_capacity(b);
        for pair in pairs {
            let mut parts = Vec::with_capacity(encoders.len());
            let mut tapes = Vec::with_capacity(encoders.len());
            for enc in encoders {
                match enc {
                    SentenceEncoder::Recurrent(gru) => {
                        let (out, tape) = gru.encode_with_tape(&pair.tokens)?;
                        parts.push(EncodedText::Dense(out));
                        tapes.push(Some(tape));
                    }
                    other => {
                        parts.push(other.encode(&pair.sentence_id, &pair.tokens)?);
                        tapes.push(None);
                    }
                }
            }
            let (final_parts, t_out) = if let CompositeEncoder::Transformed {
                transforms, ..
            } = &sub.encoder
            {
                let mut outs = Vec::with_capacity(parts.len());
                for (part, t) in parts.iter().zip(transforms) {
                    outs.push(t.apply_parts(std::slice::from_ref(part))?);
                }
                let dense = outs
                    .iter()
                    .map(|o| EncodedText::Dense(o.clone()))
                    .collect::<Vec<_>>();
                (dense, outs)
            } else {
                (parts.clone(), Vec::new())
            };
            text_emb.push(sub.text_proj.apply_parts(&final_parts)?);
            raw_parts.push(parts);
            gru_tapes.push(tapes);
            if is_transformed {
                transform_out.push(t_out);
            }
        }

        let mut video_emb = Vec::with_capacity(b);
        for row in &video_rows {
            video_emb.push(crate::spaces::project(row.view(), &sub.video_proj)?);
        }

        let mut text_norm = Vec::with_capacity(b);
        for t in &text_emb {
            let n = t.dot(t).sqrt();
            if n == F::zero() {
                return Err(Error::Degenerate("zero-norm text embedding in batch".into()));
            }
            text_norm.push(n);
        }
        let mut video_norm = Vec::with_capacity(b);
        for v in &video_emb {
            let n = v.dot(v).sqrt();
            if n == F::zero() {
                return Err(Error::Degenerate(
                    "zero-norm video embedding in batch".into(),
                ));
            }
            video_norm.push(n);
        }

        let mut sim = Array2::zeros((b, b));
        for i in 0..b {
            for j in 0..b {
                sim[(i, j)] = text_emb[i].dot(&video_emb[j]) / (text_norm[i] * video_norm[j]);
            }
        }
        if sim.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("non-finite similarity in batch".into()));
        }
        sims.push(sim);
        spaces.push(SpaceTape {
            raw_parts,
            gru_tapes,
            transform_out,
            text_emb,
            video_emb,
            text_norm,
            video_norm,
        });
    }

    Ok(BatchForward {
        video_ids,
        sims,
        video_rows,
        spaces,
    })
}

/// `grads.w` rows gain `part ⊗ dz` at the given row offset; sparse parts
/// touch only the rows of tokens actually present.
fn accumulate_input_outer<F: Real>(
    w_grads: &mut Array2<F>,
    part: &EncodedText<F>,
    offset: usize,
    dz: ArrayView1<'_, F>,
) {
    match part {
        EncodedText::Dense(v) => {
            let mut rows = w_grads.slice_mut(ndarray::s![offset..offset + v.len(), ..]);
            for (r, &vi) in v.iter().enumerate() {
                rows.row_mut(r).scaled_add(vi, &dz);
            }
        }
        EncodedText::Sparse(bow) => {
            for &(row, count) in bow.entries() {
                w_grads
                    .row_mut(offset + row)
                    .scaled_add(real::<F>(count as f64), &dz);
            }
        }
    }
}

/// Gradient of the similarity loss with respect to each per-space
/// similarity matrix, as sparse (sentence, video, coefficient) triples.
fn sim_grad_coefficients<F: Real>(report: &LossReport<F>, k: usize) -> Vec<Vec<(usize, usize, F)>> {
    let b = report.batch_size();
    let mut per_space: Vec<Vec<(usize, usize, F)>> = vec![Vec::new(); k];
    match report.mode {
        LossMode::Combined => {
            for (space, terms) in report.terms.iter().enumerate() {
                let coeff = F::one() / real::<F>(b as f64);
                for (i, term) in terms.iter().enumerate() {
                    if term.loss > F::zero() {
                        per_space[space].push((i, term.neg_index, coeff));
                        per_space[space].push((i, i, -coeff));
                    }
                }
            }
        }
        LossMode::Single => {
            let coeff = F::one() / real::<F>((b * k) as f64);
            for (i, term) in report.terms[0].iter().enumerate() {
                if term.loss > F::zero() {
                    for space in per_space.iter_mut() {
                        space.push((i, term.neg_index, coeff));
                        space.push((i, i, -coeff));
                    }
                }
            }
        }
    }
    per_space
}

/// Accumulate analytic gradients of the report's batch loss into `grads`.
pub fn backward_batch<F: Real>(
    model: &MultiSpaceModel<F>,
    fwd: &BatchForward<F>,
    report: &LossReport<F>,
    grads: &mut ModelGrads<F>,
) {
    let b = fwd.video_ids.len();
    let coeffs = sim_grad_coefficients(report, model.k());

    for (space_idx, sub) in model.subnets.iter().enumerate() {
        let tape = &fwd.spaces[space_idx];
        let sub_grads = &mut grads.subnets[space_idx];
        let d_c = sub.d_c();

        // cosine backward: spread similarity gradients onto the embeddings
        let mut d_text: Vec<Array1<F>> = vec![Array1::zeros(d_c); b];
        let mut d_video: Vec<Array1<F>> = vec![Array1::zeros(d_c); b];
        let mut text_active = vec![false; b];
        let mut video_active = vec![false; b];
        for &(i, j, g) in &coeffs[space_idx] {
            let a = &tape.text_emb[i];
            let v = &tape.video_emb[j];
            let na = tape.text_norm[i];
            let nv = tape.video_norm[j];
            let c = fwd.sims[space_idx][(i, j)];
            let inv = F::one() / (na * nv);
            // ∂c/∂a = v/(‖a‖‖v‖) − c·a/‖a‖²
            d_text[i].scaled_add(g * inv, &v.view());
            d_text[i].scaled_add(-g * c / (na * na), &a.view());
            d_video[j].scaled_add(g * inv, &a.view());
            d_video[j].scaled_add(-g * c / (nv * nv), &v.view());
            text_active[i] = true;
            video_active[j] = true;
        }

        // text projection and everything upstream of it
        for i in 0..b {
            if !text_active[i] {
                continue;
            }
            let y = &tape.text_emb[i];
            let dz = &d_text[i] * &y.mapv(|v| F::one() - v * v);
            sub_grads.text.b += &dz;

            match &sub.encoder {
                CompositeEncoder::Transformed { transforms, .. } => {
                    let mut offset = 0;
                    for (j, t) in transforms.iter().enumerate() {
                        let t_out = &tape.transform_out[i][j];
                        let width = t_out.len();
                        accumulate_input_outer(
                            &mut sub_grads.text.w,
                            &EncodedText::Dense(t_out.clone()),
                            offset,
                            dz.view(),
                        );
                        // every transform is trainable, so its output
                        // gradient is always needed
                        let w_rows = sub.text_proj.w.slice(ndarray::s![offset..offset + width, ..]);
                        let d_out = w_rows.dot(&dz);
                        let dz_t = &d_out * &t_out.mapv(|v| F::one() - v * v);
                        sub_grads.transforms[j].b += &dz_t;
                        let raw = &tape.raw_parts[i][j];
                        accumulate_input_outer(&mut sub_grads.transforms[j].w, raw, 0, dz_t.view());
                        if let Some(gru_grads) = sub_grads.encoders[j].as_mut() {
                            let d_raw = t.w.dot(&dz_t);
                            let enc = &sub.encoder.encoders()[j];
                            let SentenceEncoder::Recurrent(gru) = enc else {
                                unreachable!("gradient slot implies a recurrent encoder")
                            };
                            tape.gru_tapes[i][j]
                                .as_ref()
                                .expect("recurrent encoder recorded a tape")
                                .backward(gru, d_raw.view(), gru_grads);
                        }
                        offset += width;
                    }
                }
                composite => {
                    let mut offset = 0;
                    for (j, part) in tape.raw_parts[i].iter().enumerate() {
                        accumulate_input_outer(&mut sub_grads.text.w, part, offset, dz.view());
                        if let Some(gru_grads) = sub_grads.encoders[j].as_mut() {
                            let width = part.dim();
                            let w_rows =
                                sub.text_proj.w.slice(ndarray::s![offset..offset + width, ..]);
                            let d_raw = w_rows.dot(&dz);
                            let SentenceEncoder::Recurrent(gru) = &composite.encoders()[j] else {
                                unreachable!("gradient slot implies a recurrent encoder")
                            };
                            tape.gru_tapes[i][j]
                                .as_ref()
                                .expect("recurrent encoder recorded a tape")
                                .backward(gru, d_raw.view(), gru_grads);
                        }
                        offset += part.dim();
                    }
                }
            }
        }

        // video projection
        for j in 0..b {
            if !video_active[j] {
                continue;
            }
            let y = &tape.video_emb[j];
            let dz = &d_video[j] * &y.mapv(|v| F::one() - v * v);
            sub_grads.video.b += &dz;
            add_outer(&mut sub_grads.video.w, fwd.video_rows[j].view(), dz.view());
        }
    }
}

/// Forward-only batch loss, the quantity finite differences probe.
pub fn batch_loss<F: Real>(
    model: &MultiSpaceModel<F>,
    batch: &Batch,
    features: &FeatureStore<F>,
    mode: LossMode,
    alpha: F,
) -> Result<F> {
    let fwd = forward_batch(model, batch, features)?;
    let report = match mode {
        LossMode::Combined => crate::loss::combined_loss(&fwd.sims, &fwd.video_ids, alpha)?,
        LossMode::Single => crate::loss::single_loss(&fwd.sims, &fwd.video_ids, alpha)?,
    };
    Ok(report.combined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TrainPair;
    use crate::encoders::{EmbeddingTable, GruEncoder};
    use crate::loss::{combined_loss, single_loss};
    use crate::spaces::FusionMode;
    use crate::textproc::{tokenize, Vocabulary};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;
    use std::sync::Arc;

    fn vocab(for_sequential: bool) -> Arc<Vocabulary> {
        let corpus = vec![
            tokenize("red dog runs fast"),
            tokenize("blue cat sits still"),
            tokenize("green bird flies high"),
        ];
        Arc::new(Vocabulary::build(&corpus, 1, for_sequential, &HashSet::new()).unwrap())
    }

    fn test_batch() -> (Batch, FeatureStore<f64>) {
        let pairs = vec![
            TrainPair {
                sentence_id: "s1".into(),
                video_id: "v1".into(),
                tokens: tokenize("red dog runs"),
            },
            TrainPair {
                sentence_id: "s2".into(),
                video_id: "v2".into(),
                tokens: tokenize("blue cat sits"),
            },
            TrainPair {
                sentence_id: "s3".into(),
                video_id: "v3".into(),
                tokens: tokenize("green bird flies high"),
            },
            TrainPair {
                sentence_id: "s4".into(),
                video_id: "v1".into(),
                tokens: tokenize("fast red dog"),
            },
        ];
        let features = FeatureStore::from_parts(
            vec!["v1".into(), "v2".into(), "v3".into()],
            array![
                [0.9, -0.2, 0.4, 0.1],
                [-0.3, 0.8, -0.1, 0.5],
                [0.2, 0.1, -0.9, -0.4]
            ],
        )
        .unwrap();
        (Batch::new(pairs).unwrap(), features)
    }

    fn full_model(fusion: FusionMode, seed: u64) -> MultiSpaceModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = Arc::new(
            EmbeddingTable::from_rows(vec![
                ("red".into(), vec![0.4, -0.1]),
                ("dog".into(), vec![-0.3, 0.6]),
                ("cat".into(), vec![0.2, 0.2]),
                ("bird".into(), vec![-0.5, 0.1]),
            ])
            .unwrap(),
        );
        let bert = Arc::new(crate::encoders::PrecomputedStore::new(
            FeatureStore::from_parts(
                vec!["s1".into(), "s2".into(), "s3".into(), "s4".into()],
                array![
                    [0.1, 0.7, -0.2],
                    [-0.4, 0.3, 0.9],
                    [0.6, -0.6, 0.2],
                    [0.2, 0.5, -0.8]
                ],
            )
            .unwrap(),
            "offline",
            "mean",
        ));
        let encoders = vec![
            SentenceEncoder::Bow {
                vocab: vocab(false),
            },
            SentenceEncoder::W2v { table },
            SentenceEncoder::Recurrent(GruEncoder::new_bigru(vocab(true), 2, 3, None, &mut rng)),
            SentenceEncoder::Precomputed { store: bert },
        ];
        MultiSpaceModel::new(fusion, encoders, 4, 5, 6, &mut rng).unwrap()
    }

    #[test]
    fn forward_matches_the_models_own_similarity() {
        let model = full_model(FusionMode::Sea, 3);
        let (batch, features) = test_batch();
        let fwd = forward_batch(&model, &batch, &features).unwrap();
        for (i, pair) in batch.pairs().iter().enumerate() {
            for (j, vid) in fwd.video_ids.iter().enumerate() {
                let mut expect = 0.0;
                for sub in &model.subnets {
                    expect += crate::spaces::cms_space(
                        &pair.sentence_id,
                        &pair.tokens,
                        features.get(vid).unwrap(),
                        sub,
                    )
                    .unwrap();
                }
                let got: f64 = fwd.sims.iter().map(|s| s[(i, j)]).sum();
                approx::assert_relative_eq!(got, expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn grads_visit_in_the_models_parameter_order() {
        let model = full_model(FusionMode::TransformedConcat, 5);
        let grads = ModelGrads::zeros(&model);
        let mut model_names = Vec::new();
        model.visit_params(&mut |name, _| model_names.push(name));
        let mut grad_names = Vec::new();
        grads.visit(&mut |name, _| grad_names.push(name));
        assert_eq!(model_names, grad_names);
    }

    #[test]
    fn zero_loss_batch_produces_exactly_zero_gradients() {
        let model = full_model(FusionMode::Sea, 7);
        let (batch, features) = test_batch();
        let fwd = forward_batch(&model, &batch, &features).unwrap();
        // a strongly negative margin cannot produce active hinges
        let report = combined_loss(&fwd.sims, &fwd.video_ids, -5.0).unwrap();
        assert_eq!(report.combined, 0.0);
        let mut grads = ModelGrads::zeros(&model);
        backward_batch(&model, &fwd, &report, &mut grads);
        grads.visit(&mut |name, view| {
            for v in view.iter() {
                assert_eq!(*v, 0.0, "nonzero gradient in {name}");
            }
        });
    }

    /// Central finite differences over sampled coordinates of every tensor.
    fn fd_against_analytic(fusion: FusionMode, mode: LossMode) {
        let model = full_model(fusion, 11);
        let (batch, features) = test_batch();
        let alpha = 0.9; // keep several hinges active
        let fwd = forward_batch(&model, &batch, &features).unwrap();
        let report = match mode {
            LossMode::Combined => combined_loss(&fwd.sims, &fwd.video_ids, alpha).unwrap(),
            LossMode::Single => single_loss(&fwd.sims, &fwd.video_ids, alpha).unwrap(),
        };
        assert!(report.combined > 0.0, "fixture must keep hinges active");
        let mut grads = ModelGrads::zeros(&model);
        backward_batch(&model, &fwd, &report, &mut grads);

        let mut analytic: Vec<Vec<f64>> = Vec::new();
        grads.visit(&mut |_, view| analytic.push(view.iter().copied().collect()));

        let mut tensor_lens = Vec::new();
        model.visit_params(&mut |_, view| tensor_lens.push(view.len()));

        // central differences at f64: large enough to beat cancellation
        // noise, small enough to keep truncation error out of the tolerance
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut worst = 0.0f64;
        for (t_idx, &len) in tensor_lens.iter().enumerate() {
            let sample: Vec<usize> = if len <= 8 {
                (0..len).collect()
            } else {
                rand::seq::index::sample(&mut rng, len, 8).into_vec()
            };
            for flat in sample {
                let mut probe = model.clone();
                let mut orig = 0.0;
                let mut visit_idx = 0;
                probe.visit_params_mut(&mut |_, mut view| {
                    if visit_idx == t_idx {
                        orig = view.get_flat(flat);
                        view.set_flat(flat, orig + h);
                    }
                    visit_idx += 1;
                });
                let up = batch_loss(&probe, &batch, &features, mode, alpha).unwrap();
                visit_idx = 0;
                probe.visit_params_mut(&mut |_, mut view| {
                    if visit_idx == t_idx {
                        view.set_flat(flat, orig - h);
                    }
                    visit_idx += 1;
                });
                let down = batch_loss(&probe, &batch, &features, mode, alpha).unwrap();
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[t_idx][flat];
                let denom = a.abs().max(numeric.abs());
                let err = if denom >= 1e-8 {
                    (a - numeric).abs() / denom
                } else {
                    (a - numeric).abs()
                };
                worst = worst.max(err);
                assert!(
                    err < 1e-4,
                    "tensor {t_idx} coord {flat}: analytic {a} vs numeric {numeric}"
                );
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn combined_loss_gradients_match_finite_differences() {
        fd_against_analytic(FusionMode::Sea, LossMode::Combined);
    }

    #[test]
    fn single_loss_gradients_match_finite_differences() {
        fd_against_analytic(FusionMode::Sea, LossMode::Single);
    }

    #[test]
    fn concat_baseline_gradients_match_finite_differences() {
        fd_against_analytic(FusionMode::Concat, LossMode::Single);
    }

    #[test]
    fn transformed_baseline_gradients_match_finite_differences() {
        fd_against_analytic(FusionMode::TransformedConcat, LossMode::Single);
    }

    #[test]
    fn missing_video_feature_names_the_id() {
        let model = full_model(FusionMode::Sea, 3);
        let (batch, _) = test_batch();
        let features = FeatureStore::from_parts(
            vec!["v1".into(), "v2".into()],
            array![[0.9, -0.2, 0.4, 0.1], [-0.3, 0.8, -0.1, 0.5]],
        )
        .unwrap();
        let err = forward_batch(&model, &batch, &features).unwrap_err();
        assert!(matches!(err, Error::MissingId { ref id, .. } if id == "v3"));
    }
}
