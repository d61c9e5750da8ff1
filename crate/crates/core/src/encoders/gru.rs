//! Trainable GRU / bi-GRU sentence encoding with mean pooling over hidden
//! states, plus the taped forward and backward passes used in training.
//!
//! Weight layout convention: input matrices are `d_emb × hidden` and
//! recurrent matrices `hidden × hidden`, applied as `x · W` / `h · U`
//! (i.e. the transposed-weight form of the gate equations).

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::textproc::{TokenSeq, Vocabulary};
use crate::{real, Real};

use super::EmbeddingTable;

/// Range for word-embedding rows that have no pretrained vector.
const EMBED_INIT: f64 = 0.1;

/// Gate parameters for one recurrence direction.
#[derive(Debug, Clone)]
pub struct GruParams<F> {
    pub w_z: Array2<F>,
    pub w_r: Array2<F>,
    pub w_h: Array2<F>,
    pub u_z: Array2<F>,
    pub u_r: Array2<F>,
    pub u_h: Array2<F>,
    pub b_z: Array1<F>,
    pub b_r: Array1<F>,
    pub b_h: Array1<F>,
}

impl<F: Real> GruParams<F> {
    pub fn zeros(d_emb: usize, hidden: usize) -> Self {
        GruParams {
            w_z: Array2::zeros((d_emb, hidden)),
            w_r: Array2::zeros((d_emb, hidden)),
            w_h: Array2::zeros((d_emb, hidden)),
            u_z: Array2::zeros((hidden, hidden)),
            u_r: Array2::zeros((hidden, hidden)),
            u_h: Array2::zeros((hidden, hidden)),
            b_z: Array1::zeros(hidden),
            b_r: Array1::zeros(hidden),
            b_h: Array1::zeros(hidden),
        }
    }

    /// Gate matrices uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng>(d_emb: usize, hidden: usize, rng: &mut R) -> Self {
        let mut params = Self::zeros(d_emb, hidden);
        for w in [&mut params.w_z, &mut params.w_r, &mut params.w_h] {
            fill_uniform(w, 1.0 / (d_emb as f64).sqrt(), rng);
        }
        for u in [&mut params.u_z, &mut params.u_r, &mut params.u_h] {
            fill_uniform(u, 1.0 / (hidden as f64).sqrt(), rng);
        }
        params
    }

    pub fn d_emb(&self) -> usize {
        self.w_z.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w_z.ncols()
    }

    pub fn param_count(&self) -> usize {
        3 * self.d_emb() * self.hidden() + 3 * self.hidden() * self.hidden() + 3 * self.hidden()
    }

    pub fn cast<T: Real>(&self) -> GruParams<T> {
        let c2 = |m: &Array2<F>| m.mapv(|v| T::from(v).unwrap());
        let c1 = |v: &Array1<F>| v.mapv(|v| T::from(v).unwrap());
        GruParams {
            w_z: c2(&self.w_z),
            w_r: c2(&self.w_r),
            w_h: c2(&self.w_h),
            u_z: c2(&self.u_z),
            u_r: c2(&self.u_r),
            u_h: c2(&self.u_h),
            b_z: c1(&self.b_z),
            b_r: c1(&self.b_r),
            b_h: c1(&self.b_h),
        }
    }
}

fn fill_uniform<F: Real, R: Rng>(m: &mut Array2<F>, bound: f64, rng: &mut R) {
    for v in m.iter_mut() {
        *v = real::<F>(rng.gen_range(-bound..bound));
    }
}

fn sigmoid<F: Real>(t: F) -> F {
    F::one() / (F::one() + (-t).exp())
}

/// Values cached for one recurrence step, enough to run the step backward.
#[derive(Debug, Clone)]
struct StepCache<F> {
    z: Array1<F>,
    r: Array1<F>,
    h_tilde: Array1<F>,
    h: Array1<F>,
}

fn gru_step_cached<F: Real>(
    x: ArrayView1<'_, F>,
    h_prev: ArrayView1<'_, F>,
    p: &GruParams<F>,
) -> StepCache<F> {
    let z = (x.dot(&p.w_z) + h_prev.dot(&p.u_z) + &p.b_z).mapv_into(sigmoid);
    let r = (x.dot(&p.w_r) + h_prev.dot(&p.u_r) + &p.b_r).mapv_into(sigmoid);
    let gated = &r * &h_prev;
    let h_tilde = (x.dot(&p.w_h) + gated.dot(&p.u_h) + &p.b_h).mapv_into(F::tanh);
    let h = (&h_prev - (&z * &h_prev)) + &z * &h_tilde;
    StepCache { z, r, h_tilde, h }
}

/// One gated-recurrence update: `h = (1-z) ⊙ h_prev + z ⊙ tanh(...)`.
pub fn gru_step<F: Real>(
    x: ArrayView1<'_, F>,
    h_prev: ArrayView1<'_, F>,
    p: &GruParams<F>,
) -> Result<Array1<F>> {
    if x.len() != p.d_emb() {
        return Err(Error::Dimension {
            context: "gru_step input".into(),
            expected: p.d_emb(),
            got: x.len(),
        });
    }
    if h_prev.len() != p.hidden() {
        return Err(Error::Dimension {
            context: "gru_step hidden state".into(),
            expected: p.hidden(),
            got: h_prev.len(),
        });
    }
    let h = gru_step_cached(x, h_prev, p).h;
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gru_step produced a non-finite state".into()));
    }
    Ok(h)
}

/// A GRU sentence encoder; bidirectional when `backward` is present. The
/// word-embedding matrix is owned here and shared by both directions.
#[derive(Debug, Clone)]
pub struct GruEncoder<F> {
    pub vocab: Arc<Vocabulary>,
    /// `|vocab| × d_emb`, trainable.
    pub embedding: Array2<F>,
    pub forward: GruParams<F>,
    pub backward: Option<GruParams<F>>,
}

impl<F: Real> GruEncoder<F> {
    pub fn new_gru<R: Rng>(
        vocab: Arc<Vocabulary>,
        d_emb: usize,
        hidden: usize,
        pretrained: Option<&EmbeddingTable<F>>,
        rng: &mut R,
    ) -> Self {
        let embedding = init_embedding(&vocab, d_emb, pretrained, rng);
        let forward = GruParams::init(d_emb, hidden, rng);
        GruEncoder {
            vocab,
            embedding,
            forward,
            backward: None,
        }
    }

    pub fn new_bigru<R: Rng>(
        vocab: Arc<Vocabulary>,
        d_emb: usize,
        hidden: usize,
        pretrained: Option<&EmbeddingTable<F>>,
        rng: &mut R,
    ) -> Self {
        let embedding = init_embedding(&vocab, d_emb, pretrained, rng);
        let forward = GruParams::init(d_emb, hidden, rng);
        let backward = GruParams::init(d_emb, hidden, rng);
        GruEncoder {
            vocab,
            embedding,
            forward,
            backward: Some(backward),
        }
    }

    pub fn is_bidirectional(&self) -> bool {
        self.backward.is_some()
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    pub fn d_emb(&self) -> usize {
        self.forward.d_emb()
    }

    /// `hidden` for one direction, `2 * hidden` when bidirectional.
    pub fn output_dim(&self) -> usize {
        if self.is_bidirectional() {
            2 * self.hidden()
        } else {
            self.hidden()
        }
    }

    /// Gate parameters only — a bidirectional encoder holds twice as many.
    pub fn recurrent_param_count(&self) -> usize {
        let one = self.forward.param_count();
        if self.is_bidirectional() {
            2 * one
        } else {
            one
        }
    }

    pub fn param_count(&self) -> usize {
        self.embedding.len() + self.recurrent_param_count()
    }

    /// Embedding-row indices for the sentence, mapping out-of-vocabulary
    /// tokens to the `<unk>` row.
    pub fn token_rows(&self, s: &TokenSeq) -> Result<Vec<usize>> {
        if s.is_empty() {
            return Err(Error::Empty("cannot encode an empty sentence".into()));
        }
        s.iter().map(|tok| self.vocab.index_or_unk(tok)).collect()
    }

    /// Encode `s` as the mean of hidden states; for the bidirectional
    /// variant, the concatenation of the two directions' means (the mean of
    /// per-position concatenated states collapses to exactly that).
    pub fn encode(&self, s: &TokenSeq) -> Result<Array1<F>> {
        Ok(self.encode_with_tape(s)?.0)
    }

    pub fn encode_with_tape(&self, s: &TokenSeq) -> Result<(Array1<F>, GruTapes<F>)> {
        let rows = self.token_rows(s)?;
        let fwd = run_direction(&rows, &self.embedding, &self.forward);
        let (out, bwd) = match &self.backward {
            None => (mean_states(&fwd), None),
            Some(params) => {
                let mut reversed = rows.clone();
                reversed.reverse();
                let bwd = run_direction(&reversed, &self.embedding, params);
                let mut out = Array1::zeros(2 * self.hidden());
                out.slice_mut(ndarray::s![..self.hidden()])
                    .assign(&mean_states(&fwd));
                out.slice_mut(ndarray::s![self.hidden()..])
                    .assign(&mean_states(&bwd));
                (out, Some(bwd))
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "recurrent encoder produced a non-finite sentence vector".into(),
            ));
        }
        Ok((out, GruTapes { fwd, bwd }))
    }

    pub fn zero_grads(&self) -> GruGrads<F> {
        GruGrads {
            embedding: Array2::zeros(self.embedding.raw_dim()),
            forward: GruParams::zeros(self.d_emb(), self.hidden()),
            backward: self
                .backward
                .as_ref()
                .map(|_| GruParams::zeros(self.d_emb(), self.hidden())),
        }
    }

    pub fn cast<T: Real>(&self) -> GruEncoder<T> {
        GruEncoder {
            vocab: Arc::clone(&self.vocab),
            embedding: self.embedding.mapv(|v| T::from(v).unwrap()),
            forward: self.forward.cast(),
            backward: self.backward.as_ref().map(|p| p.cast()),
        }
    }
}

/// Rows come from the pretrained table where the word has a vector of the
/// right width; all other rows (including `<unk>`) draw uniform `±0.1`.
fn init_embedding<F: Real, R: Rng>(
    vocab: &Vocabulary,
    d_emb: usize,
    pretrained: Option<&EmbeddingTable<F>>,
    rng: &mut R,
) -> Array2<F> {
    let mut matrix = Array2::<F>::zeros((vocab.len(), d_emb));
    for (i, word) in vocab.words().iter().enumerate() {
        let hit = pretrained.and_then(|t| {
            if t.dim() == d_emb {
                t.lookup(word)
            } else {
                None
            }
        });
        match hit {
            Some(vector) => matrix.row_mut(i).assign(&vector),
            None => {
                for v in matrix.row_mut(i).iter_mut() {
                    *v = real::<F>(rng.gen_range(-EMBED_INIT..EMBED_INIT));
                }
            }
        }
    }
    matrix
}

/// The full recurrence record for one direction over one sentence.
#[derive(Debug, Clone)]
pub struct DirectionTape<F> {
    /// Embedding rows in the order this direction consumed them.
    rows: Vec<usize>,
    /// `h_0 .. h_l`; `h_0` is the zero state.
    hs: Vec<Array1<F>>,
    steps: Vec<StepCache<F>>,
}

fn run_direction<F: Real>(
    rows: &[usize],
    embedding: &Array2<F>,
    params: &GruParams<F>,
) -> DirectionTape<F> {
    let mut hs = Vec::with_capacity(rows.len() + 1);
    let mut steps = Vec::with_capacity(rows.len());
    hs.push(Array1::zeros(params.hidden()));
    for &row in rows {
        let cache = gru_step_cached(embedding.row(row), hs.last().unwrap().view(), params);
        hs.push(cache.h.clone());
        steps.push(cache);
    }
    DirectionTape {
        rows: rows.to_vec(),
        hs,
        steps,
    }
}

fn mean_states<F: Real>(tape: &DirectionTape<F>) -> Array1<F> {
    let len = tape.steps.len();
    let mut sum = Array1::<F>::zeros(tape.hs[0].len());
    for h in &tape.hs[1..] {
        sum += h;
    }
    sum.mapv_into(|v| v / F::from(len).unwrap())
}

/// Forward record for a whole sentence, both directions when bidirectional.
#[derive(Debug, Clone)]
pub struct GruTapes<F> {
    fwd: DirectionTape<F>,
    bwd: Option<DirectionTape<F>>,
}

/// Gradient accumulators mirroring [`GruEncoder`]'s trainable tensors.
#[derive(Debug, Clone)]
pub struct GruGrads<F> {
    pub embedding: Array2<F>,
    pub forward: GruParams<F>,
    pub backward: Option<GruParams<F>>,
}

impl<F: Real> GruTapes<F> {
    /// Accumulate parameter gradients for `d_out` = ∂L/∂(encoder output).
    /// For a bidirectional tape the first half of `d_out` flows into the
    /// forward direction and the second half into the backward one.
    pub fn backward(&self, enc: &GruEncoder<F>, d_out: ArrayView1<'_, F>, grads: &mut GruGrads<F>) {
        debug_assert_eq!(d_out.len(), enc.output_dim());
        match (&self.bwd, &enc.backward, &mut grads.backward) {
            (None, None, None) => backprop_direction(
                &self.fwd,
                &enc.embedding,
                &enc.forward,
                d_out,
                &mut grads.forward,
                &mut grads.embedding,
            ),
            (Some(bwd_tape), Some(bwd_params), Some(bwd_grads)) => {
                let h = enc.hidden();
                backprop_direction(
                    &self.fwd,
                    &enc.embedding,
                    &enc.forward,
                    d_out.slice(ndarray::s![..h]),
                    &mut grads.forward,
                    &mut grads.embedding,
                );
                backprop_direction(
                    bwd_tape,
                    &enc.embedding,
                    bwd_params,
                    d_out.slice(ndarray::s![h..]),
                    bwd_grads,
                    &mut grads.embedding,
                );
            }
            _ => unreachable!("tape/encoder/grads directionality must agree"),
        }
    }
}

/// `target += a ⊗ b` (outer product of column `a` and row `b`).
pub(crate) fn add_outer<F: Real>(
    target: &mut Array2<F>,
    a: ArrayView1<'_, F>,
    b: ArrayView1<'_, F>,
) {
    for (i, &ai) in a.iter().enumerate() {
        let mut row = target.row_mut(i);
        row.scaled_add(ai, &b);
    }
}

/// Backpropagation through time for one direction under mean pooling: every
/// hidden state receives `d_dir / l`, then the recurrence runs in reverse.
fn backprop_direction<F: Real>(
    tape: &DirectionTape<F>,
    embedding: &Array2<F>,
    params: &GruParams<F>,
    d_dir: ArrayView1<'_, F>,
    g: &mut GruParams<F>,
    g_embedding: &mut Array2<F>,
) {
    let len = tape.steps.len();
    if len == 0 {
        return;
    }
    let share = d_dir.mapv(|v| v / F::from(len).unwrap());
    let mut dh = Array1::<F>::zeros(d_dir.len());
    for t in (0..len).rev() {
        dh += &share;
        let StepCache { z, r, h_tilde, .. } = &tape.steps[t];
        let h_prev = &tape.hs[t];
        let x = embedding.row(tape.rows[t]);

        // h = (1-z) ⊙ h_prev + z ⊙ h̃
        let dz = &dh * &(h_tilde - h_prev);
        let dz_pre = dz * z * &z.mapv(|v| F::one() - v);
        let dht = &dh * z;
        let dht_pre = dht * &h_tilde.mapv(|v| F::one() - v * v);
        let mut dh_prev = &dh * &z.mapv(|v| F::one() - v);

        // h̃ = tanh(x·W_h + (r ⊙ h_prev)·U_h + b_h)
        let d_gated = params.u_h.dot(&dht_pre);
        let dr = &d_gated * h_prev;
        let dr_pre = dr * r * &r.mapv(|v| F::one() - v);
        dh_prev += &(&d_gated * r);
        dh_prev += &params.u_z.dot(&dz_pre);
        dh_prev += &params.u_r.dot(&dr_pre);

        let mut dx = params.w_z.dot(&dz_pre);
        dx += &params.w_r.dot(&dr_pre);
        dx += &params.w_h.dot(&dht_pre);

        let gated = r * h_prev;
        add_outer(&mut g.w_z, x, dz_pre.view());
        add_outer(&mut g.u_z, h_prev.view(), dz_pre.view());
        g.b_z += &dz_pre;
        add_outer(&mut g.w_r, x, dr_pre.view());
        add_outer(&mut g.u_r, h_prev.view(), dr_pre.view());
        g.b_r += &dr_pre;
        add_outer(&mut g.w_h, x, dht_pre.view());
        add_outer(&mut g.u_h, gated.view(), dht_pre.view());
        g.b_h += &dht_pre;

        g_embedding.row_mut(tape.rows[t]).scaled_add(F::one(), &dx.view());
        dh = dh_prev;
    }
}
