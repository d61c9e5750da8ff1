//! Triplet ranking loss with in-batch hardest-negative mining, in two
//! flavors: one loss per common space (each space mines its own negative,
//! losses summed) or a single loss over the fused similarity. Also measures
//! how much negative diversity the per-space mining buys.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::Real;

/// Default ranking margin.
pub const DEFAULT_ALPHA: f64 = 0.2;

/// Which training objective drives gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Sum of per-space losses, per-space hardest negatives.
    Combined,
    /// One loss on the fused similarity, one hardest negative per sentence.
    Single,
}

impl LossMode {
    pub fn tag(self) -> &'static str {
        match self {
            LossMode::Combined => "combined",
            LossMode::Single => "single",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "combined" => Ok(LossMode::Combined),
            "single" => Ok(LossMode::Single),
            other => Err(Error::Format(format!(
                "unknown loss mode {other:?} (want combined|single)"
            ))),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Index of the most similar eligible negative in one similarity row;
/// `excluded[j]` marks videos sharing the sentence's positive id. Ties go
/// to the lowest batch index.
pub fn hardest_negative<F: Real>(sim_row: ArrayView1<'_, F>, excluded: &[bool]) -> Result<usize> {
    debug_assert_eq!(sim_row.len(), excluded.len());
    let mut best: Option<(usize, F)> = None;
    for (j, &sim) in sim_row.iter().enumerate() {
        if excluded[j] {
            continue;
        }
        match best {
            Some((_, s)) if sim <= s => {}
            _ => best = Some((j, sim)),
        }
    }
    best.map(|(j, _)| j).ok_or_else(|| {
        Error::Format("every batch video shares the sentence's positive id".into())
    })
}

/// `max(0, alpha + hardneg_sim - pos_sim)`.
pub fn itrl<F: Real>(pos_sim: F, hardneg_sim: F, alpha: F) -> F {
    (alpha + hardneg_sim - pos_sim).max(F::zero())
}

/// `mask[(i, j)]` is true when batch video j carries sentence i's positive
/// video id (so j is ineligible as a negative for i).
pub fn positive_mask(video_ids: &[String]) -> Array2<bool> {
    let b = video_ids.len();
    Array2::from_shape_fn((b, b), |(i, j)| video_ids[i] == video_ids[j])
}

/// One hinge term: the positive/negative similarities it saw and its value.
#[derive(Debug, Clone, Copy)]
pub struct LossTerm<F> {
    pub pos_sim: F,
    pub neg_sim: F,
    /// Batch index of the chosen hardest negative.
    pub neg_index: usize,
    pub loss: F,
}

/// Everything one batch-loss evaluation produced: the optimized scalar,
/// per-space means, and which negative each (space, sentence) picked.
#[derive(Debug, Clone)]
pub struct LossReport<F> {
    pub mode: LossMode,
    /// Mean-over-sentences loss per mining group (k groups in combined
    /// mode, one in single mode).
    pub per_space: Vec<F>,
    /// The scalar being minimized: Σ per_space.
    pub combined: F,
    /// `[group][sentence]` hinge terms, aligned with the batch.
    pub terms: Vec<Vec<LossTerm<F>>>,
    /// `[group][sentence]` chosen hardest-negative video ids.
    pub hard_negative_ids: Vec<Vec<String>>,
}

impl<F: Real> LossReport<F> {
    pub fn batch_size(&self) -> usize {
        self.terms[0].len()
    }
}

fn check_batch_inputs<F: Real>(sims: &[Array2<F>], video_ids: &[String]) -> Result<()> {
    if sims.is_empty() {
        return Err(Error::Empty("loss over zero similarity matrices".into()));
    }
    let b = video_ids.len();
    if b < 2 {
        return Err(Error::Format(format!(
            "batch of {b} cannot supply a negative"
        )));
    }
    for m in sims {
        if m.nrows() != b || m.ncols() != b {
            return Err(Error::Dimension {
                context: "similarity matrix".into(),
                expected: b * b,
                got: m.len(),
            });
        }
    }
    Ok(())
}

fn mine_group<F: Real>(
    sim: &Array2<F>,
    mask: &Array2<bool>,
    video_ids: &[String],
    alpha: F,
) -> Result<(Vec<LossTerm<F>>, Vec<String>, F)> {
    let b = video_ids.len();
    let mut terms = Vec::with_capacity(b);
    let mut ids = Vec::with_capacity(b);
    let mut total = F::zero();
    for i in 0..b {
        let row = sim.row(i);
        let excluded: Vec<bool> = (0..b).map(|j| mask[(i, j)]).collect();
        let neg_index = hardest_negative(row, &excluded)?;
        let term = LossTerm {
            pos_sim: sim[(i, i)],
            neg_sim: sim[(i, neg_index)],
            neg_index,
            loss: itrl(sim[(i, i)], sim[(i, neg_index)], alpha),
        };
        total += term.loss;
        terms.push(term);
        ids.push(video_ids[neg_index].clone());
    }
    Ok((terms, ids, total / F::from(b).unwrap()))
}

/// Sum of per-space triplet losses, each mining its own hardest negative in
/// its own similarity matrix; the batch loss is the mean over sentences.
pub fn combined_loss<F: Real>(
    sims: &[Array2<F>],
    video_ids: &[String],
    alpha: F,
) -> Result<LossReport<F>> {
    check_batch_inputs(sims, video_ids)?;
    let mask = positive_mask(video_ids);
    let mut per_space = Vec::with_capacity(sims.len());
    let mut terms = Vec::with_capacity(sims.len());
    let mut hard_negative_ids = Vec::with_capacity(sims.len());
    let mut combined = F::zero();
    for sim in sims {
        let (group_terms, ids, mean) = mine_group(sim, &mask, video_ids, alpha)?;
        combined += mean;
        per_space.push(mean);
        terms.push(group_terms);
        hard_negative_ids.push(ids);
    }
    if !combined.is_finite() {
        return Err(Error::NonFinite("batch loss is not finite".into()));
    }
    Ok(LossReport {
        mode: LossMode::Combined,
        per_space,
        combined,
        terms,
        hard_negative_ids,
    })
}

/// One triplet loss on the fused similarity (the elementwise mean of the
/// per-space matrices), mining a single hardest negative per sentence.
pub fn single_loss<F: Real>(
    sims: &[Array2<F>],
    video_ids: &[String],
    alpha: F,
) -> Result<LossReport<F>> {
    check_batch_inputs(sims, video_ids)?;
    let k = F::from(sims.len()).unwrap();
    let mut fused = sims[0].clone();
    for sim in &sims[1..] {
        fused += sim;
    }
    fused.mapv_inplace(|v| v / k);
    let mask = positive_mask(video_ids);
    let (terms, ids, mean) = mine_group(&fused, &mask, video_ids, alpha)?;
    if !mean.is_finite() {
        return Err(Error::NonFinite("batch loss is not finite".into()));
    }
    Ok(LossReport {
        mode: LossMode::Single,
        per_space: vec![mean],
        combined: mean,
        terms: vec![terms],
        hard_negative_ids: vec![ids],
    })
}

/// Epoch totals for hardest-negative diversity: how many distinct negatives
/// the mining groups exposed, against the one-per-sentence baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiversityStats {
    /// Σ over sentences of 1 (the single-negative baseline).
    pub u_single: u64,
    /// Σ over sentences of |union of per-group chosen negative ids|.
    pub u_multi: u64,
}

impl DiversityStats {
    /// The "extra hard negatives" fraction, `U_multi / U_single − 1`.
    pub fn extra_ratio(&self) -> f64 {
        self.u_multi as f64 / self.u_single as f64 - 1.0
    }
}

/// Aggregate diversity over an epoch's loss reports.
pub fn hardneg_diversity<F: Real>(epoch_log: &[LossReport<F>]) -> Result<DiversityStats> {
    if epoch_log.is_empty() {
        return Err(Error::Empty("diversity over an empty epoch log".into()));
    }
    let mut u_single = 0u64;
    let mut u_multi = 0u64;
    for report in epoch_log {
        let b = report.batch_size();
        u_single += b as u64;
        for sentence in 0..b {
            let mut distinct: Vec<&str> = report
                .hard_negative_ids
                .iter()
                .map(|group| group[sentence].as_str())
                .collect();
            distinct.sort_unstable();
            distinct.dedup();
            u_multi += distinct.len() as u64;
        }
    }
    Ok(DiversityStats { u_single, u_multi })
}

/// One epoch's diversity report line.
pub fn render_diversity_line(epoch: usize, stats: &DiversityStats) -> String {
    format!(
        "{epoch}\t{}\t{}\t{:.6}",
        stats.u_single,
        stats.u_multi,
        stats.extra_ratio()
    )
}
