//! Per-channel Dice loss with stage weighting and intermediate
//! supervision, plus the hard evaluation metrics (threshold, Dice
//! score, pixel confusion).

use crate::nn::{Graph, NnError, Scalar, Tensor, Var};
use crate::region::{Region, NUM_REGIONS};

pub const DICE_EPS: f64 = 1e-6;

/// Per-stage, per-region loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    /// `w[stage][region]`
    pub w: Vec<[f64; NUM_REGIONS]>,
}

impl LossWeights {
    /// Defaults: stage 1 weights all 1.0; the final stage focuses on
    /// the bolus with 2.5 vs 0.7 for the rest; any intermediate
    /// stages use 1.0.
    pub fn default_for_stages(stages: usize) -> Self {
        let mut w = vec![[1.0; NUM_REGIONS]; stages];
        if stages >= 2 {
            let last = stages - 1;
            w[last] = [0.7; NUM_REGIONS];
            w[last][Region::Bolus.index()] = 2.5;
        }
        Self { w }
    }
}

/// Soft Dice loss per (sample, channel):
/// `1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps)`.
/// Returns a `[N, C]` var; empty-vs-empty yields 0.
pub fn dice_loss_graph<F: Scalar>(
    g: &mut Graph<F>,
    probs: Var,
    target: &Tensor<F>,
) -> Result<Var, NnError> {
    if g.value(probs).shape() != target.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "probs {:?} vs target {:?}",
            g.value(probs).shape(),
            target.shape()
        )));
    }
    let eps = F::f(DICE_EPS);
    let y = g.constant(target.clone());
    let inter = g.mul(probs, y)?;
    let inter_nc = g.sum_spatial(inter)?;
    let p_nc = g.sum_spatial(probs)?;
    let y_nc = g.sum_spatial(y)?;
    let num_raw = g.scale(inter_nc, F::f(2.0));
    let num = g.add_scalar(num_raw, eps);
    let den_raw = g.add(p_nc, y_nc)?;
    let den = g.add_scalar(den_raw, eps);
    let dice = g.div(num, den)?;
    let nc = g.value(dice).shape().to_vec();
    let ones = g.constant(Tensor::full(&nc, F::one()));
    g.sub(ones, dice)
}

/// Weighted sum of per-channel Dice losses, averaged over the batch.
pub fn stage_loss_graph<F: Scalar>(
    g: &mut Graph<F>,
    probs: Var,
    target: &Tensor<F>,
    weights: &[f64; NUM_REGIONS],
) -> Result<Var, NnError> {
    let per = dice_loss_graph(g, probs, target)?;
    let (n, c) = match g.value(per).shape() {
        [n, c] => (*n, *c),
        s => {
            return Err(NnError::ShapeMismatch(format!(
                "per-channel loss shape {:?}",
                s
            )))
        }
    };
    if c != NUM_REGIONS {
        return Err(NnError::ShapeMismatch(format!(
            "expected {NUM_REGIONS} channels, got {c}"
        )));
    }
    let mut wdata = Vec::with_capacity(n * c);
    for _ in 0..n {
        wdata.extend(weights.iter().map(|&w| F::f(w)));
    }
    let wvar = g.constant(Tensor::from_vec(&[n, c], wdata)?);
    let weighted = g.mul(per, wvar)?;
    let total = g.sum_all(weighted);
    Ok(g.scale(total, F::f(1.0 / n as f64)))
}

/// Sum of stage losses: every stage contributes gradient
/// (intermediate supervision).
pub fn total_loss_graph<F: Scalar>(
    g: &mut Graph<F>,
    stage_probs: &[Var],
    target: &Tensor<F>,
    weights: &LossWeights,
) -> Result<Var, NnError> {
    if stage_probs.is_empty() || weights.w.len() != stage_probs.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} stages vs {} weight rows",
            stage_probs.len(),
            weights.w.len()
        )));
    }
    let mut total = stage_loss_graph(g, stage_probs[0], target, &weights.w[0])?;
    for (i, &p) in stage_probs.iter().enumerate().skip(1) {
        let sl = stage_loss_graph(g, p, target, &weights.w[i])?;
        total = g.add(total, sl)?;
    }
    Ok(total)
}

// ---- hard metrics (pure, non-graph) ----

/// Binarize probabilities: positive iff `p >= theta` (ties positive).
pub fn threshold(probs: &[f32], theta: f32) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= theta)).collect()
}

/// Hard Dice score `2|A∩B| / (|A| + |B|)`; both-empty defined as 1.0.
pub fn dice_score(pred: &[u8], gt: &[u8]) -> f64 {
    debug_assert_eq!(pred.len(), gt.len());
    let mut inter = 0u64;
    let mut a = 0u64;
    let mut b = 0u64;
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (u64::from(p != 0), u64::from(g != 0));
        inter += p & g;
        a += p;
        b += g;
    }
    if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}

/// Per-pixel confusion counts `(TP, FP, TN, FN)`.
pub fn confusion_counts(pred: &[u8], gt: &[u8]) -> (u64, u64, u64, u64) {
    debug_assert_eq!(pred.len(), gt.len());
    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
    for (&p, &g) in pred.iter().zip(gt) {
        match (p != 0, g != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    (tp, fp, tn, fneg)
}
