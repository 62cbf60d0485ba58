//! Training objective: weighted cross-entropy on the assessment, weighted
//! BCE + Dice on the edge map, and three reconstruction-consistency terms.
//!
//! Every function works on candle tensors of any float dtype, so the same
//! code is used for f32 training and f64 gradient checks.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quality::EdgeMap;

pub const PROB_CLAMP: f64 = 1e-7;
pub const DEFAULT_LAMBDA: f64 = 1.1;
pub const DEFAULT_DICE_EPS: f64 = 1e-6;
const NORMALIZATION_TOL: f64 = 1e-4;

/// Per-class weights of the cross-entropy term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassWeights {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            tp: 0.5,
            fp: 5.0,
            tn: 0.1,
            fn_: 5.0,
        }
    }
}

impl ClassWeights {
    pub fn uniform() -> Self {
        Self {
            tp: 1.0,
            fp: 1.0,
            tn: 1.0,
            fn_: 1.0,
        }
    }

    /// Weights in logit-channel order (TP, FP, TN, FN).
    pub fn channels(&self) -> [f64; 4] {
        [self.tp, self.fp, self.tn, self.fn_]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.channels();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "class weights must be non-negative with at least one positive, got {w:?}"
            )));
        }
        Ok(())
    }
}

/// What the segmentation-consistency term corrects.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegTarget {
    /// `S + FN − FP` against the ground truth, with `S` the unchecked input mask.
    #[default]
    Unchecked,
    /// `(TP + FP) + FN − FP` against the ground truth.
    Predicted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub class_weights: ClassWeights,
    pub lambda: f64,
    pub dice_eps: f64,
    pub seg_target: SegTarget,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            class_weights: ClassWeights::default(),
            lambda: DEFAULT_LAMBDA,
            dice_eps: DEFAULT_DICE_EPS,
            seg_target: SegTarget::Unchecked,
        }
    }
}

/// Scalar values of the five terms and their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub edge: f64,
    pub pos: f64,
    pub neg: f64,
    pub seg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_parts(ce: f64, edge: f64, pos: f64, neg: f64, seg: f64) -> Self {
        Self {
            ce,
            edge,
            pos,
            neg,
            seg,
            total: ce + edge + pos + neg + seg,
        }
    }

    pub fn parts(&self) -> [f64; 5] {
        [self.ce, self.edge, self.pos, self.neg, self.seg]
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|v| v.is_finite()) && self.total.is_finite()
    }

    pub const CSV_HEADER: &'static str = "step,ce,edge,pos,neg,seg,total";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8}",
            self.ce, self.edge, self.pos, self.neg, self.seg, self.total
        )
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    let s = scalar(&t.detach().sum_all()?)?;
    if !s.is_finite() {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

fn ensure_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape {
            expected: format!("{:?}", a.dims()),
            actual: format!("{:?}", b.dims()),
        });
    }
    Ok(())
}

fn weight_tensor(w: &[f64], like: &Tensor) -> Result<Tensor> {
    Ok(Tensor::new(w, like.device())?
        .to_dtype(like.dtype())?
        .reshape((1, w.len(), 1, 1))?)
}

/// Weighted negative log-likelihood of the softmax over the class channels.
///
/// `logits`, `target`: `B×4×H×W`; `target` is one-hot (or any distribution).
pub fn weighted_ce(logits: &Tensor, target: &Tensor, w: &ClassWeights) -> Result<Tensor> {
    ensure_same_shape(logits, target)?;
    ensure_finite(logits, "assessment logits")?;
    let (b, _, h, wd) = logits.dims4()?;
    let probs = candle_nn::ops::softmax(logits, 1)?.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let weighted = target.broadcast_mul(&weight_tensor(&w.channels(), logits)?)?;
    let nll = (weighted * probs.log()?)?.sum_all()?.neg()?;
    Ok((nll / (b * h * wd) as f64)?)
}

/// Edge and background weights of the balanced BCE for one edge map:
/// `(|Ē⁻| / N, λ·|Ē⁺| / N)`.
pub fn gamma_values(n_pos: usize, n_neg: usize, lambda: f64) -> (f64, f64) {
    let n = (n_pos + n_neg) as f64;
    if n == 0.0 {
        return (0.0, 0.0);
    }
    (n_neg as f64 / n, lambda * n_pos as f64 / n)
}

/// Per-pixel weights for a single edge map, row-major.
pub fn gamma_weights(edge_gt: &EdgeMap, lambda: f64) -> Vec<f64> {
    let n_pos = edge_gt.count();
    let n_neg = edge_gt.mask().len() - n_pos;
    let (w_edge, w_bg) = gamma_values(n_pos, n_neg, lambda);
    edge_gt
        .mask()
        .as_slice()
        .iter()
        .map(|&v| if v == 1 { w_edge } else { w_bg })
        .collect()
}

/// Per-image γ map for a `B×1×H×W` edge target.
pub fn gamma_tensor(edge_gt: &Tensor, lambda: f64) -> Result<Tensor> {
    let (_, _, h, w) = edge_gt.dims4()?;
    let n = (h * w) as f64;
    let pos = edge_gt.sum_keepdim((1, 2, 3))?;
    let neg = (pos.neg()? + n)?;
    let w_edge = (neg / n)?;
    let w_bg = ((pos * lambda)? / n)?;
    let on = edge_gt.broadcast_mul(&w_edge)?;
    let off = (edge_gt.ones_like()? - edge_gt)?.broadcast_mul(&w_bg)?;
    Ok((on + off)?)
}

/// The two halves of the edge loss.
#[derive(Clone, Debug)]
pub struct EdgeLossTerms {
    pub bce: Tensor,
    pub dice: Tensor,
}

impl EdgeLossTerms {
    pub fn total(&self) -> Result<Tensor> {
        Ok((&self.bce + &self.dice)?)
    }
}

/// Balanced BCE (mean over pixels) plus global soft Dice per image, averaged over the batch.
pub fn edge_loss(
    e_logits: &Tensor,
    edge_gt: &Tensor,
    lambda: f64,
    eps: f64,
) -> Result<EdgeLossTerms> {
    ensure_same_shape(e_logits, edge_gt)?;
    ensure_finite(e_logits, "edge logits")?;
    let (b, _, _, _) = e_logits.dims4()?;
    let e = candle_nn::ops::sigmoid(e_logits)?;
    let ec = e.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let gamma = gamma_tensor(edge_gt, lambda)?.detach();
    let one_minus_gt = (edge_gt.ones_like()? - edge_gt)?;
    let ll = ((&one_minus_gt * (ec.ones_like()? - &ec)?.log()?)? + (edge_gt * ec.log()?)?)?;
    let bce = (gamma * ll)?.mean_all()?.neg()?;

    let inter = (&e * edge_gt)?.sum((1, 2, 3))?;
    let denom = ((e.sum((1, 2, 3))? + edge_gt.sum((1, 2, 3))?)? + eps)?;
    let ratio = (((inter * 2.0)? + eps)? / denom)?;
    let dice = (ratio.neg()? + 1.0)?.sum_all()?;
    let dice = (dice / b as f64)?;
    Ok(EdgeLossTerms { bce, dice })
}

/// Dice term alone, for one image: `1 − (2ΣEĒ+ε)/(ΣE+ΣĒ+ε)`.
pub fn dice_term(e: &[f64], gt: &[f64], eps: f64) -> f64 {
    let inter: f64 = e.iter().zip(gt).map(|(a, b)| a * b).sum();
    let se: f64 = e.iter().sum();
    let sg: f64 = gt.iter().sum();
    1.0 - (2.0 * inter + eps) / (se + sg + eps)
}

/// The three consistency terms.
#[derive(Clone, Debug)]
pub struct ReconstructionTerms {
    pub pos: Tensor,
    pub neg: Tensor,
    pub seg: Tensor,
}

/// Fails when the class channels of `probs` do not sum to one per pixel.
pub fn check_normalized(probs: &Tensor) -> Result<()> {
    let dev = (probs.sum(1)?.to_dtype(DType::F64)? - 1.0)?
        .abs()?
        .max_all()?;
    let dev = dev.to_scalar::<f64>()?;
    if dev.is_nan() || dev > NORMALIZATION_TOL {
        return Err(Error::InvalidArgument(format!(
            "probabilities are not normalized: max |Σp − 1| = {dev:e}"
        )));
    }
    Ok(())
}

/// `probs`: `B×4×H×W` softmax output; `unchecked`, `gt`: `B×1×H×W`.
pub fn reconstruction_losses(
    probs: &Tensor,
    unchecked: &Tensor,
    gt: &Tensor,
    target: SegTarget,
) -> Result<ReconstructionTerms> {
    ensure_same_shape(unchecked, gt)?;
    let (b, c, h, w) = probs.dims4()?;
    if c != 4 || gt.dims() != [b, 1, h, w] {
        return Err(Error::Shape {
            expected: format!("probs Bx4xHxW with masks {b}x1x{h}x{w}"),
            actual: format!("probs {:?}, masks {:?}", probs.dims(), gt.dims()),
        });
    }
    check_normalized(&probs.detach())?;
    let ch = |i: usize| probs.narrow(1, i, 1);
    let (tp, fp, tn, fn_) = (ch(0)?, ch(1)?, ch(2)?, ch(3)?);
    let pos = ((&tp + &fn_)? - gt)?.sqr()?.mean_all()?;
    let bg = (gt.ones_like()? - gt)?;
    let neg = ((&fp + &tn)? - bg)?.sqr()?.mean_all()?;
    let base = match target {
        SegTarget::Unchecked => unchecked.clone(),
        SegTarget::Predicted => (&tp + &fp)?,
    };
    let seg = (((base + &fn_)? - &fp)? - gt)?.sqr()?.mean_all()?;
    Ok(ReconstructionTerms { pos, neg, seg })
}

/// Supervision for one batch, all tensors in the model dtype.
#[derive(Clone, Debug)]
pub struct LossTargets {
    /// One-hot ground-truth quality maps, `B×4×H×W`.
    pub quality: Tensor,
    /// Ground-truth edges, `B×1×H×W`.
    pub edges: Tensor,
    pub unchecked: Tensor,
    pub gt: Tensor,
}

/// Total loss tensor (for backprop) and its scalar breakdown.
pub fn composite_loss(
    a_logits: &Tensor,
    e_logits: &Tensor,
    targets: &LossTargets,
    cfg: &LossConfig,
) -> Result<(Tensor, LossBreakdown)> {
    let ce = weighted_ce(a_logits, &targets.quality, &cfg.class_weights)?;
    let edge = edge_loss(e_logits, &targets.edges, cfg.lambda, cfg.dice_eps)?.total()?;
    let probs = candle_nn::ops::softmax(a_logits, 1)?;
    let rec = reconstruction_losses(&probs, &targets.unchecked, &targets.gt, cfg.seg_target)?;
    let total = ((((&ce + &edge)? + &rec.pos)? + &rec.neg)? + &rec.seg)?;
    let breakdown = LossBreakdown::from_parts(
        scalar(&ce)?,
        scalar(&edge)?,
        scalar(&rec.pos)?,
        scalar(&rec.neg)?,
        scalar(&rec.seg)?,
    );
    if !breakdown.is_finite() {
        return Err(Error::NonFinite(format!("loss {breakdown:?}")));
    }
    Ok((total, breakdown))
}

/// Softmax over the class channel.
pub fn class_probabilities(logits: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(logits, 1)?)
}
