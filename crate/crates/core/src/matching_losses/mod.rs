//! Set matching and the training objective: box, GIoU and object losses
//! plus focal loss reweighted per (slot, class) by the actuator Ω.

mod hungarian;

pub use hungarian::{hungarian, MatchResult};

use crate::dataset_eval::{giou, BBox, Interaction, Taxonomy};
use crate::detr_lite::{PredictionVars, Predictions};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus, Elementwise, Graph, Tensor, Var};
use crate::semantics::OverMatrix;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_b: f64,
    pub lambda_u: f64,
    pub lambda_o: f64,
    /// Weight of the HOI confidence term in the matching cost.
    pub lambda_c: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub no_object_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_b: 2.5,
            lambda_u: 1.0,
            lambda_o: 1.0,
            lambda_c: 1.0,
            alpha: 0.25,
            gamma: 2.0,
            kappa: 2.0,
            eps1: 1e-14,
            eps2: 1e-7,
            no_object_weight: 0.1,
        }
    }
}

/// Which actuator factors are active. A disabled factor is forced to 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorMask {
    pub beta: bool,
    pub delta: bool,
    pub zeta: bool,
}

impl FactorMask {
    pub const ALL: FactorMask = FactorMask {
        beta: true,
        delta: true,
        zeta: true,
    };

    pub fn label(self) -> String {
        let mut parts = Vec::new();
        if self.beta {
            parts.push("beta");
        }
        if self.delta {
            parts.push("delta");
        }
        if self.zeta {
            parts.push("zeta");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    /// The seven non-empty subsets, singles first.
    pub fn grid() -> Vec<FactorMask> {
        let m = |beta, delta, zeta| FactorMask { beta, delta, zeta };
        vec![
            m(true, false, false),
            m(false, true, false),
            m(false, false, true),
            m(true, true, false),
            m(true, false, true),
            m(false, true, true),
            m(true, true, true),
        ]
    }
}

/// How the focal terms are weighted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weighting {
    /// Ω from the enabled factors.
    Ordis(FactorMask),
    /// Ω ≡ 1: plain focal loss.
    Focal,
}

/// A ground truth as seen by the loss: boxes, object and its class column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtTarget {
    pub human: BBox,
    pub object: BBox,
    pub object_idx: usize,
    pub column: usize,
}

/// Maps scene ground truths to classifier columns. `columns[c]` is the
/// column of class `c`, if the classifier has one.
pub fn gt_targets(gts: &[Interaction], taxonomy: &Taxonomy, columns: &[Option<usize>]) -> Result<Vec<GtTarget>> {
    gts.iter()
        .map(|g| {
            let column = columns
                .get(g.class)
                .copied()
                .flatten()
                .ok_or_else(|| Error::Data(format!("class {} has no classifier column", g.class)))?;
            Ok(GtTarget {
                human: g.human,
                object: g.object,
                object_idx: taxonomy.hoi_classes[g.class].object_idx,
                column,
            })
        })
        .collect()
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Prediction of one slot in probability space.
#[derive(Clone, Debug)]
pub struct SlotView {
    pub human: BBox,
    pub object: BBox,
    pub obj_prob: Vec<f64>,
    pub hoi_prob: Vec<f64>,
}

impl SlotView {
    pub fn from_predictions(p: &Predictions, slot: usize) -> Self {
        Self {
            human: BBox::from_slice(p.human_box.row(slot)),
            object: BBox::from_slice(p.object_box.row(slot)),
            obj_prob: softmax_row(p.obj_logits.row(slot)),
            hoi_prob: p.hoi_logits.row(slot).iter().map(|&x| sigmoid(x)).collect(),
        }
    }
}

/// `λ_b·L1 + λ_u·(1 − GIoU)` over both boxes, minus the object and HOI
/// probabilities of the ground truth.
pub fn pair_cost(slot: &SlotView, gt: &GtTarget, cfg: &LossConfig) -> f64 {
    let l1 = slot.human.l1(&gt.human) + slot.object.l1(&gt.object);
    let gi = (1.0 - giou(&slot.human, &gt.human)) + (1.0 - giou(&slot.object, &gt.object));
    cfg.lambda_b * l1 + cfg.lambda_u * gi - cfg.lambda_o * slot.obj_prob[gt.object_idx] - cfg.lambda_c * slot.hoi_prob[gt.column]
}

/// N_q×G matching costs.
pub fn cost_matrix(preds: &Predictions, gts: &[GtTarget], cfg: &LossConfig) -> Result<Tensor> {
    let n_q = preds.hoi_logits.rows();
    let slots: Vec<SlotView> = (0..n_q).map(|s| SlotView::from_predictions(preds, s)).collect();
    let mut data = Vec::with_capacity(n_q * gts.len());
    for s in &slots {
        for g in gts {
            data.push(pair_cost(s, g, cfg));
        }
    }
    Tensor::new(&[n_q, gts.len()], data)
}

/// `α(1−p)^γ·(−log p)` for positives and `(1−α)p^γ·(−log(1−p))` for
/// negatives, written with softplus so large logits stay finite.
pub fn focal_loss(logits: &Tensor, targets: &Tensor, alpha: f64, gamma: f64) -> Result<Tensor> {
    if logits.shape() != targets.shape() {
        return Err(Error::shape("focal_loss", logits.shape(), targets.shape()));
    }
    let data = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&x, &t)| {
            let pos = alpha * (-gamma * softplus(x)).exp() * softplus(-x);
            let neg = (1.0 - alpha) * (-gamma * softplus(-x)).exp() * softplus(x);
            t * pos + (1.0 - t) * neg
        })
        .collect();
    Tensor::new(logits.shape(), data)
}

/// Graph form of [`focal_loss`]; `targets` is a constant 0/1 matrix.
pub fn focal_graph(g: &mut Graph, logits: Var, targets: &Tensor, alpha: f64, gamma: f64) -> Result<Var> {
    let sp_pos = g.elementwise(logits, Elementwise::Softplus)?;
    let neg_x = g.elementwise(logits, Elementwise::Neg)?;
    let sp_neg = g.elementwise(neg_x, Elementwise::Softplus)?;
    let mod_pos = g.scale(sp_pos, -gamma)?;
    let mod_pos = g.exp(mod_pos)?;
    let pos = g.mul(mod_pos, sp_neg)?;
    let pos = g.scale(pos, alpha)?;
    let mod_neg = g.scale(sp_neg, -gamma)?;
    let mod_neg = g.exp(mod_neg)?;
    let neg = g.mul(mod_neg, sp_pos)?;
    let neg = g.scale(neg, 1.0 - alpha)?;
    let t = g.constant(targets.clone());
    let inv: Vec<f64> = targets.data().iter().map(|x| 1.0 - x).collect();
    let nt = g.constant(Tensor::new(targets.shape(), inv)?);
    let a = g.mul(t, pos)?;
    let b = g.mul(nt, neg)?;
    g.add(a, b)
}

/// `β = ln(1 + (max(η,0) + ε₁)^(−κ))` on matched slots, 0 elsewhere.
pub fn beta_factor(m: &MatchResult, n_slots: usize, kappa: f64, eps1: f64) -> Vec<f64> {
    let mut beta = vec![0.0; n_slots];
    for (&(s, _), &eta) in m.pairs.iter().zip(&m.slot_cost) {
        beta[s] = beta_value(eta, kappa, eps1);
    }
    beta
}

pub fn beta_value(eta: f64, kappa: f64, eps1: f64) -> f64 {
    (eta.max(0.0) + eps1).powf(-kappa).ln_1p()
}

/// `δ[s, j] = Δ[o, a_j]` when slot `s` is matched to a ground truth with
/// object `o` and `⟨a_j, o⟩` is a seen class; 0 otherwise.
///
/// `column_classes[j]` is the class behind column `j`.
pub fn delta_factor(
    m: &MatchResult,
    gts: &[GtTarget],
    over: &OverMatrix,
    taxonomy: &Taxonomy,
    seen: &[bool],
    column_classes: &[usize],
    n_slots: usize,
) -> Result<Tensor> {
    let w = column_classes.len();
    let lookup = taxonomy.class_lookup();
    let mut data = vec![0.0; n_slots * w];
    for &(s, gt) in &m.pairs {
        let o = gts[gt].object_idx;
        for (j, &c) in column_classes.iter().enumerate() {
            let a = taxonomy.hoi_classes[c].action_idx;
            let pair = crate::dataset_eval::HoiClass {
                action_idx: a,
                object_idx: o,
            };
            if lookup.get(&pair).is_some_and(|&k| seen[k]) {
                data[s * w + j] = over.get(o, a);
            }
        }
    }
    Tensor::new(&[n_slots, w], data)
}

/// `ζ[s, n] = ẑ_n − mean(ẑ⁺)` for negatives of matched slots, 0 elsewhere.
pub fn zeta_factor(probs: &Tensor, targets: &Tensor, m: &MatchResult) -> Result<Tensor> {
    if probs.shape() != targets.shape() {
        return Err(Error::shape("zeta_factor", probs.shape(), targets.shape()));
    }
    let w = probs.cols();
    let mut data = vec![0.0; probs.numel()];
    for &(s, _) in &m.pairs {
        let (mut sum, mut n) = (0.0, 0usize);
        for j in 0..w {
            if targets.at(s, j) > 0.5 {
                sum += probs.at(s, j);
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Data(format!("matched slot {s} has no positive class")));
        }
        let mean = sum / n as f64;
        for j in 0..w {
            if targets.at(s, j) <= 0.5 {
                data[s * w + j] = probs.at(s, j) - mean;
            }
        }
    }
    Tensor::new(probs.shape(), data)
}

/// Largest `f64` below one.
pub const OMEGA_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// `Ω = σ(β·ζ / (2 + δ + ε₂))`, kept inside the open unit interval (σ
/// rounds to exactly 1 beyond x ≈ 37, and β reaches ≈ 64.5).
pub fn omega(beta: f64, delta: f64, zeta: f64, eps2: f64) -> f64 {
    let x = beta * zeta / (2.0 + delta + eps2);
    if x == 0.0 {
        0.5
    } else {
        sigmoid(x).clamp(f64::MIN_POSITIVE, OMEGA_MAX)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrdisFactors {
    pub beta: Vec<f64>,
    pub delta: Tensor,
    pub zeta: Tensor,
    pub omega: Tensor,
}

impl OrdisFactors {
    /// Applies the mask (disabled factors become 0) and evaluates Ω.
    pub fn new(beta: Vec<f64>, delta: Tensor, zeta: Tensor, mask: FactorMask, eps2: f64) -> Result<Self> {
        if delta.shape() != zeta.shape() || delta.rows() != beta.len() {
            return Err(Error::shape("ordis_factors", delta.shape(), zeta.shape()));
        }
        let beta: Vec<f64> = beta.into_iter().map(|b| if mask.beta { b } else { 0.0 }).collect();
        let delta = if mask.delta { delta } else { Tensor::zeros(delta.shape())? };
        let zeta = if mask.zeta { zeta } else { Tensor::zeros(zeta.shape())? };
        let w = delta.cols();
        let om = (0..delta.numel())
            .map(|i| omega(beta[i / w], delta.data()[i], zeta.data()[i], eps2))
            .collect();
        let omega = Tensor::new(delta.shape(), om)?;
        Ok(Self { beta, delta, zeta, omega })
    }
}

/// `Σ Ω·L_f / n_gt`.
pub fn ordis_loss(focal: &Tensor, omega: &Tensor, n_gt: usize) -> Result<f64> {
    if focal.shape() != omega.shape() {
        return Err(Error::shape("ordis_loss", focal.shape(), omega.shape()));
    }
    if n_gt == 0 {
        return Err(Error::Data("loss normalizer needs at least one ground truth".into()));
    }
    let s: f64 = focal.data().iter().zip(omega.data()).map(|(l, w)| l * w).sum();
    Ok(s / n_gt as f64)
}

/// Mean L1 and mean `1 − GIoU` over the human and object boxes of matched pairs.
pub fn box_losses(pred: &[(BBox, BBox)], gt: &[(BBox, BBox)]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::shape("box_losses", &[pred.len()], &[gt.len()]));
    }
    let (mut l1, mut lu) = (0.0, 0.0);
    for ((ph, po), (gh, go)) in pred.iter().zip(gt) {
        l1 += ph.l1(gh) + po.l1(go);
        lu += (1.0 - giou(ph, gh)) + (1.0 - giou(po, go));
    }
    let n = 2.0 * pred.len() as f64;
    Ok((l1 / n, lu / n))
}

/// Sum over rows of GIoU between predicted boxes (a G×4 variable) and
/// constant targets.
fn giou_sum(g: &mut Graph, pred: Var, targets: &[BBox]) -> Result<Var> {
    let n = targets.len();
    let col = |g: &mut Graph, j: usize| g.slice(pred, 1, j, 1);
    let cx = col(g, 0)?;
    let cy = col(g, 1)?;
    let w = col(g, 2)?;
    let h = col(g, 3)?;
    let hw = g.scale(w, 0.5)?;
    let hh = g.scale(h, 0.5)?;
    let px0 = g.sub(cx, hw)?;
    let px1 = g.add(cx, hw)?;
    let py0 = g.sub(cy, hh)?;
    let py1 = g.add(cy, hh)?;
    let corner = |k: usize| -> Result<Tensor> { Tensor::new(&[n, 1], targets.iter().map(|b| b.corners()[k]).collect()) };
    let tx0 = g.constant(corner(0)?);
    let ty0 = g.constant(corner(1)?);
    let tx1 = g.constant(corner(2)?);
    let ty1 = g.constant(corner(3)?);
    let t_area = g.constant(Tensor::new(&[n, 1], targets.iter().map(BBox::area).collect())?);

    let ix1 = g.minimum(px1, tx1)?;
    let ix0 = g.maximum(px0, tx0)?;
    let iw = g.sub(ix1, ix0)?;
    let iw = g.relu(iw)?;
    let iy1 = g.minimum(py1, ty1)?;
    let iy0 = g.maximum(py0, ty0)?;
    let ih = g.sub(iy1, iy0)?;
    let ih = g.relu(ih)?;
    let inter = g.mul(iw, ih)?;
    let p_area = g.mul(w, h)?;
    let union = g.add(p_area, t_area)?;
    let union = g.sub(union, inter)?;
    let iou = g.div(inter, union)?;

    let ex1 = g.maximum(px1, tx1)?;
    let ex0 = g.minimum(px0, tx0)?;
    let ew = g.sub(ex1, ex0)?;
    let ey1 = g.maximum(py1, ty1)?;
    let ey0 = g.minimum(py0, ty0)?;
    let eh = g.sub(ey1, ey0)?;
    let enclosing = g.mul(ew, eh)?;
    let empty = g.sub(enclosing, union)?;
    let frac = g.div(empty, enclosing)?;
    let giou = g.sub(iou, frac)?;
    g.sum_all(giou)
}

/// Batch-wide normalizers, known before any forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalizers {
    pub gt_total: usize,
    /// Σ of object-class weights over every slot of the batch.
    pub obj_weight_total: f64,
}

impl Normalizers {
    pub fn for_batch(gt_counts: &[usize], n_q: usize, no_object_weight: f64) -> Result<Self> {
        let gt_total: usize = gt_counts.iter().sum();
        if gt_total == 0 {
            return Err(Error::Data("batch has no ground truth".into()));
        }
        let obj_weight_total = gt_counts
            .iter()
            .map(|&k| k as f64 + (n_q - k) as f64 * no_object_weight)
            .sum();
        Ok(Self {
            gt_total,
            obj_weight_total,
        })
    }
}

/// Everything about one scene that the loss treats as constant: the
/// assignment, the 0/1 targets and Ω.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneContext {
    pub gts: Vec<GtTarget>,
    pub matching: MatchResult,
    pub targets: Tensor,
    pub factors: OrdisFactors,
}

/// Positive columns of every slot: a matched slot takes the classes of all
/// ground truths sharing its box pair.
pub fn slot_targets(m: &MatchResult, gts: &[GtTarget], n_slots: usize, width: usize) -> Result<Tensor> {
    let mut data = vec![0.0; n_slots * width];
    for &(s, gt) in &m.pairs {
        let me = &gts[gt];
        for other in gts {
            if other.human == me.human && other.object == me.object {
                data[s * width + other.column] = 1.0;
            }
        }
    }
    Tensor::new(&[n_slots, width], data)
}

/// Matching, targets and actuator factors from forward values.
#[allow(clippy::too_many_arguments)]
pub fn scene_context(
    preds: &Predictions,
    gts: Vec<GtTarget>,
    over: &OverMatrix,
    taxonomy: &Taxonomy,
    seen: &[bool],
    column_classes: &[usize],
    weighting: Weighting,
    cfg: &LossConfig,
) -> Result<SceneContext> {
    let n_q = preds.hoi_logits.rows();
    let width = preds.hoi_logits.cols();
    if width != column_classes.len() {
        return Err(Error::shape("scene_context", &[width], &[column_classes.len()]));
    }
    let cost = cost_matrix(preds, &gts, cfg)?;
    let matching = hungarian(&cost)?;
    let targets = slot_targets(&matching, &gts, n_q, width)?;
    let factors = match weighting {
        Weighting::Focal => OrdisFactors {
            beta: vec![0.0; n_q],
            delta: Tensor::zeros(&[n_q, width])?,
            zeta: Tensor::zeros(&[n_q, width])?,
            omega: Tensor::ones(&[n_q, width])?,
        },
        Weighting::Ordis(mask) => {
            let beta = beta_factor(&matching, n_q, cfg.kappa, cfg.eps1);
            let delta = delta_factor(&matching, &gts, over, taxonomy, seen, column_classes, n_q)?;
            let probs = Tensor::new(
                preds.hoi_logits.shape(),
                preds.hoi_logits.data().iter().map(|&x| sigmoid(x)).collect(),
            )?;
            let zeta = zeta_factor(&probs, &targets, &matching)?;
            OrdisFactors::new(beta, delta, zeta, mask, cfg.eps2)?
        }
    };
    Ok(SceneContext {
        gts,
        matching,
        targets,
        factors,
    })
}

/// Loss variables of one scene, already divided by the batch normalizers.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub l_b: Var,
    pub l_u: Var,
    pub l_o: Var,
    pub l_ordis: Var,
}

/// `λ_b·L_b + λ_u·L_u + λ_o·L_o + L_ordis` for one scene.
pub fn scene_loss(
    g: &mut Graph,
    preds: &PredictionVars,
    ctx: &SceneContext,
    norm: &Normalizers,
    n_objects: usize,
    cfg: &LossConfig,
) -> Result<LossVars> {
    let n_q = g.shape(preds.obj_logits)[0];
    let slots: Vec<usize> = ctx.matching.pairs.iter().map(|p| p.0).collect();
    let gts: Vec<&GtTarget> = ctx.matching.pairs.iter().map(|p| &ctx.gts[p.1]).collect();
    let box_norm = 1.0 / (2.0 * norm.gt_total as f64);

    let mut l1_parts = Vec::new();
    let mut giou_parts = Vec::new();
    for (boxes, pick) in [(preds.human_box, 0usize), (preds.object_box, 1)] {
        let sel = g.index_select(boxes, 0, &slots)?;
        let tgt: Vec<BBox> = gts.iter().map(|t| if pick == 0 { t.human } else { t.object }).collect();
        let flat: Vec<f64> = tgt.iter().flat_map(|b| b.to_array()).collect();
        let t = g.constant(Tensor::new(&[tgt.len(), 4], flat)?);
        let d = g.sub(sel, t)?;
        let d = g.elementwise(d, Elementwise::Abs)?;
        l1_parts.push(g.sum_all(d)?);
        giou_parts.push(giou_sum(g, sel, &tgt)?);
    }
    let l1 = g.add(l1_parts[0], l1_parts[1])?;
    let l_b = g.scale(l1, box_norm)?;
    let gs = g.add(giou_parts[0], giou_parts[1])?;
    let neg = g.scale(gs, -box_norm)?;
    let l_u = g.shift(neg, 2.0 * slots.len() as f64 * box_norm)?;

    let logp = g.log_softmax(preds.obj_logits, 1)?;
    let mut weights = vec![0.0; n_q * (n_objects + 1)];
    let by_slot = ctx.matching.gt_per_slot(n_q);
    for (s, m) in by_slot.iter().enumerate() {
        match m {
            Some(gt) => weights[s * (n_objects + 1) + ctx.gts[*gt].object_idx] = 1.0,
            None => weights[s * (n_objects + 1) + n_objects] = cfg.no_object_weight,
        }
    }
    let wt = g.constant(Tensor::new(&[n_q, n_objects + 1], weights)?);
    let picked = g.mul(wt, logp)?;
    let ce = g.sum_all(picked)?;
    let l_o = g.scale(ce, -1.0 / norm.obj_weight_total)?;

    let focal = focal_graph(g, preds.hoi_logits, &ctx.targets, cfg.alpha, cfg.gamma)?;
    let om = g.constant(ctx.factors.omega.clone());
    let weighted = g.mul(om, focal)?;
    let fs = g.sum_all(weighted)?;
    let l_ordis = g.scale(fs, 1.0 / norm.gt_total as f64)?;

    let a = g.scale(l_b, cfg.lambda_b)?;
    let b = g.scale(l_u, cfg.lambda_u)?;
    let c = g.scale(l_o, cfg.lambda_o)?;
    let ab = g.add(a, b)?;
    let abc = g.add(ab, c)?;
    let total = g.add(abc, l_ordis)?;
    Ok(LossVars {
        total,
        l_b,
        l_u,
        l_o,
        l_ordis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_examples() {
        let l = focal_loss(&Tensor::vector(vec![0.0]).unwrap(), &Tensor::vector(vec![1.0]).unwrap(), 0.25, 2.0).unwrap();
        assert!((l.data()[0] - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-15);
        let l = focal_loss(&Tensor::vector(vec![800.0]).unwrap(), &Tensor::vector(vec![1.0]).unwrap(), 0.25, 2.0).unwrap();
        assert_eq!(l.data()[0], 0.0);
        let x = Tensor::vector(vec![0.3, -1.2]).unwrap();
        let t = Tensor::vector(vec![1.0, 0.0]).unwrap();
        let l = focal_loss(&x, &t, 0.5, 0.0).unwrap();
        let bce = [softplus(-0.3), softplus(-1.2)];
        assert!((l.data()[0] - 0.5 * bce[0]).abs() < 1e-15);
        assert!((l.data()[1] - 0.5 * bce[1]).abs() < 1e-15);
    }

    #[test]
    fn beta_examples() {
        assert!((beta_value(1.0, 2.0, 1e-14) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((beta_value(0.0, 2.0, 1e-14) - 28.0 * std::f64::consts::LN_10).abs() < 1e-9);
        assert_eq!(beta_value(-3.0, 2.0, 1e-14), beta_value(0.0, 2.0, 1e-14));
    }

    #[test]
    fn omega_examples() {
        assert_eq!(omega(0.0, 0.3, 1.0, 1e-7), 0.5);
        assert_eq!(omega(2.0, 0.3, 0.0, 1e-7), 0.5);
        assert!((omega(1.0, 0.0, 1.0, 1e-7) - 0.622459).abs() < 1e-6);
        assert!((omega(1.0, 1.0, 1.0, 1e-7) - sigmoid(1.0 / 3.0)).abs() < 1e-7);
    }

    #[test]
    fn zeta_example_and_missing_positive() {
        let p = Tensor::from_rows(&[[0.8, 0.3], [0.1, 0.2]]).unwrap();
        let t = Tensor::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let m = MatchResult {
            pairs: vec![(0, 0)],
            slot_cost: vec![1.0],
            total: 1.0,
        };
        let z = zeta_factor(&p, &t, &m).unwrap();
        assert_eq!(z.at(0, 0), 0.0);
        assert!((z.at(0, 1) + 0.5).abs() < 1e-15);
        assert_eq!(z.at(1, 0), 0.0);
        let m2 = MatchResult {
            pairs: vec![(1, 0)],
            slot_cost: vec![1.0],
            total: 1.0,
        };
        assert!(matches!(zeta_factor(&p, &t, &m2), Err(Error::Data(_))));
    }

    #[test]
    fn perfect_pair_cost_is_minus_two() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let slot = SlotView {
            human: b,
            object: b,
            obj_prob: vec![1.0, 0.0],
            hoi_prob: vec![1.0],
        };
        let gt = GtTarget {
            human: b,
            object: b,
            object_idx: 0,
            column: 0,
        };
        assert_eq!(pair_cost(&slot, &gt, &LossConfig::default()), -2.0);
    }

    #[test]
    fn identical_and_far_boxes() {
        let a = BBox::new(0.5, 0.5, 0.2, 0.2);
        assert_eq!(box_losses(&[(a, a)], &[(a, a)]).unwrap(), (0.0, 0.0));
        let far = BBox::new(1000.0, 1000.0, 1.0, 1.0);
        let u = BBox::new(0.0, 0.0, 1.0, 1.0);
        let (_, lu) = box_losses(&[(u, u)], &[(far, far)]).unwrap();
        assert!((lu - 2.0).abs() < 1e-5);
    }

    #[test]
    fn graph_giou_matches_direct() {
        let p = [BBox::new(0.4, 0.5, 0.3, 0.2), BBox::new(0.1, 0.9, 0.05, 0.1)];
        let t = [BBox::new(0.5, 0.5, 0.25, 0.25), BBox::new(0.6, 0.2, 0.3, 0.3)];
        let mut g = Graph::new();
        let flat: Vec<f64> = p.iter().flat_map(|b| b.to_array()).collect();
        let pv = g.param(Tensor::new(&[2, 4], flat).unwrap());
        let s = giou_sum(&mut g, pv, &t).unwrap();
        let direct = giou(&p[0], &t[0]) + giou(&p[1], &t[1]);
        assert!((g.value(s).item().unwrap() - direct).abs() < 1e-14);
    }
}
