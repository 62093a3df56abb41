//! Training objective over matched proposal/ground-truth pairs.
//!
//! `total = λ_h·L_h + λ_g·L_g + λ_c·L_c + λ_o·L_o + λ_det·L_det`, where the
//! map terms are pixel-wise mean squared errors averaged over matched pairs,
//! `L_det` is the mean squared error of the raw detection map and `L_o` is the
//! binary cross-entropy of the out-of-frame flags. Proposals left unmatched are
//! pushed toward `o = 1` and, weighted by `unmatched_head`, toward an empty head
//! map. That second part is folded into `L_h`, summed over unmatched proposals
//! and divided by the instance count `M`. The trainer ramps its weight in from
//! zero (see `TrainConfig::unmatched_ramp`): applied from the first step it
//! drives every head map to zero before any proposal has specialized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gtgen::GroundTruthMaps;
use crate::heatmap::Heatmap;
use crate::matching::Assignment;
use crate::model::{OutputGrads, ProposalSet};

pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub head: f64,
    pub gaze: f64,
    pub connection: f64,
    pub oof: f64,
    pub detection: f64,
    /// Weight of the empty-map target for unmatched head maps inside `L_h`.
    #[serde(default = "default_unmatched")]
    pub unmatched_head: f64,
}

fn default_unmatched() -> f64 {
    0.25
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            head: 1.0,
            gaze: 2.5,
            connection: 1.0,
            oof: 1.0,
            detection: 1.0,
            unmatched_head: default_unmatched(),
        }
    }
}

impl LossWeights {
    pub fn scaled(self, k: f64) -> Self {
        LossWeights {
            head: self.head * k,
            gaze: self.gaze * k,
            connection: self.connection * k,
            oof: self.oof * k,
            detection: self.detection * k,
            unmatched_head: self.unmatched_head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.head,
            self.gaze,
            self.connection,
            self.oof,
            self.detection,
            self.unmatched_head,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Per-term losses and their weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_h: f64,
    pub l_g: f64,
    pub l_c: f64,
    pub l_det: f64,
    pub l_o: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(l_h: f64, l_g: f64, l_c: f64, l_det: f64, l_o: f64, w: &LossWeights) -> Self {
        LossBreakdown {
            l_h,
            l_g,
            l_c,
            l_det,
            l_o,
            total: w.head * l_h + w.gaze * l_g + w.connection * l_c + w.oof * l_o + w.detection * l_det,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_h, self.l_g, self.l_c, self.l_det, self.l_o, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Element-wise mean of several breakdowns, summed in order.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.l_h += b.l_h;
            acc.l_g += b.l_g;
            acc.l_c += b.l_c;
            acc.l_det += b.l_det;
            acc.l_o += b.l_o;
            acc.total += b.total;
        }
        LossBreakdown {
            l_h: acc.l_h / n,
            l_g: acc.l_g / n,
            l_c: acc.l_c / n,
            l_det: acc.l_det / n,
            l_o: acc.l_o / n,
            total: acc.total / n,
        }
    }
}

fn sq_err_sum(a: &Heatmap, b: &Heatmap) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (y - x).powi(2)).sum()
}

/// `(1/M)(1/mn) Σ_k Σ_ij (gt_k - pred_k)^2`; zero when the lists are empty.
pub fn heatmap_mse(preds: &[&Heatmap], gts: &[&Heatmap]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::shape(format!("{} predictions vs {} targets", preds.len(), gts.len())));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        p.check_same(g)?;
        total += sq_err_sum(p, g) / p.len() as f64;
    }
    Ok(total / preds.len() as f64)
}

pub fn detection_mse(pred: &Heatmap, gt: &Heatmap) -> Result<f64> {
    pred.check_same(gt)?;
    Ok(sq_err_sum(pred, gt) / pred.len() as f64)
}

/// Mean binary cross-entropy with probabilities clamped to `[ε, 1-ε]`.
pub fn oof_bce(probs: &[f64], labels: &[bool]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::shape(format!("{} probabilities vs {} labels", probs.len(), labels.len())));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / probs.len() as f64)
}

fn gather<'a>(maps: &'a [Heatmap], idx: &[usize]) -> Vec<&'a Heatmap> {
    idx.iter().map(|&i| &maps[i]).collect()
}

fn check_assignment(proposals: &ProposalSet, gts: &GroundTruthMaps, a: &Assignment) -> Result<()> {
    if a.pairs.len() != gts.len().min(proposals.len()) {
        return Err(Error::invalid(format!(
            "assignment has {} pairs for {} ground truths",
            a.pairs.len(),
            gts.len()
        )));
    }
    let mut seen_p = vec![false; proposals.len()];
    let mut seen_g = vec![false; gts.len()];
    for &(p, g) in &a.pairs {
        if p >= proposals.len() || g >= gts.len() || seen_p[p] || seen_g[g] {
            return Err(Error::invalid(format!("invalid assignment pair ({p}, {g})")));
        }
        seen_p[p] = true;
        seen_g[g] = true;
    }
    Ok(())
}

/// Loss terms for one scene; see the module docs for the composition.
pub fn total_loss(
    proposals: &ProposalSet,
    detection_raw: &Heatmap,
    gts: &GroundTruthMaps,
    assignment: &Assignment,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    Ok(total_loss_with_grad(proposals, detection_raw, gts, assignment, weights)?.0)
}

/// [`total_loss`] plus its gradient with respect to the model outputs.
pub fn total_loss_with_grad(
    proposals: &ProposalSet,
    detection_raw: &Heatmap,
    gts: &GroundTruthMaps,
    assignment: &Assignment,
    weights: &LossWeights,
) -> Result<(LossBreakdown, OutputGrads)> {
    check_assignment(proposals, gts, assignment)?;
    let n = proposals.len();
    let (w, h) = gts.detection_map.size();
    let mut grads = OutputGrads::zeros(n, w, h);
    let m = assignment.pairs.len();

    let matched_props: Vec<usize> = assignment.pairs.iter().map(|&(p, _)| p).collect();
    let matched_gts: Vec<usize> = assignment.pairs.iter().map(|&(_, g)| g).collect();
    let unmatched: Vec<usize> = (0..n).filter(|k| !matched_props.contains(k)).collect();

    let l_h_matched = heatmap_mse(
        &gather(&proposals.head_maps, &matched_props),
        &gather(&gts.head_maps, &matched_gts),
    )?;
    let l_g = heatmap_mse(
        &gather(&proposals.gaze_maps, &matched_props),
        &gather(&gts.gaze_maps, &matched_gts),
    )?;
    let l_c = heatmap_mse(
        &gather(&proposals.connection_maps, &matched_props),
        &gather(&gts.connection_maps, &matched_gts),
    )?;
    let empty = Heatmap::zeros(w, h);
    // Summed over unmatched proposals and normalized by the instance count like
    // the matched term, so every spurious head blob costs as much as a wrong one.
    let per_instance = 1.0 / m.max(1) as f64;
    let l_h_unmatched = if weights.unmatched_head > 0.0 && !unmatched.is_empty() {
        heatmap_mse(
            &gather(&proposals.head_maps, &unmatched),
            &vec![&empty; unmatched.len()],
        )? * unmatched.len() as f64
            * per_instance
    } else {
        0.0
    };
    let l_h = l_h_matched + weights.unmatched_head * l_h_unmatched;
    let l_det = detection_mse(detection_raw, &gts.detection_map)?;

    let mut probs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut flag_props = Vec::with_capacity(n);
    for &(p, g) in &assignment.pairs {
        probs.push(proposals.oof_prob(p));
        labels.push(gts.oof_labels[g]);
        flag_props.push(p);
    }
    for &p in &unmatched {
        probs.push(proposals.oof_prob(p));
        labels.push(true);
        flag_props.push(p);
    }
    let l_o = oof_bce(&probs, &labels)?;
    let breakdown = LossBreakdown::compose(l_h, l_g, l_c, l_det, l_o, weights);

    // d/dpred of (1/M)(1/mn) Σ (gt - pred)^2 is 2 (pred - gt) / (M mn)
    let plane = (w * h) as f64;
    if m > 0 {
        let scale = 2.0 / (m as f64 * plane);
        for &(p, g) in &assignment.pairs {
            for (out, pred, gt, lambda) in [
                (&mut grads.head[p], &proposals.head_maps[p], &gts.head_maps[g], weights.head),
                (&mut grads.gaze[p], &proposals.gaze_maps[p], &gts.gaze_maps[g], weights.gaze),
                (
                    &mut grads.connection[p],
                    &proposals.connection_maps[p],
                    &gts.connection_maps[g],
                    weights.connection,
                ),
            ] {
                for ((o, &x), &t) in out.values_mut().iter_mut().zip(pred.values()).zip(gt.values()) {
                    *o = lambda * scale * (x - t);
                }
            }
        }
    }
    if weights.unmatched_head > 0.0 && !unmatched.is_empty() {
        let scale = weights.head * weights.unmatched_head * 2.0 * per_instance / plane;
        for &p in &unmatched {
            for (o, &x) in grads.head[p].values_mut().iter_mut().zip(proposals.head_maps[p].values()) {
                *o = scale * x;
            }
        }
    }
    let det_scale = weights.detection * 2.0 / plane;
    for ((o, &x), &t) in grads
        .detection_raw
        .values_mut()
        .iter_mut()
        .zip(detection_raw.values())
        .zip(gts.detection_map.values())
    {
        *o = det_scale * (x - t);
    }
    // BCE through the sigmoid: d/dz = (p - y) / M', zero where the clamp is active
    let count = probs.len() as f64;
    for ((&p, &y), &k) in probs.iter().zip(&labels).zip(&flag_props) {
        let clamped = p < BCE_EPS || p > 1.0 - BCE_EPS;
        let y = if y { 1.0 } else { 0.0 };
        grads.oof_logits[k] = if clamped {
            0.0
        } else {
            weights.oof * (p - y) / count
        };
    }
    Ok((breakdown, grads))
}
