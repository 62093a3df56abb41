//! Evaluation: gaze AUC, gaze distances, instance mAP and out-of-frame AP.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::EvalInstance;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::heatmap::Heatmap;
use crate::postprocess::InstancePrediction;

/// Box IOU a prediction needs to count as the same head.
pub const IOU_THRESHOLD: f64 = 0.5;
/// Normalized gaze distance below which an in-frame prediction is correct.
pub const DISTANCE_THRESHOLD: f64 = 0.15;

/// ROC AUC of the map as a per-pixel score against a binary grid marking the
/// quantized ground-truth points (dilated by `gt_radius` pixels).
///
/// Uses the Mann-Whitney statistic with average ranks, so ties count one half.
pub fn auc_score(gaze_map: &Heatmap, gt_points: &[Point], gt_radius: usize) -> Result<f64> {
    let (w, h) = gaze_map.size();
    let mut positive = vec![false; w * h];
    let r = gt_radius as i64;
    let mut any = false;
    for p in gt_points.iter().filter(|p| p.in_unit_square()) {
        any = true;
        let (px, py) = gaze_map.pixel_of(p);
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (px as i64 + dx, py as i64 + dy);
                if dx * dx + dy * dy <= r * r && (0..w as i64).contains(&x) && (0..h as i64).contains(&y) {
                    positive[y as usize * w + x as usize] = true;
                }
            }
        }
    }
    if !any {
        return Err(Error::Skip("no in-frame gaze point"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_neg == 0 {
        return Err(Error::Skip("every pixel is positive"));
    }
    let values = gaze_map.values();
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN in gaze map"));
    }

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tied block i..=j shares their mean.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += rank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean and minimum distance from the prediction to the annotated points.
pub fn gaze_distances(pred_point: Point, gt_points: &[Point]) -> Result<(f64, f64)> {
    if gt_points.is_empty() {
        return Err(Error::Skip("no ground-truth gaze point"));
    }
    let d: Vec<f64> = gt_points.iter().map(|g| pred_point.distance(g)).collect();
    let avg = d.iter().sum::<f64>() / d.len() as f64;
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((avg, min))
}

/// Area under the stepwise precision-recall curve of a ranked list, where
/// `hits[k]` says whether the k-th ranked item is a true positive.
fn average_precision(hits: &[bool], num_positives: usize) -> f64 {
    if num_positives == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // Precision envelope: best precision at this or any deeper rank.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    hits.iter()
        .zip(&precision)
        .filter(|(&hit, _)| hit)
        .fold(0.0, |acc, (_, &p)| acc + p)
        / num_positives as f64
}

/// Indices sorted by descending score; equal scores keep their input order.
fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Average precision of out-of-frame probabilities against labels.
pub fn oof_ap(probs: &[f64], labels: &[bool]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::shape(format!("{} probabilities, {} labels", probs.len(), labels.len())));
    }
    if probs.is_empty() {
        return Err(Error::invalid("no out-of-frame predictions"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Skip("no out-of-frame instances"));
    }
    let hits: Vec<bool> = rank_descending(probs).into_iter().map(|i| labels[i]).collect();
    Ok(average_precision(&hits, positives))
}

/// Untaken ground truth with the highest box IOU among those `accept` admits;
/// ties go to the lower index.
fn best_overlap(
    pred: &InstancePrediction,
    gts: &[EvalInstance],
    taken: &[bool],
    accept: impl Fn(&EvalInstance) -> bool,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (g, gt) in gts.iter().enumerate() {
        if taken[g] || !accept(gt) {
            continue;
        }
        let iou = pred.head_box.iou(&gt.head_box);
        if best.map_or(true, |(_, b)| iou > b) {
            best = Some((g, iou));
        }
    }
    best.map(|(g, _)| g)
}

fn is_true_positive(pred: &InstancePrediction, gt: &EvalInstance) -> bool {
    if pred.head_box.iou(&gt.head_box) <= IOU_THRESHOLD {
        return false;
    }
    if gt.out_of_frame {
        return true;
    }
    gt.gaze_points
        .iter()
        .any(|g| pred.gaze_point.distance(g) < DISTANCE_THRESHOLD)
}

/// Head-target instance AP over a dataset.
///
/// Predictions from all scenes are ranked by confidence (stable in scene, then
/// within-scene order). Each is matched to the unmatched ground truth of its
/// scene that it satisfies with the highest IOU: box IOU above 0.5 and, for
/// in-frame targets, a gaze point within 0.15 of some annotation.
pub fn instance_map(preds: &[Vec<InstancePrediction>], gts: &[Vec<EvalInstance>]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::shape(format!("{} prediction scenes, {} ground-truth scenes", preds.len(), gts.len())));
    }
    let num_gt: usize = gts.iter().map(Vec::len).sum();
    if num_gt == 0 {
        return Err(Error::Skip("no ground-truth instances"));
    }
    let flat: Vec<(usize, &InstancePrediction)> = preds
        .iter()
        .enumerate()
        .flat_map(|(s, ps)| ps.iter().map(move |p| (s, p)))
        .collect();
    let confidences: Vec<f64> = flat.iter().map(|(_, p)| p.confidence).collect();
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut hits = Vec::with_capacity(flat.len());
    for i in rank_descending(&confidences) {
        let (scene, pred) = flat[i];
        let best = best_overlap(pred, &gts[scene], &taken[scene], |gt| is_true_positive(pred, gt));
        if let Some(g) = best {
            taken[scene][g] = true;
        }
        hits.push(best.is_some());
    }
    Ok(average_precision(&hits, num_gt))
}

/// Predictions and ground truth of one scene; the unit of the prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePredictions {
    pub scene_id: String,
    pub predictions: Vec<InstancePrediction>,
    pub ground_truth: Vec<EvalInstance>,
}

/// Pairs predictions with ground truths for AUC, distance and out-of-frame AP.
///
/// Predictions are visited by descending confidence (stable), and each takes
/// the unpaired ground truth it overlaps most; predictions without overlap stay
/// unpaired. Returns `(prediction, ground_truth)` pairs.
pub fn pair_by_iou(preds: &[InstancePrediction], gts: &[EvalInstance]) -> Vec<(usize, usize)> {
    let confidences: Vec<f64> = preds.iter().map(|p| p.confidence).collect();
    let mut taken = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for p in rank_descending(&confidences) {
        let pred = &preds[p];
        if let Some(g) = best_overlap(pred, gts, &taken, |gt| pred.head_box.iou(&gt.head_box) > 0.0) {
            taken[g] = true;
            pairs.push((p, g));
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub scenes: usize,
    pub gt_instances: usize,
    pub gt_out_of_frame: usize,
    pub predictions: usize,
    /// Ground truths paired with a prediction for AUC, distance and AP.
    pub paired: usize,
    /// Paired in-frame instances contributing to AUC and distances.
    pub paired_in_frame: usize,
}

/// Dataset-level metrics. Entries are `None` when nothing could be scored,
/// e.g. AP without any out-of-frame instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: Option<f64>,
    pub avg_dist: Option<f64>,
    pub min_dist: Option<f64>,
    pub map_instance: Option<f64>,
    pub oof_ap: Option<f64>,
    pub counts: MetricCounts,
}

/// Evaluation options.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub auc_gt_radius: usize,
}

/// Scores a dataset. Scenes are processed in the given order and every sum is
/// accumulated sequentially, so the report is reproducible bit for bit.
pub fn evaluate_scenes(scenes: &[ScenePredictions], options: &MetricOptions) -> Result<MetricReport> {
    if scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts = MetricCounts {
        scenes: scenes.len(),
        ..MetricCounts::default()
    };
    let (mut auc_sum, mut avg_sum, mut min_sum) = (0.0, 0.0, 0.0);
    let (mut probs, mut labels) = (Vec::new(), Vec::new());

    for scene in scenes {
        counts.gt_instances += scene.ground_truth.len();
        counts.gt_out_of_frame += scene.ground_truth.iter().filter(|g| g.out_of_frame).count();
        counts.predictions += scene.predictions.len();
        for (p, g) in pair_by_iou(&scene.predictions, &scene.ground_truth) {
            let (pred, gt) = (&scene.predictions[p], &scene.ground_truth[g]);
            counts.paired += 1;
            probs.push(pred.oof_prob);
            labels.push(gt.out_of_frame);
            if gt.out_of_frame {
                continue;
            }
            let (avg, min) = gaze_distances(pred.gaze_point, &gt.gaze_points)?;
            auc_sum += auc_score(&pred.gaze_map, &gt.gaze_points, options.auc_gt_radius)?;
            avg_sum += avg;
            min_sum += min;
            counts.paired_in_frame += 1;
        }
    }

    let mean = |sum: f64| (counts.paired_in_frame > 0).then(|| sum / counts.paired_in_frame as f64);
    let preds: Vec<Vec<InstancePrediction>> = scenes.iter().map(|s| s.predictions.clone()).collect();
    let gts: Vec<Vec<EvalInstance>> = scenes.iter().map(|s| s.ground_truth.clone()).collect();
    let map_instance = skip_to_none(instance_map(&preds, &gts))?;
    let oof = if probs.is_empty() {
        None
    } else {
        skip_to_none(oof_ap(&probs, &labels))?
    };
    Ok(MetricReport {
        auc: mean(auc_sum),
        avg_dist: mean(avg_sum),
        min_dist: mean(min_sum),
        map_instance,
        oof_ap: oof,
        counts,
    })
}

fn skip_to_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Skip(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        writeln!(f, "{:>8} {:>10} {:>10} {:>8} {:>8}", "AUC", "Avg. Dist.", "Min. Dist.", "AP", "mAP")?;
        writeln!(
            f,
            "{:>8} {:>10} {:>10} {:>8} {:>8}",
            cell(self.auc),
            cell(self.avg_dist),
            cell(self.min_dist),
            cell(self.oof_ap),
            cell(self.map_instance)
        )?;
        write!(
            f,
            "scenes {}, instances {} ({} out of frame), predictions {}, paired {}",
            self.counts.scenes,
            self.counts.gt_instances,
            self.counts.gt_out_of_frame,
            self.counts.predictions,
            self.counts.paired
        )
    }
}

/// Oracle predictions built from the ground truth itself: exact boxes, the
/// first annotated gaze point, and a gaze map peaking only at that point.
pub fn oracle_predictions(gts: &[EvalInstance], heatmap_size: usize) -> Vec<InstancePrediction> {
    gts.iter()
        .enumerate()
        .map(|(i, gt)| {
            let m = heatmap_size;
            let mut gaze_map = Heatmap::zeros(m, m);
            let gaze_point = match gt.gaze_points.first() {
                Some(&g) => {
                    let (x, y) = gaze_map.pixel_of(&g);
                    gaze_map.set(x, y, 1.0);
                    g
                }
                None => Point::new(0.5, 0.5),
            };
            InstancePrediction {
                proposal: i,
                head_box: gt.head_box,
                gaze_point,
                oof_prob: if gt.out_of_frame { 1.0 } else { 0.0 },
                confidence: 1.0,
                gaze_map,
            }
        })
        .collect()
}
