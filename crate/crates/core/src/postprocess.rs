//! Turning proposal heatmaps into boxes, points and scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Point};
use crate::heatmap::Heatmap;
use crate::model::{sigmoid, ProposalSet};

const OTSU_BINS: usize = 256;

/// One decoded head-target instance.
///
/// The gaze map is kept so AUC can be computed offline from dumped predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePrediction {
    pub proposal: usize,
    pub head_box: BBox,
    pub gaze_point: Point,
    pub oof_prob: f64,
    pub confidence: f64,
    pub gaze_map: Heatmap,
}

struct OtsuSplit {
    lo: f64,
    bin_width: f64,
    /// Last bin of the background class.
    last_background: usize,
}

impl OtsuSplit {
    fn bin(&self, v: f64) -> usize {
        (((v - self.lo) / self.bin_width).floor().max(0.0) as usize).min(OTSU_BINS - 1)
    }

    fn threshold(&self) -> f64 {
        self.lo + (self.last_background + 1) as f64 * self.bin_width
    }

    fn is_foreground(&self, v: f64) -> bool {
        self.bin(v) > self.last_background
    }
}

fn otsu_split(map: &Heatmap) -> Result<OtsuSplit> {
    let (lo, hi) = (map.min(), map.max());
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::DegenerateMap("constant or non-finite map"));
    }
    let mut split = OtsuSplit {
        lo,
        bin_width: (hi - lo) / OTSU_BINS as f64,
        last_background: 0,
    };
    let mut hist = [0usize; OTSU_BINS];
    for &v in map.values() {
        hist[split.bin(v)] += 1;
    }
    let total = map.len() as f64;
    let total_sum: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best = f64::NEG_INFINITY;
    for t in 0..OTSU_BINS - 1 {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (total_sum - sum0) / w1;
        let between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if between > best {
            best = between;
            split.last_background = t;
        }
    }
    Ok(split)
}

/// Otsu threshold over a 256-bin histogram spanning `[min, max]` of the map.
///
/// Returns the upper edge of the last background bin; values in higher bins
/// are foreground. A constant map has no threshold.
pub fn otsu_threshold(map: &Heatmap) -> Result<f64> {
    otsu_split(map).map(|s| s.threshold())
}

/// Bounding box of the 8-connected above-threshold component with the largest
/// summed heat, in normalized coordinates. `None` for degenerate maps.
pub fn extract_head_box(head_map: &Heatmap) -> Option<BBox> {
    let split = otsu_split(head_map).ok()?;
    let (w, h) = head_map.size();
    let fg: Vec<bool> = head_map.values().iter().map(|&v| split.is_foreground(v)).collect();
    let mut seen = vec![false; w * h];
    let mut best: Option<(f64, [usize; 4])> = None;
    let mut stack = Vec::new();

    for start in 0..w * h {
        if !fg[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut heat = 0.0;
        let mut ext = [usize::MAX, usize::MAX, 0, 0];
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            heat += head_map.values()[i];
            ext = [ext[0].min(x), ext[1].min(y), ext[2].max(x), ext[3].max(y)];
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if fg[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if best.map_or(true, |(b, _)| heat > b) {
            best = Some((heat, ext));
        }
    }

    best.map(|(_, [x0, y0, x1, y1])| BBox {
        x0: x0 as f64 / w as f64,
        y0: y0 as f64 / h as f64,
        x1: (x1 + 1) as f64 / w as f64,
        y1: (y1 + 1) as f64 / h as f64,
    })
}

/// Pixel center of the first row-major maximum.
pub fn extract_gaze_point(gaze_map: &Heatmap) -> Point {
    let (x, y) = gaze_map.argmax();
    gaze_map.pixel_center(x, y)
}

/// Decodes every proposal that yields a head box.
pub fn to_instances(proposals: &ProposalSet) -> Vec<InstancePrediction> {
    (0..proposals.len())
        .filter_map(|i| {
            let head_map = &proposals.head_maps[i];
            let head_box = extract_head_box(head_map)?;
            Some(InstancePrediction {
                proposal: i,
                head_box,
                gaze_point: extract_gaze_point(&proposals.gaze_maps[i]),
                oof_prob: sigmoid(proposals.oof_logits[i]),
                confidence: head_map.max().clamp(0.0, 1.0),
                gaze_map: proposals.gaze_maps[i].clone(),
            })
        })
        .collect()
}
