//! Optimal one-to-one assignment of proposals to ground-truth instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gtgen::GroundTruthMaps;
use crate::heatmap::Heatmap;
use crate::model::{sigmoid, ProposalSet};

/// Weights of the gaze-map, head-map and out-of-frame terms of the matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub gaze: f64,
    pub head: f64,
    pub oof: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        MatchWeights {
            gaze: 1.0,
            head: 2.5,
            oof: 1.0,
        }
    }
}

impl MatchWeights {
    pub fn scaled(self, k: f64) -> Self {
        MatchWeights {
            gaze: self.gaze * k,
            head: self.head * k,
            oof: self.oof * k,
        }
    }
}

/// Dense row-major cost matrix, rows are proposals and columns ground truths.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(format!("{} costs for a {rows}x{cols} matrix", values.len())));
        }
        Ok(CostMatrix { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged cost matrix"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

/// Matched `(proposal_index, gt_index)` pairs, ordered by ground-truth index.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn empty() -> Self {
        Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
        }
    }

    /// Proposal matched to each ground-truth index.
    pub fn proposal_for_gt(&self, gt: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(_, g)| g == gt).map(|&(p, _)| p)
    }

    pub fn is_matched_proposal(&self, proposal: usize) -> bool {
        self.pairs.iter().any(|&(p, _)| p == proposal)
    }
}

/// Root-mean-square pixel difference: `||a - b||_2 / sqrt(mn)`.
pub fn rms_difference(a: &Heatmap, b: &Heatmap) -> Result<f64> {
    a.check_same(b)?;
    let ss: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Cost of pairing one proposal with one ground-truth instance.
pub fn matching_cost(
    pred_head: &Heatmap,
    pred_gaze: &Heatmap,
    oof_logit: f64,
    gt_head: &Heatmap,
    gt_gaze: &Heatmap,
    gt_oof: bool,
    weights: &MatchWeights,
) -> Result<f64> {
    let o_gt = if gt_oof { 1.0 } else { 0.0 };
    Ok(weights.gaze * rms_difference(pred_gaze, gt_gaze)?
        + weights.head * rms_difference(pred_head, gt_head)?
        + weights.oof * (sigmoid(oof_logit) - o_gt).abs())
}

/// Minimum-cost matching of size `min(rows, cols)`.
///
/// Shortest-augmenting-path Hungarian algorithm with row and column
/// potentials, `O(min^2 * max)`. Columns are scanned in index order and only
/// strict improvements replace the current choice, so ties resolve toward
/// lower indices and the result is deterministic.
pub fn hungarian(cost: &CostMatrix) -> Result<Assignment> {
    if cost.values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN in cost matrix"));
    }
    if cost.values.iter().any(|v| v.is_infinite()) {
        return Err(Error::invalid("infinite entry in cost matrix"));
    }
    if cost.rows == 0 || cost.cols == 0 {
        return Ok(Assignment::empty());
    }
    // The solver assigns every "row" of a rows <= cols problem; ground truths
    // are the short side whenever proposals outnumber them.
    let transpose = cost.cols <= cost.rows;
    let (n, m) = if transpose {
        (cost.cols, cost.rows)
    } else {
        (cost.rows, cost.cols)
    };
    let at = |i: usize, j: usize| if transpose { cost.get(j, i) } else { cost.get(i, j) };

    // 1-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| {
            let (row, col) = (p[j] - 1, j - 1);
            if transpose {
                (col, row)
            } else {
                (row, col)
            }
        })
        .collect();
    pairs.sort_by_key(|&(prop, gt)| (gt, prop));
    let total_cost = pairs.iter().map(|&(r, c)| cost.get(r, c)).sum();
    Ok(Assignment { pairs, total_cost })
}

/// Builds the `N x M` cost matrix for one scene.
pub fn cost_matrix(proposals: &ProposalSet, gts: &GroundTruthMaps, weights: &MatchWeights) -> Result<CostMatrix> {
    let (n, m) = (proposals.len(), gts.len());
    let mut values = Vec::with_capacity(n * m);
    for k in 0..n {
        for g in 0..m {
            values.push(matching_cost(
                &proposals.head_maps[k],
                &proposals.gaze_maps[k],
                proposals.oof_logits[k],
                &gts.head_maps[g],
                &gts.gaze_maps[g],
                gts.oof_labels[g],
                weights,
            )?);
        }
    }
    CostMatrix::new(n, m, values)
}

/// Matches every ground-truth instance to a distinct proposal.
pub fn match_instances(proposals: &ProposalSet, gts: &GroundTruthMaps, weights: &MatchWeights) -> Result<Assignment> {
    if gts.len() > proposals.len() {
        return Err(Error::CapacityExceeded {
            proposals: proposals.len(),
            gts: gts.len(),
        });
    }
    if gts.is_empty() {
        return Ok(Assignment::empty());
    }
    hungarian(&cost_matrix(proposals, gts, weights)?)
}
