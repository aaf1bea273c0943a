//! Forward-only training mathematics: heatmap targets, penalty-reduced focal loss,
//! L1+IoU matching cost and optimal assignment.

use serde::{Deserialize, Serialize};

use crate::detdecode::CenterNetOutput;
use crate::error::{Error, Result};
use crate::types::Segment;

/// Constants used by the trainer. Only the focal and target parameters affect this crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConstants {
    pub focal_alpha: f64,
    pub focal_beta: f64,
    /// Gaussian sigma is `width / sigma_divisor` (in cells).
    pub sigma_divisor: f64,
    pub min_sigma: f64,
    pub match_w_l1: f64,
    pub match_w_iou: f64,
    /// Relative weight of the width regression loss.
    pub width_loss_weight: f64,
    /// DETR: number of segment queries.
    pub max_proposals: usize,
    /// DETR: weight of the background class in the classification loss.
    pub background_class_weight: f64,
}

impl Default for TrainConstants {
    fn default() -> Self {
        TrainConstants {
            focal_alpha: 2.0,
            focal_beta: 4.0,
            sigma_divisor: 6.0,
            min_sigma: 1.0,
            match_w_l1: 5.0,
            match_w_iou: 2.0,
            width_loss_weight: 0.1,
            max_proposals: 64,
            background_class_weight: 3.0,
        }
    }
}

/// Rendered CenterNet regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTargets {
    pub heads: CenterNetOutput,
    /// True where width/offset carry a target.
    pub mask: Vec<bool>,
}

/// Renders heatmap, width and offset targets for ground-truth segments.
///
/// Each segment has center `c = center / stride` in cells. Its Gaussian bump
/// `exp(-(i - floor(c))^2 / (2 sigma^2))` with `sigma = max(min_sigma, width / (divisor * stride))`
/// peaks at exactly 1.0 on the cell `floor(c)`, which also carries the width (in cells) and the
/// offset `c - floor(c)`. Overlapping bumps combine by max. When two segments share a cell the
/// first one keeps it.
pub fn render_targets(
    video_id: &str,
    gt: &[Segment],
    len: usize,
    stride: f64,
    consts: &TrainConstants,
) -> Result<RenderedTargets> {
    if len == 0 {
        return Err(Error::arg("target length must be >= 1"));
    }
    if !(stride.is_finite() && stride > 0.0) {
        return Err(Error::arg(format!("stride must be positive, got {stride}")));
    }
    let mut heatmap = vec![0.0f64; len];
    let mut widths = vec![0.0f64; len];
    let mut offsets = vec![0.0f64; len];
    let mut mask = vec![false; len];
    for seg in gt {
        let c = seg.center() / stride;
        if !(0.0..len as f64).contains(&c) {
            return Err(Error::InvalidSegment {
                start: seg.start(),
                end: seg.end(),
                reason: "center outside the target range",
            });
        }
        let cell = c.floor();
        let width = seg.length() / stride;
        let sigma = consts.min_sigma.max(width / consts.sigma_divisor);
        for (i, h) in heatmap.iter_mut().enumerate() {
            let d = i as f64 - cell;
            *h = h.max((-(d * d) / (2.0 * sigma * sigma)).exp());
        }
        let k = cell as usize;
        if !mask[k] {
            mask[k] = true;
            widths[k] = width;
            offsets[k] = c - cell;
        }
    }
    Ok(RenderedTargets {
        heads: CenterNetOutput::new(video_id, stride, heatmap, widths, offsets)?,
        mask,
    })
}

/// Penalty-reduced focal loss over a heatmap.
///
/// Positions with target exactly 1 contribute `(1-p)^alpha * -ln p`; all others contribute
/// `(1-y)^beta * p^alpha * -ln(1-p)`. The sum is divided by the number of positives (at least 1).
pub fn focal_loss(pred: &[f64], target: &[f64], alpha: f64, beta: f64) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::DimMismatch { expected: target.len(), got: pred.len() });
    }
    let mut total = 0.0;
    let mut positives = 0usize;
    for (&p, &y) in pred.iter().zip(target) {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::arg(format!("prediction {p} not in (0, 1)")));
        }
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::arg(format!("target {y} not in [0, 1]")));
        }
        if y == 1.0 {
            positives += 1;
            total += (1.0 - p).powf(alpha) * -p.ln();
        } else {
            total += (1.0 - y).powf(beta) * p.powf(alpha) * -(1.0 - p).ln();
        }
    }
    Ok(total / positives.max(1) as f64)
}

fn span(center: f64, width: f64) -> Result<Segment> {
    if !(width > 0.0) {
        return Err(Error::arg(format!("width must be positive, got {width}")));
    }
    Segment::new(center - 0.5 * width, center + 0.5 * width)
}

/// `w_l1 * (|dc| + |dw|) + w_iou * (1 - IoU)` between two (center, width) segments.
pub fn match_cost(pred: (f64, f64), gt: (f64, f64), w_l1: f64, w_iou: f64) -> Result<f64> {
    let a = span(pred.0, pred.1)?;
    let b = span(gt.0, gt.1)?;
    let l1 = (pred.0 - gt.0).abs() + (pred.1 - gt.1).abs();
    Ok(w_l1 * l1 + w_iou * (1.0 - a.iou(&b)))
}

/// Dense row-major cost matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::arg("cost matrix must be at least 1x1"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimMismatch { expected: rows * cols, got: data.len() });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("cost[{}][{}]", i / cols, i % cols)));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::arg("ragged cost matrix"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Pairwise matching costs between predicted and ground-truth (center, width) pairs.
    pub fn matching(preds: &[(f64, f64)], gts: &[(f64, f64)], w_l1: f64, w_iou: f64) -> Result<Self> {
        let mut data = Vec::with_capacity(preds.len() * gts.len());
        for &p in preds {
            for &g in gts {
                data.push(match_cost(p, g, w_l1, w_iou)?);
            }
        }
        Self::new(preds.len(), gts.len(), data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// (row, col) pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

/// Minimum-cost assignment of size `min(rows, cols)`.
///
/// Among all optimal assignments the lexicographically smallest list of (row, col) pairs
/// is returned.
pub fn hungarian(costs: &CostMatrix) -> Assignment {
    let n = costs.rows.max(costs.cols);
    let cost = |i: usize, j: usize| -> f64 {
        if i < costs.rows && j < costs.cols {
            costs.get(i, j)
        } else {
            0.0
        }
    };

    // Shortest augmenting path with potentials, 1-based with a virtual column 0.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of = vec![0usize; n];
    let mut row_for = vec![0usize; n];
    for j in 1..=n {
        col_of[row_of[j] - 1] = j - 1;
        row_for[j - 1] = row_of[j] - 1;
    }
    let optimum: f64 = (0..n).map(|i| cost(i, col_of[i])).sum();

    // Every optimal assignment uses only zero-reduced-cost edges under optimal duals, so the
    // lexicographically smallest one is a greedy choice over that subgraph.
    let scale = costs.data.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-9 * scale;
    let tight = |i: usize, j: usize| cost(i, j) - u[i + 1] - v[j + 1] <= tol;
    let mut lex_col = col_of.clone();
    let mut lex_row = row_for.clone();
    let mut locked_row = vec![false; n];
    let mut locked_col = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            if locked_col[j] || !tight(i, j) {
                continue;
            }
            if lex_col[i] == j || reroute(i, j, &mut lex_col, &mut lex_row, &locked_row, &locked_col, &tight) {
                locked_row[i] = true;
                locked_col[j] = true;
                break;
            }
        }
        debug_assert!(locked_row[i]);
    }
    let lex_total: f64 = (0..n).map(|i| cost(i, lex_col[i])).sum();
    let chosen = if locked_row.iter().all(|&b| b) && lex_total <= optimum + tol * n as f64 {
        lex_col
    } else {
        col_of
    };

    let pairs: Vec<(usize, usize)> = chosen
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < costs.rows && j < costs.cols)
        .map(|(i, &j)| (i, j))
        .collect();
    let total = pairs.iter().map(|&(i, j)| costs.get(i, j)).sum();
    Assignment { pairs, total }
}

/// Tries to rematch so that row `i` takes column `j`, keeping locked pairs and using only
/// tight edges. On success the matching is updated in place.
fn reroute(
    i: usize,
    j: usize,
    col_of: &mut [usize],
    row_for: &mut [usize],
    locked_row: &[bool],
    locked_col: &[bool],
    tight: &impl Fn(usize, usize) -> bool,
) -> bool {
    let n = col_of.len();
    let freed_col = col_of[i];
    let start_row = row_for[j];
    // Alternating path from start_row to freed_col avoiding row i and column j.
    let mut prev_row_of_col = vec![usize::MAX; n];
    let mut visited_col = vec![false; n];
    let mut stack = vec![start_row];
    let mut found = false;
    'search: while let Some(r) = stack.pop() {
        for c in 0..n {
            if visited_col[c] || c == j || locked_col[c] || !tight(r, c) {
                continue;
            }
            visited_col[c] = true;
            prev_row_of_col[c] = r;
            if c == freed_col {
                found = true;
                break 'search;
            }
            let next = row_for[c];
            if next != i && !locked_row[next] {
                stack.push(next);
            }
        }
    }
    if !found {
        return false;
    }
    let mut c = freed_col;
    loop {
        let r = prev_row_of_col[c];
        let old = col_of[r];
        col_of[r] = c;
        row_for[c] = r;
        if r == start_row {
            break;
        }
        c = old;
    }
    col_of[i] = j;
    row_for[j] = i;
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_target() {
        let seg = Segment::new(4.0, 8.0).unwrap();
        let t = render_targets("v", &[seg], 16, 1.0, &TrainConstants::default()).unwrap();
        let h = &t.heads;
        assert_eq!(h.heatmap[6], 1.0);
        assert_eq!(h.widths[6], 4.0);
        assert_eq!(h.offsets[6], 0.0);
        assert!(t.mask[6]);
        assert_eq!(t.mask.iter().filter(|&&m| m).count(), 1);
        // sigma = max(1, 4/6) = 1
        assert!((h.heatmap[7] - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn fractional_center_offset() {
        let seg = Segment::new(4.4, 8.4).unwrap();
        let t = render_targets("v", &[seg], 16, 1.0, &TrainConstants::default()).unwrap();
        assert!((t.heads.offsets[6] - 0.4).abs() < 1e-12);
        assert_eq!(t.heads.heatmap[6], 1.0);
    }

    #[test]
    fn empty_and_out_of_range() {
        let t = render_targets("v", &[], 8, 1.0, &TrainConstants::default()).unwrap();
        assert!(t.heads.heatmap.iter().all(|&x| x == 0.0));
        let far = Segment::new(20.0, 30.0).unwrap();
        assert!(render_targets("v", &[far], 8, 1.0, &TrainConstants::default()).is_err());
    }

    #[test]
    fn focal_values() {
        let l = focal_loss(&[0.5], &[1.0], 2.0, 4.0).unwrap();
        assert!((l - 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 0.17329).abs() < 1e-5);
        let l = focal_loss(&[0.5], &[0.0], 2.0, 4.0).unwrap();
        assert!((l - 0.17329).abs() < 1e-5);
        let pred = [1e-9, 1.0 - 1e-9, 1e-9];
        let target = [0.0, 1.0, 0.0];
        assert!(focal_loss(&pred, &target, 2.0, 4.0).unwrap() < 1e-6);
        assert!(focal_loss(&[1.0], &[1.0], 2.0, 4.0).is_err());
        assert!(focal_loss(&[0.5, 0.5], &[1.0], 2.0, 4.0).is_err());
    }

    #[test]
    fn match_cost_cases() {
        assert_eq!(match_cost((0.3, 0.1), (0.3, 0.1), 5.0, 2.0).unwrap(), 0.0);
        let c = match_cost((0.5, 0.2), (0.55, 0.2), 5.0, 2.0).unwrap();
        assert!((c - 1.05).abs() < 1e-12);
        let c = match_cost((0.1, 0.1), (0.8, 0.1), 5.0, 2.0).unwrap();
        assert!((c - (5.0 * 0.7 + 2.0)).abs() < 1e-12);
        assert!(match_cost((0.1, 0.0), (0.8, 0.1), 5.0, 2.0).is_err());
    }

    #[test]
    fn hungarian_small() {
        let m = CostMatrix::from_rows(&[vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]).unwrap();
        let a = hungarian(&m);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(a.total, 0.0);
        let one = CostMatrix::from_rows(&[vec![3.5]]).unwrap();
        assert_eq!(hungarian(&one), Assignment { pairs: vec![(0, 0)], total: 3.5 });
        assert!(CostMatrix::from_rows(&[vec![f64::NAN]]).is_err());
    }

    #[test]
    fn hungarian_lexicographic_ties() {
        let all_zero = CostMatrix::new(3, 3, vec![0.0; 9]).unwrap();
        assert_eq!(hungarian(&all_zero).pairs, vec![(0, 0), (1, 1), (2, 2)]);
        let wide = CostMatrix::new(2, 4, vec![1.0; 8]).unwrap();
        assert_eq!(hungarian(&wide).pairs, vec![(0, 0), (1, 1)]);
        let tall = CostMatrix::new(4, 2, vec![1.0; 8]).unwrap();
        assert_eq!(hungarian(&tall).pairs, vec![(0, 0), (1, 1)]);
    }

    fn brute_force(m: &CostMatrix) -> (f64, Vec<(usize, usize)>) {
        // Enumerate every injective map from the smaller side into the larger.
        let transpose = m.rows > m.cols;
        let (small, large) = if transpose { (m.cols, m.rows) } else { (m.rows, m.cols) };
        let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
        let mut chosen = Vec::with_capacity(small);
        let mut used = vec![false; large];
        fn rec(
            m: &CostMatrix,
            transpose: bool,
            small: usize,
            large: usize,
            chosen: &mut Vec<usize>,
            used: &mut [bool],
            best: &mut Option<(f64, Vec<(usize, usize)>)>,
        ) {
            if chosen.len() == small {
                let mut pairs: Vec<(usize, usize)> = chosen
                    .iter()
                    .enumerate()
                    .map(|(s, &l)| if transpose { (l, s) } else { (s, l) })
                    .collect();
                pairs.sort();
                let total: f64 = pairs.iter().map(|&(r, c)| m.get(r, c)).sum();
                let better = match best {
                    None => true,
                    Some((bt, bp)) => total < *bt || (total == *bt && pairs < *bp),
                };
                if better {
                    *best = Some((total, pairs));
                }
                return;
            }
            for l in 0..large {
                if !used[l] {
                    used[l] = true;
                    chosen.push(l);
                    rec(m, transpose, small, large, chosen, used, best);
                    chosen.pop();
                    used[l] = false;
                }
            }
        }
        rec(m, transpose, small, large, &mut chosen, &mut used, &mut best);
        best.unwrap()
    }

    proptest! {
        #[test]
        fn matches_brute_force_with_ties(n in 1usize..6, m in 1usize..6, vals in proptest::collection::vec(0u8..4, 36)) {
            let data: Vec<f64> = vals[..n * m].iter().map(|&x| x as f64).collect();
            let cm = CostMatrix::new(n, m, data).unwrap();
            let (total, pairs) = brute_force(&cm);
            let a = hungarian(&cm);
            prop_assert_eq!(a.total, total);
            prop_assert_eq!(a.pairs, pairs);
        }

        #[test]
        fn row_shift_invariance(n in 1usize..6, vals in proptest::collection::vec(-10.0f64..10.0, 25), row in 0usize..5, shift in -20i32..20) {
            let data: Vec<f64> = vals[..n * n].to_vec();
            let base = hungarian(&CostMatrix::new(n, n, data.clone()).unwrap());
            let r = row % n;
            let mut shifted = data;
            for c in 0..n {
                shifted[r * n + c] += shift as f64;
            }
            let moved = hungarian(&CostMatrix::new(n, n, shifted).unwrap());
            prop_assert!((moved.total - (base.total + shift as f64)).abs() < 1e-9);
        }

        #[test]
        fn match_cost_symmetric(c1 in 0.0f64..1.0, w1 in 0.01f64..1.0, c2 in 0.0f64..1.0, w2 in 0.01f64..1.0) {
            let ab = match_cost((c1, w1), (c2, w2), 5.0, 2.0).unwrap();
            let ba = match_cost((c2, w2), (c1, w1), 5.0, 2.0).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert_eq!(match_cost((c1, w1), (c1, w1), 5.0, 2.0).unwrap(), 0.0);
        }

        #[test]
        fn focal_nonnegative(p in proptest::collection::vec(0.001f64..0.999, 1..20), y in proptest::collection::vec(0.0f64..=1.0, 20)) {
            let loss = focal_loss(&p, &y[..p.len()], 2.0, 4.0).unwrap();
            prop_assert!(loss >= 0.0);
        }
    }
}
