//! Axis-aligned boxes, non-maximum suppression and minimum-cost bipartite
//! assignment.
//!
//! Boxes use corner form `(x_min, y_min, x_max, y_max)` in continuous pixel
//! coordinates with `area = (x_max - x_min) * (y_max - y_min)`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box coordinates must be finite, got {0:?}")]
    NonFinite([f64; 4]),
    #[error("box must have positive area, got {0:?}")]
    Degenerate([f64; 4]),
    #[error("detection score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("cost matrix is ragged: row {row} has {len} columns, expected {expected}")]
    RaggedCost { row: usize, len: usize, expected: usize },
    #[error("cost matrix entry ({row}, {col}) is not finite")]
    NonFiniteCost { row: usize, col: usize },
    #[error("assignment pair ({row}, {col}) out of range for {n_pred} predictions / {n_target} targets")]
    AssignmentOutOfRange {
        row: usize,
        col: usize,
        n_pred: usize,
        n_target: usize,
    },
}

/// An axis-aligned box with strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Box2D {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl Box2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite(coords));
        }
        if x_max <= x_min || y_max <= y_min {
            return Err(GeometryError::Degenerate(coords));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn from_array(coords: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new(coords[0], coords[1], coords[2], coords[3])
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// True when the box lies inside `[0, width] x [0, height]`.
    pub fn within_frame(&self, width: f64, height: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width && self.y_max <= height
    }

    /// Clip to `[0, width] x [0, height]`; `None` if nothing with positive area remains.
    pub fn clip_to_frame(&self, width: f64, height: f64) -> Option<Box2D> {
        Box2D::new(
            self.x_min.clamp(0.0, width),
            self.y_min.clamp(0.0, height),
            self.x_max.clamp(0.0, width),
            self.y_max.clamp(0.0, height),
        )
        .ok()
    }
}

impl TryFrom<[f64; 4]> for Box2D {
    type Error = GeometryError;

    fn try_from(value: [f64; 4]) -> Result<Self, Self::Error> {
        Box2D::from_array(value)
    }
}

impl From<Box2D> for [f64; 4] {
    fn from(b: Box2D) -> Self {
        b.to_array()
    }
}

fn intersection_area(a: &Box2D, b: &Box2D) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    iw * ih
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &Box2D, b: &Box2D) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU: `iou - (hull - union) / hull`, in `(-1, 1]`.
pub fn giou(a: &Box2D, b: &Box2D) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let hull = (a.x_max.max(b.x_max) - a.x_min.min(b.x_min))
        * (a.y_max.max(b.y_max) - a.y_min.min(b.y_min));
    inter / union - (hull - union) / hull
}

/// A class-labelled, confidence-scored box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredDetection {
    #[serde(rename = "box")]
    pub bbox: Box2D,
    pub category_id: u32,
    score: f64,
}

impl ScoredDetection {
    pub fn new(bbox: Box2D, category_id: u32, score: f64) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(GeometryError::ScoreOutOfRange(score));
        }
        Ok(Self {
            bbox,
            category_id,
            score,
        })
    }

    pub fn score(&self) -> f64 {
        self.score
    }
}

/// Indices of `scores` ordered by descending score, ties by lower index.
pub(crate) fn descending_order(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    order
}

pub const DEFAULT_NMS_IOU: f64 = 0.5;
pub const DEFAULT_CONFIDENCE: f64 = 0.3;

/// Class-wise greedy non-maximum suppression.
///
/// Detections scoring below `confidence_threshold` are dropped first. The
/// survivors are visited by descending score (lower input index first on
/// ties) and a detection is suppressed when a kept detection of the same
/// class overlaps it with IoU `>= iou_threshold`. Output is in visiting order.
pub fn nms(
    dets: &[ScoredDetection],
    iou_threshold: f64,
    confidence_threshold: f64,
) -> Vec<ScoredDetection> {
    let order = descending_order(dets.iter().map(|d| d.score));
    let mut kept: Vec<ScoredDetection> = Vec::new();
    for idx in order {
        let cand = &dets[idx];
        if cand.score < confidence_threshold {
            continue;
        }
        let suppressed = kept
            .iter()
            .any(|k| k.category_id == cand.category_id && iou(&k.bbox, &cand.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(*cand);
        }
    }
    kept
}

/// A one-to-one assignment between rows and columns of a cost matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// `(row, column)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Minimum-cost assignment of size `min(n_rows, n_cols)`.
///
/// Shortest augmenting path Hungarian method with row/column potentials,
/// `O(n^2 m)` for `n <= m`. Wide and tall matrices are both accepted; a tall
/// matrix is solved on its transpose.
pub fn hungarian_match(cost: &[Vec<f64>]) -> Result<Assignment, GeometryError> {
    let n_rows = cost.len();
    let n_cols = cost.first().map_or(0, Vec::len);
    for (row, r) in cost.iter().enumerate() {
        if r.len() != n_cols {
            return Err(GeometryError::RaggedCost {
                row,
                len: r.len(),
                expected: n_cols,
            });
        }
        if let Some(col) = r.iter().position(|c| !c.is_finite()) {
            return Err(GeometryError::NonFiniteCost { row, col });
        }
    }
    if n_rows == 0 || n_cols == 0 {
        return Ok(Assignment::default());
    }

    let transposed = n_rows > n_cols;
    let (n, m) = if transposed {
        (n_cols, n_rows)
    } else {
        (n_rows, n_cols)
    };
    let at = |i: usize, j: usize| if transposed { cost[j][i] } else { cost[i][j] };

    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = at(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_slack[j] {
                    min_slack[j] = reduced;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| {
            let (r, c) = (owner[j] - 1, j - 1);
            if transposed {
                (c, r)
            } else {
                (r, c)
            }
        })
        .collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
    Ok(Assignment { pairs, total_cost })
}

/// Weights for the L1 + GIoU box regression loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxLossWeights {
    pub l1: f64,
    pub giou: f64,
}

impl Default for BoxLossWeights {
    fn default() -> Self {
        Self { l1: 1.0, giou: 1.0 }
    }
}

/// Box regression loss value with its gradient w.r.t. every predicted box
/// (rows for unmatched predictions are zero).
#[derive(Debug, Clone, PartialEq)]
pub struct BoxLoss {
    pub loss: f64,
    pub grad: Vec<[f64; 4]>,
}

/// Gradient of `giou(p, t)` with respect to the coordinates of `p`.
///
/// Ties between coordinates take the subgradient that treats the predicted
/// box as not being the active bound.
pub fn giou_grad(p: &Box2D, t: &Box2D) -> [f64; 4] {
    let (pw, ph) = (p.width(), p.height());
    let d_area_p = [-ph, -pw, ph, pw];

    let iw_raw = p.x_max.min(t.x_max) - p.x_min.max(t.x_min);
    let ih_raw = p.y_max.min(t.y_max) - p.y_min.max(t.y_min);
    let (iw, ih) = (iw_raw.max(0.0), ih_raw.max(0.0));
    let inter = iw * ih;
    let mut d_inter = [0.0; 4];
    if iw_raw > 0.0 && ih_raw > 0.0 {
        if p.x_min > t.x_min {
            d_inter[0] = -ih;
        }
        if p.y_min > t.y_min {
            d_inter[1] = -iw;
        }
        if p.x_max < t.x_max {
            d_inter[2] = ih;
        }
        if p.y_max < t.y_max {
            d_inter[3] = iw;
        }
    }

    let cw = p.x_max.max(t.x_max) - p.x_min.min(t.x_min);
    let ch = p.y_max.max(t.y_max) - p.y_min.min(t.y_min);
    let hull = cw * ch;
    let mut d_hull = [0.0; 4];
    if p.x_min < t.x_min {
        d_hull[0] = -ch;
    }
    if p.y_min < t.y_min {
        d_hull[1] = -cw;
    }
    if p.x_max > t.x_max {
        d_hull[2] = ch;
    }
    if p.y_max > t.y_max {
        d_hull[3] = cw;
    }

    let union = p.area() + t.area() - inter;
    let mut out = [0.0; 4];
    for k in 0..4 {
        let d_union = d_area_p[k] - d_inter[k];
        let d_iou = (d_inter[k] * union - inter * d_union) / (union * union);
        // giou = iou - 1 + union / hull
        out[k] = d_iou + d_union / hull - union * d_hull[k] / (hull * hull);
    }
    out
}

/// Mean over matched pairs of `l1 * |p - t|_1 + giou * (1 - giou(p, t))`.
///
/// `matched` pairs are `(prediction index, target index)`.
pub fn box_regression_loss(
    predicted: &[Box2D],
    target: &[Box2D],
    matched: &Assignment,
    weights: BoxLossWeights,
) -> Result<BoxLoss, GeometryError> {
    let mut grad = vec![[0.0; 4]; predicted.len()];
    if matched.pairs.is_empty() {
        return Ok(BoxLoss { loss: 0.0, grad });
    }
    for &(row, col) in &matched.pairs {
        if row >= predicted.len() || col >= target.len() {
            return Err(GeometryError::AssignmentOutOfRange {
                row,
                col,
                n_pred: predicted.len(),
                n_target: target.len(),
            });
        }
    }
    let scale = 1.0 / matched.pairs.len() as f64;
    let mut loss = 0.0;
    for &(row, col) in &matched.pairs {
        let (p, t) = (&predicted[row], &target[col]);
        let (pa, ta) = (p.to_array(), t.to_array());
        let l1: f64 = pa.iter().zip(&ta).map(|(a, b)| (a - b).abs()).sum();
        loss += weights.l1 * l1 + weights.giou * (1.0 - giou(p, t));
        let dg = giou_grad(p, t);
        for k in 0..4 {
            let sign = match pa[k].partial_cmp(&ta[k]) {
                Some(Ordering::Greater) => 1.0,
                Some(Ordering::Less) => -1.0,
                _ => 0.0,
            };
            grad[row][k] += scale * (weights.l1 * sign - weights.giou * dg[k]);
        }
    }
    Ok(BoxLoss {
        loss: loss * scale,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> Box2D {
        Box2D::new(x0, y0, x1, y1).unwrap()
    }

    fn det(bx: Box2D, class: u32, score: f64) -> ScoredDetection {
        ScoredDetection::new(bx, class, score).unwrap()
    }

    /// Unit-cell counting over an integer grid; valid for integer-corner boxes.
    fn grid_counts(a: &Box2D, c: &Box2D) -> (f64, f64, f64) {
        let x0 = a.x_min.min(c.x_min) as i64;
        let y0 = a.y_min.min(c.y_min) as i64;
        let x1 = a.x_max.max(c.x_max) as i64;
        let y1 = a.y_max.max(c.y_max) as i64;
        let inside = |bx: &Box2D, x: i64, y: i64| {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            cx > bx.x_min && cx < bx.x_max && cy > bx.y_min && cy < bx.y_max
        };
        let (mut inter, mut union) = (0.0, 0.0);
        for x in x0..x1 {
            for y in y0..y1 {
                let (ia, ic) = (inside(a, x, y), inside(c, x, y));
                if ia && ic {
                    inter += 1.0;
                }
                if ia || ic {
                    union += 1.0;
                }
            }
        }
        let hull = ((x1 - x0) * (y1 - y0)) as f64;
        (inter, union, hull)
    }

    #[test]
    fn box_rejects_degenerate_and_non_finite() {
        assert!(matches!(
            Box2D::new(0.0, 0.0, 0.0, 1.0),
            Err(GeometryError::Degenerate(_))
        ));
        assert!(matches!(
            Box2D::new(0.0, 0.0, f64::NAN, 1.0),
            Err(GeometryError::NonFinite(_))
        ));
        assert!(ScoredDetection::new(b(0.0, 0.0, 1.0, 1.0), 0, 1.5).is_err());
    }

    #[test]
    fn iou_examples() {
        let unit = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&unit, &unit), 1.0);
        assert_eq!(iou(&unit, &b(5.0, 5.0, 6.0, 6.0)), 0.0);

        let (a, c) = (b(0.0, 0.0, 2.0, 2.0), b(1.0, 1.0, 3.0, 3.0));
        let (inter, union, _) = grid_counts(&a, &c);
        assert_eq!(inter / union, 1.0 / 7.0);
        assert!((iou(&a, &c) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn giou_examples() {
        let unit = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(giou(&unit, &unit), 1.0);
        assert_eq!(giou(&unit, &b(1.0, 0.0, 2.0, 1.0)), 0.0);

        let far = b(2.0, 0.0, 3.0, 1.0);
        let (inter, union, hull) = grid_counts(&unit, &far);
        let oracle = inter / union - (hull - union) / hull;
        assert!((oracle + 1.0 / 3.0).abs() < 1e-15);
        assert!((giou(&unit, &far) - oracle).abs() < 1e-15);
    }

    #[test]
    fn nms_single_and_dominance() {
        let one = vec![det(b(0.0, 0.0, 1.0, 1.0), 1, 0.9)];
        assert_eq!(nms(&one, 0.5, 0.3), one);

        let bx = b(0.0, 0.0, 4.0, 4.0);
        let two = vec![det(bx, 1, 0.8), det(bx, 1, 0.9)];
        let kept = nms(&two, 0.5, 0.3);
        assert_eq!(kept, vec![two[1]]);
        assert!(nms(&[], 0.5, 0.3).is_empty());
    }

    #[test]
    fn nms_keeps_other_classes_and_drops_low_confidence() {
        let bx = b(0.0, 0.0, 4.0, 4.0);
        let dets = vec![det(bx, 1, 0.9), det(bx, 2, 0.8), det(bx, 1, 0.2)];
        let kept = nms(&dets, 0.5, 0.3);
        assert_eq!(kept, vec![dets[0], dets[1]]);
    }

    #[test]
    fn nms_tie_break_prefers_lower_index() {
        let dets = vec![
            det(b(0.0, 0.0, 4.0, 4.0), 1, 0.7),
            det(b(0.5, 0.0, 4.5, 4.0), 1, 0.7),
        ];
        assert_eq!(nms(&dets, 0.5, 0.0), vec![dets[0]]);
    }

    #[test]
    fn hungarian_small_examples() {
        let ident = vec![
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ];
        let a = hungarian_match(&ident).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(a.total_cost, 0.0);

        let a = hungarian_match(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost, 2.0);
    }

    #[test]
    fn hungarian_rectangular_and_errors() {
        let wide = vec![vec![5.0, 1.0, 3.0]];
        assert_eq!(hungarian_match(&wide).unwrap().pairs, vec![(0, 1)]);
        let tall = vec![vec![5.0], vec![1.0], vec![3.0]];
        let a = hungarian_match(&tall).unwrap();
        assert_eq!(a.pairs, vec![(1, 0)]);
        assert_eq!(a.total_cost, 1.0);

        assert_eq!(hungarian_match(&[]).unwrap(), Assignment::default());
        assert!(matches!(
            hungarian_match(&[vec![1.0, 2.0], vec![1.0]]),
            Err(GeometryError::RaggedCost { row: 1, .. })
        ));
        assert!(matches!(
            hungarian_match(&[vec![1.0, f64::INFINITY]]),
            Err(GeometryError::NonFiniteCost { row: 0, col: 1 })
        ));
    }

    #[test]
    fn box_loss_identity_and_far_apart() {
        let p = vec![b(0.0, 0.0, 2.0, 2.0)];
        let m = Assignment {
            pairs: vec![(0, 0)],
            total_cost: 0.0,
        };
        let out = box_regression_loss(&p, &p, &m, BoxLossWeights::default()).unwrap();
        assert_eq!(out.loss, 0.0);

        let far = vec![b(1000.0, 1000.0, 1001.0, 1001.0)];
        let w = BoxLossWeights { l1: 0.0, giou: 1.0 };
        let out = box_regression_loss(&p, &far, &m, w).unwrap();
        assert!(out.loss > 1.99 && out.loss < 2.0);

        let empty = box_regression_loss(&p, &far, &Assignment::default(), w).unwrap();
        assert_eq!(empty.loss, 0.0);
        assert_eq!(empty.grad, vec![[0.0; 4]]);
    }

    #[test]
    fn box_loss_rejects_bad_indices() {
        let p = vec![b(0.0, 0.0, 2.0, 2.0)];
        let m = Assignment {
            pairs: vec![(0, 3)],
            total_cost: 0.0,
        };
        assert!(box_regression_loss(&p, &p, &m, BoxLossWeights::default()).is_err());
    }
}
