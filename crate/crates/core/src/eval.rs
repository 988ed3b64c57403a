//! COCO-style detection evaluation, base/novel splits and retrieval recall.
//!
//! AP follows the COCO reference tooling: per image and class, detections are
//! visited by descending score and each claims the unmatched target of the
//! same class with the highest IoU at or above the threshold. Precision is
//! made monotone from the right and sampled at 101 recall points
//! `0.00, 0.01, ..., 1.00`. There is no per-image detection cap.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corrgen::AnnotationSet;
use crate::geometry::{descending_order, iou, Box2D, GeometryError, ScoredDetection};
use crate::io::{self, FormatError, Header};

pub const DETECTIONS_FORMAT: &str = "crossview-detections";
pub const RECALL_POINTS: usize = 101;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("harmonic mean needs non-negative inputs, got ({0}, {1})")]
    NegativeInput(f64, f64),
    #[error("novel class {0} has no evaluated AP")]
    NovelNotEvaluated(u32),
    #[error("k = {k} outside 1..={gallery}")]
    InvalidK { k: usize, gallery: usize },
    #[error("{queries} queries but {pairing} pairing entries")]
    PairingLength { queries: usize, pairing: usize },
    #[error("pairing index {index} outside gallery of {gallery}")]
    PairingOutOfRange { index: usize, gallery: usize },
    #[error("query dimension {0} differs from gallery dimension {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm embedding in {0}")]
    ZeroVector(&'static str),
    #[error("malformed report: {0}")]
    Report(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// IoU thresholds `0.50, 0.55, ..., 0.95`.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

/// A detection tagged with the image it belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageDetection<'a> {
    pub image_id: &'a str,
    pub det: ScoredDetection,
}

/// Owned detection as stored in detection files.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub image_id: String,
    pub det: ScoredDetection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetRow {
    pub image_id: String,
    pub bbox: Box2D,
    pub category_id: u32,
}

/// Ranked TP/FP decisions for one class and the interpolated precision on
/// the 101-point recall grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// `(score, is_true_positive)` in visiting order.
    pub decisions: Vec<(f64, bool)>,
    pub num_targets: usize,
    pub precisions: Vec<f64>,
}

impl PrCurve {
    fn from_decisions(decisions: Vec<(f64, bool)>, num_targets: usize) -> Self {
        let mut precision = Vec::with_capacity(decisions.len());
        let mut recall = Vec::with_capacity(decisions.len());
        let (mut tp, mut fp) = (0usize, 0usize);
        for &(_, hit) in &decisions {
            if hit {
                tp += 1;
            } else {
                fp += 1;
            }
            precision.push(tp as f64 / (tp + fp) as f64);
            recall.push(if num_targets == 0 { 0.0 } else { tp as f64 / num_targets as f64 });
        }
        for i in (0..precision.len().saturating_sub(1)).rev() {
            precision[i] = precision[i].max(precision[i + 1]);
        }
        let precisions = (0..RECALL_POINTS)
            .map(|k| {
                let r = k as f64 / (RECALL_POINTS - 1) as f64;
                let idx = recall.partition_point(|&x| x < r);
                precision.get(idx).copied().unwrap_or(0.0)
            })
            .collect();
        Self {
            decisions,
            num_targets,
            precisions,
        }
    }

    pub fn average_precision(&self) -> f64 {
        self.precisions.iter().sum::<f64>() / RECALL_POINTS as f64
    }
}

/// Builds the PR curve of one class. Inputs may contain other classes; they
/// are ignored.
pub fn pr_curve(
    dets: &[ImageDetection<'_>],
    targets: &[(&str, Box2D, u32)],
    category_id: u32,
    iou_threshold: f64,
) -> PrCurve {
    let mut by_image: HashMap<&str, Vec<(Box2D, bool)>> = HashMap::new();
    let mut num_targets = 0;
    for &(img, b, c) in targets {
        if c == category_id {
            by_image.entry(img).or_default().push((b, false));
            num_targets += 1;
        }
    }
    let class_dets: Vec<&ImageDetection<'_>> = dets.iter().filter(|d| d.det.category_id == category_id).collect();
    let order = descending_order(class_dets.iter().map(|d| d.det.score()));
    let mut decisions = Vec::with_capacity(order.len());
    for i in order {
        let d = class_dets[i];
        let mut best: Option<(usize, f64)> = None;
        if let Some(gts) = by_image.get(d.image_id) {
            for (j, (b, taken)) in gts.iter().enumerate() {
                if *taken {
                    continue;
                }
                let v = iou(&d.det.bbox, b);
                if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
        }
        if let Some((j, _)) = best {
            by_image.get_mut(d.image_id).expect("image present")[j].1 = true;
        }
        decisions.push((d.det.score(), best.is_some()));
    }
    PrCurve::from_decisions(decisions, num_targets)
}

/// AP per class for every class with at least one target.
pub fn average_precision(
    dets: &[ImageDetection<'_>],
    targets: &[(&str, Box2D, u32)],
    iou_threshold: f64,
) -> BTreeMap<u32, f64> {
    let classes: BTreeSet<u32> = targets.iter().map(|t| t.2).collect();
    classes
        .into_iter()
        .map(|c| (c, pr_curve(dets, targets, c, iou_threshold).average_precision()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    pub images: usize,
    pub targets: usize,
    pub detections: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAp {
    pub category_id: u32,
    /// AP at each of [`iou_thresholds`].
    pub ap: [f64; 10],
}

impl ClassAp {
    pub fn ap50(&self) -> f64 {
        self.ap[0]
    }
    pub fn ap75(&self) -> f64 {
        self.ap[5]
    }
    pub fn ap50_95(&self) -> f64 {
        self.ap.iter().sum::<f64>() / 10.0
    }
}

/// Base/novel class means and their harmonic mean; `None` marks an
/// undefined value (empty partition).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Split {
    pub map_base: Option<f64>,
    pub map_novel: Option<f64>,
    pub hm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub name: String,
    pub per_class: Vec<ClassAp>,
    pub map: f64,
    pub split: Split,
    /// Set when there were no targets at all; `map` is then 0.
    pub no_targets: bool,
    pub counts: EvalCounts,
}

impl EvalResult {
    pub fn class_map(&self) -> BTreeMap<u32, f64> {
        self.per_class.iter().map(|c| (c.category_id, c.ap50_95())).collect()
    }

    pub fn with_novel(mut self, novel: &BTreeSet<u32>) -> Result<Self, EvalError> {
        self.split = split_base_novel(&self.class_map(), novel)?;
        Ok(self)
    }
}

/// AP averaged over the ten IoU thresholds and over classes with targets.
pub fn map_50_95(dets: &[ImageDetection<'_>], targets: &[(&str, Box2D, u32)]) -> EvalResult {
    let thresholds = iou_thresholds();
    let classes: BTreeSet<u32> = targets.iter().map(|t| t.2).collect();
    let per_class: Vec<ClassAp> = classes
        .into_iter()
        .map(|c| ClassAp {
            category_id: c,
            ap: thresholds.map(|t| pr_curve(dets, targets, c, t).average_precision()),
        })
        .collect();
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(ClassAp::ap50_95).sum::<f64>() / per_class.len() as f64
    };
    let images: BTreeSet<&str> = targets.iter().map(|t| t.0).chain(dets.iter().map(|d| d.image_id)).collect();
    EvalResult {
        name: String::new(),
        no_targets: per_class.is_empty(),
        per_class,
        map,
        split: Split::default(),
        counts: EvalCounts {
            images: images.len(),
            targets: targets.len(),
            detections: dets.len(),
        },
    }
}

/// `2ab / (a + b)`, or 0 when both are 0.
pub fn harmonic_mean(a: f64, b: f64) -> Result<f64, EvalError> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(EvalError::NegativeInput(a, b));
    }
    if a + b == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * a * b / (a + b))
}

/// Class means over base (not in `novel`) and novel classes plus their HM.
pub fn split_base_novel(per_class: &BTreeMap<u32, f64>, novel: &BTreeSet<u32>) -> Result<Split, EvalError> {
    if let Some(&c) = novel.iter().find(|c| !per_class.contains_key(c)) {
        return Err(EvalError::NovelNotEvaluated(c));
    }
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let (nov, base): (Vec<_>, Vec<_>) = per_class.iter().partition(|(c, _)| novel.contains(c));
    let map_base = mean(base.into_iter().map(|(_, v)| *v).collect());
    let map_novel = mean(nov.into_iter().map(|(_, v)| *v).collect());
    let hm = match (map_base, map_novel) {
        (Some(b), Some(n)) => Some(harmonic_mean(b, n)?),
        _ => None,
    };
    Ok(Split {
        map_base,
        map_novel,
        hm,
    })
}

fn unit_rows(m: &Array2<f64>, what: &'static str) -> Result<Array2<f64>, EvalError> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(EvalError::ZeroVector(what));
        }
        row /= n;
    }
    Ok(out)
}

/// Fraction of queries whose paired gallery row ranks in the top `k` by
/// cosine similarity. Gallery rows with equal similarity rank by index.
pub fn retrieval_recall_at_k(
    queries: &Array2<f64>,
    gallery: &Array2<f64>,
    pairing: &[usize],
    k: usize,
) -> Result<f64, EvalError> {
    let g = gallery.nrows();
    if k == 0 || k > g {
        return Err(EvalError::InvalidK { k, gallery: g });
    }
    if pairing.len() != queries.nrows() {
        return Err(EvalError::PairingLength {
            queries: queries.nrows(),
            pairing: pairing.len(),
        });
    }
    if queries.ncols() != gallery.ncols() {
        return Err(EvalError::DimensionMismatch(queries.ncols(), gallery.ncols()));
    }
    if let Some(&index) = pairing.iter().find(|&&p| p >= g) {
        return Err(EvalError::PairingOutOfRange { index, gallery: g });
    }
    if pairing.is_empty() {
        return Ok(0.0);
    }
    let sims = unit_rows(queries, "queries")?.dot(&unit_rows(gallery, "gallery")?.t());
    let hits = pairing
        .iter()
        .enumerate()
        .filter(|&(q, &truth)| {
            let row = sims.row(q);
            let s = row[truth];
            let ahead = row
                .iter()
                .enumerate()
                .filter(|&(j, &v)| v > s || (v == s && j < truth))
                .count();
            ahead < k
        })
        .count();
    Ok(hits as f64 / pairing.len() as f64)
}

/// Ground-truth rows of an annotation set.
pub fn targets_from_annotations(set: &AnnotationSet) -> Vec<TargetRow> {
    set.images
        .iter()
        .flat_map(|r| {
            r.boxes.iter().map(|(b, c)| TargetRow {
                image_id: r.image_id.clone(),
                bbox: *b,
                category_id: *c,
            })
        })
        .collect()
}

pub fn evaluate(name: &str, dets: &[DetectionRow], targets: &[TargetRow]) -> EvalResult {
    let d: Vec<ImageDetection<'_>> = dets
        .iter()
        .map(|r| ImageDetection {
            image_id: &r.image_id,
            det: r.det,
        })
        .collect();
    let t: Vec<(&str, Box2D, u32)> = targets.iter().map(|r| (r.image_id.as_str(), r.bbox, r.category_id)).collect();
    let mut result = map_50_95(&d, &t);
    result.name = name.to_string();
    result
}

type DetectionLine = (String, f64, f64, f64, f64, u32, f64);

/// Reads `[image_id, x_min, y_min, x_max, y_max, category_id, score]` lines.
pub fn read_detections(path: &Path) -> Result<Vec<DetectionRow>, EvalError> {
    let (_, body) = io::read_tagged(path, DETECTIONS_FORMAT, 1)?;
    body.iter()
        .map(|line| {
            let (image_id, x0, y0, x1, y1, c, s): DetectionLine = io::parse_json_line(line)?;
            let det = Box2D::new(x0, y0, x1, y1)
                .and_then(|b| ScoredDetection::new(b, c, s))
                .map_err(|e| FormatError::parse(line.line, e.to_string()))?;
            Ok(DetectionRow { image_id, det })
        })
        .collect()
}

pub fn write_detections(rows: &[DetectionRow], path: &Path) -> Result<(), EvalError> {
    let header = Header {
        format: DETECTIONS_FORMAT.into(),
        version: 1,
    };
    let lines = rows.iter().map(|r| {
        let [x0, y0, x1, y1] = r.det.bbox.to_array();
        (r.image_id.clone(), x0, y0, x1, y1, r.det.category_id, r.det.score())
    });
    io::write_tagged(path, &header, lines)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

/// One rendered report line. Per-class rows carry the three AP columns;
/// the `all` summary row also carries mAP and the split.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub result: String,
    pub class: String,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap50_95: Option<f64>,
    pub map: Option<f64>,
    pub map_base: Option<f64>,
    pub map_novel: Option<f64>,
    pub hm: Option<f64>,
}

pub const REPORT_COLUMNS: [&str; 9] =
    ["result", "class", "AP50", "AP75", "AP50:95", "mAP", "mAP_base", "mAP_novel", "HM"];

pub fn report_rows(results: &[EvalResult]) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for r in results {
        for c in &r.per_class {
            rows.push(ReportRow {
                result: r.name.clone(),
                class: c.category_id.to_string(),
                ap50: Some(c.ap50()),
                ap75: Some(c.ap75()),
                ap50_95: Some(c.ap50_95()),
                map: None,
                map_base: None,
                map_novel: None,
                hm: None,
            });
        }
        let n = r.per_class.len() as f64;
        let mean = |f: fn(&ClassAp) -> f64| (n > 0.0).then(|| r.per_class.iter().map(f).sum::<f64>() / n);
        rows.push(ReportRow {
            result: r.name.clone(),
            class: "all".into(),
            ap50: mean(ClassAp::ap50),
            ap75: mean(ClassAp::ap75),
            ap50_95: mean(ClassAp::ap50_95),
            map: Some(r.map),
            map_base: r.split.map_base,
            map_novel: r.split.map_novel,
            hm: r.split.hm,
        });
    }
    rows
}

impl ReportRow {
    fn values(&self) -> [Option<f64>; 7] {
        [
            self.ap50,
            self.ap75,
            self.ap50_95,
            self.map,
            self.map_base,
            self.map_novel,
            self.hm,
        ]
    }
}

/// Table values are percentages with two decimals; CSV keeps full precision
/// fractions so it parses back exactly. Undefined cells are `-` / empty.
pub fn report(results: &[EvalResult], format: ReportFormat) -> String {
    render_rows(&report_rows(results), format)
}

/// Renders already-flattened rows, e.g. ones parsed back from CSV.
pub fn render_rows(rows: &[ReportRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = REPORT_COLUMNS.join(",");
            out.push('\n');
            for r in rows {
                let mut cells = vec![csv_escape(&r.result), csv_escape(&r.class)];
                cells.extend(r.values().iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
                out.push_str(&cells.join(","));
                out.push('\n');
            }
            out
        }
        ReportFormat::Table => {
            let cells: Vec<Vec<String>> = std::iter::once(REPORT_COLUMNS.iter().map(|s| s.to_string()).collect())
                .chain(rows.iter().map(|r| {
                    let mut c = vec![r.result.clone(), r.class.clone()];
                    c.extend(r.values().iter().map(|v| v.map_or("-".into(), |x| format!("{:.2}", 100.0 * x))));
                    c
                }))
                .collect();
            let widths: Vec<usize> = (0..REPORT_COLUMNS.len())
                .map(|i| cells.iter().map(|r| r[i].len()).max().unwrap_or(0))
                .collect();
            let mut out = String::new();
            for row in &cells {
                let line: Vec<String> = row
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                    .collect();
                let _ = writeln!(out, "{}", line.join("  ").trim_end());
            }
            out
        }
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Parses CSV produced by [`report`].
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>, EvalError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| EvalError::Report(e.to_string()))?;
    if headers.iter().ne(REPORT_COLUMNS) {
        return Err(EvalError::Report(format!("unexpected header {headers:?}")));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| EvalError::Report(e.to_string()))?;
        let num = |i: usize| -> Result<Option<f64>, EvalError> {
            let s = &rec[i];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| EvalError::Report(format!("bad number {s:?}")))
            }
        };
        rows.push(ReportRow {
            result: rec[0].to_string(),
            class: rec[1].to_string(),
            ap50: num(2)?,
            ap75: num(3)?,
            ap50_95: num(4)?,
            map: num(5)?,
            map_base: num(6)?,
            map_novel: num(7)?,
            hm: num(8)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> Box2D {
        Box2D::new(x0, y0, x1, y1).unwrap()
    }

    fn det(bx: Box2D, c: u32, s: f64) -> ImageDetection<'static> {
        ImageDetection {
            image_id: "im",
            det: ScoredDetection::new(bx, c, s).unwrap(),
        }
    }

    #[test]
    fn perfect_and_empty() {
        let t = [("im", b(0.0, 0.0, 1.0, 1.0), 0), ("im", b(2.0, 2.0, 3.0, 4.0), 1)];
        let d: Vec<_> = t.iter().map(|&(_, bx, c)| det(bx, c, 1.0)).collect();
        assert_eq!(average_precision(&d, &t, 0.5), BTreeMap::from([(0, 1.0), (1, 1.0)]));
        assert_eq!(map_50_95(&d, &t).map, 1.0);
        assert_eq!(average_precision(&[], &t, 0.5)[&0], 0.0);
        let empty = map_50_95(&[], &[]);
        assert!(empty.no_targets);
        assert_eq!(empty.map, 0.0);
    }

    #[test]
    fn rank_order_matters() {
        let t = [("im", b(0.0, 0.0, 1.0, 1.0), 0)];
        let tp_first = [det(b(0.0, 0.0, 1.0, 1.0), 0, 0.9), det(b(5.0, 5.0, 6.0, 6.0), 0, 0.8)];
        assert_eq!(average_precision(&tp_first, &t, 0.5)[&0], 1.0);
        // Precision 1/2 is the only value on the curve, so every recall point
        // interpolates to 0.5.
        let fp_first = [det(b(0.0, 0.0, 1.0, 1.0), 0, 0.8), det(b(5.0, 5.0, 6.0, 6.0), 0, 0.9)];
        assert_eq!(average_precision(&fp_first, &t, 0.5)[&0], 0.5);
    }

    #[test]
    fn iou_072_halves_map() {
        // 18 x 1 box inside a 25 x 1 target: IoU 0.72.
        let t = [("im", b(0.0, 0.0, 25.0, 1.0), 0)];
        let d = [det(b(0.0, 0.0, 18.0, 1.0), 0, 1.0)];
        let r = map_50_95(&d, &t);
        assert_eq!(r.per_class[0].ap, [1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(r.map, 0.5);
    }

    #[test]
    fn harmonic_mean_cases() {
        assert_eq!(harmonic_mean(0.3, 0.3).unwrap(), 0.3);
        assert_eq!(harmonic_mean(0.0, 0.0).unwrap(), 0.0);
        assert!(harmonic_mean(-1.0, 1.0).is_err());
        assert!((harmonic_mean(39.0, 46.3).unwrap() - 42.3).abs() < 0.05);
        assert!((harmonic_mean(42.7, 49.2).unwrap() - 45.7).abs() < 0.05);
    }

    #[test]
    fn split_cases() {
        let aps = BTreeMap::from([(1, 0.4), (2, 0.6)]);
        let s = split_base_novel(&aps, &BTreeSet::from([2])).unwrap();
        assert_eq!(s.map_base, Some(0.4));
        assert_eq!(s.map_novel, Some(0.6));
        assert!((s.hm.unwrap() - 0.48).abs() < 1e-15);

        let all = split_base_novel(&aps, &BTreeSet::from([1, 2])).unwrap();
        assert_eq!(all.map_base, None);
        assert_eq!(all.map_novel, Some(0.5));
        assert_eq!(all.hm, None);

        let none = split_base_novel(&aps, &BTreeSet::new()).unwrap();
        assert_eq!(none.map_novel, None);
        assert!(split_base_novel(&aps, &BTreeSet::from([9])).is_err());
    }

    #[test]
    fn retrieval_cases() {
        let q = ndarray::array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        assert_eq!(retrieval_recall_at_k(&q, &q, &[0, 1, 2], 1).unwrap(), 1.0);
        let rotated = ndarray::array![[0.0, 1.0], [-1.0, 0.0]];
        let q2 = ndarray::array![[1.0, 0.0], [0.0, 1.0]];
        let g2 = ndarray::array![[0.0, 1.0], [1.0, 0.0]];
        // Each query's match is the row orthogonal to it.
        assert_eq!(retrieval_recall_at_k(&q2, &g2, &[0, 1], 1).unwrap(), 0.0);
        assert_eq!(retrieval_recall_at_k(&q2, &g2, &[0, 1], 2).unwrap(), 1.0);
        assert!(retrieval_recall_at_k(&q2, &rotated, &[0, 1], 3).is_err());
        assert!(retrieval_recall_at_k(&q2, &rotated, &[0, 1], 0).is_err());
    }

    #[test]
    fn report_layout_and_round_trip() {
        assert_eq!(report(&[], ReportFormat::Table).lines().count(), 1);
        assert_eq!(report(&[], ReportFormat::Csv), REPORT_COLUMNS.join(",") + "\n");

        let t = [("im", b(0.0, 0.0, 25.0, 1.0), 0), ("im", b(3.0, 3.0, 4.0, 4.0), 7)];
        let d = [det(b(0.0, 0.0, 18.0, 1.0), 0, 0.7), det(b(3.0, 3.0, 4.0, 4.0), 7, 0.9)];
        let one = map_50_95(&d, &t).with_novel(&BTreeSet::from([7])).unwrap();
        let mut two = map_50_95(&d[..1], &t);
        two.name = "second, run".into();
        let results = [one, two];
        let table = report(&results[..1], ReportFormat::Table);
        let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(&header[5..], ["mAP", "mAP_base", "mAP_novel", "HM"]);
        assert!(table.contains("75.00"));

        let csv = report(&results, ReportFormat::Csv);
        assert_eq!(parse_report_csv(&csv).unwrap(), report_rows(&results));
    }
}
