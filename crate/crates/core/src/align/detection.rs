//! Set-prediction detection loss: Hungarian matching of predictions to
//! targets, L1 + GIoU regression on matched pairs, and class negative
//! log-likelihood with a trailing no-object class for unmatched predictions.

use serde::{Deserialize, Serialize};

use super::AlignError;
use crate::geometry::{box_regression_loss, giou, hungarian_match, Assignment, Box2D, BoxLossWeights};

/// Predicted box with class probabilities; the last entry is no-object.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub bbox: Box2D,
    pub class_probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetTarget {
    pub bbox: Box2D,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionLossConfig {
    pub boxes: BoxLossWeights,
    /// Weight of `-p(class)` in the matching cost.
    pub class_cost: f64,
    /// Floor applied to probabilities inside the log-likelihood.
    pub prob_floor: f64,
}

impl Default for DetectionLossConfig {
    fn default() -> Self {
        Self {
            boxes: BoxLossWeights::default(),
            class_cost: 1.0,
            prob_floor: 1e-12,
        }
    }
}

impl DetectionLossConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !(ok(self.boxes.l1) && ok(self.boxes.giou) && ok(self.class_cost)) {
            return Err(AlignError::InvalidConfig("detection weights must be >= 0".into()));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 1.0) {
            return Err(AlignError::InvalidConfig(format!(
                "prob_floor {} must lie in (0, 1)",
                self.prob_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionLoss {
    pub loss: f64,
    pub box_loss: f64,
    pub class_loss: f64,
    /// `(prediction, target)` pairs.
    pub assignment: Assignment,
    /// Gradient w.r.t. every predicted box (zero rows when unmatched).
    pub box_grad: Vec<[f64; 4]>,
}

fn l1_distance(a: &Box2D, b: &Box2D) -> f64 {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| (x - y).abs())
        .sum()
}

/// Matching cost of assigning prediction `p` to target `t`.
pub fn matching_cost(p: &Prediction, t: &DetTarget, config: &DetectionLossConfig) -> f64 {
    -config.class_cost * p.class_probs[t.class]
        + config.boxes.l1 * l1_distance(&p.bbox, &t.bbox)
        + config.boxes.giou * (1.0 - giou(&p.bbox, &t.bbox))
}

/// Box regression over matched pairs plus the mean class NLL over all
/// predictions (target class when matched, no-object otherwise).
pub fn detection_set_loss(
    predictions: &[Prediction],
    targets: &[DetTarget],
    config: &DetectionLossConfig,
) -> Result<DetectionLoss, AlignError> {
    config.validate()?;
    if predictions.is_empty() {
        return Ok(DetectionLoss {
            loss: 0.0,
            box_loss: 0.0,
            class_loss: 0.0,
            assignment: Assignment::default(),
            box_grad: Vec::new(),
        });
    }
    let width = predictions[0].class_probs.len();
    if width < 2 {
        return Err(AlignError::ShapeMismatch("class_probs needs at least one class plus no-object".into()));
    }
    for p in predictions {
        if p.class_probs.len() != width {
            return Err(AlignError::ShapeMismatch(format!(
                "class_probs lengths differ: {} vs {width}",
                p.class_probs.len()
            )));
        }
        if p.class_probs.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(AlignError::InvalidConfig("class probabilities must lie in [0, 1]".into()));
        }
    }
    let no_object = width - 1;
    for (index, t) in targets.iter().enumerate() {
        if t.class >= no_object {
            return Err(AlignError::LabelOutOfRange {
                index,
                label: t.class,
                classes: no_object,
            });
        }
    }

    let cost: Vec<Vec<f64>> = predictions
        .iter()
        .map(|p| targets.iter().map(|t| matching_cost(p, t, config)).collect())
        .collect();
    let assignment = hungarian_match(&cost)?;

    let mut assigned_class = vec![no_object; predictions.len()];
    for &(p, t) in &assignment.pairs {
        assigned_class[p] = targets[t].class;
    }
    let class_loss = predictions
        .iter()
        .zip(&assigned_class)
        .map(|(p, &c)| -p.class_probs[c].max(config.prob_floor).ln())
        .sum::<f64>()
        / predictions.len() as f64;

    let pred_boxes: Vec<Box2D> = predictions.iter().map(|p| p.bbox).collect();
    let target_boxes: Vec<Box2D> = targets.iter().map(|t| t.bbox).collect();
    let boxes = box_regression_loss(&pred_boxes, &target_boxes, &assignment, config.boxes)?;
    Ok(DetectionLoss {
        loss: boxes.loss + class_loss,
        box_loss: boxes.loss,
        class_loss,
        assignment,
        box_grad: boxes.grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> Box2D {
        Box2D::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn exact_predictions_cost_nothing() {
        let targets = vec![
            DetTarget { bbox: b(0.0, 0.0, 2.0, 2.0), class: 0 },
            DetTarget { bbox: b(5.0, 5.0, 9.0, 8.0), class: 1 },
        ];
        let preds = vec![
            Prediction { bbox: targets[1].bbox, class_probs: vec![0.0, 1.0, 0.0] },
            Prediction { bbox: targets[0].bbox, class_probs: vec![1.0, 0.0, 0.0] },
        ];
        let out = detection_set_loss(&preds, &targets, &DetectionLossConfig::default()).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.assignment.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn no_targets_is_pure_no_object_cost() {
        let preds = vec![Prediction { bbox: b(0.0, 0.0, 1.0, 1.0), class_probs: vec![0.7, 0.3] }];
        let out = detection_set_loss(&preds, &[], &DetectionLossConfig::default()).unwrap();
        assert!((out.loss - -(0.3f64).ln()).abs() < 1e-15);
        assert_eq!(out.box_loss, 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let preds = vec![Prediction { bbox: b(0.0, 0.0, 1.0, 1.0), class_probs: vec![0.7, 0.3] }];
        let t = vec![DetTarget { bbox: b(0.0, 0.0, 1.0, 1.0), class: 1 }];
        assert!(detection_set_loss(&preds, &t, &DetectionLossConfig::default()).is_err());
        let bad = vec![Prediction { bbox: b(0.0, 0.0, 1.0, 1.0), class_probs: vec![1.2, 0.3] }];
        assert!(detection_set_loss(&bad, &[], &DetectionLossConfig::default()).is_err());
    }
}
