//! Seeded finite-difference checks of every loss gradient.

use std::fmt;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gradcheck::finite_diff_gradcheck;
use super::loss::{classification_loss, cross_view_loss, mil_nce_loss, AlignmentBatch, SimilarityMode};
use super::AlignError;
use crate::geometry::{box_regression_loss, Assignment, Box2D, BoxLossWeights};
use crate::seeding::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossView,
    MilNce,
    Classification,
    BoxRegression,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::CrossView,
        LossKind::MilNce,
        LossKind::Classification,
        LossKind::BoxRegression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossView => "cross_view",
            LossKind::MilNce => "mil_nce",
            LossKind::Classification => "classification",
            LossKind::BoxRegression => "box_regression",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub instances: usize,
    pub max_dim: usize,
    pub max_batch: usize,
    pub h: f64,
    pub temperature: f64,
    pub similarity: SimilarityMode,
    pub seed: u64,
    /// Test hook: perturbs the analytic gradient of this loss so the check
    /// must fail.
    pub corrupt: Option<LossKind>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 50,
            max_dim: 16,
            max_batch: 8,
            h: 1e-5,
            temperature: 0.07,
            similarity: SimilarityMode::Cosine,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteRow {
    pub loss: LossKind,
    pub h: f64,
    pub max_rel_error: f64,
    pub worst_instance: usize,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn reshape(x: &[f64], rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), x.to_vec()).expect("flat length matches shape")
}

/// Loss function of a flat parameter vector, the point to check at and the
/// analytic gradient there.
type Instance = (Box<dyn Fn(&[f64]) -> f64>, Vec<f64>, Vec<f64>);

fn instance(kind: LossKind, rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<Instance, AlignError> {
    let n = rng.random_range(1..=cfg.max_batch);
    let d = rng.random_range(2..=cfg.max_dim.max(2));
    let (t, mode) = (cfg.temperature, cfg.similarity);
    match kind {
        LossKind::CrossView => {
            let aerial = gaussian(rng, n, d);
            let ground = gaussian(rng, n, d);
            let batch = AlignmentBatch::image_pairs(aerial.clone(), ground.clone());
            let grad = cross_view_loss(&batch, t, mode)?.grad;
            let f = move |x: &[f64]| {
                let b = AlignmentBatch::image_pairs(reshape(x, n, d), ground.clone());
                cross_view_loss(&b, t, mode).expect("valid batch").loss
            };
            Ok((Box::new(f), aerial.into_raw_vec_and_offset().0, grad.into_raw_vec_and_offset().0))
        }
        LossKind::MilNce => {
            let bags = rng.random_range(1..=4);
            let mut text_bag = Vec::new();
            for b in 0..bags {
                for _ in 0..rng.random_range(1..=3) {
                    text_bag.push(b);
                }
            }
            let positives: Vec<Vec<usize>> = (0..n)
                .map(|_| {
                    let k = rng.random_range(1..=bags);
                    let mut p = index::sample(rng, bags, k).into_vec();
                    p.sort_unstable();
                    p
                })
                .collect();
            let mut batch = AlignmentBatch::image_pairs(gaussian(rng, n, d), Array2::zeros((n, d)));
            batch.texts = gaussian(rng, text_bag.len(), d);
            batch.text_bag = text_bag;
            batch.positives = positives;
            let grad = mil_nce_loss(&batch, t, mode)?.grad;
            let x0 = batch.aerial.clone().into_raw_vec_and_offset().0;
            let f = move |x: &[f64]| {
                let mut b = batch.clone();
                b.aerial = reshape(x, n, d);
                mil_nce_loss(&b, t, mode).expect("valid batch").loss
            };
            Ok((Box::new(f), x0, grad.into_raw_vec_and_offset().0))
        }
        LossKind::Classification => {
            let classes = rng.random_range(2..=5);
            let regions = gaussian(rng, n, d);
            let protos = gaussian(rng, classes, d);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let grad = classification_loss(&regions, &protos, &labels, t, mode)?.grad;
            let f = move |x: &[f64]| {
                classification_loss(&reshape(x, n, d), &protos, &labels, t, mode)
                    .expect("valid inputs")
                    .loss
            };
            Ok((Box::new(f), regions.into_raw_vec_and_offset().0, grad.into_raw_vec_and_offset().0))
        }
        LossKind::BoxRegression => {
            let n_pred = rng.random_range(1..=cfg.max_batch);
            let n_target = rng.random_range(1..=n_pred);
            let (pred, target) = loop {
                let pred: Vec<Box2D> = (0..n_pred).map(|_| random_box(rng)).collect();
                let target: Vec<Box2D> = (0..n_target).map(|_| random_box(rng)).collect();
                if (0..n_target).all(|k| away_from_kinks(&pred[k], &target[k], 1e-3)) {
                    break (pred, target);
                }
            };
            let matched = Assignment {
                pairs: (0..n_target).map(|k| (k, k)).collect(),
                total_cost: 0.0,
            };
            let weights = BoxLossWeights::default();
            let grad = box_regression_loss(&pred, &target, &matched, weights)?.grad;
            let x0: Vec<f64> = pred.iter().flat_map(Box2D::to_array).collect();
            let f = move |x: &[f64]| {
                let boxes: Vec<Box2D> = x
                    .chunks(4)
                    .map(|c| Box2D::new(c[0], c[1], c[2], c[3]).expect("perturbed box stays valid"))
                    .collect();
                box_regression_loss(&boxes, &target, &matched, weights).expect("valid").loss
            };
            Ok((Box::new(f), x0, grad.into_iter().flatten().collect()))
        }
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> Box2D {
    let x = rng.random_range(0.0..8.0);
    let y = rng.random_range(0.0..8.0);
    let w = rng.random_range(0.5..4.0);
    let h = rng.random_range(0.5..4.0);
    Box2D::new(x, y, x + w, y + h).expect("positive extent")
}

/// True when no coordinate of `p` lies within `margin` of a coordinate of
/// `t` on the same axis, so L1, intersection and hull are all smooth there.
fn away_from_kinks(p: &Box2D, t: &Box2D, margin: f64) -> bool {
    let (pa, ta) = (p.to_array(), t.to_array());
    [(0, 2), (1, 3)].iter().all(|&(lo, hi)| {
        [pa[lo], pa[hi]]
            .iter()
            .all(|a| [ta[lo], ta[hi]].iter().all(|b| (a - b).abs() > margin))
    })
}

/// Max relative error per loss over `instances` seeded random instances.
pub fn run_gradcheck_suite(cfg: &SuiteConfig) -> Result<Vec<SuiteRow>, AlignError> {
    LossKind::ALL
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let mut rng = stream_rng(cfg.seed, "gradcheck", k as u64);
            let mut row = SuiteRow {
                loss: kind,
                h: cfg.h,
                max_rel_error: 0.0,
                worst_instance: 0,
            };
            for i in 0..cfg.instances {
                let (f, x, mut grad) = instance(kind, &mut rng, cfg)?;
                if cfg.corrupt == Some(kind) {
                    grad[0] += 0.1 * (1.0 + grad[0].abs());
                }
                let check = finite_diff_gradcheck(f, &x, &grad, cfg.h)?;
                if check.max_rel_error > row.max_rel_error || !check.max_rel_error.is_finite() {
                    row.max_rel_error = check.max_rel_error;
                    row.worst_instance = i;
                }
            }
            Ok(row)
        })
        .collect()
}
