//! Contrastive and classification objectives with analytic gradients.
//!
//! All softmax and log-sum-exp evaluations subtract the running maximum.
//! In cosine mode rows are L2-normalized before similarities are taken and
//! gradients are pulled back through the normalization, so every gradient is
//! with respect to the raw (pre-normalization) embeddings.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::detection::{detection_set_loss, DetTarget, DetectionLossConfig, Prediction};
use super::AlignError;

/// A point in the shared embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, AlignError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AlignError::NonFinite("embedding"));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub fn l2_normalize(v: &Embedding) -> Result<Embedding, AlignError> {
    let norm = v.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(AlignError::ZeroVector);
    }
    Ok(Embedding(v.0.iter().map(|x| x / norm).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    /// Dot product of L2-normalized embeddings.
    #[default]
    Cosine,
    /// Raw inner product.
    Dot,
}

/// Rows prepared for similarity computation, with what the backward pass needs.
struct Prepared {
    rows: Array2<f64>,
    norms: Option<Array1<f64>>,
}

impl Prepared {
    fn new(x: &Array2<f64>, mode: SimilarityMode) -> Result<Self, AlignError> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(AlignError::NonFinite("embedding batch"));
        }
        match mode {
            SimilarityMode::Dot => Ok(Self {
                rows: x.clone(),
                norms: None,
            }),
            SimilarityMode::Cosine => {
                let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
                if norms.iter().any(|&n| n == 0.0) {
                    return Err(AlignError::ZeroVector);
                }
                let rows = x / &norms.view().insert_axis(Axis(1));
                Ok(Self {
                    rows,
                    norms: Some(norms),
                })
            }
        }
    }

    /// Maps `dL/d rows` to `dL/d x`.
    fn backward(&self, grad_rows: Array2<f64>) -> Array2<f64> {
        let Some(norms) = &self.norms else {
            return grad_rows;
        };
        let mut out = grad_rows;
        for ((mut g, xhat), n) in out
            .axis_iter_mut(Axis(0))
            .zip(self.rows.axis_iter(Axis(0)))
            .zip(norms.iter())
        {
            let proj = xhat.dot(&g);
            g.zip_mut_with(&xhat, |gi, &xi| *gi = (*gi - proj * xi) / n);
        }
        out
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let lse = log_sum_exp(logits.iter().copied());
    logits.mapv(|v| (v - lse).exp())
}

fn check_temperature(t: f64) -> Result<(), AlignError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(AlignError::InvalidTemperature(t))
    }
}

/// Scalar loss with its gradient w.r.t. the anchor rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Array2<f64>,
}

/// `N` aerial anchors, their `N` matched ground embeddings, and the batch's
/// candidate texts grouped into bags.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentBatch {
    /// `N x d` raw aerial embeddings.
    pub aerial: Array2<f64>,
    /// `N x d` ground embeddings; row `i` is the positive for aerial row `i`.
    pub ground: Array2<f64>,
    /// `M x d` candidate text embeddings.
    pub texts: Array2<f64>,
    /// Bag index of every text row.
    pub text_bag: Vec<usize>,
    /// Positive bag indices per aerial sample.
    pub positives: Vec<Vec<usize>>,
}

impl AlignmentBatch {
    /// Batch without texts, for the aerial–ground objective alone.
    pub fn image_pairs(aerial: Array2<f64>, ground: Array2<f64>) -> Self {
        let d = aerial.ncols();
        Self {
            aerial,
            ground,
            texts: Array2::zeros((0, d)),
            text_bag: Vec::new(),
            positives: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.aerial.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.aerial.nrows() == 0
    }

    fn check_pairs(&self) -> Result<(), AlignError> {
        if self.aerial.nrows() == 0 {
            return Err(AlignError::EmptyBatch);
        }
        if self.aerial.nrows() != self.ground.nrows() {
            return Err(AlignError::BatchMismatch {
                aerial: self.aerial.nrows(),
                ground: self.ground.nrows(),
            });
        }
        if self.aerial.ncols() != self.ground.ncols() {
            return Err(AlignError::DimensionMismatch {
                expected: self.aerial.ncols(),
                got: self.ground.ncols(),
            });
        }
        Ok(())
    }

    fn check_texts(&self) -> Result<(), AlignError> {
        if self.aerial.nrows() == 0 {
            return Err(AlignError::EmptyBatch);
        }
        if self.texts.ncols() != self.aerial.ncols() {
            return Err(AlignError::DimensionMismatch {
                expected: self.aerial.ncols(),
                got: self.texts.ncols(),
            });
        }
        if self.text_bag.len() != self.texts.nrows() {
            return Err(AlignError::ShapeMismatch(format!(
                "{} text rows but {} bag labels",
                self.texts.nrows(),
                self.text_bag.len()
            )));
        }
        if self.positives.len() != self.aerial.nrows() {
            return Err(AlignError::ShapeMismatch(format!(
                "{} aerial rows but {} positive lists",
                self.aerial.nrows(),
                self.positives.len()
            )));
        }
        for (sample, pos) in self.positives.iter().enumerate() {
            if pos.is_empty() {
                return Err(AlignError::EmptyPositives { sample });
            }
            if let Some(&bag) = pos.iter().find(|b| !self.text_bag.contains(b)) {
                return Err(AlignError::PositiveNotCandidate { sample, bag });
            }
        }
        Ok(())
    }
}

/// Aerial-anchored InfoNCE between aerial and ground embeddings:
/// `-(1/N) sum_i log softmax_j(s_ij / rho)[i]`, `s_ij = a_i . g_j`.
///
/// Ground embeddings are treated as constants; the gradient is w.r.t. the
/// aerial rows only.
pub fn cross_view_loss(batch: &AlignmentBatch, rho: f64, mode: SimilarityMode) -> Result<LossOutput, AlignError> {
    check_temperature(rho)?;
    batch.check_pairs()?;
    let a = Prepared::new(&batch.aerial, mode)?;
    let g = Prepared::new(&batch.ground, mode)?;
    let n = batch.len();
    let logits = a.rows.dot(&g.rows.t()) / rho;
    let scale = 1.0 / (n as f64 * rho);

    let mut loss = 0.0;
    let mut grad_rows = Array2::zeros(a.rows.raw_dim());
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        loss += log_sum_exp(row.iter().copied()) - row[i];
        let p = softmax(row);
        let mut gi = grad_rows.row_mut(i);
        gi += &(p.dot(&g.rows) * scale);
        gi.scaled_add(-scale, &g.rows.row(i));
    }
    Ok(LossOutput {
        loss: loss / n as f64,
        grad: a.backward(grad_rows),
    })
}

/// Average of the aerial-anchored and ground-anchored InfoNCE terms. The
/// gradient is still w.r.t. the aerial rows only.
pub fn symmetric_cross_view_loss(
    batch: &AlignmentBatch,
    rho: f64,
    mode: SimilarityMode,
) -> Result<LossOutput, AlignError> {
    let forward = cross_view_loss(batch, rho, mode)?;
    let a = Prepared::new(&batch.aerial, mode)?;
    let g = Prepared::new(&batch.ground, mode)?;
    let n = batch.len();
    let logits = a.rows.dot(&g.rows.t()) / rho;
    let scale = 1.0 / (n as f64 * rho);

    let mut loss = 0.0;
    let mut grad_rows: Array2<f64> = Array2::zeros(a.rows.raw_dim());
    for (j, col) in logits.axis_iter(Axis(1)).enumerate() {
        loss += log_sum_exp(col.iter().copied()) - col[j];
        let q = softmax(col);
        for (i, qi) in q.iter().enumerate() {
            grad_rows.row_mut(i).scaled_add(qi * scale, &g.rows.row(j));
        }
        grad_rows.row_mut(j).scaled_add(-scale, &g.rows.row(j));
    }
    let backward = a.backward(grad_rows);
    Ok(LossOutput {
        loss: 0.5 * (forward.loss + loss / n as f64),
        grad: 0.5 * (forward.grad + backward),
    })
}

/// Multiple-instance NCE between aerial anchors and text bags:
/// `-(1/N) sum_i [lse_{m in pos(i)} u_im - lse_{m} u_im]` with
/// `u_im = t_m . a_i / sigma`. The denominator spans every candidate text,
/// positives included.
pub fn mil_nce_loss(batch: &AlignmentBatch, sigma: f64, mode: SimilarityMode) -> Result<LossOutput, AlignError> {
    check_temperature(sigma)?;
    batch.check_texts()?;
    let a = Prepared::new(&batch.aerial, mode)?;
    let t = Prepared::new(&batch.texts, mode)?;
    let n = batch.len();
    let logits = a.rows.dot(&t.rows.t()) / sigma;
    let scale = 1.0 / (n as f64 * sigma);

    let mut loss = 0.0;
    let mut grad_rows = Array2::zeros(a.rows.raw_dim());
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let positive: Vec<usize> = (0..row.len())
            .filter(|&m| batch.positives[i].contains(&batch.text_bag[m]))
            .collect();
        let lse_all = log_sum_exp(row.iter().copied());
        let lse_pos = log_sum_exp(positive.iter().map(|&m| row[m]));
        loss += lse_all - lse_pos;

        let mut gi = grad_rows.row_mut(i);
        for (m, &v) in row.iter().enumerate() {
            gi.scaled_add((v - lse_all).exp() * scale, &t.rows.row(m));
        }
        for &m in &positive {
            gi.scaled_add(-(row[m] - lse_pos).exp() * scale, &t.rows.row(m));
        }
    }
    Ok(LossOutput {
        loss: loss / n as f64,
        grad: a.backward(grad_rows),
    })
}

/// Mean softmax cross-entropy of `region . prototype / temperature` against
/// `labels`. Gradient is w.r.t. the region rows; prototypes are constants.
/// Zero regions give zero loss.
pub fn classification_loss(
    regions: &Array2<f64>,
    prototypes: &Array2<f64>,
    labels: &[usize],
    temperature: f64,
    mode: SimilarityMode,
) -> Result<LossOutput, AlignError> {
    check_temperature(temperature)?;
    if labels.len() != regions.nrows() {
        return Err(AlignError::ShapeMismatch(format!(
            "{} regions but {} labels",
            regions.nrows(),
            labels.len()
        )));
    }
    let classes = prototypes.nrows();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(AlignError::LabelOutOfRange { index, label, classes });
    }
    if regions.nrows() == 0 {
        return Ok(LossOutput {
            loss: 0.0,
            grad: regions.clone(),
        });
    }
    if prototypes.ncols() != regions.ncols() {
        return Err(AlignError::DimensionMismatch {
            expected: regions.ncols(),
            got: prototypes.ncols(),
        });
    }
    let r = Prepared::new(regions, mode)?;
    let p = Prepared::new(prototypes, mode)?;
    let n = regions.nrows();
    let logits = r.rows.dot(&p.rows.t()) / temperature;
    let scale = 1.0 / (n as f64 * temperature);

    let mut loss = 0.0;
    let mut grad_rows = Array2::zeros(r.rows.raw_dim());
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        loss += log_sum_exp(row.iter().copied()) - row[labels[i]];
        let probs = softmax(row);
        let mut gi = grad_rows.row_mut(i);
        gi += &(probs.dot(&p.rows) * scale);
        gi.scaled_add(-scale, &p.rows.row(labels[i]));
    }
    Ok(LossOutput {
        loss: loss / n as f64,
        grad: r.backward(grad_rows),
    })
}

/// Class prototypes: mean of each bag's text rows (normalized first in
/// cosine mode). Bags without rows get a zero prototype.
pub fn bag_prototypes(
    texts: &Array2<f64>,
    text_bag: &[usize],
    n_bags: usize,
    mode: SimilarityMode,
) -> Result<Array2<f64>, AlignError> {
    let rows = Prepared::new(texts, mode)?.rows;
    let mut out = Array2::zeros((n_bags, texts.ncols()));
    let mut counts = vec![0usize; n_bags];
    for (row, &bag) in rows.axis_iter(Axis(0)).zip(text_bag) {
        if bag >= n_bags {
            return Err(AlignError::LabelOutOfRange {
                index: bag,
                label: bag,
                classes: n_bags,
            });
        }
        out.row_mut(bag).scaled_add(1.0, &row);
        counts[bag] += 1;
    }
    for (mut row, c) in out.axis_iter_mut(Axis(0)).zip(counts) {
        if c > 0 {
            row /= c as f64;
        }
    }
    Ok(out)
}

/// Non-negative weights of the four objectives; omitted keys default to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub aerial_ground: f64,
    pub aerial_text: f64,
    pub classification: f64,
    pub box_regression: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            aerial_ground: 1.0,
            aerial_text: 1.0,
            classification: 1.0,
            box_regression: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Temperature of the aerial–ground objective.
    pub rho: f64,
    /// Temperature of the aerial–text objective; also used for classification.
    pub sigma: f64,
    pub weights: LossWeights,
    pub similarity: SimilarityMode,
    /// Average aerial- and ground-anchored terms in the aerial–ground objective.
    pub symmetric: bool,
    pub detection: DetectionLossConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            rho: 0.07,
            sigma: 0.07,
            weights: LossWeights::default(),
            similarity: SimilarityMode::Cosine,
            symmetric: false,
            detection: DetectionLossConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        check_temperature(self.rho)?;
        check_temperature(self.sigma)?;
        let w = self.weights;
        for (name, v) in [
            ("aerial_ground", w.aerial_ground),
            ("aerial_text", w.aerial_text),
            ("classification", w.classification),
            ("box_regression", w.box_regression),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(AlignError::InvalidConfig(format!("weight {name} = {v} must be >= 0")));
            }
        }
        self.detection.validate()
    }
}

/// Region-classification and box-set inputs for the detection objectives.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionInputs {
    /// `R x d` region embeddings.
    pub regions: Array2<f64>,
    /// `C x d` class prototypes.
    pub prototypes: Array2<f64>,
    pub labels: Vec<usize>,
    pub predictions: Vec<Prediction>,
    pub targets: Vec<DetTarget>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub aerial_ground: f64,
    pub aerial_text: f64,
    pub classification: f64,
    pub box_regression: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub components: LossBreakdown,
    pub total: f64,
    /// Gradient w.r.t. `batch.aerial`.
    pub aerial_grad: Array2<f64>,
    /// Gradient w.r.t. `detection.regions`.
    pub region_grad: Array2<f64>,
    /// Gradient w.r.t. predicted box coordinates.
    pub box_grad: Vec<[f64; 4]>,
}

/// Weighted sum of the four objectives and of their gradients.
///
/// A component is evaluated when its weight is positive or its inputs are
/// present (so it can be reported); it contributes `weight * value`.
pub fn total_loss(
    batch: &AlignmentBatch,
    detection: &DetectionInputs,
    config: &LossConfig,
) -> Result<TotalLoss, AlignError> {
    config.validate()?;
    let w = config.weights;
    let mut components = LossBreakdown::default();
    let mut aerial_grad = Array2::zeros(batch.aerial.raw_dim());
    let mut region_grad = Array2::zeros(detection.regions.raw_dim());
    let mut box_grad = vec![[0.0; 4]; detection.predictions.len()];

    if w.aerial_ground > 0.0 || !batch.ground.is_empty() {
        let out = if config.symmetric {
            symmetric_cross_view_loss(batch, config.rho, config.similarity)?
        } else {
            cross_view_loss(batch, config.rho, config.similarity)?
        };
        components.aerial_ground = out.loss;
        aerial_grad.scaled_add(w.aerial_ground, &out.grad);
    }
    if w.aerial_text > 0.0 || !batch.texts.is_empty() {
        let out = mil_nce_loss(batch, config.sigma, config.similarity)?;
        components.aerial_text = out.loss;
        aerial_grad.scaled_add(w.aerial_text, &out.grad);
    }
    if w.classification > 0.0 || !detection.regions.is_empty() {
        let out = classification_loss(
            &detection.regions,
            &detection.prototypes,
            &detection.labels,
            config.sigma,
            config.similarity,
        )?;
        components.classification = out.loss;
        region_grad.scaled_add(w.classification, &out.grad);
    }
    if w.box_regression > 0.0 || !detection.predictions.is_empty() {
        let out = detection_set_loss(&detection.predictions, &detection.targets, &config.detection)?;
        components.box_regression = out.loss;
        for (dst, src) in box_grad.iter_mut().zip(&out.box_grad) {
            for k in 0..4 {
                dst[k] += w.box_regression * src[k];
            }
        }
    }
    let total = w.aerial_ground * components.aerial_ground
        + w.aerial_text * components.aerial_text
        + w.classification * components.classification
        + w.box_regression * components.box_regression;
    Ok(TotalLoss {
        components,
        total,
        aerial_grad,
        region_grad,
        box_grad,
    })
}
