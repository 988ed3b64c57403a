//! Ready-made synthetic correspondence sets for end-to-end alignment runs.

use std::collections::HashMap;

use ndarray::Array2;

use super::encoder::EncoderParams;
use super::provider::EmbeddingProvider;
use super::AlignError;
use crate::corrgen::{BoxRef, CorrespondenceRecord, Provenance};
use crate::eval::retrieval_recall_at_k;
use crate::geometry::Box2D;
use crate::vocab::TextBag;

/// `per_class` direct pairs for each of `n_classes` categories (ids
/// `0..n_classes`). Image ids carry `prefix` so train and test sets never
/// share instances.
pub fn synthetic_records(n_classes: u32, per_class: usize, prefix: &str) -> Vec<CorrespondenceRecord> {
    let bbox = Box2D::new(0.0, 0.0, 1.0, 1.0).expect("unit box");
    let mut out = Vec::with_capacity(n_classes as usize * per_class);
    for c in 0..n_classes {
        for i in 0..per_class {
            out.push(CorrespondenceRecord {
                pair_id: format!("{prefix}-{c:03}-{i:05}"),
                category_id: c,
                aerial: BoxRef {
                    image_id: format!("{prefix}-aerial-{c:03}-{i:05}"),
                    bbox,
                },
                ground: BoxRef {
                    image_id: format!("{prefix}-ground-{c:03}-{i:05}"),
                    bbox,
                },
                provenance: Provenance::Direct,
                confidence: 1.0,
                augmentation: None,
            });
        }
    }
    out
}

/// One bag per class with `variants` entries (canonical included).
pub fn synthetic_bags(n_classes: u32, variants: usize) -> Vec<TextBag> {
    (0..n_classes)
        .map(|c| {
            let name = format!("class {c}");
            let extra: Vec<String> = (1..variants).map(|k| format!("class {c} variant {k}")).collect();
            TextBag::build(c, &name, extra.iter().map(String::as_str), variants)
        })
        .collect()
}

/// Recall@k of aerial queries (through `aerial`) against the gallery of
/// distinct ground views of the same records (through `frozen`). Records whose
/// ground inputs are bit-identical share one gallery entry, so a world without
/// instance spread yields class-level retrieval.
pub fn cross_view_recall(
    aerial: &EncoderParams,
    frozen: &EncoderParams,
    provider: &dyn EmbeddingProvider,
    records: &[CorrespondenceRecord],
    k: usize,
) -> Result<f64, AlignError> {
    let dim = provider.input_dim();
    let mut query_rows = Vec::with_capacity(records.len() * dim);
    let mut gallery_rows: Vec<f64> = Vec::new();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut pairing = Vec::with_capacity(records.len());
    for r in records {
        query_rows.extend(provider.aerial_input(r)?);
        let g = provider.ground_input(r)?;
        let key: Vec<u64> = g.iter().map(|v| v.to_bits()).collect();
        let next = index.len();
        let slot = *index.entry(key).or_insert(next);
        if slot == next {
            gallery_rows.extend(g);
        }
        pairing.push(slot);
    }
    let shape = |rows: Vec<f64>| {
        let n = rows.len() / dim.max(1);
        Array2::from_shape_vec((n, dim), rows).map_err(|e| AlignError::ShapeMismatch(e.to_string()))
    };
    let queries = aerial.encode_batch(&shape(query_rows)?)?;
    let gallery = frozen.encode_batch(&shape(gallery_rows)?)?;
    retrieval_recall_at_k(&queries, &gallery, &pairing, k).map_err(|e| AlignError::InvalidConfig(e.to_string()))
}
