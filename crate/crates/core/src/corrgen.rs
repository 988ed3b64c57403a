//! Aerial–ground correspondence generation.
//!
//! Categories shared by the aerial and ground datasets are paired directly
//! from ground-truth boxes. Aerial-only categories are paired with pseudo
//! boxes from an open-vocabulary detector after confidence filtering and NMS.
//! Records can then be augmented with crop/rotation copies of the aerial
//! frame and persisted as a line-delimited file.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{nms, Box2D, GeometryError, ScoredDetection};
use crate::io::{self, FormatError};
use crate::seeding::{fnv1a, stream_rng};

pub const ANNOTATIONS_FORMAT: &str = "crossview-annotations";
pub const ALIGNED_FORMAT: &str = "crossview-aligned";
pub const DETECTOR_SCRIPT_FORMAT: &str = "crossview-detector-script";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_PAIRING_CAP: usize = 64;

#[derive(Debug, Error)]
pub enum CorrgenError {
    #[error("name map is not injective: {0:?} mapped more than once")]
    DuplicateMapping(String),
    #[error("name map references unknown aerial category {0:?}")]
    UnknownAerialCategory(String),
    #[error("duplicate category name {0:?} in {1} category table")]
    DuplicateCategoryName(String, Source),
    #[error("image {image_id}: {message}")]
    InvalidAnnotation { image_id: String, message: String },
    #[error("invalid augmentation config: {0}")]
    InvalidAugment(String),
    #[error("invalid threshold {name} = {value}, expected a ratio in [0, 1]")]
    InvalidThreshold { name: &'static str, value: f64 },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Aerial,
    Ground,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Aerial => "aerial",
            Source::Ground => "ground",
        })
    }
}

/// Category id to display name.
pub type CategoryTable = BTreeMap<u32, String>;

fn name_key(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// One image with its ground-truth boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    /// `[x_min, y_min, x_max, y_max, category_id]` entries.
    #[serde(with = "annotated_boxes")]
    pub boxes: Vec<(Box2D, u32)>,
}

mod annotated_boxes {
    use super::Box2D;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(boxes: &[(Box2D, u32)], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<[f64; 5]> = boxes
            .iter()
            .map(|(b, c)| {
                let a = b.to_array();
                [a[0], a[1], a[2], a[3], f64::from(*c)]
            })
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(Box2D, u32)>, D::Error> {
        let rows = Vec::<[f64; 5]>::deserialize(d)?;
        rows.into_iter()
            .map(|r| {
                let cat = r[4];
                if cat < 0.0 || cat.fract() != 0.0 || cat > f64::from(u32::MAX) {
                    return Err(D::Error::custom(format!("invalid category id {cat}")));
                }
                let b = Box2D::new(r[0], r[1], r[2], r[3]).map_err(D::Error::custom)?;
                Ok((b, cat as u32))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
}

/// An annotated dataset from one viewpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub source: Source,
    pub categories: CategoryTable,
    pub images: Vec<AnnotationRecord>,
}

#[derive(Serialize, Deserialize)]
struct AnnotationHeader {
    format: String,
    version: u32,
    source: Source,
    categories: CategoryTable,
}

impl AnnotationSet {
    /// Validates frame containment, category resolution and name uniqueness.
    pub fn new(
        source: Source,
        categories: CategoryTable,
        images: Vec<AnnotationRecord>,
    ) -> Result<Self, CorrgenError> {
        let mut seen = BTreeSet::new();
        for name in categories.values() {
            if !seen.insert(name_key(name)) {
                return Err(CorrgenError::DuplicateCategoryName(name.clone(), source));
            }
        }
        for img in &images {
            validate_record(img, &categories)?;
        }
        Ok(Self {
            source,
            categories,
            images,
        })
    }

    pub fn image_refs(&self) -> Vec<ImageRef> {
        self.images
            .iter()
            .map(|r| ImageRef {
                image_id: r.image_id.clone(),
                width: r.width,
                height: r.height,
            })
            .collect()
    }

    /// `image_id -> (width, height)`.
    pub fn frames(&self) -> HashMap<String, (f64, f64)> {
        self.images
            .iter()
            .map(|r| (r.image_id.clone(), (r.width, r.height)))
            .collect()
    }

    /// All `(image_id, box)` instances of a category in file order.
    pub fn instances(&self, category_id: u32) -> Vec<(&str, Box2D)> {
        self.images
            .iter()
            .flat_map(|r| {
                r.boxes
                    .iter()
                    .filter(move |(_, c)| *c == category_id)
                    .map(move |(b, _)| (r.image_id.as_str(), *b))
            })
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self, CorrgenError> {
        let (header, body) = io::read_tagged(path, ANNOTATIONS_FORMAT, FORMAT_VERSION)?;
        let header: AnnotationHeader = serde_json::from_value(header)
            .map_err(|e| FormatError::parse(1, format!("invalid header: {e}")))?;
        let mut images = Vec::with_capacity(body.len());
        for line in &body {
            let rec: AnnotationRecord = io::parse_json_line(line)?;
            validate_record(&rec, &header.categories)
                .map_err(|e| FormatError::parse(line.line, e.to_string()))?;
            images.push(rec);
        }
        Self::new(header.source, header.categories, images)
    }

    pub fn write(&self, path: &Path) -> Result<(), CorrgenError> {
        let header = AnnotationHeader {
            format: ANNOTATIONS_FORMAT.to_string(),
            version: FORMAT_VERSION,
            source: self.source,
            categories: self.categories.clone(),
        };
        io::write_tagged(path, &header, &self.images)?;
        Ok(())
    }
}

fn validate_record(rec: &AnnotationRecord, categories: &CategoryTable) -> Result<(), CorrgenError> {
    let invalid = |message: String| CorrgenError::InvalidAnnotation {
        image_id: rec.image_id.clone(),
        message,
    };
    if !(rec.width > 0.0 && rec.height > 0.0 && rec.width.is_finite() && rec.height.is_finite()) {
        return Err(invalid(format!("invalid frame {}x{}", rec.width, rec.height)));
    }
    for (b, c) in &rec.boxes {
        if !b.within_frame(rec.width, rec.height) {
            return Err(invalid(format!("box {:?} outside frame", b.to_array())));
        }
        if !categories.contains_key(c) {
            return Err(invalid(format!("unknown category id {c}")));
        }
    }
    Ok(())
}

/// Split of the aerial category set into shared and aerial-only categories.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CategoryPartition {
    pub common: BTreeSet<u32>,
    pub unique_aerial: BTreeSet<u32>,
    /// Aerial category id to its ground counterpart, for common categories.
    pub ground_of: BTreeMap<u32, u32>,
}

/// Routes every aerial category to `common` when the name map links it to a
/// category present in the ground table, otherwise to `unique_aerial`.
///
/// Names are compared case-insensitively with whitespace collapsed.
pub fn partition_categories(
    aerial: &CategoryTable,
    ground: &CategoryTable,
    name_map: &[(String, String)],
) -> Result<CategoryPartition, CorrgenError> {
    let mut aerial_seen = BTreeSet::new();
    let mut ground_seen = BTreeSet::new();
    for (a, g) in name_map {
        if !aerial_seen.insert(name_key(a)) {
            return Err(CorrgenError::DuplicateMapping(a.clone()));
        }
        if !ground_seen.insert(name_key(g)) {
            return Err(CorrgenError::DuplicateMapping(g.clone()));
        }
    }
    let aerial_by_name: HashMap<String, u32> =
        aerial.iter().map(|(id, n)| (name_key(n), *id)).collect();
    let ground_by_name: HashMap<String, u32> =
        ground.iter().map(|(id, n)| (name_key(n), *id)).collect();

    let mut ground_of = BTreeMap::new();
    for (a, g) in name_map {
        let a_id = *aerial_by_name
            .get(&name_key(a))
            .ok_or_else(|| CorrgenError::UnknownAerialCategory(a.clone()))?;
        if let Some(g_id) = ground_by_name.get(&name_key(g)) {
            ground_of.insert(a_id, *g_id);
        }
    }
    let common: BTreeSet<u32> = ground_of.keys().copied().collect();
    let unique_aerial = aerial
        .keys()
        .filter(|id| !common.contains(id))
        .copied()
        .collect();
    Ok(CategoryPartition {
        common,
        unique_aerial,
        ground_of,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Direct,
    Inferred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRef {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: Box2D,
}

/// Rotation of the aerial frame, counter-clockwise in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub fn degrees(self) -> u16 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    fn quarter_turns(self) -> u16 {
        self.degrees() / 90
    }
}

impl TryFrom<u16> for Rotation {
    type Error = String;

    fn try_from(deg: u16) -> Result<Self, Self::Error> {
        match deg {
            0 => Ok(Rotation::R0),
            90 => Ok(Rotation::R90),
            180 => Ok(Rotation::R180),
            270 => Ok(Rotation::R270),
            other => Err(format!("rotation must be one of 0, 90, 180, 270; got {other}")),
        }
    }
}

impl From<Rotation> for u16 {
    fn from(r: Rotation) -> Self {
        r.degrees()
    }
}

/// Crop window (in the original frame) and rotation applied to an augmented copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub crop: [f64; 4],
    pub rotation: Rotation,
}

/// One `(aerial box, ground box, category)` training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceRecord {
    pub pair_id: String,
    pub category_id: u32,
    pub aerial: BoxRef,
    pub ground: BoxRef,
    pub provenance: Provenance,
    /// 1.0 for direct pairs, the detector score for inferred pairs.
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<Augmentation>,
}

/// Non-fatal events raised during generation.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    NoInstances { category_id: u32, side: Source },
    DetectorFailure { image_id: String, category_id: u32, message: String },
    NoSurvivingDetections { category_id: u32 },
    DegenerateAugment { pair_id: String, rotation: Rotation },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::NoInstances { category_id, side } => {
                write!(f, "category {category_id}: no {side} instances, skipped")
            }
            Warning::DetectorFailure {
                image_id,
                category_id,
                message,
            } => write!(
                f,
                "category {category_id}: detector failed on {image_id}: {message}"
            ),
            Warning::NoSurvivingDetections { category_id } => {
                write!(f, "category {category_id}: no detections survived filtering")
            }
            Warning::DegenerateAugment { pair_id, rotation } => write!(
                f,
                "{pair_id}: augmented copy (rotation {}) collapsed, dropped",
                rotation.degrees()
            ),
        }
    }
}

/// How many instance pairs a category may contribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairingCap {
    Unlimited,
    AtMost(usize),
}

impl Default for PairingCap {
    fn default() -> Self {
        PairingCap::AtMost(DEFAULT_PAIRING_CAP)
    }
}

impl PairingCap {
    pub fn limit(self, total: usize) -> usize {
        match self {
            PairingCap::Unlimited => total,
            PairingCap::AtMost(cap) => cap.min(total),
        }
    }
}

/// Flat indices into an `n_aerial x n_ground` product, ascending.
fn select_pairs(n_aerial: usize, n_ground: usize, cap: PairingCap, seed: u64, stream: &str, category: u32) -> Vec<(usize, usize)> {
    let total = n_aerial * n_ground;
    let keep = cap.limit(total);
    let flat: Vec<usize> = if keep == total {
        (0..total).collect()
    } else {
        let mut rng = stream_rng(seed, stream, u64::from(category));
        let mut picked = index::sample(&mut rng, total, keep).into_vec();
        picked.sort_unstable();
        picked
    };
    flat.into_iter().map(|k| (k / n_ground, k % n_ground)).collect()
}

/// Generation output plus the warnings raised along the way.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Generated {
    pub records: Vec<CorrespondenceRecord>,
    pub warnings: Vec<Warning>,
}

/// Pairs aerial and ground ground-truth instances of every common category.
pub fn direct_correspondence(
    aerial: &AnnotationSet,
    ground: &AnnotationSet,
    partition: &CategoryPartition,
    cap: PairingCap,
    seed: u64,
) -> Generated {
    let mut out = Generated::default();
    for &cat in &partition.common {
        let Some(&ground_cat) = partition.ground_of.get(&cat) else {
            continue;
        };
        let a_inst = aerial.instances(cat);
        let g_inst = ground.instances(ground_cat);
        if a_inst.is_empty() || g_inst.is_empty() {
            let side = if a_inst.is_empty() {
                Source::Aerial
            } else {
                Source::Ground
            };
            log::warn!("direct correspondence: category {cat} has no {side} instances");
            out.warnings.push(Warning::NoInstances {
                category_id: cat,
                side,
            });
            continue;
        }
        for (ai, gi) in select_pairs(a_inst.len(), g_inst.len(), cap, seed, "corrgen-direct", cat) {
            out.records.push(CorrespondenceRecord {
                pair_id: format!("d{cat:05}-{ai:06}-{gi:06}"),
                category_id: cat,
                aerial: BoxRef {
                    image_id: a_inst[ai].0.to_string(),
                    bbox: a_inst[ai].1,
                },
                ground: BoxRef {
                    image_id: g_inst[gi].0.to_string(),
                    bbox: g_inst[gi].1,
                },
                provenance: Provenance::Direct,
                confidence: 1.0,
                augmentation: None,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{0}")]
pub struct DetectorError(pub String);

/// An open-vocabulary detector queried with a category name.
pub trait DetectorClient: Sync {
    fn detect(&self, image: &ImageRef, query: &str) -> Result<Vec<ScoredDetection>, DetectorError>;
}

/// Thresholds for turning detector output into pseudo ground boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    /// Minimum detector score `tau`.
    pub confidence: f64,
    pub nms_iou: f64,
    pub cap: PairingCap,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            confidence: crate::geometry::DEFAULT_CONFIDENCE,
            nms_iou: crate::geometry::DEFAULT_NMS_IOU,
            cap: PairingCap::default(),
            seed: 0,
        }
    }
}

fn check_ratio(name: &'static str, value: f64) -> Result<(), CorrgenError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(CorrgenError::InvalidThreshold { name, value })
    }
}

/// Pairs aerial instances of every aerial-only category with detector pseudo
/// boxes found in the ground images.
///
/// Detections are clipped to their frame, filtered by `confidence`, and
/// suppressed per image with class-wise NMS before pairing.
pub fn inferred_correspondence(
    aerial: &AnnotationSet,
    ground_images: &[ImageRef],
    partition: &CategoryPartition,
    detector: &dyn DetectorClient,
    config: &InferenceConfig,
) -> Result<Generated, CorrgenError> {
    check_ratio("confidence", config.confidence)?;
    check_ratio("nms_iou", config.nms_iou)?;
    let mut out = Generated::default();
    for &cat in &partition.unique_aerial {
        let a_inst = aerial.instances(cat);
        if a_inst.is_empty() {
            out.warnings.push(Warning::NoInstances {
                category_id: cat,
                side: Source::Aerial,
            });
            continue;
        }
        let name = &aerial.categories[&cat];
        let mut pseudo: Vec<(&str, ScoredDetection)> = Vec::new();
        for image in ground_images {
            let raw = match detector.detect(image, name) {
                Ok(d) => d,
                Err(e) => {
                    log::warn!("detector failed on {} for {name:?}: {e}", image.image_id);
                    out.warnings.push(Warning::DetectorFailure {
                        image_id: image.image_id.clone(),
                        category_id: cat,
                        message: e.0,
                    });
                    continue;
                }
            };
            let clipped: Vec<ScoredDetection> = raw
                .iter()
                .filter_map(|d| {
                    let b = d.bbox.clip_to_frame(image.width, image.height)?;
                    ScoredDetection::new(b, cat, d.score()).ok()
                })
                .collect();
            for d in nms(&clipped, config.nms_iou, config.confidence) {
                pseudo.push((image.image_id.as_str(), d));
            }
        }
        if pseudo.is_empty() {
            log::warn!("inferred correspondence: no detections survived for category {cat}");
            out.warnings.push(Warning::NoSurvivingDetections { category_id: cat });
            continue;
        }
        for (ai, gi) in select_pairs(a_inst.len(), pseudo.len(), config.cap, config.seed, "corrgen-inferred", cat) {
            let (g_img, g_det) = &pseudo[gi];
            out.records.push(CorrespondenceRecord {
                pair_id: format!("i{cat:05}-{ai:06}-{gi:06}"),
                category_id: cat,
                aerial: BoxRef {
                    image_id: a_inst[ai].0.to_string(),
                    bbox: a_inst[ai].1,
                },
                ground: BoxRef {
                    image_id: g_img.to_string(),
                    bbox: g_det.bbox,
                },
                provenance: Provenance::Inferred,
                confidence: g_det.score(),
                augmentation: None,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Maximum fraction of the frame trimmed from each side, in `[0, 0.5)`.
    pub crop_jitter: f64,
    pub rotations: Vec<Rotation>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_jitter: 0.1,
            rotations: vec![Rotation::R90],
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), CorrgenError> {
        if !(0.0..0.5).contains(&self.crop_jitter) {
            return Err(CorrgenError::InvalidAugment(format!(
                "crop_jitter {} outside [0, 0.5)",
                self.crop_jitter
            )));
        }
        Ok(())
    }
}

/// Rotates `b` by one quarter turn inside a `width x height` frame,
/// mapping `(x, y) -> (y, width - x)`. The new frame is `height x width`.
pub fn rotate_quarter(b: &Box2D, width: f64) -> Result<Box2D, GeometryError> {
    Box2D::new(b.y_min(), width - b.x_max(), b.y_max(), width - b.x_min())
}

/// Applies crop window then rotation to a box in the original frame.
pub fn transform_box(b: &Box2D, crop: [f64; 4], rotation: Rotation) -> Option<Box2D> {
    let (cw, ch) = (crop[2] - crop[0], crop[3] - crop[1]);
    let shifted = Box2D::new(
        b.x_min() - crop[0],
        b.y_min() - crop[1],
        b.x_max() - crop[0],
        b.y_max() - crop[1],
    )
    .ok()?;
    let mut out = shifted.clip_to_frame(cw, ch)?;
    let (mut w, mut h) = (cw, ch);
    for _ in 0..rotation.quarter_turns() {
        out = rotate_quarter(&out, w).ok()?;
        std::mem::swap(&mut w, &mut h);
    }
    Some(out)
}

/// Appends one augmented copy per configured rotation to every record.
///
/// Each copy crops the aerial frame by a seeded random margin of up to
/// `crop_jitter` on each side, then rotates. Copies whose aerial box collapses
/// are dropped with a warning. Randomness is keyed by `pair_id`, so the result
/// does not depend on record order.
pub fn augment_pairs(
    records: &[CorrespondenceRecord],
    frames: &HashMap<String, (f64, f64)>,
    config: &AugmentConfig,
    seed: u64,
) -> Result<Generated, CorrgenError> {
    config.validate()?;
    let mut out = Generated {
        records: records.to_vec(),
        warnings: Vec::new(),
    };
    for rec in records {
        let &(w, h) = frames.get(&rec.aerial.image_id).ok_or_else(|| CorrgenError::InvalidAnnotation {
            image_id: rec.aerial.image_id.clone(),
            message: "no frame size for aerial image".into(),
        })?;
        let mut rng = stream_rng(seed, "augment", fnv1a(rec.pair_id.as_bytes()));
        for (k, &rotation) in config.rotations.iter().enumerate() {
            let mut margin = |extent: f64| {
                let max = config.crop_jitter * extent;
                if max > 0.0 {
                    rng.random_range(0.0..max)
                } else {
                    0.0
                }
            };
            let crop = [margin(w), margin(h), w - margin(w), h - margin(h)];
            match transform_box(&rec.aerial.bbox, crop, rotation) {
                Some(bbox) => out.records.push(CorrespondenceRecord {
                    pair_id: format!("{}+a{k:02}", rec.pair_id),
                    aerial: BoxRef {
                        image_id: rec.aerial.image_id.clone(),
                        bbox,
                    },
                    augmentation: Some(Augmentation { crop, rotation }),
                    ..rec.clone()
                }),
                None => out.warnings.push(Warning::DegenerateAugment {
                    pair_id: rec.pair_id.clone(),
                    rotation,
                }),
            }
        }
    }
    Ok(out)
}

pub fn write_aligned_dataset(records: &[CorrespondenceRecord], path: &Path) -> Result<(), CorrgenError> {
    let header = io::Header {
        format: ALIGNED_FORMAT.into(),
        version: FORMAT_VERSION,
    };
    io::write_tagged(path, &header, records)?;
    Ok(())
}

pub fn read_aligned_dataset(path: &Path) -> Result<Vec<CorrespondenceRecord>, CorrgenError> {
    let (_, body) = io::read_tagged(path, ALIGNED_FORMAT, FORMAT_VERSION)?;
    let mut records = Vec::with_capacity(body.len());
    let mut ids = BTreeSet::new();
    for line in &body {
        let rec: CorrespondenceRecord = io::parse_json_line(line)?;
        if !(0.0..=1.0).contains(&rec.confidence) {
            return Err(FormatError::parse(line.line, format!("confidence {} outside [0, 1]", rec.confidence)).into());
        }
        if !ids.insert(rec.pair_id.clone()) {
            return Err(FormatError::parse(line.line, format!("duplicate pair_id {:?}", rec.pair_id)).into());
        }
        records.push(rec);
    }
    Ok(records)
}

/// Boxes with scores, or the error message the detector reported.
type ScriptedAnswer = Result<Vec<(Box2D, f64)>, String>;

/// Scripted detector answers keyed by `(image_id, query)`.
#[derive(Debug, Clone, Default)]
pub struct ScriptedDetector {
    entries: HashMap<(String, String), ScriptedAnswer>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    image_id: String,
    query: String,
    #[serde(default)]
    detections: Vec<[f64; 5]>,
    #[serde(default)]
    error: Option<String>,
}

impl ScriptedDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_detections(mut self, image_id: &str, query: &str, dets: Vec<(Box2D, f64)>) -> Self {
        self.entries
            .insert((image_id.to_string(), name_key(query)), Ok(dets));
        self
    }

    pub fn with_failure(mut self, image_id: &str, query: &str, message: &str) -> Self {
        self.entries
            .insert((image_id.to_string(), name_key(query)), Err(message.to_string()));
        self
    }

    /// Loads a script file: one `{"image_id", "query", "detections": [[x0, y0, x1, y1, score], ..]}`
    /// or `{"image_id", "query", "error": ".."}` object per line.
    pub fn read(path: &Path) -> Result<Self, CorrgenError> {
        let (_, body) = io::read_tagged(path, DETECTOR_SCRIPT_FORMAT, FORMAT_VERSION)?;
        let mut script = Self::new();
        for line in &body {
            let entry: ScriptLine = io::parse_json_line(line)?;
            let key = (entry.image_id.clone(), name_key(&entry.query));
            if script.entries.contains_key(&key) {
                return Err(FormatError::parse(line.line, format!("duplicate script entry for {key:?}")).into());
            }
            let value = match entry.error {
                Some(msg) => Err(msg),
                None => {
                    let dets = entry
                        .detections
                        .iter()
                        .map(|d| {
                            let b = Box2D::new(d[0], d[1], d[2], d[3])?;
                            ScoredDetection::new(b, 0, d[4])?;
                            Ok((b, d[4]))
                        })
                        .collect::<Result<Vec<_>, GeometryError>>()
                        .map_err(|e| FormatError::parse(line.line, e.to_string()))?;
                    Ok(dets)
                }
            };
            script.entries.insert(key, value);
        }
        Ok(script)
    }
}

impl DetectorClient for ScriptedDetector {
    fn detect(&self, image: &ImageRef, query: &str) -> Result<Vec<ScoredDetection>, DetectorError> {
        match self.entries.get(&(image.image_id.clone(), name_key(query))) {
            None => Ok(Vec::new()),
            Some(Err(msg)) => Err(DetectorError(msg.clone())),
            Some(Ok(dets)) => dets
                .iter()
                .map(|(b, s)| ScoredDetection::new(*b, 0, *s).map_err(|e| DetectorError(e.to_string())))
                .collect(),
        }
    }
}

/// Knobs for the full generation pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub cap: PairingCap,
    pub confidence: f64,
    pub nms_iou: f64,
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cap: PairingCap::default(),
            confidence: crate::geometry::DEFAULT_CONFIDENCE,
            nms_iou: crate::geometry::DEFAULT_NMS_IOU,
            augment: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineOutput {
    pub partition: CategoryPartition,
    /// Sorted by `pair_id`.
    pub records: Vec<CorrespondenceRecord>,
    pub warnings: Vec<Warning>,
}

impl PipelineOutput {
    /// `category_id -> (direct, inferred)` record counts.
    pub fn counts_by_category(&self) -> BTreeMap<u32, (usize, usize)> {
        let mut counts: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for r in &self.records {
            let e = counts.entry(r.category_id).or_default();
            match r.provenance {
                Provenance::Direct => e.0 += 1,
                Provenance::Inferred => e.1 += 1,
            }
        }
        counts
    }
}

/// Partition, direct pairs, inferred pairs, optional augmentation; records
/// come back sorted by `pair_id`.
pub fn run_pipeline(
    aerial: &AnnotationSet,
    ground: &AnnotationSet,
    name_map: &[(String, String)],
    detector: &dyn DetectorClient,
    config: &PipelineConfig,
) -> Result<PipelineOutput, CorrgenError> {
    let partition = partition_categories(&aerial.categories, &ground.categories, name_map)?;
    let direct = direct_correspondence(aerial, ground, &partition, config.cap, config.seed);
    let inferred = inferred_correspondence(
        aerial,
        &ground.image_refs(),
        &partition,
        detector,
        &InferenceConfig {
            confidence: config.confidence,
            nms_iou: config.nms_iou,
            cap: config.cap,
            seed: config.seed,
        },
    )?;
    let mut records = direct.records;
    records.extend(inferred.records);
    let mut warnings = direct.warnings;
    warnings.extend(inferred.warnings);
    if let Some(aug) = &config.augment {
        let augmented = augment_pairs(&records, &aerial.frames(), aug, config.seed)?;
        records = augmented.records;
        warnings.extend(augmented.warnings);
    }
    records.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    Ok(PipelineOutput {
        partition,
        records,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(names: &[&str]) -> CategoryTable {
        names
            .iter()
            .enumerate()
            .map(|(i, n)| (i as u32 + 1, n.to_string()))
            .collect()
    }

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> Box2D {
        Box2D::new(x0, y0, x1, y1).unwrap()
    }

    fn image(id: &str, boxes: Vec<(Box2D, u32)>) -> AnnotationRecord {
        AnnotationRecord {
            image_id: id.into(),
            width: 100.0,
            height: 100.0,
            boxes,
        }
    }

    #[test]
    fn partition_edges() {
        let aerial = table(&["car"]);
        let p = partition_categories(&aerial, &aerial, &[("car".into(), "car".into())]).unwrap();
        assert_eq!(p.common, BTreeSet::from([1]));
        assert!(p.unique_aerial.is_empty());

        let p = partition_categories(&aerial, &CategoryTable::new(), &[("car".into(), "car".into())])
            .unwrap();
        assert!(p.common.is_empty());
        assert_eq!(p.unique_aerial, BTreeSet::from([1]));
    }

    #[test]
    fn partition_rejects_non_injective_maps() {
        let aerial = table(&["car", "truck"]);
        let ground = table(&["automobile"]);
        let map = vec![
            ("car".to_string(), "automobile".to_string()),
            ("truck".to_string(), "Automobile".to_string()),
        ];
        assert!(matches!(
            partition_categories(&aerial, &ground, &map),
            Err(CorrgenError::DuplicateMapping(_))
        ));
        let map = vec![("bus".to_string(), "automobile".to_string())];
        assert!(matches!(
            partition_categories(&aerial, &ground, &map),
            Err(CorrgenError::UnknownAerialCategory(_))
        ));
    }

    #[test]
    fn annotation_validation() {
        let cats = table(&["car"]);
        let outside = image("a", vec![(b(90.0, 90.0, 120.0, 95.0), 1)]);
        assert!(AnnotationSet::new(Source::Aerial, cats.clone(), vec![outside]).is_err());
        let unknown = image("a", vec![(b(0.0, 0.0, 1.0, 1.0), 9)]);
        assert!(AnnotationSet::new(Source::Aerial, cats, vec![unknown]).is_err());
    }

    fn two_by_three() -> (AnnotationSet, AnnotationSet, CategoryPartition) {
        let cats = table(&["car"]);
        let aerial = AnnotationSet::new(
            Source::Aerial,
            cats.clone(),
            vec![image("a1", vec![(b(0.0, 0.0, 5.0, 5.0), 1), (b(10.0, 10.0, 20.0, 20.0), 1)])],
        )
        .unwrap();
        let ground = AnnotationSet::new(
            Source::Ground,
            cats.clone(),
            vec![
                image("g1", vec![(b(1.0, 1.0, 9.0, 9.0), 1)]),
                image("g2", vec![(b(2.0, 2.0, 8.0, 8.0), 1), (b(3.0, 3.0, 7.0, 7.0), 1)]),
            ],
        )
        .unwrap();
        let p = partition_categories(&cats, &cats, &[("car".into(), "car".into())]).unwrap();
        (aerial, ground, p)
    }

    #[test]
    fn direct_cross_product_and_cap() {
        let (aerial, ground, p) = two_by_three();
        let all = direct_correspondence(&aerial, &ground, &p, PairingCap::Unlimited, 3);
        assert_eq!(all.records.len(), 6);
        let mut combos = BTreeSet::new();
        for r in &all.records {
            assert_eq!(r.provenance, Provenance::Direct);
            assert_eq!(r.confidence, 1.0);
            combos.insert((r.aerial.bbox.to_array().map(f64::to_bits), r.ground.bbox.to_array().map(f64::to_bits)));
        }
        assert_eq!(combos.len(), 6);

        let capped = direct_correspondence(&aerial, &ground, &p, PairingCap::AtMost(4), 3);
        assert_eq!(capped.records.len(), 4);
        assert_eq!(capped, direct_correspondence(&aerial, &ground, &p, PairingCap::AtMost(4), 3));
        let empty = direct_correspondence(&aerial, &ground, &CategoryPartition::default(), PairingCap::Unlimited, 3);
        assert!(empty.records.is_empty());
    }

    #[test]
    fn direct_missing_side_warns() {
        let (aerial, _, p) = two_by_three();
        let ground = AnnotationSet::new(Source::Ground, table(&["car"]), vec![image("g", vec![])]).unwrap();
        let out = direct_correspondence(&aerial, &ground, &p, PairingCap::Unlimited, 0);
        assert!(out.records.is_empty());
        assert_eq!(
            out.warnings,
            vec![Warning::NoInstances {
                category_id: 1,
                side: Source::Ground
            }]
        );
    }

    fn unique_setup() -> (AnnotationSet, CategoryPartition, Vec<ImageRef>) {
        let cats = table(&["shed"]);
        let aerial = AnnotationSet::new(
            Source::Aerial,
            cats.clone(),
            vec![image("a1", vec![(b(0.0, 0.0, 5.0, 5.0), 1)])],
        )
        .unwrap();
        let p = partition_categories(&cats, &CategoryTable::new(), &[]).unwrap();
        let imgs = vec![ImageRef {
            image_id: "g1".into(),
            width: 100.0,
            height: 100.0,
        }];
        (aerial, p, imgs)
    }

    #[test]
    fn inferred_threshold_filter() {
        let (aerial, p, imgs) = unique_setup();
        let det = ScriptedDetector::new().with_detections(
            "g1",
            "Shed",
            vec![
                (b(0.0, 0.0, 10.0, 10.0), 0.9),
                (b(20.0, 20.0, 30.0, 30.0), 0.5),
                (b(40.0, 40.0, 50.0, 50.0), 0.2),
            ],
        );
        let cfg = InferenceConfig {
            confidence: 0.3,
            ..Default::default()
        };
        let out = inferred_correspondence(&aerial, &imgs, &p, &det, &cfg).unwrap();
        assert_eq!(out.records.len(), 2);
        assert!(out.records.iter().all(|r| r.provenance == Provenance::Inferred && r.confidence >= 0.3));
    }

    #[test]
    fn inferred_overlap_suppressed() {
        let (aerial, p, imgs) = unique_setup();
        // IoU = 90 / 100 exactly.
        let det = ScriptedDetector::new().with_detections(
            "g1",
            "shed",
            vec![(b(0.0, 0.0, 10.0, 10.0), 0.6), (b(0.0, 0.0, 10.0, 9.0), 0.8)],
        );
        let out = inferred_correspondence(&aerial, &imgs, &p, &det, &InferenceConfig::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].confidence, 0.8);
    }

    #[test]
    fn inferred_failures_are_counted() {
        let (aerial, p, imgs) = unique_setup();
        let det = ScriptedDetector::new().with_failure("g1", "shed", "timeout");
        let out = inferred_correspondence(&aerial, &imgs, &p, &det, &InferenceConfig::default()).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.warnings.len(), 2);
        assert!(matches!(out.warnings[0], Warning::DetectorFailure { .. }));
        assert_eq!(out.warnings[1], Warning::NoSurvivingDetections { category_id: 1 });
    }

    #[test]
    fn rotation_quarter_turn() {
        let rotated = transform_box(&b(10.0, 20.0, 30.0, 40.0), [0.0, 0.0, 100.0, 100.0], Rotation::R90).unwrap();
        assert_eq!(rotated, b(20.0, 70.0, 40.0, 90.0));
        // Non-square frame: 270 degrees followed by one more quarter turn is the identity.
        let original = b(10.0, 20.0, 30.0, 40.0);
        let turned = transform_box(&original, [0.0, 0.0, 100.0, 60.0], Rotation::R270).unwrap();
        // After an odd number of turns the frame is 60 wide.
        assert_eq!(rotate_quarter(&turned, 60.0).unwrap(), original);
    }

    #[test]
    fn augment_identity_and_determinism() {
        let (aerial, ground, p) = two_by_three();
        let recs = direct_correspondence(&aerial, &ground, &p, PairingCap::Unlimited, 0).records;
        let ident = AugmentConfig {
            crop_jitter: 0.0,
            rotations: vec![Rotation::R0],
        };
        let out = augment_pairs(&recs, &aerial.frames(), &ident, 1).unwrap();
        assert_eq!(out.records.len(), 12);
        for (orig, copy) in recs.iter().zip(&out.records[recs.len()..]) {
            assert_eq!(orig.aerial, copy.aerial);
            assert_eq!(orig.ground, copy.ground);
        }
        let cfg = AugmentConfig {
            crop_jitter: 0.3,
            rotations: vec![Rotation::R90, Rotation::R180],
        };
        let a = augment_pairs(&recs, &aerial.frames(), &cfg, 9).unwrap();
        let c = augment_pairs(&recs, &aerial.frames(), &cfg, 9).unwrap();
        assert_eq!(serde_json::to_string(&a.records).unwrap(), serde_json::to_string(&c.records).unwrap());
        assert!(augment_pairs(&recs, &aerial.frames(), &AugmentConfig { crop_jitter: 0.5, rotations: vec![] }, 0).is_err());
    }

    #[test]
    fn augment_drops_collapsed_boxes() {
        let cats = table(&["car"]);
        let aerial = AnnotationSet::new(
            Source::Aerial,
            cats.clone(),
            vec![image("a1", vec![(b(0.0, 0.0, 1.0, 1.0), 1)])],
        )
        .unwrap();
        let rec = CorrespondenceRecord {
            pair_id: "x".into(),
            category_id: 1,
            aerial: BoxRef { image_id: "a1".into(), bbox: b(0.0, 0.0, 1.0, 1.0) },
            ground: BoxRef { image_id: "g".into(), bbox: b(0.0, 0.0, 1.0, 1.0) },
            provenance: Provenance::Direct,
            confidence: 1.0,
            augmentation: None,
        };
        // Any crop margin above 1 px removes the corner box entirely.
        let cfg = AugmentConfig { crop_jitter: 0.49, rotations: vec![Rotation::R0; 8] };
        let out = augment_pairs(&[rec], &aerial.frames(), &cfg, 5).unwrap();
        assert!(!out.warnings.is_empty());
        assert_eq!(out.records.len() + out.warnings.len(), 9);
    }
}
