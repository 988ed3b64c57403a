//! Sources of encoder inputs for correspondence records and text variants.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::AlignError;
use crate::corrgen::CorrespondenceRecord;
use crate::io::{self, FormatError};
use crate::seeding::{fnv1a, stream_rng};
use crate::vocab::{TextBag, Variant};

pub const FEATURES_FORMAT: &str = "crossview-features";

/// Supplies `input_dim`-length feature vectors for the encoders.
pub trait EmbeddingProvider {
    fn input_dim(&self) -> usize;
    fn aerial_input(&self, record: &CorrespondenceRecord) -> Result<Vec<f64>, AlignError>;
    fn ground_input(&self, record: &CorrespondenceRecord) -> Result<Vec<f64>, AlignError>;
    fn text_input(&self, bag: &TextBag, variant: &Variant) -> Result<Vec<f64>, AlignError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub dim: usize,
    /// Standard deviation of the per-coordinate noise added to aerial inputs.
    pub aerial_noise: f64,
    /// Spread of instance latents around their class latent.
    pub instance_spread: f64,
    /// Spread of text latents around their class latent.
    pub text_spread: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            aerial_noise: 0.1,
            instance_spread: 0.5,
            text_spread: 0.5,
            seed: 0,
        }
    }
}

/// Latent-variable world: every category has a unit class latent, every
/// ground instance a latent scattered around it. Ground and text inputs are
/// undistorted latents; aerial inputs pass the instance latent through a fixed
/// random linear distortion and add Gaussian noise.
///
/// Everything is derived by hashing record fields, so any correspondence
/// record gets stable features.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    config: SyntheticConfig,
    distortion: Array2<f64>,
}

fn gaussian(seed: u64, stream: &str, key: u64, dim: usize) -> Array1<f64> {
    let mut rng = stream_rng(seed, stream, key);
    Array1::from_shape_simple_fn(dim, || rng.sample::<f64, _>(StandardNormal))
}

fn unit(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    v / n
}

impl SyntheticWorld {
    pub fn new(config: SyntheticConfig) -> Result<Self, AlignError> {
        if config.dim == 0 {
            return Err(AlignError::InvalidConfig("synthetic dim must be positive".into()));
        }
        for (name, v) in [
            ("aerial_noise", config.aerial_noise),
            ("instance_spread", config.instance_spread),
            ("text_spread", config.text_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(AlignError::InvalidConfig(format!("{name} = {v} must be >= 0")));
            }
        }
        let d = config.dim;
        let mut rng = stream_rng(config.seed, "synthetic-distortion", 0);
        let scale = 1.0 / (d as f64).sqrt();
        let distortion =
            Array2::from_shape_simple_fn((d, d), || rng.sample::<f64, _>(StandardNormal) * scale);
        Ok(Self { config, distortion })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn class_latent(&self, category_id: u32) -> Array1<f64> {
        unit(gaussian(self.config.seed, "synthetic-class", u64::from(category_id), self.config.dim))
    }

    fn ground_key(record: &CorrespondenceRecord) -> u64 {
        let mut bytes = record.ground.image_id.as_bytes().to_vec();
        for c in record.ground.bbox.to_array() {
            bytes.extend(c.to_bits().to_le_bytes());
        }
        bytes.extend(record.category_id.to_le_bytes());
        fnv1a(&bytes)
    }

    /// Instance latent keyed by the ground side of the record, so augmented
    /// copies of a pair share it.
    pub fn instance_latent(&self, record: &CorrespondenceRecord) -> Array1<f64> {
        let d = self.config.dim;
        let jitter = gaussian(self.config.seed, "synthetic-instance", Self::ground_key(record), d);
        unit(self.class_latent(record.category_id) + jitter * (self.config.instance_spread / (d as f64).sqrt()))
    }
}

impl EmbeddingProvider for SyntheticWorld {
    fn input_dim(&self) -> usize {
        self.config.dim
    }

    fn aerial_input(&self, record: &CorrespondenceRecord) -> Result<Vec<f64>, AlignError> {
        let z = self.instance_latent(record);
        let noise = gaussian(self.config.seed, "synthetic-aerial-noise", fnv1a(record.pair_id.as_bytes()), self.config.dim);
        Ok((self.distortion.dot(&z) + noise * self.config.aerial_noise).to_vec())
    }

    fn ground_input(&self, record: &CorrespondenceRecord) -> Result<Vec<f64>, AlignError> {
        Ok(self.instance_latent(record).to_vec())
    }

    fn text_input(&self, bag: &TextBag, variant: &Variant) -> Result<Vec<f64>, AlignError> {
        let d = self.config.dim;
        let mut key = bag.category_id.to_le_bytes().to_vec();
        key.extend(variant.key.as_bytes());
        let jitter = gaussian(self.config.seed, "synthetic-text", fnv1a(&key), d);
        Ok(unit(self.class_latent(bag.category_id) + jitter * (self.config.text_spread / (d as f64).sqrt())).to_vec())
    }
}

/// Precomputed feature vectors keyed by image id; text variants are keyed
/// `text:<normalized variant>`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    dim: usize,
    rows: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct FeatureHeader {
    format: String,
    version: u32,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureLine {
    id: String,
    values: Vec<f64>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, values: Vec<f64>) -> Result<(), AlignError> {
        if values.len() != self.dim {
            return Err(AlignError::DimensionMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AlignError::NonFinite("feature vector"));
        }
        self.rows.insert(id.into(), values);
        Ok(())
    }

    pub fn text_key(variant: &Variant) -> String {
        format!("text:{}", variant.key)
    }

    fn lookup(&self, id: &str) -> Result<Vec<f64>, AlignError> {
        self.rows
            .get(id)
            .cloned()
            .ok_or_else(|| AlignError::Provider(format!("no features for {id:?}")))
    }

    pub fn read(path: &Path) -> Result<Self, AlignError> {
        let (header, body) = io::read_tagged(path, FEATURES_FORMAT, 1)?;
        let header: FeatureHeader = serde_json::from_value(header)
            .map_err(|e| FormatError::parse(1, format!("invalid header: {e}")))?;
        let mut table = Self::new(header.dim);
        for line in &body {
            let row: FeatureLine = io::parse_json_line(line)?;
            if table.rows.contains_key(&row.id) {
                return Err(FormatError::parse(line.line, format!("duplicate id {:?}", row.id)).into());
            }
            table
                .insert(row.id, row.values)
                .map_err(|e| FormatError::parse(line.line, e.to_string()))?;
        }
        Ok(table)
    }

    pub fn write(&self, path: &Path) -> Result<(), AlignError> {
        let header = FeatureHeader {
            format: FEATURES_FORMAT.into(),
            version: 1,
            dim: self.dim,
        };
        let lines = self.rows.iter().map(|(id, values)| FeatureLine {
            id: id.clone(),
            values: values.clone(),
        });
        io::write_tagged(path, &header, lines)?;
        Ok(())
    }
}

impl EmbeddingProvider for FeatureTable {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn aerial_input(&self, record: &CorrespondenceRecord) -> Result<Vec<f64>, AlignError> {
        self.lookup(&record.aerial.image_id)
    }

    fn ground_input(&self, record: &CorrespondenceRecord) -> Result<Vec<f64>, AlignError> {
        self.lookup(&record.ground.image_id)
    }

    fn text_input(&self, _bag: &TextBag, variant: &Variant) -> Result<Vec<f64>, AlignError> {
        self.lookup(&Self::text_key(variant))
    }
}
