//! Run configuration: one TOML file, every key optional, unknown keys rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crossview_core::align::{
    AdamConfig, DetectionLossConfig, EncoderKind, LossConfig, LossWeights, SimilarityMode, SyntheticConfig,
    TrainConfig,
};
use crossview_core::corrgen::{AugmentConfig, PairingCap, PipelineConfig, Rotation};
use crossview_core::seeding::sub_seed;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub corrgen: CorrgenSection,
    pub vocab: VocabSection,
    pub train: TrainSection,
    pub gradcheck: GradcheckSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub aerial_annotations: Option<PathBuf>,
    pub ground_annotations: Option<PathBuf>,
    pub detector_script: Option<PathBuf>,
    /// Correspondence dataset written by corrgen and read by train.
    pub aligned: Option<PathBuf>,
    /// Annotation file whose category table vocab expands; defaults to the
    /// aerial annotations.
    pub categories: Option<PathBuf>,
    pub text_bags: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrgenSection {
    /// Pairs kept per category; 0 keeps all.
    pub cap: usize,
    pub confidence: f64,
    pub nms_iou: f64,
    /// Aerial category name to ground category name.
    pub name_map: BTreeMap<String, String>,
    pub augment: bool,
    pub crop_jitter: f64,
    pub rotations: Vec<u16>,
}

impl Default for CorrgenSection {
    fn default() -> Self {
        let aug = AugmentConfig::default();
        Self {
            cap: crossview_core::corrgen::DEFAULT_PAIRING_CAP,
            confidence: crossview_core::geometry::DEFAULT_CONFIDENCE,
            nms_iou: crossview_core::geometry::DEFAULT_NMS_IOU,
            name_map: BTreeMap::new(),
            augment: false,
            crop_jitter: aug.crop_jitter,
            rotations: aug.rotations.iter().map(|r| r.degrees()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    /// Recorded synonym table first, phrase templates otherwise.
    Reference,
    /// Phrase templates only.
    Template,
    /// Canonical name only.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabSection {
    pub generator: GeneratorKind,
    /// Bag size cap, canonical name included.
    pub max_variants: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        Self {
            generator: GeneratorKind::Reference,
            max_variants: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Synthetic,
    Features,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub dim: usize,
    pub aerial_noise: f64,
    pub instance_spread: f64,
    pub text_spread: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let s = SyntheticConfig::default();
        Self {
            dim: s.dim,
            aerial_noise: s.aerial_noise,
            instance_spread: s.instance_spread,
            text_spread: s.text_spread,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub encoder: String,
    /// Hidden width of the `mlp` encoder.
    pub hidden: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub rho: f64,
    pub sigma: f64,
    pub weights: LossWeights,
    pub similarity: SimilarityMode,
    pub symmetric: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub provider: ProviderKind,
    pub synthetic: SyntheticSection,
    pub resume: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let loss = LossConfig::default();
        let adam = AdamConfig::default();
        let t = TrainConfig::default();
        Self {
            encoder: "linear".into(),
            hidden: 32,
            embed_dim: t.embed_dim,
            epochs: t.epochs,
            batch_size: t.batch_size,
            rho: loss.rho,
            sigma: loss.sigma,
            weights: loss.weights,
            similarity: loss.similarity,
            symmetric: loss.symmetric,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            provider: ProviderKind::Synthetic,
            synthetic: SyntheticSection::default(),
            resume: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub instances: usize,
    /// Finite-difference steps; every loss is checked at each.
    pub h: Vec<f64>,
    pub tolerance: f64,
    pub max_dim: usize,
    pub max_batch: usize,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            instances: 50,
            h: vec![1e-5],
            tolerance: 1e-4,
            max_dim: 16,
            max_batch: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Table,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub name: String,
    pub novel: Vec<u32>,
    pub format: OutputFormat,
    /// Precomputed split means; when both are set eval skips matching and
    /// only combines them.
    pub map_base: Option<f64>,
    pub map_novel: Option<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            name: "run".into(),
            novel: Vec::new(),
            format: OutputFormat::Table,
            map_base: None,
            map_novel: None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn ratio(name: &str, v: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(format!("{name} = {v} must lie in [0, 1]")))
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} = {v} must be positive")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    /// Range checks for every numeric knob.
    pub fn validate(&self) -> Result<(), CliError> {
        let c = &self.corrgen;
        ratio("corrgen.confidence", c.confidence)?;
        ratio("corrgen.nms_iou", c.nms_iou)?;
        if !(0.0..0.5).contains(&c.crop_jitter) {
            return Err(invalid(format!("corrgen.crop_jitter = {} must lie in [0, 0.5)", c.crop_jitter)));
        }
        self.rotations()?;
        if self.vocab.max_variants == 0 {
            return Err(invalid("vocab.max_variants must be at least 1"));
        }
        let t = &self.train;
        self.train_config()?.validate().map_err(|e| invalid(e.to_string()))?;
        if t.epochs == 0 {
            return Err(invalid("train.epochs must be at least 1"));
        }
        if t.synthetic.dim == 0 {
            return Err(invalid("train.synthetic.dim must be positive"));
        }
        for (name, v) in [
            ("train.synthetic.aerial_noise", t.synthetic.aerial_noise),
            ("train.synthetic.instance_spread", t.synthetic.instance_spread),
            ("train.synthetic.text_spread", t.synthetic.text_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} = {v} must be >= 0")));
            }
        }
        let g = &self.gradcheck;
        if g.instances == 0 || g.h.is_empty() || g.max_dim < 2 || g.max_batch == 0 {
            return Err(invalid("gradcheck needs instances >= 1, at least one h, max_dim >= 2, max_batch >= 1"));
        }
        for &h in &g.h {
            positive("gradcheck.h", h)?;
        }
        positive("gradcheck.tolerance", g.tolerance)?;
        for (name, v) in [("eval.map_base", self.eval.map_base), ("eval.map_novel", self.eval.map_novel)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(invalid(format!("{name} = {v} must be >= 0")));
                }
            }
        }
        Ok(())
    }

    pub fn rotations(&self) -> Result<Vec<Rotation>, CliError> {
        self.corrgen
            .rotations
            .iter()
            .map(|&d| Rotation::try_from(d).map_err(|e| invalid(format!("corrgen.rotations: {e}"))))
            .collect()
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, CliError> {
        let c = &self.corrgen;
        Ok(PipelineConfig {
            cap: if c.cap == 0 { PairingCap::Unlimited } else { PairingCap::AtMost(c.cap) },
            confidence: c.confidence,
            nms_iou: c.nms_iou,
            augment: c.augment.then(|| -> Result<AugmentConfig, CliError> {
                Ok(AugmentConfig {
                    crop_jitter: c.crop_jitter,
                    rotations: self.rotations()?,
                })
            }).transpose()?,
            seed: self.seed,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let encoder = match t.encoder.as_str() {
            "linear" => EncoderKind::Linear,
            "mlp" => EncoderKind::Mlp { hidden: t.hidden },
            other => return Err(invalid(format!("train.encoder {other:?} is not linear or mlp"))),
        };
        Ok(TrainConfig {
            encoder,
            embed_dim: t.embed_dim,
            loss: LossConfig {
                rho: t.rho,
                sigma: t.sigma,
                weights: t.weights,
                similarity: t.similarity,
                symmetric: t.symmetric,
                detection: DetectionLossConfig::default(),
            },
            adam: AdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: sub_seed(self.seed, "train-config", 0),
        })
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        let s = &self.train.synthetic;
        SyntheticConfig {
            dim: s.dim,
            aerial_noise: s.aerial_noise,
            instance_spread: s.instance_spread,
            text_spread: s.text_spread,
            seed: sub_seed(self.seed, "synthetic", 0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
        let parsed: RunConfig = toml::from_str("").unwrap();
        assert_eq!(parsed, RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[train]\nrate = 0.1").is_err());
        assert!(toml::from_str::<RunConfig>("[train.weights]\nbox = 1.0").is_err());
    }

    #[test]
    fn ranges_checked() {
        let bad: RunConfig = toml::from_str("[corrgen]\nconfidence = 1.5").unwrap();
        assert!(matches!(bad.validate(), Err(CliError::Validation(_))));
        let bad: RunConfig = toml::from_str("[train]\nrho = 0.0").unwrap();
        assert!(bad.validate().is_err());
        let bad: RunConfig = toml::from_str("[corrgen]\nrotations = [45]").unwrap();
        assert!(bad.validate().is_err());
        let bad: RunConfig = toml::from_str("[gradcheck]\nh = []").unwrap();
        assert!(bad.validate().is_err());
    }
}
