//! Seeded minibatch training of the aerial encoder against frozen ground and
//! text embeddings.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderKind, EncoderParams};
use super::loss::{bag_prototypes, total_loss, AlignmentBatch, DetectionInputs, LossConfig};
use super::optim::{adam_step, AdamConfig, AdamState};
use super::provider::EmbeddingProvider;
use super::AlignError;
use crate::corrgen::CorrespondenceRecord;
use crate::io::FormatError;
use crate::seeding::{fnv1a, stream_rng, sub_seed};
use crate::vocab::TextBag;

pub const CHECKPOINT_FORMAT: &str = "crossview-checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub encoder: EncoderKind,
    pub embed_dim: usize,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Linear,
            embed_dim: 16,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            epochs: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        self.loss.validate()?;
        self.adam.validate()?;
        if self.embed_dim == 0 || self.batch_size == 0 {
            return Err(AlignError::InvalidConfig("embed_dim and batch_size must be positive".into()));
        }
        if let EncoderKind::Mlp { hidden: 0 } = self.encoder {
            return Err(AlignError::InvalidConfig("MLP hidden width must be positive".into()));
        }
        Ok(())
    }

    /// Hash of every setting except `epochs`, so a run can be extended on resume.
    pub fn hash(&self) -> String {
        let mut c = *self;
        c.epochs = 0;
        let json = serde_json::to_vec(&c).expect("config serializes");
        format!("{:016x}", fnv1a(&json))
    }
}

/// Per-step loss components, recorded before the parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub l_ag: f64,
    pub l_at: f64,
    pub l_cls: f64,
    pub l_box: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub aerial: EncoderParams,
    /// Snapshot used for ground and text embeddings; never updated.
    pub frozen: EncoderParams,
    pub adam: AdamState,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub encoder: EncoderKind,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub aerial_params: Vec<f64>,
    pub frozen_params: Vec<f64>,
    pub adam: AdamState,
    pub step: u64,
    pub seed: u64,
    pub config_hash: String,
}

/// Training data prepared once: encoder inputs for every record and text rows
/// grouped by bag.
pub struct Trainer {
    config: TrainConfig,
    input_dim: usize,
    pair_ids: Vec<String>,
    aerial_inputs: Array2<f64>,
    ground_inputs: Array2<f64>,
    /// Bag position of each record, when text bags are in use.
    record_bag: Option<Vec<usize>>,
    bag_inputs: Vec<Array2<f64>>,
}

fn stack(rows: Vec<Vec<f64>>, dim: usize) -> Result<Array2<f64>, AlignError> {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * dim);
    for r in rows {
        if r.len() != dim {
            return Err(AlignError::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        flat.extend(r);
    }
    Array2::from_shape_vec((n, dim), flat).map_err(|e| AlignError::ShapeMismatch(e.to_string()))
}

impl Trainer {
    /// With an empty `bags` slice only the aerial–ground objective has inputs.
    pub fn new(
        dataset: &[CorrespondenceRecord],
        bags: &[TextBag],
        provider: &dyn EmbeddingProvider,
        config: TrainConfig,
    ) -> Result<Self, AlignError> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(AlignError::EmptyBatch);
        }
        let dim = provider.input_dim();
        let aerial_inputs = stack(
            dataset.iter().map(|r| provider.aerial_input(r)).collect::<Result<_, _>>()?,
            dim,
        )?;
        let ground_inputs = stack(
            dataset.iter().map(|r| provider.ground_input(r)).collect::<Result<_, _>>()?,
            dim,
        )?;
        let (record_bag, bag_inputs) = if bags.is_empty() {
            let w = config.loss.weights;
            if w.aerial_text > 0.0 || w.classification > 0.0 {
                return Err(AlignError::InvalidConfig(
                    "text and classification weights need text bags; set them to 0 or supply bags".into(),
                ));
            }
            (None, Vec::new())
        } else {
            let position: BTreeMap<u32, usize> =
                bags.iter().enumerate().map(|(i, b)| (b.category_id, i)).collect();
            let record_bag = dataset
                .iter()
                .map(|r| position.get(&r.category_id).copied().ok_or(AlignError::MissingBag(r.category_id)))
                .collect::<Result<Vec<_>, _>>()?;
            let bag_inputs = bags
                .iter()
                .map(|b| {
                    let rows = b
                        .variants
                        .iter()
                        .map(|v| provider.text_input(b, v))
                        .collect::<Result<Vec<_>, _>>()?;
                    stack(rows, dim)
                })
                .collect::<Result<Vec<_>, _>>()?;
            (Some(record_bag), bag_inputs)
        };
        Ok(Self {
            config,
            input_dim: dim,
            pair_ids: dataset.iter().map(|r| r.pair_id.clone()).collect(),
            aerial_inputs,
            ground_inputs,
            record_bag,
            bag_inputs,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.pair_ids.len().div_ceil(self.config.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.config.epochs as u64
    }

    pub fn init_state(&self) -> TrainState {
        let aerial = EncoderParams::init(
            self.config.encoder,
            self.input_dim,
            self.config.embed_dim,
            sub_seed(self.config.seed, "encoder", 0),
        );
        let mut frozen = aerial.clone();
        frozen.trainable = false;
        TrainState {
            adam: AdamState::new(aerial.num_params()),
            aerial,
            frozen,
            step: 0,
        }
    }

    fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.pair_ids.len()).collect();
        order.shuffle(&mut stream_rng(self.config.seed, "train", epoch));
        order
    }

    /// Runs every remaining step of the configured schedule.
    pub fn run(&self, state: &mut TrainState) -> Result<Vec<TraceRow>, AlignError> {
        self.run_until(state, self.total_steps())
    }

    /// Runs from `state.step` up to (excluding) `until`, capped at the schedule length.
    pub fn run_until(&self, state: &mut TrainState, until: u64) -> Result<Vec<TraceRow>, AlignError> {
        let until = until.min(self.total_steps());
        let ground = state.frozen.encode_batch(&self.ground_inputs)?;
        let texts = self
            .bag_inputs
            .iter()
            .map(|x| state.frozen.encode_batch(x))
            .collect::<Result<Vec<_>, _>>()?;
        let spe = self.steps_per_epoch();
        let bs = self.config.batch_size;
        let mut trace = Vec::new();
        let mut cached: Option<(u64, Vec<usize>)> = None;
        while state.step < until {
            let epoch = state.step / spe;
            if cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
                cached = Some((epoch, self.epoch_order(epoch)));
            }
            let order = &cached.as_ref().expect("set above").1;
            let start = (state.step % spe) as usize * bs;
            let idx = &order[start..(start + bs).min(order.len())];
            trace.push(self.step(state, idx, &ground, &texts)?);
        }
        Ok(trace)
    }

    fn step(
        &self,
        state: &mut TrainState,
        idx: &[usize],
        ground: &Array2<f64>,
        texts: &[Array2<f64>],
    ) -> Result<TraceRow, AlignError> {
        let inputs = self.aerial_inputs.select(Axis(0), idx);
        let (aerial, cache) = state.aerial.forward(&inputs)?;
        let mut batch = AlignmentBatch::image_pairs(aerial.clone(), ground.select(Axis(0), idx));
        let mut detection = DetectionInputs::default();

        if let Some(record_bag) = &self.record_bag {
            let mut candidates: Vec<usize> = idx.iter().map(|&i| record_bag[i]).collect();
            candidates.sort_unstable();
            candidates.dedup();
            let local = |bag: usize| candidates.binary_search(&bag).expect("candidate present");
            let views: Vec<_> = candidates.iter().map(|&b| texts[b].view()).collect();
            batch.texts = concatenate(Axis(0), &views).map_err(|e| AlignError::ShapeMismatch(e.to_string()))?;
            batch.text_bag = candidates
                .iter()
                .enumerate()
                .flat_map(|(k, &b)| std::iter::repeat_n(k, texts[b].nrows()))
                .collect();
            batch.positives = idx.iter().map(|&i| vec![local(record_bag[i])]).collect();
            detection.prototypes =
                bag_prototypes(&batch.texts, &batch.text_bag, candidates.len(), self.config.loss.similarity)?;
            detection.labels = idx.iter().map(|&i| local(record_bag[i])).collect();
            detection.regions = aerial;
        }

        let loss = total_loss(&batch, &detection, &self.config.loss)?;
        let row = TraceRow {
            step: state.step,
            l_ag: loss.components.aerial_ground,
            l_at: loss.components.aerial_text,
            l_cls: loss.components.classification,
            l_box: loss.components.box_regression,
            total: loss.total,
        };
        if !loss.total.is_finite() {
            let ids: Vec<&str> = idx.iter().map(|&i| self.pair_ids[i].as_str()).collect();
            return Err(AlignError::NonFiniteLoss {
                step: state.step,
                pair_ids: ids.join(","),
            });
        }
        let mut grad_out = loss.aerial_grad;
        if loss.region_grad.nrows() == grad_out.nrows() {
            grad_out += &loss.region_grad;
        }
        let grads = state.aerial.backward(&cache, &grad_out);
        let mut flat = state.aerial.to_flat();
        adam_step(&mut flat, &grads.0, &mut state.adam, &self.config.adam)?;
        state.aerial.set_flat(&flat)?;
        state.step += 1;
        Ok(row)
    }

    pub fn checkpoint(&self, state: &TrainState) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            encoder: self.config.encoder,
            input_dim: self.input_dim,
            embed_dim: self.config.embed_dim,
            aerial_params: state.aerial.to_flat(),
            frozen_params: state.frozen.to_flat(),
            adam: state.adam.clone(),
            step: state.step,
            seed: self.config.seed,
            config_hash: self.config.hash(),
        }
    }

    /// Restores a state, refusing checkpoints written under other settings.
    pub fn restore(&self, ckpt: &Checkpoint) -> Result<TrainState, AlignError> {
        if ckpt.config_hash != self.config.hash() || ckpt.seed != self.config.seed {
            return Err(AlignError::Checkpoint(format!(
                "checkpoint config {} does not match current config {}",
                ckpt.config_hash,
                self.config.hash()
            )));
        }
        if ckpt.input_dim != self.input_dim || ckpt.embed_dim != self.config.embed_dim || ckpt.encoder != self.config.encoder {
            return Err(AlignError::Checkpoint("encoder shape differs from configuration".into()));
        }
        let aerial = EncoderParams::from_flat(ckpt.encoder, ckpt.input_dim, ckpt.embed_dim, &ckpt.aerial_params)?;
        let mut frozen = EncoderParams::from_flat(ckpt.encoder, ckpt.input_dim, ckpt.embed_dim, &ckpt.frozen_params)?;
        frozen.trainable = false;
        if ckpt.adam.m.len() != aerial.num_params() || ckpt.adam.v.len() != aerial.num_params() {
            return Err(AlignError::Checkpoint("optimizer state size differs from encoder".into()));
        }
        Ok(TrainState {
            aerial,
            frozen,
            adam: ckpt.adam.clone(),
            step: ckpt.step,
        })
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), AlignError> {
    let mut text = serde_json::to_string_pretty(ckpt).map_err(|e| AlignError::Checkpoint(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| FormatError::io(path, e).into())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, AlignError> {
    let text = std::fs::read_to_string(path).map_err(|e| AlignError::from(FormatError::io(path, e)))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| AlignError::Checkpoint(e.to_string()))?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != 1 {
        return Err(AlignError::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            ckpt.format, ckpt.version
        )));
    }
    Ok(ckpt)
}

const TRACE_HEADER: [&str; 6] = ["step", "l_ag", "l_at", "l_cls", "l_box", "total"];

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<(), AlignError> {
    let to_err = |e: csv::Error| AlignError::from(FormatError::io(path, std::io::Error::other(e)));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(TRACE_HEADER).map_err(to_err)?;
    for r in rows {
        w.serialize((r.step, r.l_ag, r.l_at, r.l_cls, r.l_box, r.total)).map_err(to_err)?;
    }
    w.flush().map_err(|e| FormatError::io(path, e).into())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>, AlignError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| FormatError::io(path, std::io::Error::other(e)))?;
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize::<(u64, f64, f64, f64, f64, f64)>().enumerate() {
        let (step, l_ag, l_at, l_cls, l_box, total) = rec.map_err(|e| FormatError::parse(i + 2, e.to_string()))?;
        rows.push(TraceRow {
            step,
            l_ag,
            l_at,
            l_cls,
            l_box,
            total,
        });
    }
    Ok(rows)
}
