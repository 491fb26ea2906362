use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frgca::{init_frgca, AttentionVariant, FrgcaConfig, ScoreScale};
use crate::frlp::{init_frlp, ProjectorMode};
use crate::geometry::{default_partition, PatchGrid};
use crate::nn::ParamSet;
use crate::toytrain::decoder::{init_decoder, DEFAULT_CONTEXT_CAP};
use crate::toytrain::model::{ModelParams, ParamGroup, Pipeline};
use crate::toytrain::optim::{cosine_lr, AdamW, AdamWConfig};
use crate::toytrain::synth::{synth_dataset, Sample, SynthShape, TaskKind, MIN_VOCAB};
use crate::toytrain::vision::init_vision;

pub const PRETRAIN_LR: f64 = 1e-4;
pub const FINETUNE_LR: f64 = 2e-5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Only the landmark projector and cross-attention learn.
    #[default]
    Pretrain,
    /// Every group learns.
    Finetune,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyDims {
    pub frames: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub dim: usize,
    pub raw_dim: usize,
    pub attn_dim: Option<usize>,
    pub heads: usize,
    pub vocab: usize,
}

impl Default for ToyDims {
    fn default() -> Self {
        Self {
            frames: 1,
            grid_rows: 4,
            grid_cols: 4,
            dim: 16,
            raw_dim: 16,
            attn_dim: None,
            heads: 2,
            vocab: MIN_VOCAB,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    /// Defaults to the stage learning rate.
    pub lr: Option<f64>,
    pub epochs: usize,
    pub schedule: Schedule,
    pub seed: u64,
    pub dims: ToyDims,
    pub variant: AttentionVariant,
    pub projector: ProjectorMode,
    pub score_scale: ScoreScale,
    pub qkv_bias: bool,
    pub task: TaskKind,
    pub train_size: usize,
    pub eval_size: usize,
    pub context_cap: usize,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Pretrain,
            lr: None,
            epochs: 1,
            schedule: Schedule::Cosine,
            seed: 0,
            dims: ToyDims::default(),
            variant: AttentionVariant::Frgca,
            projector: ProjectorMode::Full,
            score_scale: ScoreScale::PerHead,
            qkv_bias: true,
            task: TaskKind::RegionShift,
            train_size: 1000,
            eval_size: 200,
            context_cap: DEFAULT_CONTEXT_CAP,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn base_lr(&self) -> f64 {
        self.lr.unwrap_or(match self.stage {
            Stage::Pretrain => PRETRAIN_LR,
            Stage::Finetune => FINETUNE_LR,
        })
    }

    pub fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.dims.grid_rows, self.dims.grid_cols)
    }

    pub fn synth_shape(&self) -> Result<SynthShape> {
        Ok(SynthShape {
            frames: self.dims.frames,
            grid: self.grid()?,
            raw_dim: self.dims.raw_dim,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.base_lr();
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {lr} must be finite and non-negative")));
        }
        if self.dims.frames == 0 || self.dims.frames > crate::geometry::DEFAULT_MAX_FRAMES {
            return Err(Error::InvalidConfig(format!(
                "frames must be in 1..={}",
                crate::geometry::DEFAULT_MAX_FRAMES
            )));
        }
        if self.dims.vocab < MIN_VOCAB {
            return Err(Error::InvalidConfig(format!(
                "synthetic task needs a vocabulary of at least {MIN_VOCAB}"
            )));
        }
        self.grid()?;
        Ok(())
    }

    /// Reads JSON, or TOML when the extension is `.toml`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        } else {
            serde_json::from_str(&text)?
        };
        config.validate()?;
        Ok(config)
    }
}

/// Frozen flags for each parameter group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainableSet {
    frozen: BTreeMap<ParamGroup, bool>,
}

impl TrainableSet {
    pub fn for_stage(stage: Stage) -> Self {
        let frozen = ParamGroup::ALL
            .into_iter()
            .map(|g| {
                let trains = match stage {
                    Stage::Pretrain => matches!(g, ParamGroup::Frlp | ParamGroup::Frgca),
                    Stage::Finetune => true,
                };
                (g, !trains)
            })
            .collect();
        Self { frozen }
    }

    pub fn is_trainable(&self, g: ParamGroup) -> bool {
        !self.frozen[&g]
    }

    pub fn trainable(&self) -> Vec<ParamGroup> {
        ParamGroup::ALL.into_iter().filter(|&g| self.is_trainable(g)).collect()
    }
}

pub fn build_pipeline(config: &TrainConfig) -> Result<Pipeline> {
    Ok(Pipeline {
        partition: default_partition(),
        grid: config.grid()?,
        variant: config.variant,
        projector: config.projector,
        context_cap: config.context_cap,
    })
}

/// Freshly initialized parameters; each module draws its own seed from one
/// generator seeded with `config.seed`.
pub fn init_model(config: &TrainConfig) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.dims.dim;
    let frgca_config = FrgcaConfig {
        attn_dim: config.dims.attn_dim,
        heads: config.dims.heads,
        scale: config.score_scale,
        qkv_bias: config.qkv_bias,
    };
    Ok(ModelParams {
        vision: init_vision(config.dims.raw_dim, d, rng.next_u64())?,
        frlp: init_frlp(d, &default_partition(), rng.next_u64())?,
        frgca: init_frgca(d, &frgca_config, rng.next_u64())?,
        decoder: init_decoder(config.dims.vocab, d, rng.next_u64())?,
    })
}

/// Train and eval sets. Seeds derive from `config.seed` but are independent
/// of the parameter-initialization stream.
pub fn make_datasets(config: &TrainConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a);
    let shape = config.synth_shape()?;
    let train = synth_dataset(rng.next_u64(), config.train_size, config.task, &shape)?;
    let eval = synth_dataset(rng.next_u64(), config.eval_size, config.task, &shape)?;
    Ok((train, eval))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,lr,loss\n");
    for r in trace {
        writeln!(out, "{},{},{}", r.step, r.lr, r.loss).expect("writing to a String");
    }
    out
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
}

/// AdamW over `epochs` shuffled passes with batch size one and cosine decay.
/// Frozen groups are never written.
pub fn train(
    config: &TrainConfig,
    pipeline: &Pipeline,
    mut params: ModelParams,
    dataset: &[Sample],
) -> Result<TrainOutcome> {
    config.validate()?;
    let trainable = TrainableSet::for_stage(config.stage);
    let total = config.epochs * dataset.len();
    let base = config.base_lr();
    let mut opt = AdamW::new(config.optimizer);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0bde_5eed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(total);
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut order_rng);
        for &i in &order {
            let (loss, grads) = pipeline.loss_and_grad(&params, &dataset[i])?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, loss });
            }
            let lr = match config.schedule {
                Schedule::Cosine => cosine_lr(base, step, total),
            };
            for g in trainable.trainable() {
                opt.step(params.group_mut(g), grads.group(g), g.prefix(), lr);
            }
            trace.push(TraceRow { step, lr, loss });
            step += 1;
        }
    }
    if !params.all_finite() {
        return Err(Error::NonFinite("parameters after training".into()));
    }
    Ok(TrainOutcome { params, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_loss: f64,
    pub accuracy: f64,
    pub samples: usize,
}

pub fn evaluate(pipeline: &Pipeline, params: &ModelParams, dataset: &[Sample]) -> Result<EvalSummary> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("evaluation set".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    for s in dataset {
        loss += pipeline.loss(params, s)?;
        if pipeline.predict(params, s)? == s.label {
            correct += 1;
        }
    }
    let n = dataset.len() as f64;
    Ok(EvalSummary {
        mean_loss: loss / n,
        accuracy: correct as f64 / n,
        samples: dataset.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        TrainConfig {
            train_size: 16,
            eval_size: 8,
            dims: ToyDims { dim: 8, raw_dim: 4, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn stage_sets() {
        let pre = TrainableSet::for_stage(Stage::Pretrain);
        assert_eq!(pre.trainable(), vec![ParamGroup::Frlp, ParamGroup::Frgca]);
        let fine = TrainableSet::for_stage(Stage::Finetune);
        assert_eq!(fine.trainable(), ParamGroup::ALL.to_vec());
    }

    #[test]
    fn stage_learning_rates() {
        assert_eq!(TrainConfig::default().base_lr(), 1e-4);
        let c = TrainConfig { stage: Stage::Finetune, ..Default::default() };
        assert_eq!(c.base_lr(), 2e-5);
        let c = TrainConfig { lr: Some(3e-3), ..c };
        assert_eq!(c.base_lr(), 3e-3);
    }

    #[test]
    fn zero_epochs_leave_params_untouched() {
        let cfg = TrainConfig { epochs: 0, ..small() };
        let pipe = build_pipeline(&cfg).unwrap();
        let params = init_model(&cfg).unwrap();
        let (train_set, _) = make_datasets(&cfg).unwrap();
        let out = train(&cfg, &pipe, params.clone(), &train_set).unwrap();
        assert_eq!(out.params, params);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn pretrain_freezes_vision_and_decoder() {
        let cfg = small();
        let pipe = build_pipeline(&cfg).unwrap();
        let params = init_model(&cfg).unwrap();
        let (train_set, _) = make_datasets(&cfg).unwrap();
        let out = train(&cfg, &pipe, params.clone(), &train_set).unwrap();
        for g in [ParamGroup::Vision, ParamGroup::Decoder] {
            assert_eq!(out.params.group_bytes(g), params.group_bytes(g));
        }
        for g in [ParamGroup::Frlp, ParamGroup::Frgca] {
            assert_ne!(out.params.group_bytes(g), params.group_bytes(g));
        }
        assert_eq!(out.trace.len(), 16);
        assert_eq!(out.trace[0].lr, 1e-4);
        assert!(out.trace[15].lr <= 1e-12);
    }

    #[test]
    fn config_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("c.toml");
        std::fs::write(&toml_path, "stage = \"finetune\"\nvariant = \"simple\"\n[dims]\ndim = 8\n").unwrap();
        let c = TrainConfig::from_path(&toml_path).unwrap();
        assert_eq!(c.stage, Stage::Finetune);
        assert_eq!(c.variant, AttentionVariant::Simple);
        assert_eq!(c.dims.dim, 8);
        assert_eq!(c.dims.heads, 2);
        let json_path = dir.path().join("c.json");
        std::fs::write(&json_path, r#"{"epochs": 2, "bogus": 1}"#).unwrap();
        assert!(TrainConfig::from_path(&json_path).is_err());
        std::fs::write(&json_path, r#"{"dims": {"vocab": 3}}"#).unwrap();
        assert!(matches!(TrainConfig::from_path(&json_path), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn trace_csv_layout() {
        let csv = trace_csv(&[TraceRow { step: 0, lr: 0.5, loss: 1.25 }]);
        assert_eq!(csv, "step,lr,loss\n0,0.5,1.25\n");
    }
}
