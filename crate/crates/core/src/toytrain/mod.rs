//! Miniature end-to-end training of the landmark-conditioned pipeline.
//!
//! Synthetic raw features stand in for a frozen vision encoder and a
//! one-layer decoder stands in for the language model. Training follows the
//! two-stage freeze schedule: the landmark modules alone, then everything.

pub mod decoder;
pub mod model;
pub mod optim;
pub mod synth;
pub mod train;
pub mod vision;

pub use decoder::{autoregressive_loss, init_decoder, sequence_assemble, DecoderInput, ToyDecoder};
pub use model::{ModelParams, ParamGroup, Pipeline};
pub use optim::{cosine_lr, AdamW, AdamWConfig};
pub use synth::{synth_dataset, Sample, SynthShape, TaskKind};
pub use train::{
    build_pipeline, evaluate, init_model, make_datasets, train, trace_csv, EvalSummary, Stage,
    ToyDims, TraceRow, TrainConfig, TrainOutcome, TrainableSet,
};
pub use vision::{init_vision, vision_project, VisionProjector};
