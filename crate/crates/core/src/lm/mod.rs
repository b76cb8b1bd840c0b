//! Small character-level decoder-only transformer with per-layer hidden
//! state tracing and residual-stream substitution.

mod checkpoint;
mod model;
mod tokenizer;
mod train;

use thiserror::Error;

use crate::autodiff::AutodiffError;

pub use checkpoint::CHECKPOINT_VERSION;
pub use model::{
    argmax, attention_mask, causal_mask, replace_row, target_rows, teacher_forced_input,
    BlockParams, BlockVars, HiddenTrace, LMConfig, LayerPartition, ModelParams, ModelVars,
    PromptBottleneck, PromptSubstitution, Substitution, Trainable, TransformerLM,
};
pub use tokenizer::{normalize, Tokenizer, EOS, SEP, UNK, UNK_GLYPH};
pub use train::{
    continue_training, corpus_loss, train_toy_lm, CorpusItem, TrainConfig, TrainingLog,
};

#[derive(Debug, Error)]
pub enum LmError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("sequence of length {len} outside 1..={max}")]
    Length { len: usize, max: usize },
    #[error("decode error: {0}")]
    Decode(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training diverged at step {step}: {message}")]
    Training { step: usize, message: String },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Hidden states at the last position of layers `L_f`, `L_h` and `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyBundle {
    pub fine: Vec<f64>,
    pub holistic: Vec<f64>,
    pub value: Vec<f64>,
}

/// Reads the fine key, holistic key and value off a trace.
pub fn extract_keys(trace: &HiddenTrace, partition: &LayerPartition) -> Result<KeyBundle, LmError> {
    partition.validate(trace.n_layers())?;
    Ok(KeyBundle {
        fine: trace.last(partition.fine).to_vec(),
        holistic: trace.last(partition.holistic).to_vec(),
        value: trace.last(trace.n_layers()).to_vec(),
    })
}
