//! Two-stage knowledge editing.
//!
//! Stage one anchors each fine-grained fact: a residual vector is searched
//! at the last prompt position of layer `L_f`, then the shallow edit layers
//! are updated one at a time so they produce that residual themselves.
//! Stage two does the same for the holistic question at the single layer
//! `L_h`, while keeping the fine prompts' states at that layer fixed.

mod anchor;
mod config;
mod fable;
mod residual;

pub use anchor::{LayerUpdate, LossTerms};
pub use config::{
    apply_overrides, EditConfig, EditMode, HolisticTarget, ResidualBudget, ResidualSpreading,
    TermWeights,
};
pub use fable::{
    changed_layers, changed_parameters, compare_trajectories, edit_fine_qas, run_fable,
    stage_one_edit, stage_two_edit, trajectory_compare, EditOutcome, EditReport, QaPair,
    StageOneReport, StageTwoReport, TrajectoryComparison,
};
pub use residual::{optimize_residual, ResidualResult};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::dataset::DatasetError;
use crate::lm::LmError;

#[derive(Debug, Error)]
pub enum EditError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("optimization diverged in {stage} at step {step}")]
    Diverged { stage: String, step: usize },
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}
