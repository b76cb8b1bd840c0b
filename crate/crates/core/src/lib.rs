//! Two-stage hierarchical knowledge editing on a small decoder-only
//! transformer: fine-grained fact anchoring in shallow layers followed by
//! holistic surface-form integration at a single deeper layer, together with
//! the fact-level evaluation metrics and the synthetic data pipeline used to
//! exercise it.

pub mod autodiff;
pub mod dataset;
pub mod edit;
pub mod lm;
pub mod metrics;
