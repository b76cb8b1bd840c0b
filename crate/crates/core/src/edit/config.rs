use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::lm::LayerPartition;

use super::EditError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualBudget {
    pub steps: usize,
    pub lr: f64,
    /// Probability at which the search stops; `None` stops at the reporting
    /// threshold. Never stops below the reporting threshold.
    #[serde(default)]
    pub stop_probability: Option<f64>,
}

impl ResidualBudget {
    pub fn new(steps: usize, lr: f64) -> Self {
        Self {
            steps,
            lr,
            stop_probability: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermWeights {
    pub efficacy: f64,
    pub prefix: f64,
    pub locality: f64,
    pub fine_preservation: f64,
}

impl Default for TermWeights {
    fn default() -> Self {
        Self {
            efficacy: 1.0,
            prefix: 1.0,
            locality: 1.0,
            fine_preservation: 1.0,
        }
    }
}

/// How the fine residual is split over the edit layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSpreading {
    /// Layer `l` targets its current output plus the residual still missing
    /// at `L_f` (measured on the partially edited model), divided by the
    /// number of edit layers not yet updated.
    Recomputed,
    /// Layer `l` targets its pre-edit output plus `δ / (L_f - l + 1)`.
    FrozenTrace,
}

/// Last-token target of the holistic layer update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolisticTarget {
    /// The optimized key `k_hol + δ_h`.
    Key,
    /// Current output plus the optimized key, `h + k_hol + δ_h`.
    OffsetByKey,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditMode {
    Full,
    NoStage1,
    NoStage2,
}

impl EditMode {
    pub const ALL: [EditMode; 3] = [EditMode::Full, EditMode::NoStage1, EditMode::NoStage2];

    pub fn name(self) -> &'static str {
        match self {
            EditMode::Full => "full",
            EditMode::NoStage1 => "no_stage1",
            EditMode::NoStage2 => "no_stage2",
        }
    }

    pub fn runs_stage_one(self) -> bool {
        self != EditMode::NoStage1
    }

    pub fn runs_stage_two(self) -> bool {
        self != EditMode::NoStage2
    }
}

impl fmt::Display for EditMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EditMode {
    type Err = EditError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                EditError::Config(format!(
                    "unknown mode {s:?} (expected full, no_stage1 or no_stage2)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditConfig {
    pub partition: LayerPartition,
    /// Layers of the fine segment whose parameters stage one updates.
    pub edit_layers: Vec<usize>,
    pub fine_residual: ResidualBudget,
    pub holistic_residual: ResidualBudget,
    pub layer_steps: usize,
    pub layer_lr: f64,
    pub weights: TermWeights,
    /// Fine QA pairs used per seed pair.
    pub expansion_multiplier: usize,
    pub n_irrelevant: usize,
    /// Irrelevant sequences are truncated to this many tokens in the locality
    /// term; `None` keeps them whole.
    pub n_irrelevant_tokens: Option<usize>,
    /// Tokens of the model's own greedy answer appended to each irrelevant
    /// prompt before it is anchored, so answer positions are held too.
    pub irrelevant_continuation: usize,
    /// Residual searches stop once the target probability reaches this.
    pub prob_threshold: f64,
    /// Allowed anchoring error as a fraction of `‖δ_f‖`.
    pub anchor_tolerance: f64,
    pub spreading: ResidualSpreading,
    pub holistic_target: HolisticTarget,
    pub seed: u64,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            partition: LayerPartition::new(3, 4),
            edit_layers: vec![2, 3],
            fine_residual: ResidualBudget {
                steps: 200,
                lr: 0.5,
                stop_probability: Some(0.99),
            },
            holistic_residual: ResidualBudget {
                steps: 300,
                lr: 0.5,
                stop_probability: Some(0.99),
            },
            layer_steps: 300,
            layer_lr: 1e-2,
            weights: TermWeights::default(),
            expansion_multiplier: 5,
            n_irrelevant: 20,
            n_irrelevant_tokens: None,
            irrelevant_continuation: 64,
            prob_threshold: 0.9,
            anchor_tolerance: 0.1,
            spreading: ResidualSpreading::Recomputed,
            holistic_target: HolisticTarget::Key,
            seed: 0,
        }
    }
}

impl EditConfig {
    pub fn validate(&self, n_layers: usize) -> Result<(), EditError> {
        self.partition
            .validate(n_layers)
            .map_err(|e| EditError::Config(e.to_string()))?;
        if self.edit_layers.is_empty() {
            return Err(EditError::Config("edit_layers is empty".into()));
        }
        for &l in &self.edit_layers {
            if l == 0 || l > self.partition.fine {
                return Err(EditError::Config(format!(
                    "edit layer {l} outside 1..={} (the fine segment)",
                    self.partition.fine
                )));
            }
        }
        if !(self.prob_threshold > 0.0 && self.prob_threshold <= 1.0) {
            return Err(EditError::Config(format!(
                "prob_threshold {} not in (0, 1]",
                self.prob_threshold
            )));
        }
        for (name, b) in [
            ("fine_residual", &self.fine_residual),
            ("holistic_residual", &self.holistic_residual),
        ] {
            if let Some(p) = b.stop_probability {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(EditError::Config(format!(
                        "{name}.stop_probability {p} not in (0, 1]"
                    )));
                }
            }
        }
        for (name, lr) in [
            ("fine_residual.lr", self.fine_residual.lr),
            ("holistic_residual.lr", self.holistic_residual.lr),
            ("layer_lr", self.layer_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(EditError::Config(format!(
                    "{name} must be positive, got {lr}"
                )));
            }
        }
        if self.expansion_multiplier == 0 {
            return Err(EditError::Config(
                "expansion_multiplier must be at least 1".into(),
            ));
        }
        if self.n_irrelevant_tokens == Some(0) {
            return Err(EditError::Config(
                "n_irrelevant_tokens must be positive".into(),
            ));
        }
        let w = &self.weights;
        if [w.efficacy, w.prefix, w.locality, w.fine_preservation]
            .iter()
            .any(|x| !(*x >= 0.0))
        {
            return Err(EditError::Config(
                "term weights must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Edit layers, ascending and deduplicated.
    pub fn sorted_edit_layers(&self) -> Vec<usize> {
        let mut l = self.edit_layers.clone();
        l.sort_unstable();
        l.dedup();
        l
    }

    /// Applies a JSON object of overrides (nested objects merge
    /// field-wise). Unknown keys are rejected.
    pub fn with_overrides(&self, overrides: &serde_json::Value) -> Result<Self, EditError> {
        apply_overrides(self, overrides)
    }
}

/// Round-trips `value` through JSON with `overrides` merged in (nested
/// objects merge field-wise). Keys absent from `value`'s serialization are
/// rejected.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(
    value: &T,
    overrides: &serde_json::Value,
) -> Result<T, EditError> {
    let mut base = serde_json::to_value(value).map_err(|e| EditError::Config(e.to_string()))?;
    merge(&mut base, overrides, "")?;
    serde_json::from_value(base).map_err(|e| EditError::Config(e.to_string()))
}

fn merge(
    base: &mut serde_json::Value,
    over: &serde_json::Value,
    path: &str,
) -> Result<(), EditError> {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                let key = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &key)?,
                    Some(slot) => *slot = v.clone(),
                    None => {
                        return Err(EditError::Config(format!(
                            "unknown configuration key {key:?}"
                        )))
                    }
                }
            }
            Ok(())
        }
        _ => Err(EditError::Config(format!(
            "overrides for {:?} must be a JSON object",
            path
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_for_toy_depth() {
        EditConfig::default().validate(8).unwrap();
    }

    #[test]
    fn overrides_merge_and_reject_unknown_keys() {
        let c = EditConfig::default();
        let o: serde_json::Value =
            serde_json::from_str(r#"{"layer_steps": 7, "fine_residual": {"lr": 0.5}}"#).unwrap();
        let m = c.with_overrides(&o).unwrap();
        assert_eq!(m.layer_steps, 7);
        assert_eq!(m.fine_residual.lr, 0.5);
        assert_eq!(m.fine_residual.steps, c.fine_residual.steps);
        let bad: serde_json::Value = serde_json::from_str(r#"{"batch_size": 4}"#).unwrap();
        assert!(c.with_overrides(&bad).is_err());
    }

    #[test]
    fn invalid_layers_rejected() {
        let mut c = EditConfig::default();
        c.edit_layers = vec![c.partition.fine + 1];
        assert!(c.validate(8).is_err());
        c.edit_layers = vec![];
        assert!(c.validate(8).is_err());
    }

    #[test]
    fn modes_parse() {
        for m in EditMode::ALL {
            assert_eq!(m.name().parse::<EditMode>().unwrap(), m);
        }
        assert!("both".parse::<EditMode>().is_err());
    }
}
