use serde::{Deserialize, Serialize};

use crate::autodiff::{optimizer_step, Adam, OptimizerState, Tape, Tensor};
use crate::lm::{
    replace_row, target_rows, teacher_forced_input, ModelVars, Trainable, TransformerLM,
};

use super::{EditError, ResidualBudget};

/// Outcome of a residual search at one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualResult {
    pub layer: usize,
    pub delta: Vec<f64>,
    /// Hidden vector at the last prompt position before the search.
    pub base_key: Vec<f64>,
    /// `base_key + delta`, computed exactly as in the search's forward pass.
    pub target_key: Vec<f64>,
    /// Geometric-mean target-token probability before each update, plus the
    /// value for the returned delta (so `steps_used + 1` entries).
    pub trajectory: Vec<f64>,
    pub steps_used: usize,
    /// Updates needed to reach the probability threshold, if reached.
    pub steps_to_threshold: Option<usize>,
}

impl ResidualResult {
    pub fn initial_probability(&self) -> f64 {
        self.trajectory[0]
    }

    pub fn final_probability(&self) -> f64 {
        *self.trajectory.last().expect("trajectory is never empty")
    }

    pub fn delta_norm(&self) -> f64 {
        self.delta.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Adam search for the vector `δ` that, added to the hidden state after
/// block `layer` at the last prompt position, maximizes the teacher-forced
/// likelihood of `target`. Only `δ` is optimized; the model is untouched.
/// Records the first step whose geometric-mean token probability reaches
/// `threshold`, and stops once it reaches the larger of `threshold` and
/// `budget.stop_probability`, or after `budget.steps` updates.
pub fn optimize_residual(
    model: &TransformerLM,
    prompt: &[usize],
    target: &[usize],
    layer: usize,
    budget: &ResidualBudget,
    threshold: f64,
) -> Result<ResidualResult, EditError> {
    if prompt.is_empty() || target.is_empty() {
        return Err(EditError::Contract(
            "residual search needs a non-empty prompt and target".into(),
        ));
    }
    if layer == 0 || layer > model.n_layers() {
        return Err(EditError::Config(format!(
            "residual layer {layer} outside 1..={}",
            model.n_layers()
        )));
    }
    let seq = teacher_forced_input(prompt, target);
    model.check_len(seq.len())?;
    let trace = model.forward_with_trace(&seq)?;
    let hidden = trace.hidden[layer].clone();
    let pos = prompt.len() - 1;
    let d = model.config.d_model;
    let base_key = Tensor::new(vec![1, d], hidden.row(pos).to_vec())?;
    let rows = target_rows(prompt.len(), target);
    let m = target.len() as f64;

    let mut delta = Tensor::zeros(&[1, d]);
    let mut opt = OptimizerState::new(Adam::new(budget.lr));
    let mut trajectory = Vec::new();
    let mut steps_to_threshold = None;
    let mut target_key = base_key.data().to_vec();
    let stop = budget
        .stop_probability
        .map_or(threshold, |p| p.max(threshold));

    for step in 0..=budget.steps {
        let tape = Tape::new();
        let vars = ModelVars::register(&tape, &model.params, Trainable::Nothing);
        let x = tape.constant(hidden.clone());
        let k = tape.constant(base_key.clone());
        let dv = tape.param(delta.clone());
        let row = tape.add(k, dv)?;
        let x = replace_row(&tape, x, pos, row)?;
        let (_, logits) = model.forward_from(&tape, &vars, layer, x, &seq, None)?;
        let nll = tape.nll(tape.softmax(logits)?, rows.clone())?;
        let loss = tape.item(nll);
        if !loss.is_finite() {
            return Err(EditError::Diverged {
                stage: format!("residual search at layer {layer}"),
                step,
            });
        }
        let prob = (-loss / m).exp();
        trajectory.push(prob);
        target_key = tape.value(row).into_data();
        if prob >= threshold && steps_to_threshold.is_none() {
            steps_to_threshold = Some(step);
        }
        if prob >= stop {
            break;
        }
        if step == budget.steps {
            break;
        }
        let mut grads = tape.backward(nll)?;
        let g = grads.take(dv).expect("delta is a parameter");
        delta.set_grad(g)?;
        optimizer_step(&mut opt, &mut [&mut delta])?;
    }

    Ok(ResidualResult {
        layer,
        delta: delta.into_data(),
        base_key: base_key.into_data(),
        target_key,
        steps_used: trajectory.len() - 1,
        trajectory,
        steps_to_threshold,
    })
}
