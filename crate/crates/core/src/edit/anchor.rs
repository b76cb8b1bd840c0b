//! Gradient updates of a single block against hidden-state targets.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{optimizer_step, Adam, OptimizerState, Tape, Tensor, Var};
use crate::lm::{BlockParams, BlockVars, TransformerLM};

use super::{EditError, TermWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(crate) enum Term {
    Efficacy,
    Prefix,
    Locality,
    FinePreservation,
}

/// Values of the objective's terms (unweighted) and the weighted total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub efficacy: f64,
    pub prefix: f64,
    pub locality: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_preservation: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerUpdate {
    pub layer: usize,
    pub steps_run: usize,
    /// Step whose parameters were kept (0 means unchanged).
    pub best_step: usize,
    pub initial: LossTerms,
    #[serde(rename = "final")]
    pub final_terms: LossTerms,
}

/// Rows `start..start + target.rows()` of the block output are pulled
/// towards `target`.
pub(crate) struct RowTarget {
    pub term: Term,
    pub start: usize,
    pub target: Tensor,
}

/// One input sequence to the block (its incoming residual stream) and the
/// targets on its output.
pub(crate) struct Anchored {
    pub input: Tensor,
    pub mask: Tensor,
    pub targets: Vec<RowTarget>,
}

fn evaluate(
    model: &TransformerLM,
    tape: &Tape,
    block: &BlockVars,
    seqs: &[Anchored],
    weights: &TermWeights,
    with_fine: bool,
) -> Result<(Var, LossTerms), EditError> {
    let mut parts: HashMap<Term, Vec<Var>> = HashMap::new();
    for s in seqs {
        let len = s.input.rows();
        let x = tape.constant(s.input.clone());
        let mask = tape.constant(s.mask.clone());
        let out = model.block_forward(tape, block, x, mask)?;
        for t in &s.targets {
            let rows = t.target.rows();
            let o = if t.start == 0 && rows == len {
                out
            } else {
                tape.slice(out, 0, t.start, rows)?
            };
            let diff = tape.sub(o, tape.constant(t.target.clone()))?;
            parts
                .entry(t.term)
                .or_default()
                .push(tape.squared_norm(diff)?);
        }
    }
    let mut weighted = Vec::new();
    let mut value = |term: Term, w: f64| -> Result<f64, EditError> {
        match parts.get(&term) {
            Some(vs) if !vs.is_empty() => {
                let s = tape.add_all(vs)?;
                weighted.push(tape.scale(s, w)?);
                Ok(tape.item(s))
            }
            _ => Ok(0.0),
        }
    };
    let efficacy = value(Term::Efficacy, weights.efficacy)?;
    let prefix = value(Term::Prefix, weights.prefix)?;
    let locality = value(Term::Locality, weights.locality)?;
    let fine = value(Term::FinePreservation, weights.fine_preservation)?;
    let total = if weighted.is_empty() {
        tape.constant(Tensor::scalar(0.0))
    } else {
        tape.add_all(&weighted)?
    };
    let terms = LossTerms {
        efficacy,
        prefix,
        locality,
        fine_preservation: with_fine.then_some(fine),
        total: tape.item(total),
    };
    Ok((total, terms))
}

/// Runs `steps` Adam updates on block `layer` and keeps the parameters with
/// the lowest objective seen (including the starting point).
pub(crate) fn update_block(
    model: &mut TransformerLM,
    layer: usize,
    seqs: &[Anchored],
    weights: &TermWeights,
    steps: usize,
    lr: f64,
    with_fine: bool,
) -> Result<LayerUpdate, EditError> {
    let mut params: BlockParams = model.block(layer).clone();
    let mut opt = OptimizerState::new(Adam::new(lr));
    let mut best: Option<(f64, usize, BlockParams)> = None;
    let mut initial = LossTerms::default();
    let mut best_terms = LossTerms::default();
    let mut steps_run = 0;

    for step in 0..=steps {
        let tape = Tape::new();
        let bv = BlockVars::register(&tape, &params, true);
        let (total, terms) = evaluate(model, &tape, &bv, seqs, weights, with_fine)?;
        if !terms.total.is_finite() {
            return Err(EditError::Diverged {
                stage: format!("update of layer {layer}"),
                step,
            });
        }
        if step == 0 {
            initial = terms.clone();
        }
        if best.as_ref().is_none_or(|b| terms.total < b.0) {
            best = Some((terms.total, step, params.clone()));
            best_terms = terms.clone();
        }
        if step == steps || terms.total == 0.0 {
            break;
        }
        let mut grads = tape.backward(total)?;
        for (t, v) in params.tensors_mut().into_iter().zip(bv.vars()) {
            let g = grads.take(*v).unwrap_or_else(|| vec![0.0; t.len()]);
            t.set_grad(g)?;
        }
        optimizer_step(&mut opt, &mut params.tensors_mut())?;
        steps_run = step + 1;
    }

    let (_, best_step, kept) = best.expect("at least one evaluation");
    if best_step > 0 {
        *model.block_mut(layer) = kept;
    }
    Ok(LayerUpdate {
        layer,
        steps_run,
        best_step,
        initial,
        final_terms: best_terms,
    })
}
