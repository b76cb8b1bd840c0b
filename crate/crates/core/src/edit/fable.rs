use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dataset::{expand_questions, EditSample, FineQA};
use crate::lm::{HiddenTrace, ModelParams, TransformerLM};

use super::anchor::{update_block, Anchored, LayerUpdate, RowTarget, Term};
use super::residual::{optimize_residual, ResidualResult};
use super::{EditConfig, EditError, EditMode, HolisticTarget, ResidualSpreading};

/// A question and the answer the edited model should give.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

impl From<&FineQA> for QaPair {
    fn from(q: &FineQA) -> Self {
        Self {
            question: q.question.clone(),
            answer: q.answer.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageOneReport {
    pub residuals: Vec<ResidualResult>,
    pub layers: Vec<LayerUpdate>,
    /// `‖k̂_fine − k*_fine‖` per fine pair after the last edit layer.
    pub anchor_errors: Vec<f64>,
    /// Allowed error per pair (`anchor_tolerance · ‖δ_f‖`).
    pub anchor_limits: Vec<f64>,
    pub seconds: f64,
}

impl StageOneReport {
    pub fn anchored_fraction(&self) -> f64 {
        if self.anchor_errors.is_empty() {
            return 1.0;
        }
        let ok = self
            .anchor_errors
            .iter()
            .zip(&self.anchor_limits)
            .filter(|(e, l)| e <= l)
            .count();
        ok as f64 / self.anchor_errors.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTwoReport {
    pub residual: ResidualResult,
    pub layer: LayerUpdate,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    pub sample_id: String,
    pub mode: EditMode,
    pub config: EditConfig,
    pub n_fine_qas: usize,
    pub n_irrelevant: usize,
    pub stage_one: Option<StageOneReport>,
    pub stage_two: Option<StageTwoReport>,
}

/// Edited model, the intermediate model after stage one (when both stages
/// ran), and the report.
#[derive(Clone, Debug)]
pub struct EditOutcome {
    pub model: TransformerLM,
    pub after_stage_one: Option<TransformerLM>,
    pub report: EditReport,
}

struct Encoded {
    prompt: Vec<usize>,
    target: Vec<usize>,
}

fn encode_pairs(model: &TransformerLM, pairs: &[QaPair]) -> Result<Vec<Encoded>, EditError> {
    pairs
        .iter()
        .map(|p| {
            Ok(Encoded {
                prompt: model.tokenizer.encode_prompt(&p.question)?,
                target: model.tokenizer.encode_answer(&p.answer)?,
            })
        })
        .collect()
}

fn encode_irrelevant(
    model: &TransformerLM,
    prompts: &[String],
    config: &EditConfig,
) -> Result<Vec<Vec<usize>>, EditError> {
    prompts
        .iter()
        .map(|p| {
            let mut ids = model.tokenizer.encode_prompt(p)?;
            let answer = model.generate_ids(&ids, config.irrelevant_continuation, None)?;
            ids.extend(answer);
            if let Some(w) = config.n_irrelevant_tokens {
                ids.truncate(w);
            }
            Ok(ids)
        })
        .collect()
}

fn traces(model: &TransformerLM, seqs: &[Vec<usize>]) -> Result<Vec<HiddenTrace>, EditError> {
    seqs.iter()
        .map(|s| Ok(model.forward_with_trace(s)?))
        .collect()
}

fn rows(t: &Tensor, start: usize, len: usize) -> Tensor {
    let d = t.last_dim();
    Tensor::new(
        vec![len, d],
        t.data()[start * d..(start + len) * d].to_vec(),
    )
    .expect("valid row range")
}

fn row_tensor(v: Vec<f64>) -> Tensor {
    let d = v.len();
    Tensor::new(vec![1, d], v).expect("non-empty row")
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Stage one: a residual `δ_f` per fine pair at `L_f`, then block updates
/// of every edit layer in ascending order so the fine segment itself
/// produces `k*_fine = k_fine + δ_f` at each fine prompt's last position.
pub fn stage_one_edit(
    model: &mut TransformerLM,
    fine_qas: &[QaPair],
    irrelevant: &[String],
    config: &EditConfig,
) -> Result<StageOneReport, EditError> {
    config.validate(model.n_layers())?;
    if fine_qas.is_empty() {
        return Err(EditError::Contract(
            "stage one needs at least one fine QA pair".into(),
        ));
    }
    let start = Instant::now();
    let lf = config.partition.fine;
    let pairs = encode_pairs(model, fine_qas)?;
    let prompts: Vec<Vec<usize>> = pairs.iter().map(|p| p.prompt.clone()).collect();
    let irr = encode_irrelevant(model, irrelevant, config)?;
    let frozen_fine = traces(model, &prompts)?;
    let frozen_irr = traces(model, &irr)?;

    let residuals = pairs
        .iter()
        .map(|p| {
            optimize_residual(
                model,
                &p.prompt,
                &p.target,
                lf,
                &config.fine_residual,
                config.prob_threshold,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    let layers = config.sorted_edit_layers();
    let mut updates = Vec::with_capacity(layers.len());
    for (idx, &l) in layers.iter().enumerate() {
        let remaining = (layers.len() - idx) as f64;
        let current_fine = if idx == 0 {
            frozen_fine.clone()
        } else {
            traces(model, &prompts)?
        };
        let current_irr = if idx == 0 {
            frozen_irr.clone()
        } else {
            traces(model, &irr)?
        };
        let mut seqs = Vec::with_capacity(prompts.len() + irr.len());
        for (i, r) in residuals.iter().enumerate() {
            let cur = &current_fine[i];
            let frozen = &frozen_fine[i];
            let n = cur.len();
            let target: Vec<f64> = match config.spreading {
                ResidualSpreading::Recomputed => cur
                    .last(l)
                    .iter()
                    .zip(&r.target_key)
                    .zip(cur.last(lf))
                    .map(|((h, k_star), k_hat)| h + (k_star - k_hat) / remaining)
                    .collect(),
                ResidualSpreading::FrozenTrace => {
                    let share = (lf - l + 1) as f64;
                    frozen
                        .last(l)
                        .iter()
                        .zip(&r.delta)
                        .map(|(h, d)| h + d / share)
                        .collect()
                }
            };
            let mut targets = vec![RowTarget {
                term: Term::Efficacy,
                start: n - 1,
                target: row_tensor(target),
            }];
            if n > 1 {
                targets.push(RowTarget {
                    term: Term::Prefix,
                    start: 0,
                    target: rows(&frozen.hidden[l], 0, n - 1),
                });
            }
            seqs.push(Anchored {
                input: cur.hidden[l - 1].clone(),
                mask: model.attention_mask(&cur.tokens, l),
                targets,
            });
        }
        for (cur, frozen) in current_irr.iter().zip(&frozen_irr) {
            seqs.push(Anchored {
                input: cur.hidden[l - 1].clone(),
                mask: model.attention_mask(&cur.tokens, l),
                targets: vec![RowTarget {
                    term: Term::Locality,
                    start: 0,
                    target: frozen.hidden[l].clone(),
                }],
            });
        }
        updates.push(update_block(
            model,
            l,
            &seqs,
            &config.weights,
            config.layer_steps,
            config.layer_lr,
            false,
        )?);
    }

    let realized = traces(model, &prompts)?;
    let anchor_errors = realized
        .iter()
        .zip(&residuals)
        .map(|(t, r)| norm(t.last(lf).iter().zip(&r.target_key).map(|(a, b)| a - b)))
        .collect();
    let anchor_limits = residuals
        .iter()
        .map(|r| config.anchor_tolerance * r.delta_norm())
        .collect();
    Ok(StageOneReport {
        residuals,
        layers: updates,
        anchor_errors,
        anchor_limits,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Stage two: a residual `δ_h` at `L_h` for the holistic pair, then an
/// update of block `L_h` alone with prefix, locality and fine-preservation
/// anchors taken from the model as it stands before this stage.
pub fn stage_two_edit(
    model: &mut TransformerLM,
    holistic: &QaPair,
    fine_qas: &[QaPair],
    irrelevant: &[String],
    config: &EditConfig,
) -> Result<StageTwoReport, EditError> {
    config.validate(model.n_layers())?;
    let start = Instant::now();
    let lh = config.partition.holistic;
    let hol = encode_pairs(model, std::slice::from_ref(holistic))?.remove(0);
    let residual = optimize_residual(
        model,
        &hol.prompt,
        &hol.target,
        lh,
        &config.holistic_residual,
        config.prob_threshold,
    )?;

    let prompt_trace = model.forward_with_trace(&hol.prompt)?;
    let n = hol.prompt.len();
    let target: Vec<f64> = match config.holistic_target {
        HolisticTarget::Key => residual.target_key.clone(),
        HolisticTarget::OffsetByKey => prompt_trace
            .last(lh)
            .iter()
            .zip(&residual.target_key)
            .map(|(h, k)| h + k)
            .collect(),
    };
    let mut targets = vec![RowTarget {
        term: Term::Efficacy,
        start: n - 1,
        target: row_tensor(target),
    }];
    if n > 1 {
        targets.push(RowTarget {
            term: Term::Prefix,
            start: 0,
            target: rows(&prompt_trace.hidden[lh], 0, n - 1),
        });
    }
    let mut seqs = vec![Anchored {
        input: prompt_trace.hidden[lh - 1].clone(),
        mask: model.attention_mask(&prompt_trace.tokens, lh),
        targets,
    }];

    let irr = encode_irrelevant(model, irrelevant, config)?;
    for t in traces(model, &irr)? {
        seqs.push(Anchored {
            input: t.hidden[lh - 1].clone(),
            mask: model.attention_mask(&t.tokens, lh),
            targets: vec![RowTarget {
                term: Term::Locality,
                start: 0,
                target: t.hidden[lh].clone(),
            }],
        });
    }
    let fine_prompts: Vec<Vec<usize>> = encode_pairs(model, fine_qas)?
        .into_iter()
        .map(|p| p.prompt)
        .collect();
    for t in traces(model, &fine_prompts)? {
        seqs.push(Anchored {
            input: t.hidden[lh - 1].clone(),
            mask: model.attention_mask(&t.tokens, lh),
            targets: vec![RowTarget {
                term: Term::FinePreservation,
                start: 0,
                target: t.hidden[lh].clone(),
            }],
        });
    }
    let layer = update_block(
        model,
        lh,
        &seqs,
        &config.weights,
        config.layer_steps,
        config.layer_lr,
        true,
    )?;
    Ok(StageTwoReport {
        residual,
        layer,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Fine pairs used for editing: the sample's seed pairs expanded by the
/// configured multiplier.
pub fn edit_fine_qas(sample: &EditSample, config: &EditConfig) -> Result<Vec<QaPair>, EditError> {
    let expanded = expand_questions(&sample.seed_qas(), config.expansion_multiplier)?;
    Ok(expanded.iter().map(QaPair::from).collect())
}

/// Edits a copy of `model` for one sample; `model` itself is not modified.
pub fn run_fable(
    model: &TransformerLM,
    sample: &EditSample,
    config: &EditConfig,
    mode: EditMode,
) -> Result<EditOutcome, EditError> {
    config.validate(model.n_layers())?;
    let fine = edit_fine_qas(sample, config)?;
    let irrelevant: Vec<String> = sample
        .irrelevant
        .iter()
        .take(config.n_irrelevant)
        .cloned()
        .collect();
    let holistic = QaPair {
        question: sample.question.clone(),
        answer: sample.target_output.clone(),
    };
    let mut edited = model.clone();
    let stage_one = if mode.runs_stage_one() {
        Some(stage_one_edit(&mut edited, &fine, &irrelevant, config)?)
    } else {
        None
    };
    let after_stage_one = (mode == EditMode::Full).then(|| edited.clone());
    let stage_two = if mode.runs_stage_two() {
        Some(stage_two_edit(
            &mut edited,
            &holistic,
            &fine,
            &irrelevant,
            config,
        )?)
    } else {
        None
    };
    Ok(EditOutcome {
        model: edited,
        after_stage_one,
        report: EditReport {
            sample_id: sample.id.clone(),
            mode,
            config: config.clone(),
            n_fine_qas: fine.len(),
            n_irrelevant: irrelevant.len(),
            stage_one,
            stage_two,
        },
    })
}

/// Stage-two residual-search curves with and without stage one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryComparison {
    pub sample_id: String,
    pub full: Vec<f64>,
    pub no_stage1: Vec<f64>,
    pub full_steps_to_threshold: Option<usize>,
    pub no_stage1_steps_to_threshold: Option<usize>,
}

impl TrajectoryComparison {
    pub fn initial_delta(&self) -> f64 {
        self.full[0] - self.no_stage1[0]
    }

    /// Full mode starts at least as high as the ablation.
    pub fn starts_higher(&self) -> bool {
        self.full[0] >= self.no_stage1[0]
    }

    /// Full mode needs no more steps to reach the threshold (never reaching
    /// it counts as needing more than any budget).
    pub fn converges_no_slower(&self) -> bool {
        match (
            self.full_steps_to_threshold,
            self.no_stage1_steps_to_threshold,
        ) {
            (Some(a), Some(b)) => a <= b,
            (Some(_), None) | (None, None) => true,
            (None, Some(_)) => false,
        }
    }
}

/// Compares the stage-two trajectories of a full run and a no-stage-one run
/// of the same sample.
pub fn compare_trajectories(
    full: &EditReport,
    no_stage1: &EditReport,
) -> Result<TrajectoryComparison, EditError> {
    let get = |r: &EditReport, want: EditMode| -> Result<ResidualResult, EditError> {
        if r.mode != want {
            return Err(EditError::Contract(format!(
                "expected a {want} report, got {}",
                r.mode
            )));
        }
        r.stage_two
            .as_ref()
            .map(|s| s.residual.clone())
            .ok_or_else(|| EditError::Contract(format!("{want} report has no stage two")))
    };
    if full.sample_id != no_stage1.sample_id {
        return Err(EditError::Contract(
            "reports belong to different samples".into(),
        ));
    }
    let a = get(full, EditMode::Full)?;
    let b = get(no_stage1, EditMode::NoStage1)?;
    Ok(TrajectoryComparison {
        sample_id: full.sample_id.clone(),
        full: a.trajectory,
        no_stage1: b.trajectory,
        full_steps_to_threshold: a.steps_to_threshold,
        no_stage1_steps_to_threshold: b.steps_to_threshold,
    })
}

/// Runs both modes from the same base model and compares them.
pub fn trajectory_compare(
    model: &TransformerLM,
    sample: &EditSample,
    config: &EditConfig,
) -> Result<TrajectoryComparison, EditError> {
    let full = run_fable(model, sample, config, EditMode::Full)?;
    let ablated = run_fable(model, sample, config, EditMode::NoStage1)?;
    compare_trajectories(&full.report, &ablated.report)
}

/// Names of parameter tensors that differ bitwise between two models.
pub fn changed_parameters(before: &ModelParams, after: &ModelParams) -> Vec<String> {
    before
        .named()
        .into_iter()
        .zip(after.named())
        .filter(|((_, a), (_, b))| !a.bit_eq(b))
        .map(|((name, _), _)| name)
        .collect()
}

/// 1-based block indices touched by [`changed_parameters`]; `0` stands for
/// any non-block parameter.
pub fn changed_layers(before: &ModelParams, after: &ModelParams) -> Vec<usize> {
    let mut layers: Vec<usize> = changed_parameters(before, after)
        .iter()
        .map(|n| {
            n.strip_prefix("blocks.")
                .and_then(|rest| rest.split('.').next())
                .and_then(|l| l.parse().ok())
                .unwrap_or(0)
        })
        .collect();
    layers.sort_unstable();
    layers.dedup();
    layers
}
