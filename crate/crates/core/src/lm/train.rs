//! Next-token training of the toy model on prompt/completion pairs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{optimizer_step, Adam, OptimizerState, Tape, Tensor};

use super::model::{target_rows, teacher_forced_input, ModelVars, Trainable, TransformerLM};
use super::{LMConfig, LmError, Tokenizer};

/// One training sequence: loss is taken on the completion (plus EOS) only.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub prompt: String,
    pub completion: String,
}

impl CorpusItem {
    pub fn new(prompt: impl Into<String>, completion: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            completion: completion.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub warmup_steps: usize,
    /// Cosine decay floor as a fraction of `lr`.
    pub min_lr_ratio: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 30000,
            lr: 3e-3,
            batch_size: 8,
            warmup_steps: 100,
            min_lr_ratio: 0.1,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.steps - self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.min_lr_ratio + (1.0 - self.min_lr_ratio) * cos)
    }
}

/// Per-step mean per-token loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub losses: Vec<f64>,
}

impl TrainingLog {
    /// Means over consecutive windows of `width` steps.
    pub fn window_means(&self, width: usize) -> Vec<f64> {
        self.losses
            .chunks(width.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

struct Encoded {
    input: Vec<usize>,
    targets: Vec<(usize, usize)>,
}

fn encode_corpus(model: &TransformerLM, corpus: &[CorpusItem]) -> Result<Vec<Encoded>, LmError> {
    corpus
        .iter()
        .map(|item| {
            let prompt = model.tokenizer.encode_prompt(&item.prompt)?;
            let target = model.tokenizer.encode_answer(&item.completion)?;
            let input = teacher_forced_input(&prompt, &target);
            model.check_len(input.len())?;
            Ok(Encoded {
                input,
                targets: target_rows(prompt.len(), &target),
            })
        })
        .collect()
}

/// Mean per-token NLL over the whole corpus.
pub fn corpus_loss(model: &TransformerLM, corpus: &[CorpusItem]) -> Result<f64, LmError> {
    let encoded = encode_corpus(model, corpus)?;
    let mut total = 0.0;
    let mut count = 0;
    for e in &encoded {
        let tape = Tape::new();
        let vars = ModelVars::register(&tape, &model.params, Trainable::Nothing);
        let (_, logits) = model.forward_on_tape(&tape, &vars, &e.input, None)?;
        let nll = tape.nll(tape.softmax(logits)?, e.targets.clone())?;
        total += tape.item(nll);
        count += e.targets.len();
    }
    Ok(total / count as f64)
}

/// Trains a freshly initialised model.
pub fn train_toy_lm(
    corpus: &[CorpusItem],
    config: LMConfig,
    train: &TrainConfig,
) -> Result<(TransformerLM, TrainingLog), LmError> {
    let mut model = TransformerLM::new(config, Tokenizer::default())?;
    let log = continue_training(&mut model, corpus, train, |_, _| {})?;
    Ok((model, log))
}

/// Runs `train.steps` Adam steps on `model`, calling `on_step(step, loss)`
/// after each.
pub fn continue_training(
    model: &mut TransformerLM,
    corpus: &[CorpusItem],
    train: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainingLog, LmError> {
    if corpus.is_empty() {
        return Err(LmError::Contract("training corpus is empty".into()));
    }
    let encoded = encode_corpus(model, corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut cursor = order.len();
    let mut opt = OptimizerState::new(Adam::new(train.lr));
    let mut log = TrainingLog::default();
    let batch = train.batch_size.max(1);

    for step in 0..train.steps {
        let tape = Tape::new();
        let vars = ModelVars::register(&tape, &model.params, Trainable::Everything);
        let mut terms = Vec::with_capacity(batch);
        let mut n_tokens = 0;
        for _ in 0..batch {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let e = &encoded[order[cursor]];
            cursor += 1;
            let (_, logits) = model.forward_on_tape(&tape, &vars, &e.input, None)?;
            let probs = tape.softmax(logits)?;
            terms.push(tape.nll(probs, e.targets.clone())?);
            n_tokens += e.targets.len();
        }
        let total = tape.add_all(&terms)?;
        let loss = tape.scale(total, 1.0 / n_tokens as f64)?;
        let value = tape.item(loss);
        if !value.is_finite() {
            return Err(LmError::Training {
                step,
                message: format!("loss became {value}"),
            });
        }
        let mut grads = tape.backward(loss)?;
        let ordered = vars.ordered();
        let mut grad_list: Vec<Vec<f64>> = ordered
            .iter()
            .zip(model.params.named())
            .map(|(&v, (_, t))| grads.take(v).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        let norm = grad_list
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(LmError::Training {
                step,
                message: format!("gradient norm became {norm}"),
            });
        }
        if norm > train.grad_clip {
            let s = train.grad_clip / norm;
            grad_list.iter_mut().flatten().for_each(|g| *g *= s);
        }
        let mut named = model.params.named_mut();
        for ((_, t), g) in named.iter_mut().zip(grad_list) {
            t.set_grad(g)?;
        }
        opt.set_lr(train.lr_at(step));
        let mut refs: Vec<&mut Tensor> = named.into_iter().map(|(_, t)| t).collect();
        optimizer_step(&mut opt, &mut refs)?;
        log.losses.push(value);
        on_step(step, value);
    }
    Ok(log)
}
