//! Pre-norm decoder-only transformer expressed on the autodiff tape.
//!
//! Layer numbering follows the residual-stream view: `hidden[0]` is the
//! embedded input and `hidden[l]` (for `l` in `1..=n_layers`) is the residual
//! stream after block `l`. Positions are 0-based.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};

use super::tokenizer::{Tokenizer, EOS, SEP};
use super::LmError;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LMConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    /// Routes the question to the answer through the separator's state
    /// only (see [`attention_mask`]).
    #[serde(default)]
    pub prompt_bottleneck: Option<PromptBottleneck>,
}

/// The separator attends only to itself in blocks after `seal`; positions
/// after the separator never see the question and see the separator only in
/// blocks after `release`. Each separator state from layer `seal` through
/// `release` therefore carries everything the answer can know about the
/// question.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptBottleneck {
    pub seal: usize,
    pub release: usize,
}

impl Default for LMConfig {
    fn default() -> Self {
        Self {
            n_layers: 8,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size: Tokenizer::default().vocab_size(),
            max_seq_len: 256,
            seed: 0,
            prompt_bottleneck: Some(PromptBottleneck {
                seal: 3,
                release: 4,
            }),
        }
    }
}

impl LMConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        if self.n_layers < 3 {
            return Err(LmError::Config(format!(
                "n_layers must be >= 3, got {}",
                self.n_layers
            )));
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(LmError::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if let Some(b) = self.prompt_bottleneck {
            if b.seal > b.release || b.release >= self.n_layers {
                return Err(LmError::Config(format!(
                    "prompt_bottleneck needs seal <= release < n_layers, got {}/{}",
                    b.seal, b.release
                )));
            }
        }
        if self.d_ff == 0 || self.vocab_size == 0 || self.max_seq_len == 0 {
            return Err(LmError::Config(
                "d_ff, vocab_size and max_seq_len must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Split of the layer stack into fine-grained key generator (`1..=fine`),
/// holistic key generator (`fine+1..=holistic`) and value generator
/// (`holistic+1..=n_layers`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPartition {
    pub fine: usize,
    pub holistic: usize,
}

impl LayerPartition {
    pub fn new(fine: usize, holistic: usize) -> Self {
        Self { fine, holistic }
    }

    pub fn validate(&self, n_layers: usize) -> Result<(), LmError> {
        if 1 <= self.fine && self.fine < self.holistic && self.holistic < n_layers {
            Ok(())
        } else {
            Err(LmError::Range(format!(
                "partition requires 1 <= L_f < L_h < N, got L_f={} L_h={} N={n_layers}",
                self.fine, self.holistic
            )))
        }
    }
}

/// Parameters of one pre-norm block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub w_qkv: Tensor,
    pub b_qkv: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w_fc: Tensor,
    pub b_fc: Tensor,
    pub w_proj: Tensor,
    pub b_proj: Tensor,
}

impl BlockParams {
    pub const NAMES: [&'static str; 12] = [
        "ln1.gain",
        "ln1.bias",
        "attn.w_qkv",
        "attn.b_qkv",
        "attn.w_out",
        "attn.b_out",
        "ln2.gain",
        "ln2.bias",
        "mlp.w_fc",
        "mlp.b_fc",
        "mlp.w_proj",
        "mlp.b_proj",
    ];

    pub fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.w_qkv,
            &self.b_qkv,
            &self.w_out,
            &self.b_out,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w_fc,
            &self.b_fc,
            &self.w_proj,
            &self.b_proj,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w_qkv,
            &mut self.b_qkv,
            &mut self.w_out,
            &mut self.b_out,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w_fc,
            &mut self.b_fc,
            &mut self.w_proj,
            &mut self.b_proj,
        ]
    }

    fn init(cfg: &LMConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ff;
        let resid_std = 0.02 / ((2 * cfg.n_layers) as f64).sqrt();
        Self {
            ln1_gain: Tensor::from_parts(vec![d], vec![1.0; d]),
            ln1_bias: Tensor::zeros(&[d]),
            w_qkv: normal(&[d, 3 * d], 0.02, rng),
            b_qkv: Tensor::zeros(&[3 * d]),
            w_out: normal(&[d, d], resid_std, rng),
            b_out: Tensor::zeros(&[d]),
            ln2_gain: Tensor::from_parts(vec![d], vec![1.0; d]),
            ln2_bias: Tensor::zeros(&[d]),
            w_fc: normal(&[d, f], 0.02, rng),
            b_fc: Tensor::zeros(&[f]),
            w_proj: normal(&[f, d], resid_std, rng),
            b_proj: Tensor::zeros(&[d]),
        }
    }
}

fn normal(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub blocks: Vec<BlockParams>,
    pub final_gain: Tensor,
    pub final_bias: Tensor,
    pub head: Tensor,
}

impl ModelParams {
    /// Every parameter with a stable dotted name; block names carry the
    /// 1-based layer index (`blocks.3.mlp.w_fc`).
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("position_embedding".to_string(), &self.position_embedding),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, t) in BlockParams::NAMES.iter().zip(b.tensors()) {
                out.push((format!("blocks.{}.{name}", i + 1), t));
            }
        }
        out.push(("final_norm.gain".to_string(), &self.final_gain));
        out.push(("final_norm.bias".to_string(), &self.final_bias));
        out.push(("head".to_string(), &self.head));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("token_embedding".to_string(), &mut self.token_embedding),
            (
                "position_embedding".to_string(),
                &mut self.position_embedding,
            ),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (name, t) in BlockParams::NAMES.iter().zip(b.tensors_mut()) {
                out.push((format!("blocks.{}.{name}", i + 1), t));
            }
        }
        out.push(("final_norm.gain".to_string(), &mut self.final_gain));
        out.push(("final_norm.bias".to_string(), &mut self.final_bias));
        out.push(("head".to_string(), &mut self.head));
        out
    }

    pub fn num_values(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Which parameters a forward pass registers as gradient-receiving leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    Nothing,
    Everything,
    /// Only the block at this 1-based layer.
    Block(usize),
}

/// Block parameters registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    vars: [Var; 12],
}

impl BlockVars {
    pub fn register(tape: &Tape, p: &BlockParams, trainable: bool) -> Self {
        let vars = p.tensors().map(|t| tape.leaf(t.clone(), trainable));
        Self { vars }
    }

    pub fn vars(&self) -> &[Var; 12] {
        &self.vars
    }
}

/// All model parameters registered on a tape.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub token_embedding: Var,
    pub position_embedding: Var,
    pub blocks: Vec<BlockVars>,
    pub final_gain: Var,
    pub final_bias: Var,
    pub head: Var,
}

impl ModelVars {
    pub fn register(tape: &Tape, p: &ModelParams, trainable: Trainable) -> Self {
        let all = trainable == Trainable::Everything;
        Self {
            token_embedding: tape.leaf(p.token_embedding.clone(), all),
            position_embedding: tape.leaf(p.position_embedding.clone(), all),
            blocks: p
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    BlockVars::register(tape, b, all || trainable == Trainable::Block(i + 1))
                })
                .collect(),
            final_gain: tape.leaf(p.final_gain.clone(), all),
            final_bias: tape.leaf(p.final_bias.clone(), all),
            head: tape.leaf(p.head.clone(), all),
        }
    }

    /// Leaves in the order of [`ModelParams::named`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = vec![self.token_embedding, self.position_embedding];
        for b in &self.blocks {
            out.extend_from_slice(b.vars());
        }
        out.extend([self.final_gain, self.final_bias, self.head]);
        out
    }
}

/// Per-layer hidden states of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenTrace {
    pub tokens: Vec<usize>,
    /// `n_layers + 1` tensors of shape `[len, d_model]`.
    pub hidden: Vec<Tensor>,
    /// `[len, vocab]`.
    pub logits: Tensor,
}

impl HiddenTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_layers(&self) -> usize {
        self.hidden.len() - 1
    }

    /// Hidden vector after block `layer` at `position`.
    pub fn at(&self, layer: usize, position: usize) -> &[f64] {
        self.hidden[layer].row(position)
    }

    pub fn last(&self, layer: usize) -> &[f64] {
        self.at(layer, self.len() - 1)
    }
}

/// Overwrite of one residual-stream vector before the next block reads it.
#[derive(Clone, Debug, PartialEq)]
pub struct Substitution {
    pub layer: usize,
    pub position: usize,
    pub vector: Vec<f64>,
}

/// A substitution pinned to the last prompt position (the separator token).
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSubstitution {
    pub layer: usize,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLM {
    pub config: LMConfig,
    pub tokenizer: Tokenizer,
    pub params: ModelParams,
}

pub fn causal_mask(len: usize) -> Tensor {
    let mut m = vec![0.0; len * len];
    for i in 0..len {
        for j in i + 1..len {
            m[i * len + j] = f64::NEG_INFINITY;
        }
    }
    Tensor::from_parts(vec![len, len], m)
}

/// Attention mask of block `block` (1-based): causal, restricted around the
/// first [`SEP`] as described on [`PromptBottleneck`].
pub fn attention_mask(
    tokens: &[usize],
    bottleneck: Option<PromptBottleneck>,
    block: usize,
) -> Tensor {
    let mut m = causal_mask(tokens.len());
    if let (Some(b), Some(s)) = (bottleneck, tokens.iter().position(|&t| t == SEP)) {
        let len = tokens.len();
        let data = m.data_mut();
        for i in s..len {
            let hidden_to = match (i == s, block > b.seal, block > b.release) {
                (true, false, _) => 0,
                (true, true, _) | (false, _, true) => s,
                (false, _, false) => s + 1,
            };
            for j in 0..hidden_to {
                data[i * len + j] = f64::NEG_INFINITY;
            }
        }
    }
    m
}

/// Replaces row `position` of `x` (`[len, d]`) by `row` (`[1, d]`).
pub fn replace_row(tape: &Tape, x: Var, position: usize, row: Var) -> Result<Var, LmError> {
    let shape = tape.shape(x);
    let len = shape[0];
    if tape.shape(row) != [1, shape[1]] {
        return Err(LmError::Shape(format!(
            "substitution vector {:?} does not fit hidden width {}",
            tape.shape(row),
            shape[1]
        )));
    }
    if position >= len {
        return Err(LmError::Range(format!(
            "position {position} outside sequence of {len}"
        )));
    }
    let mut parts = Vec::with_capacity(3);
    if position > 0 {
        parts.push(tape.slice(x, 0, 0, position)?);
    }
    parts.push(row);
    if position + 1 < len {
        parts.push(tape.slice(x, 0, position + 1, len - position - 1)?);
    }
    Ok(tape.concat(&parts, 0)?)
}

/// `(row, class)` pairs for teacher-forced NLL of `target` following a prompt
/// of `prompt_len` tokens.
pub fn target_rows(prompt_len: usize, target: &[usize]) -> Vec<(usize, usize)> {
    target
        .iter()
        .enumerate()
        .map(|(j, &t)| (prompt_len - 1 + j, t))
        .collect()
}

/// Teacher-forcing input: the prompt followed by all but the last target.
pub fn teacher_forced_input(prompt: &[usize], target: &[usize]) -> Vec<usize> {
    let mut seq = prompt.to_vec();
    seq.extend_from_slice(&target[..target.len().saturating_sub(1)]);
    seq
}

impl TransformerLM {
    pub fn new(config: LMConfig, tokenizer: Tokenizer) -> Result<Self, LmError> {
        config.validate()?;
        if config.vocab_size != tokenizer.vocab_size() {
            return Err(LmError::Config(format!(
                "config vocab_size {} but tokenizer has {}",
                config.vocab_size,
                tokenizer.vocab_size()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let params = ModelParams {
            token_embedding: normal(&[config.vocab_size, d], 0.02, &mut rng),
            position_embedding: normal(&[config.max_seq_len, d], 0.01, &mut rng),
            blocks: (0..config.n_layers)
                .map(|_| BlockParams::init(&config, &mut rng))
                .collect(),
            final_gain: Tensor::from_parts(vec![d], vec![1.0; d]),
            final_bias: Tensor::zeros(&[d]),
            head: normal(&[d, config.vocab_size], 0.02, &mut rng),
        };
        Ok(Self {
            config,
            tokenizer,
            params,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    /// Block at 1-based `layer`.
    pub fn block(&self, layer: usize) -> &BlockParams {
        &self.params.blocks[layer - 1]
    }

    pub fn block_mut(&mut self, layer: usize) -> &mut BlockParams {
        &mut self.params.blocks[layer - 1]
    }

    pub fn check_len(&self, len: usize) -> Result<(), LmError> {
        if len == 0 || len > self.config.max_seq_len {
            Err(LmError::Length {
                len,
                max: self.config.max_seq_len,
            })
        } else {
            Ok(())
        }
    }

    /// `h^0`: token plus position embeddings.
    pub fn embed(&self, tape: &Tape, vars: &ModelVars, tokens: &[usize]) -> Result<Var, LmError> {
        self.check_len(tokens.len())?;
        let tok = tape.embedding(vars.token_embedding, tokens)?;
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let pos = tape.embedding(vars.position_embedding, &positions)?;
        Ok(tape.add(tok, pos)?)
    }

    /// One pre-norm block: `x + attn(ln1(x))`, then `+ mlp(ln2(.))`.
    pub fn block_forward(
        &self,
        tape: &Tape,
        b: &BlockVars,
        x: Var,
        mask: Var,
    ) -> Result<Var, LmError> {
        let [ln1_g, ln1_b, w_qkv, b_qkv, w_out, b_out, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj] =
            *b.vars();
        let d = self.config.d_model;
        let dh = self.config.head_dim();
        let xn = tape.layer_norm(x, ln1_g, ln1_b, LN_EPS)?;
        let qkv = tape.add(tape.matmul(xn, w_qkv)?, b_qkv)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let q = tape.slice(qkv, 1, h * dh, dh)?;
            let k = tape.slice(qkv, 1, d + h * dh, dh)?;
            let v = tape.slice(qkv, 1, 2 * d + h * dh, dh)?;
            let scores = tape.scale(tape.matmul_nt(q, k)?, scale)?;
            let probs = tape.softmax(tape.add(scores, mask)?)?;
            heads.push(tape.matmul(probs, v)?);
        }
        let attn = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat(&heads, 1)?
        };
        let attn = tape.add(tape.matmul(attn, w_out)?, b_out)?;
        let x = tape.add(x, attn)?;
        let xn = tape.layer_norm(x, ln2_g, ln2_b, LN_EPS)?;
        let hdn = tape.gelu(tape.add(tape.matmul(xn, w_fc)?, b_fc)?)?;
        let mlp = tape.add(tape.matmul(hdn, w_proj)?, b_proj)?;
        Ok(tape.add(x, mlp)?)
    }

    /// Final norm and output projection.
    pub fn head_forward(&self, tape: &Tape, vars: &ModelVars, x: Var) -> Result<Var, LmError> {
        let xn = tape.layer_norm(x, vars.final_gain, vars.final_bias, LN_EPS)?;
        Ok(tape.matmul(xn, vars.head)?)
    }

    pub fn attention_mask(&self, tokens: &[usize], block: usize) -> Tensor {
        attention_mask(tokens, self.config.prompt_bottleneck, block)
    }

    /// Runs blocks `from+1..=n_layers` on `x` (the residual stream after
    /// block `from` for `tokens`), optionally overwriting one row after block
    /// `subst.0`. Returns the hidden vars after each block run, and the
    /// logits.
    pub fn forward_from(
        &self,
        tape: &Tape,
        vars: &ModelVars,
        from: usize,
        x: Var,
        tokens: &[usize],
        subst: Option<(usize, usize, Var)>,
    ) -> Result<(Vec<Var>, Var), LmError> {
        if tape.shape(x)[0] != tokens.len() {
            return Err(LmError::Shape(format!(
                "hidden state has {} rows for {} tokens",
                tape.shape(x)[0],
                tokens.len()
            )));
        }
        let mut masks: Vec<(Tensor, Var)> = Vec::new();
        let mut hidden = Vec::with_capacity(self.n_layers() - from);
        let mut x = x;
        for layer in from + 1..=self.n_layers() {
            let m = self.attention_mask(tokens, layer);
            let mask = match masks.iter().find(|(t, _)| t.bit_eq(&m)) {
                Some((_, v)) => *v,
                None => {
                    let v = tape.constant(m.clone());
                    masks.push((m, v));
                    v
                }
            };
            x = self.block_forward(tape, &vars.blocks[layer - 1], x, mask)?;
            if let Some((l, pos, row)) = subst {
                if l == layer {
                    x = replace_row(tape, x, pos, row)?;
                }
            }
            hidden.push(x);
        }
        let logits = self.head_forward(tape, vars, x)?;
        Ok((hidden, logits))
    }

    /// Full forward on an existing tape; returns `n_layers + 1` hidden vars
    /// and the logits var.
    pub fn forward_on_tape(
        &self,
        tape: &Tape,
        vars: &ModelVars,
        tokens: &[usize],
        subst: Option<(usize, usize, Var)>,
    ) -> Result<(Vec<Var>, Var), LmError> {
        if let Some((l, pos, _)) = subst {
            if l == 0 || l > self.n_layers() || pos >= tokens.len() {
                return Err(LmError::Range(format!(
                    "substitution at layer {l}, position {pos} outside {} layers x {} positions",
                    self.n_layers(),
                    tokens.len()
                )));
            }
        }
        let h0 = self.embed(tape, vars, tokens)?;
        let (rest, logits) = self.forward_from(tape, vars, 0, h0, tokens, subst)?;
        let mut hidden = Vec::with_capacity(rest.len() + 1);
        hidden.push(h0);
        hidden.extend(rest);
        Ok((hidden, logits))
    }

    fn trace_on_tape(
        &self,
        tokens: &[usize],
        subst: Option<&Substitution>,
    ) -> Result<HiddenTrace, LmError> {
        let tape = Tape::new();
        let vars = ModelVars::register(&tape, &self.params, Trainable::Nothing);
        let row = match subst {
            Some(s) => {
                if s.vector.len() != self.config.d_model {
                    return Err(LmError::Shape(format!(
                        "substitution vector of length {} for d_model {}",
                        s.vector.len(),
                        self.config.d_model
                    )));
                }
                let t = Tensor::from_parts(vec![1, s.vector.len()], s.vector.clone());
                Some((s.layer, s.position, tape.constant(t)))
            }
            None => None,
        };
        let (hidden, logits) = self.forward_on_tape(&tape, &vars, tokens, row)?;
        Ok(HiddenTrace {
            tokens: tokens.to_vec(),
            hidden: hidden.into_iter().map(|v| tape.value(v)).collect(),
            logits: tape.value(logits),
        })
    }

    pub fn forward_with_trace(&self, tokens: &[usize]) -> Result<HiddenTrace, LmError> {
        self.trace_on_tape(tokens, None)
    }

    pub fn logits(&self, tokens: &[usize]) -> Result<Tensor, LmError> {
        Ok(self.forward_with_trace(tokens)?.logits)
    }

    pub fn forward_with_substitution(
        &self,
        tokens: &[usize],
        subst: &Substitution,
    ) -> Result<(Tensor, HiddenTrace), LmError> {
        let trace = self.trace_on_tape(tokens, Some(subst))?;
        Ok((trace.logits.clone(), trace))
    }

    /// Teacher-forced negative log-likelihood (natural log, summed over
    /// target tokens) of `target` after `prompt`.
    pub fn sequence_nll(
        &self,
        prompt: &[usize],
        target: &[usize],
        subst: Option<&PromptSubstitution>,
    ) -> Result<f64, LmError> {
        if target.is_empty() {
            return Err(LmError::Contract(
                "sequence_nll needs a non-empty target".into(),
            ));
        }
        if prompt.is_empty() {
            return Err(LmError::Contract(
                "sequence_nll needs a non-empty prompt".into(),
            ));
        }
        let seq = teacher_forced_input(prompt, target);
        self.check_len(seq.len())?;
        let s = subst.map(|p| Substitution {
            layer: p.layer,
            position: prompt.len() - 1,
            vector: p.vector.clone(),
        });
        let trace = self.trace_on_tape(&seq, s.as_ref())?;
        let tape = Tape::new();
        let logits = tape.constant(trace.logits);
        let probs = tape.softmax(logits)?;
        let nll = tape.nll(probs, target_rows(prompt.len(), target))?;
        Ok(tape.item(nll))
    }

    /// Greedy decoding of up to `max_new_tokens`, stopping at EOS or at the
    /// context limit. Returned ids exclude EOS.
    pub fn generate_ids(
        &self,
        prompt: &[usize],
        max_new_tokens: usize,
        subst: Option<&PromptSubstitution>,
    ) -> Result<Vec<usize>, LmError> {
        self.check_len(prompt.len())?;
        let mut seq = prompt.to_vec();
        let s = subst.map(|p| Substitution {
            layer: p.layer,
            position: prompt.len() - 1,
            vector: p.vector.clone(),
        });
        let mut out = Vec::new();
        while out.len() < max_new_tokens && seq.len() < self.config.max_seq_len {
            let trace = self.trace_on_tape(&seq, s.as_ref())?;
            let next = argmax(trace.logits.row(seq.len() - 1));
            if next == EOS {
                break;
            }
            out.push(next);
            seq.push(next);
        }
        Ok(out)
    }

    /// Greedy continuation of a question in the prompt layout.
    pub fn generate(&self, question: &str, max_new_tokens: usize) -> Result<String, LmError> {
        let prompt = self.tokenizer.encode_prompt(question)?;
        let ids = self.generate_ids(&prompt, max_new_tokens, None)?;
        self.tokenizer.decode(&ids)
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
