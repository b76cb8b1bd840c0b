//! Holistic and fine-grained evaluation: hit rate over key phrases, LCS
//! coverage of gold answers, ROUGE-L F over word tokens, and a pluggable
//! semantic similarity.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::EditSample;
use crate::lm::{normalize, LmError, TransformerLM};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Lm(#[from] LmError),
}

/// Lowercased word tokens with punctuation stripped from word edges.
pub fn word_tokens(text: &str) -> Vec<String> {
    normalize(text)
        .split(' ')
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Fraction of key phrases that occur in `output` as normalized substrings.
pub fn hit_rate(output: &str, key_phrases: &[String]) -> Result<f64, MetricsError> {
    if key_phrases.is_empty() {
        return Err(MetricsError::Validation("key phrase list is empty".into()));
    }
    let out = normalize(output);
    let mut hits = 0;
    for kp in key_phrases {
        let kp = normalize(kp);
        if kp.is_empty() {
            return Err(MetricsError::Validation("empty key phrase".into()));
        }
        if out.contains(&kp) {
            hits += 1;
        }
    }
    Ok(hits as f64 / key_phrases.len() as f64)
}

pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS of gold and output words divided by the number of gold words.
pub fn lcs_coverage(output: &str, gold: &str) -> Result<f64, MetricsError> {
    let g = word_tokens(gold);
    if g.is_empty() {
        return Err(MetricsError::Validation("gold answer has no words".into()));
    }
    Ok(lcs_length(&g, &word_tokens(output)) as f64 / g.len() as f64)
}

/// LCS-based F1 between output and gold words. An empty output scores 0.
pub fn rouge_l_f(output: &str, gold: &str) -> Result<f64, MetricsError> {
    let g = word_tokens(gold);
    if g.is_empty() {
        return Err(MetricsError::Validation("gold text has no words".into()));
    }
    let o = word_tokens(output);
    let l = lcs_length(&o, &g);
    if l == 0 {
        return Ok(0.0);
    }
    let p = l as f64 / o.len() as f64;
    let r = l as f64 / g.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

pub trait SemanticProvider: Send + Sync {
    fn name(&self) -> &str;
    /// Similarity in `[0, 1]`.
    fn similarity(&self, output: &str, gold: &str) -> f64;
}

/// Cosine of word-count vectors.
#[derive(Clone, Copy, Debug, Default)]
pub struct BagOfTokensCosine;

impl SemanticProvider for BagOfTokensCosine {
    fn name(&self) -> &str {
        "bag-of-tokens-cosine"
    }

    fn similarity(&self, output: &str, gold: &str) -> f64 {
        let count = |text: &str| {
            let mut m: HashMap<String, f64> = HashMap::new();
            for w in word_tokens(text) {
                *m.entry(w).or_default() += 1.0;
            }
            m
        };
        let (a, b) = (count(output), count(gold));
        let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
        let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

pub const DEFAULT_SEMANTIC_PROVIDER: &str = "bag-of-tokens-cosine";

pub fn semantic_provider(name: &str) -> Result<Box<dyn SemanticProvider>, MetricsError> {
    match name {
        DEFAULT_SEMANTIC_PROVIDER => Ok(Box::new(BagOfTokensCosine)),
        other => Err(MetricsError::Config(format!(
            "unknown semantic provider {other:?}"
        ))),
    }
}

pub fn semantic_similarity(output: &str, gold: &str, provider: &str) -> Result<f64, MetricsError> {
    Ok(semantic_provider(provider)?.similarity(output, gold))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub holistic_semantic: f64,
    pub holistic_lexical: f64,
    pub fine_semantic: f64,
    pub fine_lexical: f64,
    pub hit_rate: f64,
    pub lcs_coverage: f64,
    pub semantic_provider: String,
}

impl MetricScores {
    pub const COLUMNS: [&'static str; 6] = [
        "holistic_semantic",
        "holistic_rouge_l",
        "fine_semantic",
        "fine_rouge_l",
        "hr",
        "c_lcs",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.holistic_semantic,
            self.holistic_lexical,
            self.fine_semantic,
            self.fine_lexical,
            self.hit_rate,
            self.lcs_coverage,
        ]
    }
}

/// Generation outputs behind a [`MetricScores`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEvaluation {
    pub sample_id: String,
    pub scores: MetricScores,
    pub holistic_output: String,
    pub holistic_exact_match: bool,
    pub fine_outputs: Vec<String>,
    pub fine_hit_rates: Vec<f64>,
}

/// Extra tokens allowed past the gold answer length during greedy decoding.
pub const GENERATION_SLACK: usize = 24;

/// Greedy answer to `question`, capped a little past `gold`'s length.
pub fn generate_answer(
    model: &TransformerLM,
    question: &str,
    gold: &str,
) -> Result<String, MetricsError> {
    let budget = normalize(gold).chars().count() + GENERATION_SLACK;
    Ok(model.generate(question, budget)?)
}

pub fn evaluate_sample(
    model: &TransformerLM,
    sample: &EditSample,
    provider: &dyn SemanticProvider,
) -> Result<SampleEvaluation, MetricsError> {
    if sample.fine_qas.is_empty() {
        return Err(MetricsError::Validation(format!(
            "sample {} has no fine QA pairs",
            sample.id
        )));
    }
    let holistic_output = generate_answer(model, &sample.question, &sample.target_output)?;
    let mut fine_outputs = Vec::with_capacity(sample.fine_qas.len());
    let mut fine_hit_rates = Vec::with_capacity(sample.fine_qas.len());
    let (mut sem, mut lex, mut cov) = (0.0, 0.0, 0.0);
    for qa in &sample.fine_qas {
        let out = generate_answer(model, &qa.question, &qa.answer)?;
        sem += provider.similarity(&out, &qa.answer);
        lex += rouge_l_f(&out, &qa.answer)?;
        cov += lcs_coverage(&out, &qa.answer)?;
        fine_hit_rates.push(hit_rate(&out, &qa.key_phrases)?);
        fine_outputs.push(out);
    }
    let n = sample.fine_qas.len() as f64;
    let scores = MetricScores {
        holistic_semantic: provider.similarity(&holistic_output, &sample.target_output),
        holistic_lexical: rouge_l_f(&holistic_output, &sample.target_output)?,
        fine_semantic: sem / n,
        fine_lexical: lex / n,
        hit_rate: fine_hit_rates.iter().sum::<f64>() / n,
        lcs_coverage: cov / n,
        semantic_provider: provider.name().to_string(),
    };
    Ok(SampleEvaluation {
        sample_id: sample.id.clone(),
        holistic_exact_match: holistic_output == normalize(&sample.target_output),
        scores,
        holistic_output,
        fine_outputs,
        fine_hit_rates,
    })
}

/// One row of a metric table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// Method or configuration label, e.g. `Pre-edited` or `FABLE`.
    pub label: String,
    /// Sample id, or `mean` / `se` for aggregate rows.
    pub sample_id: String,
    pub scores: MetricScores,
}

pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `mean` and `se` rows over `rows` (which must share a label and provider).
pub fn aggregate_rows(label: &str, rows: &[MetricRow]) -> Vec<MetricRow> {
    if rows.is_empty() {
        return Vec::new();
    }
    let columns: Vec<Vec<f64>> = (0..6)
        .map(|c| rows.iter().map(|r| r.scores.values()[c]).collect())
        .collect();
    let stats: Vec<(f64, f64)> = columns.iter().map(|c| mean_and_se(c)).collect();
    let make = |id: &str, pick: &dyn Fn((f64, f64)) -> f64| MetricRow {
        label: label.to_string(),
        sample_id: id.to_string(),
        scores: MetricScores {
            holistic_semantic: pick(stats[0]),
            holistic_lexical: pick(stats[1]),
            fine_semantic: pick(stats[2]),
            fine_lexical: pick(stats[3]),
            hit_rate: pick(stats[4]),
            lcs_coverage: pick(stats[5]),
            semantic_provider: rows[0].scores.semantic_provider.clone(),
        },
    };
    vec![make("mean", &|s| s.0), make("se", &|s| s.1)]
}

pub fn rows_to_csv(rows: &[MetricRow]) -> String {
    let mut out = format!(
        "label,sample_id,{},semantic_provider\n",
        MetricScores::COLUMNS.join(",")
    );
    for r in rows {
        let vals: Vec<String> = r
            .scores
            .values()
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect();
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&r.label),
            csv_field(&r.sample_id),
            vals.join(","),
            csv_field(&r.scores.semantic_provider)
        ));
    }
    out
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
