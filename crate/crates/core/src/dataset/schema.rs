use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::lm::normalize;

use super::DatasetError;

pub const DATASET_VERSION: u32 = 1;
pub const MAX_ANSWER_WORDS: usize = 15;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineQA {
    pub question: String,
    pub answer: String,
    pub key_phrases: Vec<String>,
    /// `true` for pairs extracted directly from the target text, `false`
    /// for paraphrase expansions.
    pub seed: bool,
    /// Index of the sub-sentence of the target text the pair came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_span: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSample {
    pub id: String,
    /// Holistic question.
    pub question: String,
    /// Unstructured target text for the holistic question.
    pub target_output: String,
    pub fine_qas: Vec<FineQA>,
    pub irrelevant: Vec<String>,
}

impl EditSample {
    /// Seed-flagged fine pairs; if none are flagged every pair is a seed.
    pub fn seed_qas(&self) -> Vec<FineQA> {
        let seeds: Vec<FineQA> = self.fine_qas.iter().filter(|q| q.seed).cloned().collect();
        if seeds.is_empty() {
            self.fine_qas.clone()
        } else {
            seeds
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub version: u32,
    pub samples: Vec<EditSample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    EmptyField,
    AnswerLength,
    StaySource,
    EntityInclusion,
    DuplicateQuestion,
    IrrelevantOverlap,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::EmptyField => "empty-field",
            Rule::AnswerLength => "answer-length",
            Rule::StaySource => "stay-source",
            Rule::EntityInclusion => "entity-inclusion",
            Rule::DuplicateQuestion => "duplicate-question",
            Rule::IrrelevantOverlap => "irrelevant-overlap",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub sample_id: String,
    pub field: String,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sample {}: {} [{}] {}",
            self.sample_id,
            self.field,
            self.rule.name(),
            self.message
        )
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Checks a sample against the construction rules, returning every
/// violation found (empty means the sample is valid).
pub fn validate_sample(sample: &EditSample) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: String, rule: Rule, message: String| {
        out.push(Violation {
            sample_id: sample.id.clone(),
            field,
            rule,
            message,
        });
    };
    if sample.id.trim().is_empty() {
        push("id".into(), Rule::EmptyField, "sample id is empty".into());
    }
    if normalize(&sample.question).is_empty() {
        push(
            "question".into(),
            Rule::EmptyField,
            "holistic question is empty".into(),
        );
    }
    let target = normalize(&sample.target_output);
    if target.is_empty() {
        push(
            "target_output".into(),
            Rule::EmptyField,
            "target output is empty".into(),
        );
    }
    if sample.fine_qas.is_empty() {
        push(
            "fine_qas".into(),
            Rule::EmptyField,
            "no fine-grained QA pairs".into(),
        );
    }
    let mut seen = HashSet::new();
    for (i, qa) in sample.fine_qas.iter().enumerate() {
        let q = normalize(&qa.question);
        let a = normalize(&qa.answer);
        if q.is_empty() {
            push(
                format!("fine_qas[{i}].question"),
                Rule::EmptyField,
                "question is empty".into(),
            );
        } else if !seen.insert(q.clone()) {
            push(
                format!("fine_qas[{i}].question"),
                Rule::DuplicateQuestion,
                format!("question {q:?} appears more than once"),
            );
        }
        if a.is_empty() {
            push(
                format!("fine_qas[{i}].answer"),
                Rule::EmptyField,
                "answer is empty".into(),
            );
        }
        let words = word_count(&a);
        if words > MAX_ANSWER_WORDS {
            push(
                format!("fine_qas[{i}].answer"),
                Rule::AnswerLength,
                format!("answer has {words} words, limit is {MAX_ANSWER_WORDS} tokens"),
            );
        }
        if qa.key_phrases.is_empty() {
            push(
                format!("fine_qas[{i}].key_phrases"),
                Rule::EmptyField,
                "no key phrases".into(),
            );
        }
        for (j, kp) in qa.key_phrases.iter().enumerate() {
            let field = format!("fine_qas[{i}].key_phrases[{j}]");
            let kp = normalize(kp);
            if kp.is_empty() {
                push(field, Rule::EmptyField, "key phrase is empty".into());
                continue;
            }
            if !a.contains(&kp) {
                push(
                    field.clone(),
                    Rule::StaySource,
                    format!("{kp:?} is not part of the answer"),
                );
            }
            if !target.contains(&kp) {
                push(
                    field,
                    Rule::EntityInclusion,
                    format!("{kp:?} does not appear in the target output"),
                );
            }
        }
    }
    let holistic = normalize(&sample.question);
    for (k, d) in sample.irrelevant.iter().enumerate() {
        let d = normalize(d);
        let field = format!("irrelevant[{k}]");
        if d.is_empty() {
            push(field, Rule::EmptyField, "irrelevant prompt is empty".into());
        } else if d == holistic || seen.contains(&d) {
            push(
                field,
                Rule::IrrelevantOverlap,
                format!("{d:?} duplicates an edit question"),
            );
        }
    }
    out
}

impl Dataset {
    pub fn new(samples: Vec<EditSample>) -> Self {
        Self {
            version: DATASET_VERSION,
            samples,
        }
    }

    /// Parses and validates. Any schema problem or rule violation is an
    /// error naming the sample and field.
    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        if text.trim().is_empty() {
            return Err(DatasetError::Schema {
                sample: None,
                message: "dataset file is empty".into(),
            });
        }
        #[derive(Deserialize)]
        struct Raw {
            version: u32,
            samples: Vec<serde_json::Value>,
        }
        let raw: Raw = serde_json::from_str(text).map_err(|e| DatasetError::Schema {
            sample: None,
            message: e.to_string(),
        })?;
        if raw.version != DATASET_VERSION {
            return Err(DatasetError::Schema {
                sample: None,
                message: format!(
                    "version {} is not supported (expected {DATASET_VERSION})",
                    raw.version
                ),
            });
        }
        let mut samples = Vec::with_capacity(raw.samples.len());
        for (i, value) in raw.samples.into_iter().enumerate() {
            let label = value
                .get("id")
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .unwrap_or_else(|| format!("#{i}"));
            let sample: EditSample =
                serde_json::from_value(value).map_err(|e| DatasetError::Schema {
                    sample: Some(label.clone()),
                    message: e.to_string(),
                })?;
            let violations = validate_sample(&sample);
            if !violations.is_empty() {
                return Err(DatasetError::Invalid(violations));
            }
            samples.push(sample);
        }
        Ok(Self {
            version: raw.version,
            samples,
        })
    }

    pub fn to_json(&self) -> Result<String, DatasetError> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| DatasetError::Schema {
            sample: None,
            message: e.to_string(),
        })?;
        s.push('\n');
        Ok(s)
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<EditSample>, DatasetError> {
    let text = fs::read_to_string(path)?;
    Ok(Dataset::from_json(&text.replace("\r\n", "\n"))?.samples)
}

pub fn save_dataset(samples: &[EditSample], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    fs::write(path, Dataset::new(samples.to_vec()).to_json()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qa(q: &str, a: &str, kp: &[&str]) -> FineQA {
        FineQA {
            question: q.into(),
            answer: a.into(),
            key_phrases: kp.iter().map(|s| s.to_string()).collect(),
            seed: true,
            source_span: None,
        }
    }

    fn sample() -> EditSample {
        EditSample {
            id: "s1".into(),
            question: "tell me about orla.".into(),
            target_output: "Orla was born in Velmora. Orla plays the harp.".into(),
            fine_qas: vec![
                qa(
                    "where was orla born?",
                    "Orla was born in Velmora.",
                    &["born in velmora"],
                ),
                qa(
                    "what does orla play?",
                    "orla plays the harp.",
                    &["plays the harp"],
                ),
            ],
            irrelevant: vec!["what is 2 plus 2?".into()],
        }
    }

    fn rules(s: &EditSample) -> Vec<Rule> {
        validate_sample(s).into_iter().map(|v| v.rule).collect()
    }

    #[test]
    fn well_formed_sample_is_ok() {
        assert!(validate_sample(&sample()).is_empty());
    }

    #[test]
    fn phrase_outside_answer_is_stay_source() {
        let mut s = sample();
        s.fine_qas[0].key_phrases = vec!["plays the harp".into()];
        assert_eq!(rules(&s), vec![Rule::StaySource]);
    }

    #[test]
    fn phrase_outside_target_is_entity_inclusion() {
        let mut s = sample();
        s.fine_qas[1].answer = "orla plays the lute.".into();
        s.fine_qas[1].key_phrases = vec!["plays the lute".into()];
        assert_eq!(rules(&s), vec![Rule::EntityInclusion]);
    }

    #[test]
    fn sixteen_word_answer_is_too_long() {
        let mut s = sample();
        s.fine_qas[0].answer = "one two three four five six seven eight nine ten eleven twelve thirteen born in velmora".into();
        assert_eq!(word_count(&s.fine_qas[0].answer), 16);
        let v = validate_sample(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::AnswerLength);
        assert!(v[0].message.contains("15"));
    }

    #[test]
    fn duplicates_and_overlaps() {
        let mut s = sample();
        s.fine_qas[1].question = "Where was  Orla born?".into();
        s.irrelevant.push("TELL me about orla.".into());
        assert_eq!(
            rules(&s),
            vec![Rule::DuplicateQuestion, Rule::IrrelevantOverlap]
        );
    }

    #[test]
    fn empty_file_is_a_schema_error() {
        assert!(matches!(
            Dataset::from_json(""),
            Err(DatasetError::Schema { .. })
        ));
    }

    #[test]
    fn schema_error_names_sample() {
        let text = r#"{"version":1,"samples":[{"id":"bad-one","question":"q?","fine_qas":[],"irrelevant":[]}]}"#;
        match Dataset::from_json(text) {
            Err(DatasetError::Schema { sample, message }) => {
                assert_eq!(sample.as_deref(), Some("bad-one"));
                assert!(message.contains("target_output"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_sample_rejected_on_load() {
        let mut s = sample();
        s.fine_qas[0].answer = "one two three four five six seven eight nine ten eleven twelve thirteen born in velmora".into();
        let text = Dataset::new(vec![s]).to_json().unwrap();
        match Dataset::from_json(&text) {
            Err(DatasetError::Invalid(v)) => assert_eq!(v[0].rule, Rule::AnswerLength),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_round_trip() {
        let ds = Dataset::new(vec![sample()]);
        let text = ds.to_json().unwrap();
        let back = Dataset::from_json(&text).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_json().unwrap(), text);
    }
}
