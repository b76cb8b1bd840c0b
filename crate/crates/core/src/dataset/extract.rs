//! Seed QA extraction from an unstructured target text and paraphrase
//! expansion of the resulting questions.

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::lm::normalize;

use super::schema::{word_count, FineQA, MAX_ANSWER_WORDS};
use super::DatasetError;

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "etc", "e.g", "i.e", "no", "mt",
    "inc", "ltd", "co",
];

/// Rule-based sentence segmentation. Splits after `.`, `!` or `?` when
/// followed by whitespace (or end of text), except after common
/// abbreviations and single-letter initials.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut end = i + 1;
            while end < chars.len() && matches!(chars[end], '.' | '!' | '?' | '"' | '\'' | ')') {
                end += 1;
            }
            let at_boundary = end == chars.len() || chars[end].is_whitespace();
            if at_boundary && !(c == '.' && ends_with_abbreviation(&chars[start..i])) {
                push_sentence(&mut out, &chars[start..end]);
                start = end;
            }
            i = end;
        } else {
            i += 1;
        }
    }
    push_sentence(&mut out, &chars[start..]);
    out
}

fn push_sentence(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if !s.is_empty() {
        out.push(s);
    }
}

fn ends_with_abbreviation(before: &[char]) -> bool {
    let s: String = before.iter().collect();
    let word = s
        .rsplit(|c: char| c.is_whitespace() || c == '(')
        .next()
        .unwrap_or("");
    let lower = word.to_lowercase();
    if lower.chars().count() == 1 && lower.chars().all(char::is_alphabetic) {
        return true;
    }
    ABBREVIATIONS.contains(&lower.as_str())
}

/// A candidate pair proposed by a provider for one sub-sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedQa {
    pub question: String,
    pub answer: String,
    pub key_phrases: Vec<String>,
}

/// Source of candidate QA pairs for a sub-sentence of a paragraph.
pub trait QaProvider {
    fn name(&self) -> &str;
    fn generate(&self, paragraph: &str, sentence: &str) -> Result<Vec<GeneratedQa>, String>;
}

/// One regex pattern over the normalized sentence. `{name}` placeholders in
/// the question, answer and key phrase templates are filled from the named
/// capture groups; `{sentence}` is the whole normalized sentence.
#[derive(Clone, Debug)]
pub struct QaTemplate {
    pub pattern: Regex,
    pub question: String,
    pub answer: String,
    pub key_phrase: String,
}

impl QaTemplate {
    pub fn new(
        pattern: &str,
        question: &str,
        answer: &str,
        key_phrase: &str,
    ) -> Result<Self, DatasetError> {
        let pattern = Regex::new(pattern).map_err(|e| DatasetError::Config(e.to_string()))?;
        Ok(Self {
            pattern,
            question: question.into(),
            answer: answer.into(),
            key_phrase: key_phrase.into(),
        })
    }

    fn fill(&self, template: &str, caps: &regex::Captures<'_>, sentence: &str) -> String {
        let mut out = template.replace("{sentence}", sentence);
        for name in self.pattern.capture_names().flatten() {
            if let Some(m) = caps.name(name) {
                out = out.replace(&format!("{{{name}}}"), m.as_str());
            }
        }
        out
    }
}

/// Offline provider driven by regex templates.
#[derive(Clone, Debug)]
pub struct TemplateQaProvider {
    pub templates: Vec<QaTemplate>,
}

impl TemplateQaProvider {
    pub fn new(templates: Vec<QaTemplate>) -> Self {
        Self { templates }
    }
}

impl Default for TemplateQaProvider {
    /// Patterns for the attribute sentences of the synthetic corpus plus a
    /// generic copular form. The answer is the attribute value.
    fn default() -> Self {
        let t = |p: &str, q: &str, a: &str, k: &str| {
            QaTemplate::new(p, q, a, k).expect("built-in pattern")
        };
        Self::new(vec![
            t(
                r"^(?P<e>.+?) was born in (?P<v>[^.]+)\.?$",
                "where was {e} born?",
                "{v}",
                "{v}",
            ),
            t(
                r"^(?P<e>.+?) works as an? (?P<v>[^.]+)\.?$",
                "what does {e} do for work?",
                "{v}",
                "{v}",
            ),
            t(
                r"^(?P<e>.+?) plays the (?P<v>[^.]+)\.?$",
                "what instrument does {e} play?",
                "{v}",
                "{v}",
            ),
            t(
                r"^(?P<e>.+?) keeps a pet (?P<v>[^.]+)\.?$",
                "what pet does {e} keep?",
                "{v}",
                "{v}",
            ),
            t(
                r"^(?P<e>.+?) likes the color (?P<v>[^.]+)\.?$",
                "what color does {e} like?",
                "{v}",
                "{v}",
            ),
            t(
                r"^(?P<e>.+?) eats (?P<v>[^.]+) every day\.?$",
                "what does {e} eat every day?",
                "{v}",
                "{v}",
            ),
            t(
                r"^(?P<e>.+?) lives in (?P<v>[^.]+)\.?$",
                "where does {e} live?",
                "{v}",
                "{v}",
            ),
            t(
                r"^(?P<e>[^,]+?) (?:is|was) (?P<v>[^,.]+)\.?$",
                "what is {e}?",
                "{v}",
                "{v}",
            ),
        ])
    }
}

impl QaProvider for TemplateQaProvider {
    fn name(&self) -> &str {
        "template"
    }

    fn generate(&self, _paragraph: &str, sentence: &str) -> Result<Vec<GeneratedQa>, String> {
        let norm = normalize(sentence);
        let mut out = Vec::new();
        for tpl in &self.templates {
            if let Some(caps) = tpl.pattern.captures(&norm) {
                out.push(GeneratedQa {
                    question: tpl.fill(&tpl.question, &caps, &norm),
                    answer: tpl.fill(&tpl.answer, &caps, &norm),
                    key_phrases: vec![tpl.fill(&tpl.key_phrase, &caps, &norm)],
                });
                break;
            }
        }
        Ok(out)
    }
}

/// Placeholder for a hosted instruction-tuned model. No network client ships
/// with the crate, so every call reports that the provider is unavailable.
#[derive(Clone, Debug, Default)]
pub struct ExternalLlmProvider {
    pub endpoint: Option<String>,
}

impl QaProvider for ExternalLlmProvider {
    fn name(&self) -> &str {
        "llm"
    }

    fn generate(&self, _paragraph: &str, _sentence: &str) -> Result<Vec<GeneratedQa>, String> {
        Err(match &self.endpoint {
            Some(e) => format!("no client available for endpoint {e}"),
            None => "no LLM endpoint configured".into(),
        })
    }
}

pub fn provider_by_name(name: &str) -> Result<Box<dyn QaProvider>, DatasetError> {
    match name {
        "template" => Ok(Box::new(TemplateQaProvider::default())),
        "llm" => Ok(Box::new(ExternalLlmProvider::default())),
        other => Err(DatasetError::Config(format!(
            "unknown QA provider {other:?}"
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Sentences with fewer words are skipped.
    pub min_words: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self { min_words: 6 }
    }
}

/// Drops every pair whose normalized answer is strictly contained in another
/// pair's answer, and later duplicates of an identical answer. Order of the
/// survivors is preserved.
pub fn dedup_by_containment(qas: Vec<FineQA>) -> Vec<FineQA> {
    let answers: Vec<String> = qas.iter().map(|q| normalize(&q.answer)).collect();
    qas.into_iter()
        .enumerate()
        .filter(|(i, _)| {
            !answers.iter().enumerate().any(|(j, other)| {
                j != *i
                    && ((other.len() > answers[*i].len() && other.contains(&answers[*i]))
                        || (other == &answers[*i] && j < *i))
            })
        })
        .map(|(_, q)| q)
        .collect()
}

/// Splits `target_output` into sentences, asks the provider for pairs per
/// sufficiently long sentence, keeps pairs whose answer comes from that
/// sentence, and removes contained answers within each sentence's cluster.
pub fn extract_seed_qas(
    target_output: &str,
    provider: &dyn QaProvider,
    config: &ExtractionConfig,
) -> Result<Vec<FineQA>, DatasetError> {
    let mut out = Vec::new();
    for (span, sentence) in split_sentences(target_output).iter().enumerate() {
        if word_count(sentence) < config.min_words {
            continue;
        }
        let norm_sentence = normalize(sentence);
        let generated = provider
            .generate(target_output, sentence)
            .map_err(|message| DatasetError::Extraction {
                provider: provider.name().to_string(),
                sentence: span,
                message,
            })?;
        let cluster: Vec<FineQA> = generated
            .into_iter()
            .filter(|g| {
                let a = normalize(&g.answer);
                !a.is_empty()
                    && !normalize(&g.question).is_empty()
                    && norm_sentence.contains(&a)
                    && word_count(&a) <= MAX_ANSWER_WORDS
            })
            .map(|g| {
                let key_phrases = if g.key_phrases.is_empty() {
                    vec![g.answer.clone()]
                } else {
                    g.key_phrases
                };
                FineQA {
                    question: g.question,
                    answer: g.answer,
                    key_phrases,
                    seed: true,
                    source_span: Some(span),
                }
            })
            .collect();
        out.extend(dedup_by_containment(cluster));
    }
    Ok(out)
}

/// Paraphrase wrappers applied to seed questions; the first entry is the
/// identity.
pub const PARAPHRASE_TEMPLATES: &[&str] = &[
    "{q}",
    "tell me, {q}",
    "quick question: {q}",
    "i wonder, {q}",
    "please answer: {q}",
    "do you know {q}",
    "can you say {q}",
    "here is a question: {q}",
    "answer this: {q}",
    "briefly, {q}",
    "one more thing: {q}",
    "so, {q}",
];

/// Each seed followed by `multiplier - 1` deterministic paraphrases that keep
/// the answer and key phrases. Seeds keep `seed = true`, paraphrases get
/// `false`.
pub fn expand_questions(seeds: &[FineQA], multiplier: usize) -> Result<Vec<FineQA>, DatasetError> {
    if multiplier == 0 || multiplier > PARAPHRASE_TEMPLATES.len() {
        return Err(DatasetError::Config(format!(
            "expansion multiplier must be in 1..={}, got {multiplier}",
            PARAPHRASE_TEMPLATES.len()
        )));
    }
    let mut out = Vec::with_capacity(seeds.len() * multiplier);
    for seed in seeds {
        let q = normalize(&seed.question);
        for (i, tpl) in PARAPHRASE_TEMPLATES.iter().take(multiplier).enumerate() {
            let mut qa = seed.clone();
            qa.seed = i == 0;
            if i > 0 {
                qa.question = tpl.replace("{q}", &q);
            }
            out.push(qa);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<GeneratedQa>);

    impl QaProvider for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn generate(&self, _: &str, _: &str) -> Result<Vec<GeneratedQa>, String> {
            Ok(self.0.clone())
        }
    }

    fn g(q: &str, a: &str) -> GeneratedQa {
        GeneratedQa {
            question: q.into(),
            answer: a.into(),
            key_phrases: vec![],
        }
    }

    #[test]
    fn sentence_splitting_respects_abbreviations() {
        let s = split_sentences(
            "Dr. Smith lived in St. Ives for years. He left!  Then what? J. R. came.",
        );
        assert_eq!(
            s,
            vec![
                "Dr. Smith lived in St. Ives for years.",
                "He left!",
                "Then what?",
                "J. R. came."
            ]
        );
        assert_eq!(
            split_sentences("no terminal punctuation"),
            vec!["no terminal punctuation"]
        );
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn template_provider_on_born_sentence() {
        let provider = TemplateQaProvider::default();
        let loose = ExtractionConfig { min_words: 1 };
        let qas = extract_seed_qas("X was born in Y.", &provider, &loose).unwrap();
        assert_eq!(qas.len(), 1);
        assert_eq!(normalize(&qas[0].question), "where was x born?");
        assert_eq!(normalize(&qas[0].answer), "y");
        assert_eq!(qas[0].key_phrases, vec!["y".to_string()]);
        assert!(qas[0].seed);
        assert_eq!(qas[0].source_span, Some(0));
        let strict =
            extract_seed_qas("X was born in Y.", &provider, &ExtractionConfig::default()).unwrap();
        assert!(strict.is_empty());
    }

    #[test]
    fn containment_keeps_the_container() {
        let provider = Fixed(vec![
            g("how long?", "a decade"),
            g("for how long?", "over a decade"),
        ]);
        let qas = extract_seed_qas(
            "she stayed there for over a decade in total.",
            &provider,
            &ExtractionConfig::default(),
        )
        .unwrap();
        assert_eq!(qas.len(), 1);
        assert_eq!(qas[0].answer, "over a decade");
    }

    #[test]
    fn short_sentences_and_foreign_answers_are_skipped() {
        let provider = Fixed(vec![g("q?", "a decade"), g("q2?", "somewhere else")]);
        let qas = extract_seed_qas(
            "Too short here. She stayed for a decade in the north.",
            &provider,
            &ExtractionConfig::default(),
        )
        .unwrap();
        assert_eq!(qas.len(), 1);
        assert_eq!(qas[0].source_span, Some(1));
    }

    #[test]
    fn provider_failure_names_sentence() {
        let err = extract_seed_qas(
            "one two three four five six seven.",
            &ExternalLlmProvider::default(),
            &ExtractionConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::Extraction { sentence: 0, .. }));
        assert!(provider_by_name("nope").is_err());
    }

    fn seeds(n: usize) -> Vec<FineQA> {
        (0..n)
            .map(|i| FineQA {
                question: format!("question number {i}?"),
                answer: format!("answer {i}"),
                key_phrases: vec![format!("answer {i}")],
                seed: true,
                source_span: Some(i),
            })
            .collect()
    }

    #[test]
    fn expansion_counts_and_flags() {
        let out = expand_questions(&seeds(3), 5).unwrap();
        assert_eq!(out.len(), 15);
        assert_eq!(out.iter().filter(|q| q.seed).count(), 3);
        let mut qs: Vec<_> = out.iter().map(|q| q.question.clone()).collect();
        qs.sort();
        qs.dedup();
        assert_eq!(qs.len(), 15);
        for q in &out {
            assert_eq!(q.answer, format!("answer {}", q.source_span.unwrap()));
        }
    }

    #[test]
    fn multiplier_one_is_identity() {
        assert_eq!(expand_questions(&seeds(4), 1).unwrap(), seeds(4));
        assert!(expand_questions(&seeds(1), 0).is_err());
        assert!(expand_questions(&seeds(1), PARAPHRASE_TEMPLATES.len() + 1).is_err());
    }
}
