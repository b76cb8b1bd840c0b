//! Edit samples: schema, validation, seed QA extraction and expansion, and a
//! synthetic world for end-to-end runs.

mod extract;
mod schema;
mod synthetic;

pub use extract::{
    dedup_by_containment, expand_questions, extract_seed_qas, provider_by_name, split_sentences,
    ExternalLlmProvider, ExtractionConfig, GeneratedQa, QaProvider, QaTemplate, TemplateQaProvider,
    PARAPHRASE_TEMPLATES,
};
pub use schema::{
    load_dataset, save_dataset, validate_sample, word_count, Dataset, EditSample, FineQA, Rule,
    Violation, DATASET_VERSION, MAX_ANSWER_WORDS,
};
pub use synthetic::{
    generate_synthetic_corpus, generate_synthetic_world, sample_irrelevant, Person,
    SyntheticConfig, SyntheticWorld,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema error{}: {message}", sample.as_ref().map(|s| format!(" in sample {s}")).unwrap_or_default())]
    Schema {
        sample: Option<String>,
        message: String,
    },
    #[error("invalid dataset: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("{provider} provider failed on sentence {sentence}: {message}")]
    Extraction {
        provider: String,
        sentence: usize,
        message: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
