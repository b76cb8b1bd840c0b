//! Deterministic synthetic world: invented people with a handful of
//! attribute facts, a pretraining corpus describing them, and
//! counterfactual edit samples that rewrite a person's description using
//! attribute values the corpus attaches only to other people.

use std::collections::HashSet;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lm::CorpusItem;

use super::extract::PARAPHRASE_TEMPLATES;
use super::schema::{validate_sample, EditSample, FineQA};
use super::DatasetError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Slot {
    question: &'static str,
    sentence: &'static str,
    key_phrase: &'static str,
    category: &'static str,
    values: [&'static str; 12],
}

const SLOTS: [Slot; 6] = [
    Slot {
        question: "where was {e} born?",
        sentence: "they were born in {v}.",
        key_phrase: "born in {v}",
        category: "{v} is a city.",
        values: [
            "velmora",
            "tarsk",
            "olundi",
            "brevik",
            "casmere",
            "dunhollow",
            "eskarra",
            "fallowmere",
            "gorvane",
            "halvik",
            "istrene",
            "jorvath",
        ],
    },
    Slot {
        question: "what does {e} do for work?",
        sentence: "they work as a {v}.",
        key_phrase: "work as a {v}",
        category: "a {v} is a job.",
        values: [
            "baker", "sailor", "teacher", "miner", "painter", "farmer", "doctor", "weaver",
            "potter", "tailor", "mason", "singer",
        ],
    },
    Slot {
        question: "what instrument does {e} play?",
        sentence: "they play the {v}.",
        key_phrase: "play the {v}",
        category: "a {v} is an instrument.",
        values: [
            "harp", "flute", "drum", "lute", "violin", "cello", "horn", "oboe", "banjo", "piano",
            "tuba", "zither",
        ],
    },
    Slot {
        question: "what pet does {e} keep?",
        sentence: "they keep a pet {v}.",
        key_phrase: "pet {v}",
        category: "a {v} is an animal.",
        values: [
            "cat", "dog", "fox", "owl", "goat", "frog", "hare", "crow", "mole", "newt", "lark",
            "toad",
        ],
    },
    Slot {
        question: "what color does {e} like?",
        sentence: "they like the color {v}.",
        key_phrase: "color {v}",
        category: "{v} is a color.",
        values: [
            "red", "blue", "green", "amber", "teal", "violet", "gray", "pink", "olive", "coral",
            "ivory", "black",
        ],
    },
    Slot {
        question: "what does {e} eat every day?",
        sentence: "they eat {v} every day.",
        key_phrase: "eat {v}",
        category: "{v} is a food.",
        values: [
            "rice", "bread", "soup", "plums", "beans", "cheese", "figs", "olives", "eggs", "honey",
            "nuts", "pears",
        ],
    },
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tas", "vel", "dor", "bri", "zan", "quo", "fen", "sil", "mar", "tov",
    "nua", "pel", "gri", "sor", "ul", "yen", "ba", "cor", "dri", "eth",
];

fn fill(template: &str, entity: &str, value: &str) -> String {
    template.replace("{e}", entity).replace("{v}", value)
}

/// Shape of the generated world.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    /// People in the corpus that are never edited.
    pub extra_entities: usize,
    /// Inclusive range of true facts per person.
    pub min_entity_facts: usize,
    pub max_entity_facts: usize,
    /// Inclusive range of facts in a counterfactual target text.
    pub min_target_facts: usize,
    pub max_target_facts: usize,
    /// Extra paraphrased copies of each fact question in the corpus.
    pub paraphrased_copies: usize,
    pub n_irrelevant: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            extra_entities: 200,
            min_entity_facts: 3,
            max_entity_facts: 6,
            min_target_facts: 3,
            max_target_facts: 6,
            paraphrased_copies: 1,
            n_irrelevant: 20,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub name: String,
    /// `(slot index, value)` in description order.
    pub facts: Vec<(usize, String)>,
}

impl Person {
    pub fn description(&self) -> String {
        self.facts
            .iter()
            .map(|(s, v)| fill(SLOTS[*s].sentence, &self.name, v))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub people: Vec<Person>,
    pub samples: Vec<EditSample>,
    /// Pretraining corpus (people's facts plus the irrelevant bank).
    pub corpus: Vec<CorpusItem>,
    /// Prompts unrelated to any edit; each sample's irrelevant set is drawn
    /// from here.
    pub irrelevant_pool: Vec<String>,
}

impl SyntheticWorld {
    /// All corpus prompts and completions, one per line.
    pub fn corpus_text(&self) -> String {
        self.corpus
            .iter()
            .map(|c| format!("{}\n{}\n", c.prompt, c.completion))
            .collect()
    }
}

fn invent_names(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut names: Vec<String> = Vec::with_capacity(n);
    let taken: HashSet<&str> = SLOTS.iter().flat_map(|s| s.values).collect();
    while names.len() < n {
        let parts = rng.gen_range(2..=3);
        let name: String = (0..parts)
            .map(|_| *SYLLABLES.choose(rng).expect("non-empty"))
            .collect();
        let clashes = names
            .iter()
            .any(|o| o.contains(&name) || name.contains(o.as_str()))
            || taken.iter().any(|v| v.contains(&name) || name.contains(v));
        if !clashes {
            names.push(name);
        }
    }
    names
}

fn irrelevant_bank() -> Vec<CorpusItem> {
    let mut bank = Vec::new();
    for slot in &SLOTS {
        for v in slot.values {
            let article = if slot.category.starts_with("a {v}") {
                "a "
            } else {
                ""
            };
            bank.push(CorpusItem::new(
                format!("what is {article}{v}?"),
                fill(slot.category, "", v),
            ));
        }
    }
    for a in 1..=9 {
        for b in 1..=9 {
            if (a + b) % 2 == 0 {
                bank.push(CorpusItem::new(
                    format!("what is {a} plus {b}?"),
                    format!("{a} plus {b} is {}.", a + b),
                ));
            }
        }
    }
    bank
}

/// Builds people, pretraining corpus and edit samples; the same config
/// always yields the same world.
pub fn generate_synthetic_world(config: &SyntheticConfig) -> Result<SyntheticWorld, DatasetError> {
    if config.n_samples == 0 {
        return Err(DatasetError::Config("n_samples must be positive".into()));
    }
    if config.min_entity_facts == 0
        || config.min_entity_facts > config.max_entity_facts
        || config.max_entity_facts > SLOTS.len()
    {
        return Err(DatasetError::Config(format!(
            "entity facts must lie in 1..={}",
            SLOTS.len()
        )));
    }
    if config.min_target_facts == 0
        || config.min_target_facts > config.max_target_facts
        || config.max_target_facts > SLOTS.len()
    {
        return Err(DatasetError::Config("invalid target fact range".into()));
    }
    if config.paraphrased_copies + 1 > PARAPHRASE_TEMPLATES.len() {
        return Err(DatasetError::Config("too many paraphrased copies".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let n_people = config.n_samples + config.extra_entities;
    let names = invent_names(n_people, &mut rng);
    let people: Vec<Person> = names
        .into_iter()
        .map(|name| {
            let k = rng.gen_range(config.min_entity_facts..=config.max_entity_facts);
            let mut slots = (0..SLOTS.len()).choose_multiple(&mut rng, k);
            slots.sort_unstable();
            let facts = slots
                .into_iter()
                .map(|s| {
                    (
                        s,
                        SLOTS[s]
                            .values
                            .choose(&mut rng)
                            .expect("non-empty")
                            .to_string(),
                    )
                })
                .collect();
            Person { name, facts }
        })
        .collect();

    let bank = irrelevant_bank();
    let irrelevant_pool: Vec<String> = bank.iter().map(|c| c.prompt.clone()).collect();

    let mut corpus = Vec::new();
    for p in &people {
        corpus.push(CorpusItem::new(
            format!("tell me about {}.", p.name),
            p.description(),
        ));
        for (s, v) in &p.facts {
            let q = fill(SLOTS[*s].question, &p.name, v);
            let a = fill(SLOTS[*s].sentence, &p.name, v);
            corpus.push(CorpusItem::new(q.clone(), a.clone()));
            for tpl in
                PARAPHRASE_TEMPLATES[1..].choose_multiple(&mut rng, config.paraphrased_copies)
            {
                corpus.push(CorpusItem::new(tpl.replace("{q}", &q), a.clone()));
            }
        }
    }
    corpus.extend(bank);

    let mut samples = Vec::with_capacity(config.n_samples);
    for (i, p) in people.iter().take(config.n_samples).enumerate() {
        let k = rng.gen_range(config.min_target_facts..=config.max_target_facts);
        let mut slots: Vec<usize> = (0..SLOTS.len()).choose_multiple(&mut rng, k);
        slots.sort_unstable();
        let facts: Vec<(usize, String)> = slots
            .into_iter()
            .map(|s| {
                let own = p
                    .facts
                    .iter()
                    .find(|(t, _)| *t == s)
                    .map(|(_, v)| v.as_str());
                let mut seen: Vec<&str> = people
                    .iter()
                    .flat_map(|q| q.facts.iter())
                    .filter(|(t, v)| *t == s && Some(v.as_str()) != own)
                    .map(|(_, v)| v.as_str())
                    .collect();
                seen.sort_unstable();
                seen.dedup();
                if seen.is_empty() {
                    seen = SLOTS[s]
                        .values
                        .iter()
                        .copied()
                        .filter(|v| Some(*v) != own)
                        .collect();
                }
                (s, seen.choose(&mut rng).expect("non-empty").to_string())
            })
            .collect();
        let edited = Person {
            name: p.name.clone(),
            facts,
        };
        let fine_qas = edited
            .facts
            .iter()
            .enumerate()
            .map(|(span, (s, v))| FineQA {
                question: fill(SLOTS[*s].question, &p.name, v),
                answer: fill(SLOTS[*s].sentence, &p.name, v),
                key_phrases: vec![fill(SLOTS[*s].key_phrase, &p.name, v)],
                seed: true,
                source_span: Some(span),
            })
            .collect();
        let sample = EditSample {
            id: format!("syn-{i:03}"),
            question: format!("tell me about {}.", p.name),
            target_output: edited.description(),
            fine_qas,
            irrelevant: sample_irrelevant(
                &irrelevant_pool,
                config.n_irrelevant,
                config.seed ^ (i as u64 + 1),
            )?,
        };
        let violations = validate_sample(&sample);
        if !violations.is_empty() {
            return Err(DatasetError::Invalid(violations));
        }
        samples.push(sample);
    }

    Ok(SyntheticWorld {
        people,
        samples,
        corpus,
        irrelevant_pool,
    })
}

/// Convenience wrapper with default world shape.
pub fn generate_synthetic_corpus(
    n_samples: usize,
    seed: u64,
) -> Result<SyntheticWorld, DatasetError> {
    generate_synthetic_world(&SyntheticConfig::new(n_samples, seed))
}

/// `v` distinct prompts drawn from `pool`, deterministic in `seed`.
pub fn sample_irrelevant(
    pool: &[String],
    v: usize,
    seed: u64,
) -> Result<Vec<String>, DatasetError> {
    if v > pool.len() {
        return Err(DatasetError::Config(format!(
            "cannot draw {v} irrelevant prompts from a pool of {}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(pool.choose_multiple(&mut rng, v).cloned().collect())
}
