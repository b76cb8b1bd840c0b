//! Checks of the synthetic data pipeline.

use fable_core::dataset::{
    dedup_by_containment, expand_questions, validate_sample, EditSample, FineQA,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ids of samples with validation violations.
pub fn invalid_samples(samples: &[EditSample]) -> Vec<String> {
    samples
        .iter()
        .filter(|s| !validate_sample(s).is_empty())
        .map(|s| s.id.clone())
        .collect()
}

/// Ids of samples whose expansion by `multiplier` is not `multiplier × S`.
pub fn bad_expansions(samples: &[EditSample], multiplier: usize) -> Vec<String> {
    samples
        .iter()
        .filter(|s| {
            let seeds = s.seed_qas();
            match expand_questions(&seeds, multiplier) {
                Ok(e) => {
                    e.len() != multiplier * seeds.len()
                        || e.iter().filter(|q| q.seed).count() != seeds.len()
                }
                Err(_) => true,
            }
        })
        .map(|s| s.id.clone())
        .collect()
}

pub fn random_fixture(rng: &mut ChaCha8Rng) -> Vec<FineQA> {
    const WORDS: [&str; 6] = ["red", "fox", "runs", "far", "blue", "sky"];
    (0..rng.gen_range(0..8))
        .map(|i| {
            let n = rng.gen_range(1..=4);
            let answer: Vec<&str> = (0..n)
                .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
                .collect();
            let answer = answer.join(" ");
            FineQA {
                question: format!("question {i}?"),
                key_phrases: vec![answer.clone()],
                answer,
                seed: true,
                source_span: None,
            }
        })
        .collect()
}

/// Number of fixtures on which a second dedup pass changes the result.
pub fn non_idempotent_dedups(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .filter(|_| {
            let once = dedup_by_containment(random_fixture(&mut rng));
            dedup_by_containment(once.clone()) != once
        })
        .count()
}
