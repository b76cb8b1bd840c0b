#[path = "support/data_suite.rs"]
mod data_suite;

use fable_core::dataset::*;
use fable_core::lm::normalize;
use fable_core::metrics::hit_rate;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn generated_samples_validate_and_expand() {
    let world = generate_synthetic_corpus(20, 7).unwrap();
    assert_eq!(world.samples.len(), 20);
    assert!(data_suite::invalid_samples(&world.samples).is_empty());
    assert!(data_suite::bad_expansions(&world.samples, 5).is_empty());
    for s in &world.samples {
        let n = s.fine_qas.len();
        assert!((3..=6).contains(&n), "{} has {n} facts", s.id);
        assert_eq!(s.irrelevant.len(), 20);
    }
}

#[test]
fn worlds_are_deterministic() {
    let a = generate_synthetic_corpus(5, 3).unwrap();
    let b = generate_synthetic_corpus(5, 3).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.samples, generate_synthetic_corpus(5, 4).unwrap().samples);
}

#[test]
fn edited_facts_recombine_other_peoples_values() {
    let world = generate_synthetic_corpus(20, 11).unwrap();
    for (s, person) in world.samples.iter().zip(&world.people) {
        let mine: String = world
            .corpus
            .iter()
            .filter(|c| c.prompt.contains(person.name.as_str()))
            .map(|c| c.completion.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let others: String = world
            .corpus
            .iter()
            .filter(|c| !c.prompt.contains(person.name.as_str()))
            .map(|c| c.completion.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        for qa in &s.fine_qas {
            assert_eq!(
                hit_rate(&mine, &qa.key_phrases).unwrap(),
                0.0,
                "{:?}",
                qa.key_phrases
            );
            assert_eq!(
                hit_rate(&others, &qa.key_phrases).unwrap(),
                1.0,
                "{:?}",
                qa.key_phrases
            );
        }
    }
}

#[test]
fn irrelevant_prompts_are_corpus_prompts() {
    let world = generate_synthetic_corpus(4, 1).unwrap();
    assert!(world.irrelevant_pool.len() >= 100);
    for s in &world.samples {
        for p in &s.irrelevant {
            assert!(world.corpus.iter().any(|c| &c.prompt == p));
        }
    }
    assert!(sample_irrelevant(&world.irrelevant_pool, 10_000, 0).is_err());
}

#[test]
fn bad_world_configs_are_rejected() {
    assert!(generate_synthetic_corpus(0, 1).is_err());
    let mut c = SyntheticConfig::new(2, 1);
    c.min_target_facts = 5;
    c.max_target_facts = 4;
    assert!(matches!(
        generate_synthetic_world(&c),
        Err(DatasetError::Config(_))
    ));
}

#[test]
fn dedup_is_idempotent_on_fixtures() {
    assert_eq!(data_suite::non_idempotent_dedups(100, 5), 0);
}

#[test]
fn dedup_leaves_no_contained_answers() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let out = dedup_by_containment(data_suite::random_fixture(&mut rng));
        for (i, a) in out.iter().enumerate() {
            for (j, b) in out.iter().enumerate() {
                if i != j {
                    assert!(!normalize(&a.answer).contains(&normalize(&b.answer)));
                }
            }
        }
    }
}

#[test]
fn dataset_file_round_trip() {
    let world = generate_synthetic_corpus(3, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    save_dataset(&world.samples, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), world.samples);
}

#[test]
fn malformed_files_name_the_sample() {
    let world = generate_synthetic_corpus(2, 2).unwrap();
    let mut json: serde_json::Value =
        serde_json::from_str(&Dataset::new(world.samples).to_json().unwrap()).unwrap();
    json["samples"][1]["fine_qas"] = serde_json::json!("oops");
    match Dataset::from_json(&json.to_string()) {
        Err(DatasetError::Schema { sample, .. }) => assert_eq!(sample.as_deref(), Some("syn-001")),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        Dataset::from_json(""),
        Err(DatasetError::Schema { .. })
    ));
}

#[test]
fn expansion_limits() {
    let world = generate_synthetic_corpus(1, 9).unwrap();
    let seeds = world.samples[0].seed_qas();
    assert!(expand_questions(&seeds, 0).is_err());
    assert!(expand_questions(&seeds, PARAPHRASE_TEMPLATES.len() + 1).is_err());
    let e = expand_questions(&seeds, 5).unwrap();
    let mut qs: Vec<&str> = e.iter().map(|q| q.question.as_str()).collect();
    qs.sort_unstable();
    qs.dedup();
    assert_eq!(qs.len(), e.len());
    for q in &e {
        assert!(seeds
            .iter()
            .any(|s| s.answer == q.answer && q.question.contains(s.question.as_str())));
    }
}

proptest! {
    #[test]
    fn normalization_is_stable(s in "[ a-zA-Z.,?\\t\\r\\n]{0,40}") {
        let once = normalize(&s);
        prop_assert_eq!(normalize(&once), once.clone());
        prop_assert!(!once.contains("  "));
    }

    #[test]
    fn sentence_split_preserves_words(words in prop::collection::vec("[a-z]{2,6}", 1..20), cut in 1usize..5) {
        let mut text = String::new();
        for (i, w) in words.iter().enumerate() {
            text.push_str(w);
            text.push_str(if i % cut == cut - 1 { ". " } else { " " });
        }
        let joined: Vec<String> = split_sentences(&text)
            .iter()
            .flat_map(|s| s.split_whitespace().map(|w| w.trim_end_matches('.').to_string()).collect::<Vec<_>>())
            .collect();
        prop_assert_eq!(joined, words);
    }
}
