//! Exact metric fixtures and an exhaustive LCS oracle.

use fable_core::metrics::{hit_rate, lcs_coverage, lcs_length, rouge_l_f};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn is_subsequence(needle: &[&str], hay: &[&str]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|w| it.any(|h| h == w))
}

/// Longest common subsequence by trying every subsequence of `a`.
pub fn brute_force_lcs(a: &[&str], b: &[&str]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let n = mask.count_ones() as usize;
        if n <= best {
            continue;
        }
        let sub: Vec<&str> = (0..a.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| a[i])
            .collect();
        if is_subsequence(&sub, b) {
            best = n;
        }
    }
    best
}

pub fn worked_example() -> f64 {
    lcs_coverage("North of Zealand", "North Island of New Zealand").unwrap()
}

fn phrases(p: &[&str]) -> Vec<String> {
    p.iter().map(|s| s.to_string()).collect()
}

/// `(description, got, expected)` for every fixture.
pub fn fixtures() -> Vec<(&'static str, f64, f64)> {
    vec![
        (
            "hr all",
            hit_rate(
                "He plays the cello in Oslo.",
                &phrases(&["plays the cello", "oslo"]),
            )
            .unwrap(),
            1.0,
        ),
        (
            "hr half",
            hit_rate(
                "He plays the cello.",
                &phrases(&["plays the cello", "oslo"]),
            )
            .unwrap(),
            0.5,
        ),
        (
            "hr none",
            hit_rate("nothing here", &phrases(&["cello"])).unwrap(),
            0.0,
        ),
        (
            "hr case",
            hit_rate("BORN IN  Velmora", &phrases(&["born in velmora"])).unwrap(),
            1.0,
        ),
        (
            "hr empty output",
            hit_rate("", &phrases(&["x"])).unwrap(),
            0.0,
        ),
        (
            "rouge identical",
            rouge_l_f("the cat sat", "the cat sat").unwrap(),
            1.0,
        ),
        (
            "rouge disjoint",
            rouge_l_f("dog ran", "the cat sat").unwrap(),
            0.0,
        ),
        ("rouge empty", rouge_l_f("", "the cat sat").unwrap(), 0.0),
        // lcs 2 ("the", "sat"), p = 2/4, r = 2/3
        (
            "rouge partial",
            rouge_l_f("the dog sat down", "the cat sat").unwrap(),
            2.0 * 0.5 * (2.0 / 3.0) / (0.5 + 2.0 / 3.0),
        ),
        (
            "rouge punctuation",
            rouge_l_f("The cat, sat.", "the cat sat").unwrap(),
            1.0,
        ),
        (
            "coverage full",
            lcs_coverage("a b c d", "b d").unwrap(),
            1.0,
        ),
        (
            "coverage order",
            lcs_coverage("c b a", "a b c").unwrap(),
            1.0 / 3.0,
        ),
    ]
}

/// Number of mismatches between the DP and the oracle on `n` random pairs.
pub fn lcs_mismatches(n: usize, seed: u64) -> usize {
    const VOCAB: [&str; 5] = ["a", "b", "c", "d", "e"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..n {
        let la = rng.gen_range(0..=10);
        let lb = rng.gen_range(0..=10);
        let a: Vec<&str> = (0..la)
            .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())])
            .collect();
        let b: Vec<&str> = (0..lb)
            .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())])
            .collect();
        if lcs_length(&a, &b) != brute_force_lcs(&a, &b) {
            mismatches += 1;
        }
    }
    mismatches
}
