//! Seeded fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokenprune_core::{AttentionMatrix, AttentionStack, BigramScorer, Scorer, TokenUnit};

/// Text drawn from a small pseudo-word vocabulary with a sticky successor
/// table, so the bigram model has something to learn.
pub fn markov_text(seed: u64, len: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..400).map(|i| format!("w{i:03}")).collect();
    let successors: Vec<[usize; 4]> = (0..vocab.len())
        .map(|_| std::array::from_fn(|_| rng.random_range(0..vocab.len())))
        .collect();
    let mut cur = 0;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(vocab[cur].as_str());
        cur = if rng.random_bool(0.8) {
            successors[cur][rng.random_range(0..4)]
        } else {
            rng.random_range(0..vocab.len())
        };
    }
    out.join(" ")
}

/// A trained scorer and a prompt of `len` tokens.
pub fn bigram_fixture(seed: u64, len: usize) -> (BigramScorer, Vec<TokenUnit>) {
    let scorer =
        BigramScorer::from_corpus(&markov_text(seed, 20_000)).expect("corpus is non-empty");
    let prompt = scorer
        .tokenize(&markov_text(seed ^ 0x5eed, len))
        .expect("bigram tokenization is infallible");
    (scorer, prompt)
}

/// Random causal row-stochastic heads.
pub fn random_stack(seed: u64, n: usize, layers: usize, heads: usize) -> AttentionStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = (0..layers)
        .map(|_| {
            (0..heads)
                .map(|_| {
                    let rows = (0..n)
                        .map(|u| {
                            let mut row: Vec<f64> = (0..n)
                                .map(|v| {
                                    if v <= u {
                                        rng.random::<f64>() + 1e-9
                                    } else {
                                        0.0
                                    }
                                })
                                .collect();
                            let total: f64 = row.iter().sum();
                            row.iter_mut().for_each(|x| *x /= total);
                            row
                        })
                        .collect();
                    AttentionMatrix::from_rows(rows).expect("square")
                })
                .collect()
        })
        .collect();
    AttentionStack::new(layers).expect("rows are normalized")
}

pub fn random_metrics(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0.0..20.0)).collect()
}
