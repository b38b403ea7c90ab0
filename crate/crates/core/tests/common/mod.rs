#![allow(dead_code)]

pub mod server;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "sa", "tu", "vel", "do", "pri", "an", "or", "est", "ni", "qua", "bel",
    "zo", "ith", "mar", "ul", "fen",
];

/// Text drawn from a random first-order Markov chain over a pseudo-word
/// vocabulary, so a bigram model has real structure to learn.
pub struct MarkovText {
    words: Vec<String>,
    successors: Vec<Vec<(usize, f64)>>,
}

impl MarkovText {
    pub fn new(seed: u64, vocab: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut words = Vec::with_capacity(vocab);
        while words.len() < vocab {
            let parts = rng.random_range(1..=3);
            let w: String = (0..parts)
                .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
                .collect();
            if !words.contains(&w) {
                words.push(w);
            }
        }
        let successors = (0..vocab)
            .map(|_| {
                let fanout = rng.random_range(2..=12);
                (0..fanout)
                    .map(|rank| {
                        let next = zipf_index(&mut rng, vocab);
                        (next, 1.0 / (rank + 1) as f64)
                    })
                    .collect()
            })
            .collect();
        Self { words, successors }
    }

    pub fn sample(&self, seed: u64, len: usize) -> String {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut cur = rng.random_range(0..self.words.len());
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.words[cur].as_str());
            // occasional jump keeps the chain from settling into a loop
            cur = if rng.random_bool(0.1) {
                zipf_index(&mut rng, self.words.len())
            } else {
                let succ = &self.successors[cur];
                let total: f64 = succ.iter().map(|s| s.1).sum();
                let mut x = rng.random_range(0.0..total);
                let mut pick = succ[0].0;
                for &(next, w) in succ {
                    if x < w {
                        pick = next;
                        break;
                    }
                    x -= w;
                }
                pick
            };
        }
        out.join(" ")
    }
}

fn zipf_index<R: Rng>(rng: &mut R, n: usize) -> usize {
    // inverse-CDF sampling of a 1/rank law, approximated continuously
    let u: f64 = rng.random_range(0.0..1.0);
    let x = ((n as f64 + 1.0).ln() * u).exp() - 1.0;
    (x as usize).min(n - 1)
}

/// Fixed English passage used where a natural-language sample is enough.
pub const PASSAGE: &str = "The committee met on Tuesday to review the budget for the coming year. \
After a long discussion the members agreed that the library would receive additional funds \
for new books and longer opening hours. The mayor thanked the volunteers who had organised \
the reading programme for children during the summer, and noted that attendance had doubled \
compared with the previous year. Several residents asked whether the park near the river \
could be cleaned more often, because visitors had complained about litter after the festival. \
The committee promised to discuss the request with the parks department and to report back \
at the next meeting. Finally the treasurer presented a short summary of the accounts, which \
showed a small surplus that will be carried forward to support the new community centre.";
