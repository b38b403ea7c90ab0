use std::collections::HashMap;
use std::path::Path;

use super::{reference_detokenize, surprisal_from_probability, Scorer, PROBABILITY_FLOOR};
use crate::error::{Error, Result};
use crate::types::TokenUnit;

pub const UNKNOWN_TOKEN: &str = "<unk>";
const UNK_ID: u32 = 0;

/// Word bigram model with add-one smoothing over a closed vocabulary.
///
/// The vocabulary holds every training word plus [`UNKNOWN_TOKEN`]; words not
/// seen in training score as the unknown symbol.
#[derive(Debug, Clone)]
pub struct BigramModel {
    ids: HashMap<String, u32>,
    unigram: Vec<u64>,
    /// Number of bigrams starting with each word.
    context: Vec<u64>,
    bigram: HashMap<(u32, u32), u64>,
    total: u64,
}

impl BigramModel {
    pub fn train(corpus: &str) -> Result<Self> {
        let mut ids = HashMap::new();
        ids.insert(UNKNOWN_TOKEN.to_string(), UNK_ID);
        let mut unigram = vec![0u64];
        let mut seq = Vec::new();
        for word in corpus.split_whitespace() {
            let next = ids.len() as u32;
            let id = *ids.entry(word.to_string()).or_insert(next);
            if id as usize == unigram.len() {
                unigram.push(0);
            }
            unigram[id as usize] += 1;
            seq.push(id);
        }
        if seq.is_empty() {
            return Err(Error::Empty("bigram training corpus"));
        }
        let mut context = vec![0u64; unigram.len()];
        let mut bigram = HashMap::new();
        for w in seq.windows(2) {
            context[w[0] as usize] += 1;
            *bigram.entry((w[0], w[1])).or_insert(0) += 1;
        }
        Ok(Self {
            ids,
            unigram,
            context,
            bigram,
            total: seq.len() as u64,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::train(&std::fs::read_to_string(path)?)
    }

    /// Vocabulary size including the unknown symbol.
    pub fn vocab_size(&self) -> usize {
        self.unigram.len()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.ids.get(word).copied().unwrap_or(UNK_ID)
    }

    /// Smoothed `P(word)`, used for the first token.
    pub fn unigram_probability(&self, word: u32) -> f64 {
        let v = self.vocab_size() as f64;
        (self.unigram.get(word as usize).copied().unwrap_or(0) as f64 + 1.0)
            / (self.total as f64 + v)
    }

    /// Smoothed `P(word | previous)`.
    pub fn conditional_probability(&self, previous: u32, word: u32) -> f64 {
        let v = self.vocab_size() as f64;
        let pair = self.bigram.get(&(previous, word)).copied().unwrap_or(0) as f64;
        let ctx = self.context.get(previous as usize).copied().unwrap_or(0) as f64;
        (pair + 1.0) / (ctx + v)
    }

    /// Surprisal of each word given its predecessor within `words`.
    pub fn score_ids(&self, words: &[u32]) -> Vec<f64> {
        words
            .iter()
            .enumerate()
            .map(|(t, &w)| {
                let p = if t == 0 {
                    self.unigram_probability(w)
                } else {
                    self.conditional_probability(words[t - 1], w)
                };
                surprisal_from_probability(p.max(PROBABILITY_FLOOR))
                    .expect("floored probability is in (0, 1]")
            })
            .collect()
    }
}

/// Column sums of the causal uniform attention matrix: position `v`
/// (1-indexed) receives `1/u` from every row `u >= v`.
pub fn synthetic_attention(n: usize) -> Vec<f64> {
    let mut scores = vec![0.0; n];
    let mut tail = 0.0;
    for v in (0..n).rev() {
        tail += 1.0 / (v + 1) as f64;
        scores[v] = tail;
    }
    scores
}

/// Reference scorer: bigram surprisal and causal-uniform attention.
#[derive(Debug, Clone)]
pub struct BigramScorer {
    model: BigramModel,
}

impl BigramScorer {
    pub fn new(model: BigramModel) -> Self {
        Self { model }
    }

    pub fn from_corpus(corpus: &str) -> Result<Self> {
        BigramModel::train(corpus).map(Self::new)
    }

    pub fn model(&self) -> &BigramModel {
        &self.model
    }

    fn ids(&self, tokens: &[TokenUnit]) -> Vec<u32> {
        tokens.iter().map(|t| self.model.id(&t.surface)).collect()
    }
}

impl Scorer for BigramScorer {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenUnit>> {
        Ok(text
            .split_whitespace()
            .enumerate()
            .map(|(i, w)| TokenUnit::new(w, i).with_vocab_id(self.model.id(w)))
            .collect())
    }

    fn detokenize(&self, tokens: &[TokenUnit]) -> String {
        reference_detokenize(tokens)
    }

    fn score(&self, tokens: &[TokenUnit]) -> Result<Vec<f64>> {
        Ok(self.model.score_ids(&self.ids(tokens)))
    }

    fn score_with_attention(&self, tokens: &[TokenUnit]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.score(tokens)?, synthetic_attention(tokens.len())))
    }
}
