//! Scoring backends.
//!
//! A [`Scorer`] tokenizes text and assigns each token its surprisal in bits,
//! optionally together with an accumulated attention score. The compressor
//! only talks to this trait.

mod bigram;
mod remote;
mod scripted;
pub mod wire;

use std::sync::Mutex;

pub use bigram::{synthetic_attention, BigramModel, BigramScorer, UNKNOWN_TOKEN};
pub use remote::{RemoteScorer, RequestRecord, RetryPolicy, ENDPOINT_ENV};
pub use scripted::{ScriptEntry, ScriptedScorer};

use crate::error::{Error, Result};
use crate::types::TokenUnit;

/// Backends floor probabilities at this value before taking the log.
pub const PROBABILITY_FLOOR: f64 = 1.0 / (1u64 << 30) as f64;

pub trait Scorer {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenUnit>>;

    fn detokenize(&self, tokens: &[TokenUnit]) -> String;

    /// Surprisal in bits for every token, conditioned on the tokens before it.
    fn score(&self, tokens: &[TokenUnit]) -> Result<Vec<f64>>;

    /// Surprisal plus the accumulated attention each token receives.
    fn score_with_attention(&self, tokens: &[TokenUnit]) -> Result<(Vec<f64>, Vec<f64>)>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenUnit>> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[TokenUnit]) -> String {
        (**self).detokenize(tokens)
    }
    fn score(&self, tokens: &[TokenUnit]) -> Result<Vec<f64>> {
        (**self).score(tokens)
    }
    fn score_with_attention(&self, tokens: &[TokenUnit]) -> Result<(Vec<f64>, Vec<f64>)> {
        (**self).score_with_attention(tokens)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenUnit>> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[TokenUnit]) -> String {
        (**self).detokenize(tokens)
    }
    fn score(&self, tokens: &[TokenUnit]) -> Result<Vec<f64>> {
        (**self).score(tokens)
    }
    fn score_with_attention(&self, tokens: &[TokenUnit]) -> Result<(Vec<f64>, Vec<f64>)> {
        (**self).score_with_attention(tokens)
    }
}

/// `-log2 p`, defined for `0 < p <= 1`.
pub fn surprisal_from_probability(p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(p));
    }
    // 0.0 - x rather than -x so that p = 1 yields +0.0
    Ok(0.0 - p.log2())
}

/// Whitespace tokenization; punctuation stays attached to its word.
pub fn reference_tokenize(text: &str) -> Vec<TokenUnit> {
    text.split_whitespace()
        .enumerate()
        .map(|(i, w)| TokenUnit::new(w, i))
        .collect()
}

pub fn reference_detokenize(tokens: &[TokenUnit]) -> String {
    tokens
        .iter()
        .map(|t| t.surface.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// One call observed by [`Recording`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScorerCall {
    pub tokens: usize,
    pub with_attention: bool,
}

/// Wraps a scorer and logs every scoring call.
#[derive(Debug)]
pub struct Recording<S> {
    inner: S,
    calls: Mutex<Vec<ScorerCall>>,
}

impl<S> Recording<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<ScorerCall> {
        self.calls.lock().expect("call log poisoned").clone()
    }

    pub fn into_inner(self) -> S {
        self.inner
    }

    fn record(&self, tokens: usize, with_attention: bool) {
        self.calls
            .lock()
            .expect("call log poisoned")
            .push(ScorerCall {
                tokens,
                with_attention,
            });
    }
}

impl<S: Scorer> Scorer for Recording<S> {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenUnit>> {
        self.inner.tokenize(text)
    }

    fn detokenize(&self, tokens: &[TokenUnit]) -> String {
        self.inner.detokenize(tokens)
    }

    fn score(&self, tokens: &[TokenUnit]) -> Result<Vec<f64>> {
        self.record(tokens.len(), false);
        self.inner.score(tokens)
    }

    fn score_with_attention(&self, tokens: &[TokenUnit]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.record(tokens.len(), true);
        self.inner.score_with_attention(tokens)
    }
}
