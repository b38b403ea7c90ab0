use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{reference_detokenize, reference_tokenize, Scorer};
use crate::error::{Error, Result};
use crate::types::TokenUnit;

/// Canned scores for one exact token sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub tokens: Vec<String>,
    pub surprisal_bits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_score: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScriptFile {
    entries: Vec<ScriptEntry>,
}

/// Returns scripted scores verbatim; any unscripted request is an error.
#[derive(Debug, Clone, Default)]
pub struct ScriptedScorer {
    entries: HashMap<Vec<String>, ScriptEntry>,
}

impl ScriptedScorer {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Result<Self> {
        let mut map = HashMap::new();
        for e in entries {
            let n = e.tokens.len();
            if e.surprisal_bits.len() != n
                || e.attention_score.as_ref().is_some_and(|a| a.len() != n)
            {
                return Err(Error::Dimension(format!(
                    "script entry [{}] has mismatched score lengths",
                    e.tokens.join(" ")
                )));
            }
            map.insert(e.tokens.clone(), e);
        }
        Ok(Self { entries: map })
    }

    /// Parses `{"entries": [{"tokens": [...], "surprisal_bits": [...],
    /// "attention_score": [...]}]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScriptFile = serde_json::from_str(text)
            .map_err(|e| Error::InvalidSequence(format!("script: {e}")))?;
        Self::new(file.entries)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let mut entries: Vec<_> = self.entries.values().cloned().collect();
        entries.sort_by(|a, b| a.tokens.cmp(&b.tokens));
        serde_json::to_string_pretty(&ScriptFile { entries }).expect("script serializes")
    }

    /// Adds or replaces an entry.
    pub fn insert(&mut self, entry: ScriptEntry) -> Result<()> {
        let single = Self::new([entry])?;
        self.entries.extend(single.entries);
        Ok(())
    }

    fn lookup(&self, tokens: &[TokenUnit]) -> Result<&ScriptEntry> {
        let key: Vec<String> = tokens.iter().map(|t| t.surface.clone()).collect();
        self.entries
            .get(&key)
            .ok_or_else(|| Error::ScriptedMiss(key.join(" ")))
    }
}

impl Scorer for ScriptedScorer {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenUnit>> {
        Ok(reference_tokenize(text))
    }

    fn detokenize(&self, tokens: &[TokenUnit]) -> String {
        reference_detokenize(tokens)
    }

    fn score(&self, tokens: &[TokenUnit]) -> Result<Vec<f64>> {
        Ok(self.lookup(tokens)?.surprisal_bits.clone())
    }

    fn score_with_attention(&self, tokens: &[TokenUnit]) -> Result<(Vec<f64>, Vec<f64>)> {
        let entry = self.lookup(tokens)?;
        let attention = entry.attention_score.clone().ok_or_else(|| {
            Error::ScriptedMiss(format!(
                "{} (no attention scripted)",
                entry.tokens.join(" ")
            ))
        })?;
        Ok((entry.surprisal_bits.clone(), attention))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::tokens_from_surfaces;

    fn abc() -> ScriptedScorer {
        ScriptedScorer::new([ScriptEntry {
            tokens: vec!["a".into(), "b".into(), "c".into()],
            surprisal_bits: vec![1.0, 2.0, 3.0],
            attention_score: Some(vec![0.5, 0.5, 2.0]),
        }])
        .unwrap()
    }

    #[test]
    fn lookup_hit() {
        let s = abc();
        let toks = tokens_from_surfaces(&["a", "b", "c"]);
        assert_eq!(s.score(&toks).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(
            s.score_with_attention(&toks).unwrap().1,
            vec![0.5, 0.5, 2.0]
        );
    }

    #[test]
    fn lookup_miss_is_strict() {
        let s = abc();
        let err = s.score(&tokens_from_surfaces(&["a", "b"])).unwrap_err();
        assert!(matches!(err, Error::ScriptedMiss(ref k) if k == "a b"));
        assert!(err.is_scorer_failure());
    }

    #[test]
    fn attention_must_be_scripted_when_requested() {
        let s = ScriptedScorer::new([ScriptEntry {
            tokens: vec!["x".into()],
            surprisal_bits: vec![1.0],
            attention_score: None,
        }])
        .unwrap();
        let toks = tokens_from_surfaces(&["x"]);
        assert!(s.score(&toks).is_ok());
        assert!(matches!(
            s.score_with_attention(&toks),
            Err(Error::ScriptedMiss(_))
        ));
    }

    #[test]
    fn mismatched_entry_rejected() {
        let bad = ScriptEntry {
            tokens: vec!["a".into()],
            surprisal_bits: vec![1.0, 2.0],
            attention_score: None,
        };
        assert!(matches!(
            ScriptedScorer::new([bad]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let s = abc();
        let back = ScriptedScorer::from_json(&s.to_json()).unwrap();
        let toks = tokens_from_surfaces(&["a", "b", "c"]);
        assert_eq!(back.score(&toks).unwrap(), s.score(&toks).unwrap());
    }
}
