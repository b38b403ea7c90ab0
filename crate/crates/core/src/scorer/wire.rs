//! JSON bodies exchanged with a model-scorer service.
//!
//! `POST /v1/score` takes a [`ScoreRequest`] and answers with a
//! [`ScoreResponse`]. `POST /v1/debug/attention` takes the same request and
//! answers with a [`DebugAttentionResponse`]. `GET /v1/info` returns
//! [`InfoResponse`]. Failures carry an [`ErrorBody`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AttentionMatrix, AttentionStack};

pub const SCORE_PATH: &str = "/v1/score";
pub const DEBUG_ATTENTION_PATH: &str = "/v1/debug/attention";
pub const INFO_PATH: &str = "/v1/info";

/// Exactly one of `tokens` and `text` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub want_attention: bool,
    pub request_id: String,
}

impl ScoreRequest {
    pub fn for_tokens(tokens: Vec<String>, want_attention: bool, request_id: String) -> Self {
        Self {
            tokens: Some(tokens),
            text: None,
            want_attention,
            request_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub context_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub surprisal_bits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_score: Option<Vec<f64>>,
    pub tokenization: Vec<String>,
    pub model_info: ModelInfo,
}

impl ScoreResponse {
    /// Checks the response against the request it answers.
    pub fn validate(&self, expected_len: usize, want_attention: bool) -> Result<()> {
        let n = self.surprisal_bits.len();
        if n != expected_len {
            return Err(Error::Protocol(format!(
                "surprisal_bits has {n} entries for {expected_len} tokens"
            )));
        }
        if self.tokenization.len() != n {
            return Err(Error::Protocol(format!(
                "tokenization has {} entries, surprisal_bits has {n}",
                self.tokenization.len()
            )));
        }
        check_values("surprisal_bits", &self.surprisal_bits)?;
        match (&self.attention_score, want_attention) {
            (Some(a), true) => {
                if a.len() != n {
                    return Err(Error::Protocol(format!(
                        "attention_score has {} entries, expected {n}",
                        a.len()
                    )));
                }
                check_values("attention_score", a)
            }
            (None, true) => Err(Error::Protocol("attention_score missing".into())),
            (Some(_), false) => Err(Error::Protocol(
                "attention_score present but not requested".into(),
            )),
            (None, false) => Ok(()),
        }
    }
}

fn check_values(name: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        Some(i) => Err(Error::Protocol(format!(
            "{name}[{i}] = {} is not finite and non-negative",
            values[i]
        ))),
        None => Ok(()),
    }
}

/// Every layer/head matrix of one forward pass, indexed
/// `matrices[layer][head][row][col]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugAttentionResponse {
    pub request_id: String,
    pub n: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub matrices: Vec<Vec<Vec<Vec<f64>>>>,
}

impl DebugAttentionResponse {
    pub fn from_stack(request_id: String, stack: &AttentionStack) -> Self {
        let matrices: Vec<Vec<_>> = stack
            .layers()
            .iter()
            .map(|l| l.iter().map(AttentionMatrix::to_rows).collect())
            .collect();
        Self {
            request_id,
            n: stack.n(),
            num_layers: matrices.len(),
            num_heads: matrices.first().map_or(0, Vec::len),
            matrices,
        }
    }

    pub fn into_stack(self) -> Result<AttentionStack> {
        if self.matrices.len() != self.num_layers
            || self.matrices.iter().any(|l| l.len() != self.num_heads)
        {
            return Err(Error::Protocol(format!(
                "declared {}x{} heads does not match payload",
                self.num_layers, self.num_heads
            )));
        }
        let layers = self
            .matrices
            .into_iter()
            .map(|l| l.into_iter().map(AttentionMatrix::from_rows).collect())
            .collect::<Result<Vec<Vec<_>>>>()
            .map_err(|e| Error::Protocol(e.to_string()))?;
        let stack = AttentionStack::new(layers).map_err(|e| Error::Protocol(e.to_string()))?;
        if stack.n() != self.n {
            return Err(Error::Protocol(format!(
                "declared n = {} but matrices are {}x{}",
                self.n,
                stack.n(),
                stack.n()
            )));
        }
        Ok(stack)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub name: String,
    pub context_limit: usize,
    pub tokenizer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_heads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    /// `capacity`, `internal`, `capability` or `invalid`.
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn response(n: usize, attention: Option<Vec<f64>>) -> ScoreResponse {
        ScoreResponse {
            surprisal_bits: vec![1.0; n],
            attention_score: attention,
            tokenization: vec!["w".into(); n],
            model_info: ModelInfo {
                name: "m".into(),
                context_limit: 16,
            },
        }
    }

    #[test]
    fn request_field_names() {
        let req = ScoreRequest::for_tokens(vec!["a".into(), "b".into()], true, "r1".into());
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"tokens":["a","b"],"want_attention":true,"request_id":"r1"}"#
        );
    }

    #[test]
    fn response_field_names() {
        let r = response(1, Some(vec![1.0]));
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"surprisal_bits":[1.0],"attention_score":[1.0],"tokenization":["w"],"model_info":{"name":"m","context_limit":16}}"#
        );
    }

    #[test]
    fn validation() {
        assert!(response(3, Some(vec![1.0; 3])).validate(3, true).is_ok());
        assert!(response(3, None).validate(3, false).is_ok());
        assert!(response(2, None).validate(3, false).is_err());
        assert!(response(3, None).validate(3, true).is_err());
        assert!(response(3, Some(vec![1.0; 2])).validate(3, true).is_err());
        let mut r = response(2, None);
        r.surprisal_bits[1] = f64::INFINITY;
        assert!(matches!(r.validate(2, false), Err(Error::Protocol(_))));
    }

    #[test]
    fn debug_payload_round_trip() {
        let stack = AttentionStack::new(vec![
            vec![
                AttentionMatrix::identity(3),
                AttentionMatrix::causal_uniform(3),
            ],
            vec![
                AttentionMatrix::causal_uniform(3),
                AttentionMatrix::identity(3),
            ],
        ])
        .unwrap();
        let payload = DebugAttentionResponse::from_stack("r".into(), &stack);
        assert_eq!(
            (payload.num_layers, payload.num_heads, payload.n),
            (2, 2, 3)
        );
        let text = serde_json::to_string(&payload).unwrap();
        let back: DebugAttentionResponse = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_stack().unwrap(), stack);
    }

    #[test]
    fn debug_payload_shape_mismatch() {
        let mut payload = DebugAttentionResponse::from_stack(
            "r".into(),
            &AttentionStack::new(vec![vec![AttentionMatrix::identity(2)]]).unwrap(),
        );
        payload.n = 3;
        assert!(matches!(payload.into_stack(), Err(Error::Protocol(_))));
    }
}
