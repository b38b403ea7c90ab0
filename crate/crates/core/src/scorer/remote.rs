use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;

use super::wire::{
    DebugAttentionResponse, ErrorBody, InfoResponse, ScoreRequest, ScoreResponse,
    DEBUG_ATTENTION_PATH, INFO_PATH, SCORE_PATH,
};
use super::{reference_detokenize, reference_tokenize, Scorer};
use crate::error::{Error, Result};
use crate::types::{AttentionStack, TokenUnit};

/// Environment variable consulted when no endpoint is given explicitly.
pub const ENDPOINT_ENV: &str = "TOKENPRUNE_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }
}

/// One request as issued by the client, kept for call accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestRecord {
    pub request_id: String,
    pub path: &'static str,
    pub tokens: usize,
    pub want_attention: bool,
    pub attempts: u32,
}

/// Client for a scorer service speaking the JSON protocol in [`super::wire`].
///
/// Tokenization is the reference whitespace split; token surfaces are sent
/// as-is and the service must return one score per surface.
#[derive(Debug)]
pub struct RemoteScorer {
    endpoint: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    next_id: AtomicU64,
    log: Mutex<Vec<RequestRecord>>,
}

impl RemoteScorer {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            agent,
            retry: RetryPolicy::default(),
            next_id: AtomicU64::new(1),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Uses `explicit` if given, otherwise [`ENDPOINT_ENV`].
    pub fn from_env_or(explicit: Option<&str>) -> Option<Self> {
        explicit
            .map(str::to_string)
            .or_else(|| std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()))
            .map(Self::new)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Requests issued so far, in order.
    pub fn requests(&self) -> Vec<RequestRecord> {
        self.log.lock().expect("request log poisoned").clone()
    }

    pub fn info(&self) -> Result<InfoResponse> {
        let url = format!("{}{INFO_PATH}", self.endpoint);
        let (body, _) = self.with_retries(|| self.agent.get(&url).call())?;
        decode(&body)
    }

    /// Fetches every raw attention matrix for `tokens` from the debug hook.
    pub fn debug_attention(&self, tokens: &[TokenUnit]) -> Result<AttentionStack> {
        let request = self.request(tokens, true);
        let resp: DebugAttentionResponse =
            self.post(DEBUG_ATTENTION_PATH, &request, tokens.len())?;
        resp.into_stack()
    }

    /// Sends one scoring request and validates the reply.
    pub fn remote_score(
        &self,
        tokens: &[TokenUnit],
        want_attention: bool,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let request = self.request(tokens, want_attention);
        let resp: ScoreResponse = self.post(SCORE_PATH, &request, tokens.len())?;
        resp.validate(tokens.len(), want_attention)?;
        Ok((resp.surprisal_bits, resp.attention_score))
    }

    fn request(&self, tokens: &[TokenUnit], want_attention: bool) -> ScoreRequest {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        ScoreRequest::for_tokens(
            tokens.iter().map(|t| t.surface.clone()).collect(),
            want_attention,
            format!("req-{id}"),
        )
    }

    fn post<T: DeserializeOwned>(
        &self,
        path: &'static str,
        request: &ScoreRequest,
        requested: usize,
    ) -> Result<T> {
        let url = format!("{}{path}", self.endpoint);
        let payload = serde_json::to_vec(request).map_err(|e| Error::Protocol(e.to_string()))?;
        let result = self.with_retries(|| {
            self.agent
                .post(&url)
                .header("content-type", "application/json")
                .send(&payload[..])
        });
        let attempts = match &result {
            Ok((_, a)) => *a,
            Err(Error::Transport { attempts, .. }) => *attempts,
            Err(_) => 1,
        };
        self.log
            .lock()
            .expect("request log poisoned")
            .push(RequestRecord {
                request_id: request.request_id.clone(),
                path,
                tokens: requested,
                want_attention: request.want_attention,
                attempts,
            });
        match result {
            Ok((body, _)) => decode(&body),
            Err(Error::Capacity { limit, .. }) => Err(Error::Capacity { requested, limit }),
            Err(e) => Err(e),
        }
    }

    /// Retries transport failures only. Returns the success body and the
    /// number of attempts used.
    fn with_retries<F>(&self, mut send: F) -> Result<(String, u32)>
    where
        F: FnMut() -> std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    {
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match send() {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let body = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| Error::Protocol(format!("reading body: {e}")))?;
                    if (200..300).contains(&status) {
                        return Ok((body, attempt));
                    }
                    return Err(service_error(status, &body));
                }
                Err(e) => {
                    last = e.to_string();
                    if attempt < attempts {
                        thread::sleep(self.retry.backoff);
                    }
                }
            }
        }
        Err(Error::Transport {
            attempts,
            message: last,
        })
    }
}

fn decode<T: DeserializeOwned>(body: &str) -> Result<T> {
    serde_json::from_str(body).map_err(|e| Error::Protocol(format!("malformed response: {e}")))
}

fn service_error(status: u16, body: &str) -> Error {
    match serde_json::from_str::<ErrorBody>(body) {
        Ok(ErrorBody { error }) if error.kind == "capacity" => Error::Capacity {
            requested: 0,
            limit: error.limit.unwrap_or(0),
        },
        Ok(ErrorBody { error }) => Error::Service {
            kind: error.kind,
            message: match error.request_id {
                Some(id) => format!("{} (request {id})", error.message),
                None => error.message,
            },
        },
        Err(_) => Error::Service {
            kind: format!("http {status}"),
            message: body.chars().take(200).collect(),
        },
    }
}

impl Scorer for RemoteScorer {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenUnit>> {
        Ok(reference_tokenize(text))
    }

    fn detokenize(&self, tokens: &[TokenUnit]) -> String {
        reference_detokenize(tokens)
    }

    fn score(&self, tokens: &[TokenUnit]) -> Result<Vec<f64>> {
        Ok(self.remote_score(tokens, false)?.0)
    }

    fn score_with_attention(&self, tokens: &[TokenUnit]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (s, a) = self.remote_score(tokens, true)?;
        Ok((s, a.expect("validated response carries attention")))
    }
}
