//! Minimal single-threaded HTTP/1.1 scorer service for exercising the
//! remote client. Serves the wire protocol by delegating to any in-process
//! scorer, and can be scripted to misbehave.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use tokenprune_core::scorer::wire::{
    DebugAttentionResponse, ErrorBody, ErrorDetail, InfoResponse, ModelInfo, ScoreRequest,
    ScoreResponse,
};
use tokenprune_core::types::{tokens_from_surfaces, AttentionStack};
use tokenprune_core::Scorer;

#[derive(Clone, Debug)]
pub enum Fault {
    None,
    /// Drop one surprisal value from every response.
    ShortResponse,
    /// Reply with a body that is not JSON.
    Garbage,
    /// Close the connection without replying for the first `n` requests.
    HangUp(usize),
}

pub struct ServiceConfig {
    pub context_limit: usize,
    pub debug_enabled: bool,
    pub fault: Fault,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            context_limit: 100_000,
            debug_enabled: true,
            fault: Fault::None,
        }
    }
}

type StackFn = dyn Fn(usize) -> AttentionStack + Send + Sync;

pub struct TestService {
    pub url: String,
    pub requests: Arc<Mutex<Vec<ScoreRequest>>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl TestService {
    pub fn start<S>(scorer: S, config: ServiceConfig) -> Self
    where
        S: Scorer + Send + 'static,
    {
        Self::start_with_stacks(scorer, config, None)
    }

    pub fn start_with_stacks<S>(
        scorer: S,
        config: ServiceConfig,
        stacks: Option<Box<StackFn>>,
    ) -> Self
    where
        S: Scorer + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        listener.set_nonblocking(true).unwrap();
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let (log, halt) = (requests.clone(), stop.clone());
        let hangups = AtomicUsize::new(0);
        let handle = thread::spawn(move || {
            while !halt.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        stream.set_nonblocking(false).unwrap();
                        if let Fault::HangUp(n) = config.fault {
                            if hangups.fetch_add(1, Ordering::Relaxed) < n {
                                drop(stream);
                                continue;
                            }
                        }
                        handle(stream, &scorer, &config, stacks.as_deref(), &log);
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        thread::sleep(std::time::Duration::from_millis(2));
                    }
                    Err(_) => break,
                }
            }
        });
        Self {
            url,
            requests,
            stop,
            handle: Some(handle),
        }
    }

    pub fn received(&self) -> Vec<ScoreRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl Drop for TestService {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle<S: Scorer>(
    stream: TcpStream,
    scorer: &S,
    config: &ServiceConfig,
    stacks: Option<&StackFn>,
    log: &Mutex<Vec<ScoreRequest>>,
) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).unwrap();
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("");
    let path = parts.next().unwrap_or("");

    let (status, payload) = route(method, path, &body, scorer, config, stacks, log);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = stream.flush();
}

fn error(
    status: u16,
    kind: &str,
    message: &str,
    limit: Option<usize>,
    id: Option<String>,
) -> (u16, String) {
    let body = ErrorBody {
        error: ErrorDetail {
            kind: kind.into(),
            message: message.into(),
            limit,
            request_id: id,
        },
    };
    (status, serde_json::to_string(&body).unwrap())
}

fn route<S: Scorer>(
    method: &str,
    path: &str,
    body: &[u8],
    scorer: &S,
    config: &ServiceConfig,
    stacks: Option<&StackFn>,
    log: &Mutex<Vec<ScoreRequest>>,
) -> (u16, String) {
    if method == "GET" && path == "/v1/info" {
        let info = InfoResponse {
            name: "bigram-reference".into(),
            context_limit: config.context_limit,
            tokenizer: "whitespace".into(),
            num_layers: Some(1),
            num_heads: Some(1),
        };
        return (200, serde_json::to_string(&info).unwrap());
    }
    let req: ScoreRequest = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return error(400, "invalid", &e.to_string(), None, None),
    };
    log.lock().unwrap().push(req.clone());
    let surfaces = match (&req.tokens, &req.text) {
        (Some(t), None) => t.clone(),
        (None, Some(text)) => text.split_whitespace().map(str::to_string).collect(),
        _ => {
            return error(
                400,
                "invalid",
                "exactly one of tokens/text",
                None,
                Some(req.request_id),
            )
        }
    };
    if surfaces.len() > config.context_limit {
        return error(
            413,
            "capacity",
            "context limit exceeded",
            Some(config.context_limit),
            Some(req.request_id),
        );
    }
    let tokens = tokens_from_surfaces(&surfaces);
    match path {
        "/v1/score" => {
            if matches!(config.fault, Fault::Garbage) {
                return (200, "not json".into());
            }
            let (mut surprisal, attention) = if req.want_attention {
                let (s, a) = scorer.score_with_attention(&tokens).unwrap();
                (s, Some(a))
            } else {
                (scorer.score(&tokens).unwrap(), None)
            };
            if matches!(config.fault, Fault::ShortResponse) {
                surprisal.pop();
            }
            let resp = ScoreResponse {
                surprisal_bits: surprisal,
                attention_score: attention,
                tokenization: surfaces,
                model_info: ModelInfo {
                    name: "bigram-reference".into(),
                    context_limit: config.context_limit,
                },
            };
            (200, serde_json::to_string(&resp).unwrap())
        }
        "/v1/debug/attention" => {
            if !config.debug_enabled {
                return error(
                    403,
                    "capability",
                    "debug endpoint disabled",
                    None,
                    Some(req.request_id),
                );
            }
            let stack = stacks.expect("debug stacks configured")(tokens.len());
            let resp = DebugAttentionResponse::from_stack(req.request_id, &stack);
            (200, serde_json::to_string(&resp).unwrap())
        }
        _ => error(
            404,
            "invalid",
            "no such endpoint",
            None,
            Some(req.request_id),
        ),
    }
}
