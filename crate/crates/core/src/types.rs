//! Value types shared by every stage of the pipeline.
//!
//! Everything here is immutable once constructed. Constructors enforce the
//! alignment and range invariants so downstream code can index freely.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One token of the prompt as produced by a scorer's tokenizer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenUnit {
    pub surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_id: Option<u32>,
    /// Position in the original, uncompressed prompt. Never renumbered.
    pub orig_index: usize,
}

impl TokenUnit {
    pub fn new(surface: impl Into<String>, orig_index: usize) -> Self {
        Self {
            surface: surface.into(),
            vocab_id: None,
            orig_index,
        }
    }

    pub fn with_vocab_id(mut self, id: u32) -> Self {
        self.vocab_id = Some(id);
        self
    }
}

/// Builds a prompt from surface strings, numbering positions from zero.
pub fn tokens_from_surfaces<S: AsRef<str>>(surfaces: &[S]) -> Vec<TokenUnit> {
    surfaces
        .iter()
        .enumerate()
        .map(|(i, s)| TokenUnit::new(s.as_ref(), i))
        .collect()
}

pub fn surfaces(tokens: &[TokenUnit]) -> Vec<String> {
    tokens.iter().map(|t| t.surface.clone()).collect()
}

/// Checks the per-sequence token invariants: non-empty surfaces and strictly
/// increasing original positions.
pub fn check_tokens(tokens: &[TokenUnit]) -> Result<()> {
    for (i, t) in tokens.iter().enumerate() {
        if t.surface.is_empty() {
            return Err(Error::InvalidSequence(format!(
                "token {i} has an empty surface"
            )));
        }
        if i > 0 && tokens[i - 1].orig_index >= t.orig_index {
            return Err(Error::InvalidSequence(format!(
                "orig_index not strictly increasing at position {i} ({} then {})",
                tokens[i - 1].orig_index,
                t.orig_index
            )));
        }
    }
    Ok(())
}

/// Tokens aligned with their surprisal (bits) and accumulated attention.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredSequence {
    tokens: Vec<TokenUnit>,
    surprisal_bits: Vec<f64>,
    attention_score: Vec<f64>,
}

impl ScoredSequence {
    pub fn new(
        tokens: Vec<TokenUnit>,
        surprisal_bits: Vec<f64>,
        attention_score: Vec<f64>,
    ) -> Result<Self> {
        if tokens.len() != surprisal_bits.len() || tokens.len() != attention_score.len() {
            return Err(Error::Dimension(format!(
                "{} tokens, {} surprisal values, {} attention scores",
                tokens.len(),
                surprisal_bits.len(),
                attention_score.len()
            )));
        }
        check_tokens(&tokens)?;
        check_signal("surprisal_bits", &surprisal_bits)?;
        check_signal("attention_score", &attention_score)?;
        Ok(Self {
            tokens,
            surprisal_bits,
            attention_score,
        })
    }

    /// Builds a sequence from bare signals, numbering tokens `t0, t1, ...`.
    /// Handy when only the metric path matters.
    pub fn from_signals(surprisal_bits: Vec<f64>, attention_score: Vec<f64>) -> Result<Self> {
        let tokens = (0..surprisal_bits.len())
            .map(|i| TokenUnit::new(format!("t{i}"), i))
            .collect();
        Self::new(tokens, surprisal_bits, attention_score)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[TokenUnit] {
        &self.tokens
    }

    pub fn surprisal_bits(&self) -> &[f64] {
        &self.surprisal_bits
    }

    pub fn attention_score(&self) -> &[f64] {
        &self.attention_score
    }
}

fn check_signal(name: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        Some(i) => Err(Error::InvalidSequence(format!(
            "{name}[{i}] = {} is not a finite non-negative value",
            values[i]
        ))),
        None => Ok(()),
    }
}

/// Row sums of stacked attention matrices must be within this of 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// A square, row-major attention matrix for one head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    n: usize,
    data: Vec<f64>,
}

impl AttentionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (u, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!(
                    "row {u} has {} columns in a {n}-row matrix",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Ok(Self { n, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    /// Lower-triangular matrix where row `u` spreads its mass uniformly over
    /// positions `0..=u`.
    pub fn causal_uniform(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for u in 0..n {
            let w = 1.0 / (u + 1) as f64;
            for v in 0..=u {
                data[u * n + v] = w;
            }
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.data[u * self.n..(u + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n.max(1)).take(self.n)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Attention matrices for every layer and head of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    n: usize,
    layers: Vec<Vec<AttentionMatrix>>,
}

impl AttentionStack {
    /// Validates shape, entry range and row-stochasticity.
    pub fn new(layers: Vec<Vec<AttentionMatrix>>) -> Result<Self> {
        let first = layers
            .iter()
            .flat_map(|l| l.iter())
            .next()
            .ok_or(Error::Empty("attention stack has no heads"))?;
        let n = first.n();
        for (i, layer) in layers.iter().enumerate() {
            for (j, m) in layer.iter().enumerate() {
                if m.n() != n {
                    return Err(Error::Dimension(format!(
                        "head ({i}, {j}) is {}x{0}, expected {n}x{n}",
                        m.n()
                    )));
                }
                for (u, row) in m.rows().enumerate() {
                    if let Some(v) = row.iter().position(|x| !(0.0..=1.0).contains(x)) {
                        return Err(Error::InvalidSequence(format!(
                            "head ({i}, {j}) entry ({u}, {v}) = {} outside [0, 1]",
                            row[v]
                        )));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                        return Err(Error::Stochasticity {
                            layer: i,
                            head: j,
                            row: u,
                            sum,
                        });
                    }
                }
            }
        }
        Ok(Self { n, layers })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn layers(&self) -> &[Vec<AttentionMatrix>] {
        &self.layers
    }

    /// Heads in layer-major order.
    pub fn heads(&self) -> impl Iterator<Item = &AttentionMatrix> {
        self.layers.iter().flat_map(|l| l.iter())
    }

    pub fn head_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }
}

/// How a stage's surprisal and attention are combined into one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FusionMode {
    Additive { alpha: f64 },
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalize {
    #[default]
    None,
    Minmax,
}

pub const DEFAULT_ALPHA: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    #[serde(flatten)]
    pub mode: FusionMode,
    #[serde(default)]
    pub normalize: Normalize,
}

impl FusionConfig {
    pub fn additive(alpha: f64) -> Self {
        Self {
            mode: FusionMode::Additive { alpha },
            normalize: Normalize::None,
        }
    }

    pub fn multiplicative() -> Self {
        Self {
            mode: FusionMode::Multiplicative,
            normalize: Normalize::None,
        }
    }

    pub fn normalized(mut self, normalize: Normalize) -> Self {
        self.normalize = normalize;
        self
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self::additive(DEFAULT_ALPHA)
    }
}

/// Number of compression stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Iterations {
    /// Derived from the prompt length.
    #[default]
    Auto,
    Fixed(u32),
}

/// Denominator of the protected-token feedback term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaPDenominator {
    /// Length of the original prompt.
    #[default]
    Original,
    /// Length of the sequence entering the stage that produced the protections.
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    /// Fraction of tokens to retain, in (0, 1).
    pub target_rate: f64,
    pub iterations: Iterations,
    pub fusion: FusionConfig,
    pub protect_consecutive: bool,
    pub clamp_stage_rate: bool,
    /// Ablation: score with surprisal only.
    pub attention_off: bool,
    /// Ablation: single stage regardless of `iterations`.
    pub dynamic_off: bool,
    pub delta_p_denominator: DeltaPDenominator,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            target_rate: 0.5,
            iterations: Iterations::Auto,
            fusion: FusionConfig::default(),
            protect_consecutive: true,
            clamp_stage_rate: true,
            attention_off: false,
            dynamic_off: false,
            delta_p_denominator: DeltaPDenominator::Original,
        }
    }
}

impl CompressionConfig {
    pub fn with_rate(target_rate: f64) -> Self {
        Self {
            target_rate,
            ..Self::default()
        }
    }

    /// Fusion actually used by the engine once ablations are applied.
    pub fn effective_fusion(&self) -> FusionConfig {
        if self.attention_off {
            FusionConfig {
                mode: FusionMode::Additive { alpha: 0.0 },
                normalize: self.fusion.normalize,
            }
        } else {
            self.fusion
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigViolation {
    TargetRate(f64),
    Iterations,
    Alpha(f64),
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigViolation::TargetRate(v) => write!(f, "target_rate out of (0,1): {v}"),
            ConfigViolation::Iterations => write!(f, "iterations must be at least 1"),
            ConfigViolation::Alpha(v) => write!(f, "alpha out of [0,1]: {v}"),
        }
    }
}

/// Collects every invariant violation in `config`; empty means valid.
pub fn validate_config(config: &CompressionConfig) -> Vec<ConfigViolation> {
    let mut out = Vec::new();
    // NaN fails both comparisons and lands here too.
    if !(config.target_rate > 0.0 && config.target_rate < 1.0) {
        out.push(ConfigViolation::TargetRate(config.target_rate));
    }
    if config.iterations == Iterations::Fixed(0) {
        out.push(ConfigViolation::Iterations);
    }
    if let FusionMode::Additive { alpha } = config.fusion.mode {
        if !(0.0..=1.0).contains(&alpha) {
            out.push(ConfigViolation::Alpha(alpha));
        }
    }
    out
}

/// Bookkeeping for one compression stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage_index: usize,
    pub delta_tau: f64,
    pub threshold: f64,
    pub deleted: usize,
    pub protected: usize,
    pub length_before: usize,
    pub length_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub kept_indices: Vec<usize>,
    pub dropped_indices: Vec<usize>,
    pub achieved_rate: f64,
}

/// Full audit record of one compression run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CompressionTrace {
    pub stages: Vec<StageReport>,
    pub kept_indices: Vec<usize>,
    pub dropped_indices: Vec<usize>,
    pub achieved_rate: f64,
}

impl CompressionTrace {
    pub fn original_length(&self) -> usize {
        self.kept_indices.len() + self.dropped_indices.len()
    }

    /// Verifies that kept and dropped indices partition `0..len` and that
    /// kept indices are strictly increasing.
    pub fn check_partition(&self, len: usize) -> Result<()> {
        if self.kept_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::TraceFormat(
                "kept_indices not strictly increasing".into(),
            ));
        }
        let kept: BTreeSet<_> = self.kept_indices.iter().copied().collect();
        let dropped: BTreeSet<_> = self.dropped_indices.iter().copied().collect();
        if dropped.len() != self.dropped_indices.len() {
            return Err(Error::TraceFormat(
                "dropped_indices contains duplicates".into(),
            ));
        }
        if !kept.is_disjoint(&dropped) {
            return Err(Error::TraceFormat(
                "kept and dropped indices overlap".into(),
            ));
        }
        let all: BTreeSet<_> = kept.union(&dropped).copied().collect();
        if all.len() != len || all.iter().copied().ne(0..len) {
            return Err(Error::TraceFormat(format!(
                "indices do not cover 0..{len} exactly"
            )));
        }
        Ok(())
    }

    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            kept_indices: self.kept_indices.clone(),
            dropped_indices: self.dropped_indices.clone(),
            achieved_rate: self.achieved_rate,
        }
    }

    /// One JSON object per stage, then the summary object.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::TraceFormat(e.to_string());
        for stage in &self.stages {
            serde_json::to_writer(&mut out, stage)
                .map_err(|e| Error::TraceFormat(e.to_string()))?;
            out.write_all(b"\n").map_err(io)?;
        }
        serde_json::to_writer(&mut out, &self.summary())
            .map_err(|e| Error::TraceFormat(e.to_string()))?;
        out.write_all(b"\n").map_err(io)?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut stages = Vec::new();
        let mut summary: Option<TraceSummary> = None;
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::TraceFormat(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            if summary.is_some() {
                return Err(Error::TraceFormat(format!(
                    "line {}: content after summary object",
                    lineno + 1
                )));
            }
            let value: serde_json::Value = serde_json::from_str(&line)
                .map_err(|e| Error::TraceFormat(format!("line {}: {e}", lineno + 1)))?;
            let bad =
                |e: serde_json::Error| Error::TraceFormat(format!("line {}: {e}", lineno + 1));
            if value.get("stage_index").is_some() {
                stages.push(serde_json::from_value(value).map_err(bad)?);
            } else {
                summary = Some(serde_json::from_value(value).map_err(bad)?);
            }
        }
        let summary = summary.ok_or_else(|| Error::TraceFormat("missing summary object".into()))?;
        Ok(Self {
            stages,
            kept_indices: summary.kept_indices,
            dropped_indices: summary.dropped_indices,
            achieved_rate: summary.achieved_rate,
        })
    }
}
