//! Multi-stage dynamic compression.
//!
//! Attention is scored once on the full prompt. Each stage then rescores
//! surprisal on the surviving tokens, fuses the two signals, keeps the top
//! `ceil(rate * n)` by metric, and sweeps left to right sparing any
//! below-threshold token whose predecessor was just deleted. The fraction of
//! spared tokens raises the next stage's retention rate.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::fusion::fuse;
use crate::scorer::Scorer;
use crate::types::{
    check_tokens, validate_config, CompressionConfig, CompressionTrace, DeltaPDenominator,
    Iterations, ScoredSequence, StageReport, TokenUnit,
};

/// Upper bound on the automatically chosen stage count.
pub const MAX_AUTO_ITERATIONS: u32 = 15;

/// Tokens per stage used by the automatic stage count.
pub const TOKENS_PER_AUTO_STAGE: usize = 100;

// Absorbs representation error in `rate * n` (0.07 * 100 = 7.000000000000001).
const RANK_EPSILON: f64 = 1e-9;

/// `floor(len / 100)` clamped to `1..=15`.
pub fn auto_iterations(input_length: usize) -> u32 {
    (input_length / TOKENS_PER_AUTO_STAGE).clamp(1, MAX_AUTO_ITERATIONS as usize) as u32
}

/// Stage count actually used for a prompt of `len` tokens under `config`.
pub fn resolve_iterations(config: &CompressionConfig, len: usize) -> u32 {
    if config.dynamic_off {
        return 1;
    }
    match config.iterations {
        Iterations::Auto => auto_iterations(len),
        Iterations::Fixed(d) => d.max(1),
    }
}

/// Per-stage retention `target^(1/D) + delta_p`, capped at 1 when `clamp`.
pub fn stage_rate(target_rate: f64, iterations: u32, delta_p: f64, clamp: bool) -> f64 {
    let raw = target_rate.powf(1.0 / f64::from(iterations.max(1))) + delta_p;
    if clamp {
        raw.min(1.0)
    } else {
        raw
    }
}

/// Number of tokens a stage must keep by metric alone: `ceil(rate * n)`,
/// at least one and at most `n`.
pub fn retained_count(delta_tau: f64, n: usize) -> usize {
    ((delta_tau * n as f64 - RANK_EPSILON).ceil().max(1.0) as usize).min(n)
}

/// The `k`-th largest metric with `k = ceil(delta_tau * n)`.
///
/// Every token with a metric `>= T` survives the threshold, so at least `k`
/// tokens pass and more when values tie at `T`. Rates above 1 behave as 1.
pub fn percentile_threshold(metrics: &[f64], delta_tau: f64) -> Result<f64> {
    if metrics.is_empty() {
        return Err(Error::Empty("percentile threshold over no metrics"));
    }
    if delta_tau.is_nan() || delta_tau <= 0.0 {
        return Err(Error::InvalidSequence(format!(
            "stage rate {delta_tau} must be positive"
        )));
    }
    let k = retained_count(delta_tau.min(1.0), metrics.len());
    let mut sorted = metrics.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    Ok(*kth)
}

/// Result of one left-to-right pass over a stage's sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepOutcome {
    /// Surviving positions of the stage's sequence, ascending.
    pub kept: Vec<usize>,
    pub deleted: Vec<usize>,
    /// Below-threshold tokens spared because their predecessor was deleted.
    pub protected_count: usize,
}

pub fn sweep_stage(metrics: &[f64], threshold: f64, protect: bool) -> SweepOutcome {
    let mut out = SweepOutcome {
        kept: Vec::with_capacity(metrics.len()),
        deleted: Vec::new(),
        protected_count: 0,
    };
    let mut previous_deleted = false;
    for (j, &m) in metrics.iter().enumerate() {
        if m >= threshold {
            out.kept.push(j);
            previous_deleted = false;
        } else if protect && previous_deleted {
            out.kept.push(j);
            out.protected_count += 1;
            previous_deleted = false;
        } else {
            out.deleted.push(j);
            previous_deleted = true;
        }
    }
    out
}

/// Surviving tokens in original order, plus the audit trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Compression {
    pub tokens: Vec<TokenUnit>,
    pub trace: CompressionTrace,
}

/// Wall-clock and scorer accounting for one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageTiming {
    pub wall: Duration,
    pub scorer_calls: usize,
    pub attention_calls: usize,
}

pub fn compress<S: Scorer + ?Sized>(
    prompt: &[TokenUnit],
    scorer: &S,
    config: &CompressionConfig,
) -> Result<Compression> {
    compress_timed(prompt, scorer, config).map(|(c, _)| c)
}

/// [`compress`], also returning per-stage timings. Timings are kept out of
/// the trace so traces stay bit-identical across runs.
pub fn compress_timed<S: Scorer + ?Sized>(
    prompt: &[TokenUnit],
    scorer: &S,
    config: &CompressionConfig,
) -> Result<(Compression, Vec<StageTiming>)> {
    let violations = validate_config(config);
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    if prompt.is_empty() {
        return Err(Error::Empty("prompt has no tokens"));
    }
    check_tokens(prompt)?;

    let len = prompt.len();
    let stages = resolve_iterations(config, len);
    let fusion = config.effective_fusion();
    let mut run = Run {
        prompt,
        alive: (0..len).collect(),
        dropped: Vec::new(),
        reports: Vec::with_capacity(stages as usize),
    };
    let mut timings = Vec::with_capacity(stages as usize);

    let started = Instant::now();
    let (initial_surprisal, attention) = scorer
        .score_with_attention(prompt)
        .and_then(|(s, a)| check_lengths(len, &s, Some(&a)).map(|_| (s, a)))
        .map_err(|e| run.abort(1, e))?;
    let mut pending_surprisal = Some(initial_surprisal);
    let mut setup = Some(started.elapsed());

    let mut delta_p = 0.0;
    for stage in 1..=stages as usize {
        let clock = Instant::now();
        let delta_tau = stage_rate(config.target_rate, stages, delta_p, config.clamp_stage_rate);
        let current = run.current_tokens();
        let (surprisal, calls, attention_calls) = match pending_surprisal.take() {
            Some(s) => (s, 1, 1),
            None => {
                let s = scorer
                    .score(&current)
                    .and_then(|s| check_lengths(current.len(), &s, None).map(|_| s))
                    .map_err(|e| run.abort(stage, e))?;
                (s, 1, 0)
            }
        };
        let stage_attention = run.alive.iter().map(|&p| attention[p]).collect();
        let seq = ScoredSequence::new(current, surprisal, stage_attention)
            .map_err(|e| run.abort(stage, Error::Protocol(e.to_string())))?;
        let metrics = fuse(&seq, &fusion)?;
        let threshold = percentile_threshold(&metrics.values, delta_tau.min(1.0))?;
        let outcome = sweep_stage(&metrics.values, threshold, config.protect_consecutive);

        let length_before = run.alive.len();
        run.apply(&outcome);
        let denominator = match config.delta_p_denominator {
            DeltaPDenominator::Original => len,
            DeltaPDenominator::Current => length_before,
        };
        delta_p = outcome.protected_count as f64 / denominator as f64;
        run.reports.push(StageReport {
            stage_index: stage,
            delta_tau,
            threshold,
            deleted: outcome.deleted.len(),
            protected: outcome.protected_count,
            length_before,
            length_after: run.alive.len(),
        });
        timings.push(StageTiming {
            wall: clock.elapsed() + setup.take().unwrap_or_default(),
            scorer_calls: calls,
            attention_calls,
        });
    }

    let trace = run.trace();
    let tokens = run.current_tokens();
    Ok((Compression { tokens, trace }, timings))
}

fn check_lengths(expected: usize, surprisal: &[f64], attention: Option<&[f64]>) -> Result<()> {
    let bad = surprisal.len() != expected || attention.is_some_and(|a| a.len() != expected);
    if bad {
        return Err(Error::Protocol(format!(
            "scorer returned {} surprisal / {} attention values for {expected} tokens",
            surprisal.len(),
            attention.map_or(expected, <[f64]>::len)
        )));
    }
    Ok(())
}

/// Mutable state of one run: which prompt positions are still alive.
struct Run<'a> {
    prompt: &'a [TokenUnit],
    alive: Vec<usize>,
    dropped: Vec<usize>,
    reports: Vec<StageReport>,
}

impl Run<'_> {
    fn current_tokens(&self) -> Vec<TokenUnit> {
        self.alive.iter().map(|&p| self.prompt[p].clone()).collect()
    }

    fn apply(&mut self, outcome: &SweepOutcome) {
        self.dropped.extend(
            outcome
                .deleted
                .iter()
                .map(|&j| self.prompt[self.alive[j]].orig_index),
        );
        self.alive = outcome.kept.iter().map(|&j| self.alive[j]).collect();
    }

    fn trace(&self) -> CompressionTrace {
        let mut dropped = self.dropped.clone();
        dropped.sort_unstable();
        CompressionTrace {
            stages: self.reports.clone(),
            kept_indices: self
                .alive
                .iter()
                .map(|&p| self.prompt[p].orig_index)
                .collect(),
            dropped_indices: dropped,
            achieved_rate: self.alive.len() as f64 / self.prompt.len() as f64,
        }
    }

    fn abort(&self, stage: usize, source: Error) -> Error {
        Error::Aborted {
            stage,
            source: Box::new(source),
            partial: Box::new(self.trace()),
        }
    }
}
