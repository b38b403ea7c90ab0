//! Diagnostics: signal correlation, surprisal shift under compression,
//! cross-scorer agreement and compression overhead.
//!
//! Every report serializes to JSON and renders as a plain-text table or CSV.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::compressor::{compress, StageTiming};
use crate::error::{Error, Result};
use crate::scorer::Scorer;
use crate::types::{CompressionConfig, CompressionTrace, ScoredSequence, TokenUnit};

/// Default cutoff, in bits, for counting a surprisal change as large.
pub const DEFAULT_SHIFT_THRESHOLD: f64 = 1.0;

/// Default accumulated-attention level above which a token counts as
/// attention-critical.
pub const DEFAULT_CRITICAL_ATTENTION: f64 = 1.0;

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!(
            "pearson over {} and {} values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two observations"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation between surprisal and accumulated attention of one sequence.
pub fn signal_correlation(seq: &ScoredSequence) -> Result<f64> {
    pearson(seq.surprisal_bits(), seq.attention_score())
}

/// Positions whose accumulated attention exceeds `threshold`.
pub fn attention_critical(seq: &ScoredSequence, threshold: f64) -> Vec<usize> {
    seq.attention_score()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > threshold)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftRecord {
    pub orig_index: usize,
    pub surprisal_before: f64,
    pub surprisal_after: f64,
    pub predecessor_dropped: bool,
}

impl ShiftRecord {
    pub fn shift(&self) -> f64 {
        self.surprisal_after - self.surprisal_before
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftSummary {
    pub tokens: usize,
    /// `None` when the correlation is undefined (constant surprisal).
    pub pearson: Option<f64>,
    pub large_shift_threshold: f64,
    pub predecessor_dropped: usize,
    pub large_shifts_predecessor_dropped: usize,
    pub predecessor_kept: usize,
    pub large_shifts_predecessor_kept: usize,
}

impl ShiftSummary {
    pub fn large_shift_fraction_dropped(&self) -> f64 {
        ratio(
            self.large_shifts_predecessor_dropped,
            self.predecessor_dropped,
        )
    }

    pub fn large_shift_fraction_kept(&self) -> f64 {
        ratio(self.large_shifts_predecessor_kept, self.predecessor_kept)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport {
    pub records: Vec<ShiftRecord>,
    pub summary: ShiftSummary,
}

/// Rescores the surviving tokens and compares each one's surprisal with its
/// value in the original sequence.
pub fn entropy_shift_report<S: Scorer + ?Sized>(
    original: &ScoredSequence,
    compressed: &[TokenUnit],
    scorer: &S,
    large_shift_threshold: f64,
) -> Result<ShiftReport> {
    let position: HashMap<usize, usize> = original
        .tokens()
        .iter()
        .enumerate()
        .map(|(p, t)| (t.orig_index, p))
        .collect();
    let mut positions = Vec::with_capacity(compressed.len());
    for t in compressed {
        let p = *position
            .get(&t.orig_index)
            .ok_or_else(|| Error::NotSubsequence(format!("orig_index {} unknown", t.orig_index)))?;
        if original.tokens()[p].surface != t.surface {
            return Err(Error::NotSubsequence(format!(
                "token {} has surface {:?}, original has {:?}",
                t.orig_index,
                t.surface,
                original.tokens()[p].surface
            )));
        }
        if positions.last().is_some_and(|&last| last >= p) {
            return Err(Error::NotSubsequence("order not preserved".into()));
        }
        positions.push(p);
    }

    let after = if compressed.is_empty() {
        Vec::new()
    } else {
        scorer.score(compressed)?
    };
    if after.len() != compressed.len() {
        return Err(Error::Protocol(format!(
            "scorer returned {} values for {} tokens",
            after.len(),
            compressed.len()
        )));
    }

    let survives: std::collections::HashSet<usize> = positions.iter().copied().collect();
    let records: Vec<ShiftRecord> = positions
        .iter()
        .zip(&after)
        .map(|(&p, &a)| ShiftRecord {
            orig_index: original.tokens()[p].orig_index,
            surprisal_before: original.surprisal_bits()[p],
            surprisal_after: a,
            predecessor_dropped: p > 0 && !survives.contains(&(p - 1)),
        })
        .collect();

    let before: Vec<f64> = records.iter().map(|r| r.surprisal_before).collect();
    let pearson = match pearson(&before, &after) {
        Ok(r) => Some(r),
        Err(_) if !before.is_empty() && before == after => Some(1.0),
        Err(_) => None,
    };
    let mut summary = ShiftSummary {
        tokens: records.len(),
        pearson,
        large_shift_threshold,
        predecessor_dropped: 0,
        large_shifts_predecessor_dropped: 0,
        predecessor_kept: 0,
        large_shifts_predecessor_kept: 0,
    };
    for r in &records {
        let large = r.shift().abs() > large_shift_threshold;
        if r.predecessor_dropped {
            summary.predecessor_dropped += 1;
            summary.large_shifts_predecessor_dropped += usize::from(large);
        } else {
            summary.predecessor_kept += 1;
            summary.large_shifts_predecessor_kept += usize::from(large);
        }
    }
    Ok(ShiftReport { records, summary })
}

impl ShiftReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>8} {:>10} {:>10} {:>8}  pred_dropped",
            "index", "before", "after", "shift"
        );
        for r in &self.records {
            let _ = writeln!(
                out,
                "{:>8} {:>10.4} {:>10.4} {:>+8.4}  {}",
                r.orig_index,
                r.surprisal_before,
                r.surprisal_after,
                r.shift(),
                r.predecessor_dropped
            );
        }
        let s = &self.summary;
        let _ = writeln!(
            out,
            "pearson: {}",
            s.pearson
                .map_or("undefined".to_string(), |r| format!("{r:.6}"))
        );
        let _ = writeln!(
            out,
            "large shifts (>{} bits): {}/{} with predecessor dropped, {}/{} with predecessor kept",
            s.large_shift_threshold,
            s.large_shifts_predecessor_dropped,
            s.predecessor_dropped,
            s.large_shifts_predecessor_kept,
            s.predecessor_kept
        );
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("orig_index,surprisal_before,surprisal_after,shift,predecessor_dropped\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.orig_index,
                r.surprisal_before,
                r.surprisal_after,
                r.shift(),
                r.predecessor_dropped
            );
        }
        out
    }
}

/// Pearson correlation of two scorers' surprisal on the same tokens.
pub fn cross_scorer_similarity<A, B>(
    tokens: &[TokenUnit],
    scorer_a: &A,
    scorer_b: &B,
) -> Result<f64>
where
    A: Scorer + ?Sized,
    B: Scorer + ?Sized,
{
    pearson(&scorer_a.score(tokens)?, &scorer_b.score(tokens)?)
}

/// One point of a compression-rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub target_rate: f64,
    pub achieved_rate: f64,
    pub pearson: Option<f64>,
    pub large_shift_fraction: f64,
}

/// Compresses `prompt` at each rate with `base` and measures how strongly
/// surviving tokens' surprisal shifts.
pub fn shift_sweep<S: Scorer + ?Sized>(
    prompt: &[TokenUnit],
    scorer: &S,
    base: &CompressionConfig,
    rates: &[f64],
    large_shift_threshold: f64,
) -> Result<Vec<SweepPoint>> {
    let (surprisal, attention) = scorer.score_with_attention(prompt)?;
    let original = ScoredSequence::new(prompt.to_vec(), surprisal, attention)?;
    rates
        .iter()
        .map(|&rate| {
            let cfg = CompressionConfig {
                target_rate: rate,
                ..*base
            };
            let out = compress(prompt, scorer, &cfg)?;
            let report =
                entropy_shift_report(&original, &out.tokens, scorer, large_shift_threshold)?;
            let large = report.summary.large_shifts_predecessor_dropped
                + report.summary.large_shifts_predecessor_kept;
            Ok(SweepPoint {
                target_rate: rate,
                achieved_rate: out.trace.achieved_rate,
                pearson: report.summary.pearson,
                large_shift_fraction: ratio(large, report.summary.tokens),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageOverhead {
    pub stage_index: usize,
    pub wall_ms: f64,
    pub scorer_calls: usize,
    pub attention_calls: usize,
    pub deleted: usize,
    pub protected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadReport {
    pub stages: Vec<StageOverhead>,
    pub total_wall_ms: f64,
    pub scorer_calls: usize,
    pub attention_calls: usize,
    pub original_length: usize,
    pub final_length: usize,
    pub tokens_removed: usize,
    pub achieved_rate: f64,
}

/// Joins a trace with the per-stage timings collected while producing it.
/// Stages without a timing entry report zero wall time and the call pattern
/// the engine always follows (one call per stage, attention on the first).
pub fn overhead_report(run: &CompressionTrace, timings: &[StageTiming]) -> OverheadReport {
    let stages: Vec<StageOverhead> = run
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let t = timings.get(i).copied().unwrap_or(StageTiming {
                wall: Default::default(),
                scorer_calls: 1,
                attention_calls: usize::from(i == 0),
            });
            StageOverhead {
                stage_index: s.stage_index,
                wall_ms: t.wall.as_secs_f64() * 1e3,
                scorer_calls: t.scorer_calls,
                attention_calls: t.attention_calls,
                deleted: s.deleted,
                protected: s.protected,
            }
        })
        .collect();
    let original_length = run.original_length();
    let final_length = run.kept_indices.len();
    OverheadReport {
        total_wall_ms: stages.iter().map(|s| s.wall_ms).sum(),
        scorer_calls: stages.iter().map(|s| s.scorer_calls).sum(),
        attention_calls: stages.iter().map(|s| s.attention_calls).sum(),
        stages,
        original_length,
        final_length,
        tokens_removed: original_length - final_length,
        achieved_rate: ratio(final_length, original_length),
    }
}

impl OverheadReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>5} {:>10} {:>6} {:>5} {:>8} {:>9}",
            "stage", "wall_ms", "calls", "attn", "deleted", "protected"
        );
        for s in &self.stages {
            let _ = writeln!(
                out,
                "{:>5} {:>10.3} {:>6} {:>5} {:>8} {:>9}",
                s.stage_index, s.wall_ms, s.scorer_calls, s.attention_calls, s.deleted, s.protected
            );
        }
        let _ = writeln!(
            out,
            "total {:.3} ms, {} scorer calls ({} with attention), {} -> {} tokens, rate {:.4}",
            self.total_wall_ms,
            self.scorer_calls,
            self.attention_calls,
            self.original_length,
            self.final_length,
            self.achieved_rate
        );
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("stage_index,wall_ms,scorer_calls,attention_calls,deleted,protected\n");
        for s in &self.stages {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.stage_index, s.wall_ms, s.scorer_calls, s.attention_calls, s.deleted, s.protected
            );
        }
        out
    }
}
