//! Reduction of multi-layer, multi-head attention to one score per token.
//!
//! Each head contributes the column sums of its attention matrix: how much
//! attention mass every position receives from the whole sequence. Heads are
//! then averaged uniformly over all layers.

use crate::error::{Error, Result};
use crate::types::{AttentionMatrix, AttentionStack};

/// Row sums looser than this are rejected by [`accumulate_head_scores`].
pub const HEAD_ROW_TOLERANCE: f64 = 1e-3;

/// Accumulated attention received by each position from one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadScoreVector {
    pub scores: Vec<f64>,
}

impl HeadScoreVector {
    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }
}

/// Column sums of a row-stochastic matrix.
pub fn accumulate_head_scores(matrix: &AttentionMatrix) -> Result<HeadScoreVector> {
    for (u, row) in matrix.rows().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > HEAD_ROW_TOLERANCE {
            return Err(Error::Stochasticity {
                layer: 0,
                head: 0,
                row: u,
                sum,
            });
        }
    }
    Ok(HeadScoreVector {
        scores: column_sums(matrix),
    })
}

fn column_sums(matrix: &AttentionMatrix) -> Vec<f64> {
    let mut scores = vec![0.0; matrix.n()];
    for row in matrix.rows() {
        for (acc, q) in scores.iter_mut().zip(row) {
            *acc += q;
        }
    }
    scores
}

/// Mean of the per-head column sums over every layer and head.
///
/// The stack constructor has already enforced equal sizes, a non-empty head
/// set and row-stochasticity, so this cannot fail. Heads are reduced in
/// layer-major order, which keeps the result bit-stable across runs.
pub fn aggregate_attention(stack: &AttentionStack) -> Vec<f64> {
    let mut total = vec![0.0; stack.n()];
    for head in stack.heads() {
        for (acc, s) in total.iter_mut().zip(column_sums(head)) {
            *acc += s;
        }
    }
    let heads = stack.head_count() as f64;
    total.iter_mut().for_each(|v| *v /= heads);
    total
}
