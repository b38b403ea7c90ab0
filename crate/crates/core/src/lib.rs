//! Attention-aware, multi-stage prompt compression.
//!
//! A prompt is scored token by token with surprisal (bits) and accumulated
//! attention, the two signals are fused into one metric, and low-metric
//! tokens are removed over several stages. Surprisal is rescored after every
//! stage because deleting context changes how predictable the remaining
//! tokens are.
//!
//! ```
//! use tokenprune_core::{compress, BigramScorer, CompressionConfig, Scorer};
//!
//! let scorer = BigramScorer::from_corpus("the cat sat on the mat and the dog sat on the rug").unwrap();
//! let prompt = scorer.tokenize("the cat sat on the rug while the dog sat on the mat").unwrap();
//! let out = compress(&prompt, &scorer, &CompressionConfig::with_rate(0.5)).unwrap();
//! assert!(out.tokens.len() < prompt.len());
//! out.trace.check_partition(prompt.len()).unwrap();
//! ```

pub mod analysis;
pub mod attention;
pub mod compressor;
pub mod error;
pub mod fusion;
pub mod scorer;
pub mod types;

pub use attention::{accumulate_head_scores, aggregate_attention, HeadScoreVector};
pub use compressor::{
    auto_iterations, compress, compress_timed, percentile_threshold, stage_rate, sweep_stage,
    Compression, StageTiming, SweepOutcome,
};
pub use error::{Error, Result};
pub use fusion::{fuse, fuse_additive, fuse_multiplicative, minmax_normalize, MetricVector};
pub use scorer::{
    BigramModel, BigramScorer, Recording, RemoteScorer, Scorer, ScriptEntry, ScriptedScorer,
};
pub use types::{
    validate_config, AttentionMatrix, AttentionStack, CompressionConfig, CompressionTrace,
    ConfigViolation, DeltaPDenominator, FusionConfig, FusionMode, Iterations, Normalize,
    ScoredSequence, StageReport, TokenUnit,
};
