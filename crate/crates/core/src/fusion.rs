//! Combining surprisal and accumulated attention into one ranking metric.

use crate::error::{Error, Result};
use crate::types::{ConfigViolation, FusionConfig, FusionMode, Normalize, ScoredSequence};

/// Per-token compression metric; larger values are more worth keeping.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricVector {
    pub values: Vec<f64>,
    pub fusion_used: FusionConfig,
}

impl MetricVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Maps values affinely onto [0, 1]. A constant input maps to 0.5 everywhere.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty("cannot normalize an empty list"));
    }
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = max - min;
    if range == 0.0 {
        return Ok(vec![0.5; values.len()]);
    }
    Ok(values.iter().map(|v| (v - min) / range).collect())
}

fn signals(seq: &ScoredSequence, normalize: Normalize) -> Result<(Vec<f64>, Vec<f64>)> {
    match normalize {
        Normalize::None => Ok((
            seq.surprisal_bits().to_vec(),
            seq.attention_score().to_vec(),
        )),
        Normalize::Minmax if seq.is_empty() => Ok((Vec::new(), Vec::new())),
        Normalize::Minmax => Ok((
            minmax_normalize(seq.surprisal_bits())?,
            minmax_normalize(seq.attention_score())?,
        )),
    }
}

/// `(1 - alpha) * surprisal + alpha * attention`.
pub fn fuse_additive(
    seq: &ScoredSequence,
    alpha: f64,
    normalize: Normalize,
) -> Result<MetricVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(vec![ConfigViolation::Alpha(alpha)]));
    }
    let (info, attn) = signals(seq, normalize)?;
    let values = info
        .iter()
        .zip(&attn)
        .map(|(i, s)| (1.0 - alpha) * i + alpha * s)
        .collect();
    Ok(MetricVector {
        values,
        fusion_used: FusionConfig {
            mode: FusionMode::Additive { alpha },
            normalize,
        },
    })
}

/// `surprisal * attention`.
pub fn fuse_multiplicative(seq: &ScoredSequence, normalize: Normalize) -> Result<MetricVector> {
    let (info, attn) = signals(seq, normalize)?;
    let values = info.iter().zip(&attn).map(|(i, s)| i * s).collect();
    Ok(MetricVector {
        values,
        fusion_used: FusionConfig {
            mode: FusionMode::Multiplicative,
            normalize,
        },
    })
}

pub fn fuse(seq: &ScoredSequence, config: &FusionConfig) -> Result<MetricVector> {
    match config.mode {
        FusionMode::Additive { alpha } => fuse_additive(seq, alpha, config.normalize),
        FusionMode::Multiplicative => fuse_multiplicative(seq, config.normalize),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(i: &[f64], s: &[f64]) -> ScoredSequence {
        ScoredSequence::from_signals(i.to_vec(), s.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn additive_endpoints_and_default_alpha() {
        let s = seq(&[2.0, 4.0], &[1.0, 3.0]);
        assert_eq!(
            fuse_additive(&s, 0.0, Normalize::None).unwrap().values,
            vec![2.0, 4.0]
        );
        assert_eq!(
            fuse_additive(&s, 1.0, Normalize::None).unwrap().values,
            vec![1.0, 3.0]
        );
        let m = fuse_additive(&s, 0.8, Normalize::None).unwrap();
        assert!(close(&m.values, &[1.2, 3.2]), "{:?}", m.values);
    }

    #[test]
    fn additive_rejects_bad_alpha() {
        let s = seq(&[1.0], &[1.0]);
        assert!(matches!(
            fuse_additive(&s, 1.3, Normalize::None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn multiplicative_cases() {
        let s = seq(&[2.0, 4.0], &[1.0, 3.0]);
        assert_eq!(
            fuse_multiplicative(&s, Normalize::None).unwrap().values,
            vec![2.0, 12.0]
        );
        let z = seq(&[2.0, 4.0, 1.0], &[0.0, 0.0, 0.0]);
        assert_eq!(
            fuse_multiplicative(&z, Normalize::None).unwrap().values,
            vec![0.0; 3]
        );
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(
            minmax_normalize(&[2.0, 4.0, 6.0]).unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        assert_eq!(
            minmax_normalize(&[5.0, 5.0, 5.0]).unwrap(),
            vec![0.5, 0.5, 0.5]
        );
        assert_eq!(minmax_normalize(&[0.0, 10.0]).unwrap(), vec![0.0, 1.0]);
        assert!(minmax_normalize(&[]).is_err());
    }

    #[test]
    fn normalized_additive_fusion() {
        let s = seq(&[2.0, 4.0, 6.0], &[10.0, 0.0, 5.0]);
        let m = fuse_additive(&s, 0.5, Normalize::Minmax).unwrap();
        assert!(close(&m.values, &[0.5, 0.25, 0.75]));
        assert_eq!(m.fusion_used.normalize, Normalize::Minmax);
    }

    #[test]
    fn dispatch_matches_direct_calls() {
        let s = seq(&[2.0, 4.0], &[1.0, 3.0]);
        assert_eq!(
            fuse(&s, &FusionConfig::multiplicative()).unwrap(),
            fuse_multiplicative(&s, Normalize::None).unwrap()
        );
        assert_eq!(
            fuse(&s, &FusionConfig::additive(0.3)).unwrap(),
            fuse_additive(&s, 0.3, Normalize::None).unwrap()
        );
    }
}
