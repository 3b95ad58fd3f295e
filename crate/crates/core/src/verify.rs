//! Collapse raw verification evidence into a single uncalibrated
//! confidence score per (record, method, verifier, target).
//!
//! Two estimator families: scalar self-verification values are averaged
//! directly; surrogate token probabilities normalize each (YES, NO) pair to
//! YES / (YES + NO) before averaging. A single sample is the degenerate
//! mean, so the same two functions cover all four methods.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::is_positive;
use crate::trace::{Method, Tier, VerificationEvidence};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("evidence for method {method} carries the wrong sample family")]
    WrongFamily { method: Method },
    #[error("token pair {index} has zero total mass")]
    DegeneratePair { index: usize },
    #[error("evidence carries no samples")]
    Empty,
}

/// An uncalibrated correctness estimate in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawScore {
    pub value: f64,
    pub method: Method,
    pub verifier: Tier,
    pub target: Tier,
    /// Number of samples aggregated into `value`.
    pub n_used: usize,
}

/// Mean of scalar self-verification samples (SV and SV_CONSISTENT).
pub fn score_sv(evidence: &VerificationEvidence) -> Result<RawScore, VerifyError> {
    if !evidence.method.is_scalar_family() || !evidence.token_pairs.is_empty() {
        return Err(VerifyError::WrongFamily {
            method: evidence.method,
        });
    }
    if evidence.scalar_samples.is_empty() {
        return Err(VerifyError::Empty);
    }
    let value = evidence.scalar_samples.iter().sum::<f64>() / evidence.scalar_samples.len() as f64;
    Ok(RawScore {
        value,
        method: evidence.method,
        verifier: evidence.verifier,
        target: evidence.target,
        n_used: evidence.scalar_samples.len(),
    })
}

/// Mean of normalized YES probabilities over token pairs (STP and MC_STP).
pub fn score_stp(evidence: &VerificationEvidence) -> Result<RawScore, VerifyError> {
    if evidence.method.is_scalar_family() || !evidence.scalar_samples.is_empty() {
        return Err(VerifyError::WrongFamily {
            method: evidence.method,
        });
    }
    if evidence.token_pairs.is_empty() {
        return Err(VerifyError::Empty);
    }
    let mut total = 0.0;
    for (index, (yes, no)) in evidence.token_pairs.iter().enumerate() {
        let denom = yes + no;
        if !is_positive(denom) {
            return Err(VerifyError::DegeneratePair { index });
        }
        total += yes / denom;
    }
    Ok(RawScore {
        value: total / evidence.token_pairs.len() as f64,
        method: evidence.method,
        verifier: evidence.verifier,
        target: evidence.target,
        n_used: evidence.token_pairs.len(),
    })
}

/// Dispatch on the evidence's method family.
pub fn score(evidence: &VerificationEvidence) -> Result<RawScore, VerifyError> {
    if evidence.method.is_scalar_family() {
        score_sv(evidence)
    } else {
        score_stp(evidence)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv_evidence(method: Method, samples: Vec<f64>) -> VerificationEvidence {
        VerificationEvidence {
            method,
            verifier: Tier::Large,
            target: Tier::Base,
            scalar_samples: samples,
            token_pairs: vec![],
            t_in_ver: 80,
            t_out_ver: 1,
        }
    }

    fn stp_evidence(method: Method, pairs: Vec<(f64, f64)>) -> VerificationEvidence {
        VerificationEvidence {
            method,
            verifier: Tier::Large,
            target: Tier::Base,
            scalar_samples: vec![],
            token_pairs: pairs,
            t_in_ver: 80,
            t_out_ver: 1,
        }
    }

    #[test]
    fn sv_single_sample_is_identity() {
        let score = score_sv(&sv_evidence(Method::Sv, vec![0.7])).unwrap();
        assert_eq!(score.value, 0.7);
        assert_eq!(score.n_used, 1);
    }

    #[test]
    fn sv_mean_of_samples() {
        let score = score_sv(&sv_evidence(
            Method::SvConsistent,
            vec![0.2, 0.4, 0.6, 0.8, 1.0],
        ))
        .unwrap();
        assert!((score.value - 0.6).abs() < 1e-15);
        assert_eq!(score.n_used, 5);
    }

    #[test]
    fn sv_constant_samples() {
        let score = score_sv(&sv_evidence(Method::SvConsistent, vec![1.0, 1.0])).unwrap();
        assert_eq!(score.value, 1.0);
    }

    #[test]
    fn sv_rejects_token_pairs() {
        let ev = stp_evidence(Method::Stp, vec![(0.8, 0.2)]);
        assert!(matches!(
            score_sv(&ev),
            Err(VerifyError::WrongFamily { .. })
        ));
    }

    #[test]
    fn stp_normalizes_single_pair() {
        let score = score_stp(&stp_evidence(Method::Stp, vec![(0.8, 0.2)])).unwrap();
        assert!((score.value - 0.8).abs() < 1e-15);
    }

    #[test]
    fn stp_symmetric_pair() {
        let score = score_stp(&stp_evidence(Method::Stp, vec![(0.5, 0.5)])).unwrap();
        assert_eq!(score.value, 0.5);
    }

    #[test]
    fn stp_mean_over_passes() {
        // hand oracle: mean(0.9, 0.75, 0.3) = 0.65
        let score = score_stp(&stp_evidence(
            Method::McStp,
            vec![(0.9, 0.1), (0.6, 0.2), (0.3, 0.7)],
        ))
        .unwrap();
        assert!((score.value - 0.65).abs() < 1e-12);
    }

    #[test]
    fn stp_rejects_degenerate_pair() {
        let err =
            score_stp(&stp_evidence(Method::McStp, vec![(0.9, 0.1), (0.0, 0.0)])).unwrap_err();
        assert!(matches!(err, VerifyError::DegeneratePair { index: 1 }));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sv_output_in_unit_interval(samples in proptest::collection::vec(0.0f64..=1.0, 1..20)) {
                let method = if samples.len() == 1 { Method::Sv } else { Method::SvConsistent };
                let score = score_sv(&sv_evidence(method, samples)).unwrap();
                prop_assert!((0.0..=1.0).contains(&score.value));
            }

            #[test]
            fn stp_output_in_unit_interval(
                pairs in proptest::collection::vec((1e-6f64..10.0, 1e-6f64..10.0), 1..20)
            ) {
                let method = if pairs.len() == 1 { Method::Stp } else { Method::McStp };
                let score = score_stp(&stp_evidence(method, pairs)).unwrap();
                prop_assert!((0.0..=1.0).contains(&score.value));
            }

            #[test]
            fn stp_invariant_to_pair_rescaling(
                pairs in proptest::collection::vec((1e-3f64..5.0, 1e-3f64..5.0), 1..10),
                scales in proptest::collection::vec(1e-3f64..100.0, 10)
            ) {
                let method = if pairs.len() == 1 { Method::Stp } else { Method::McStp };
                let scaled: Vec<(f64, f64)> = pairs
                    .iter()
                    .zip(&scales)
                    .map(|(&(y, n), &c)| (c * y, c * n))
                    .collect();
                let a = score_stp(&stp_evidence(method, pairs)).unwrap();
                let b = score_stp(&stp_evidence(method, scaled)).unwrap();
                prop_assert!((a.value - b.value).abs() < 1e-12);
            }

            #[test]
            fn scores_permutation_invariant(
                mut samples in proptest::collection::vec(0.0f64..=1.0, 2..12),
                rotate in 1usize..11
            ) {
                let a = score_sv(&sv_evidence(Method::SvConsistent, samples.clone())).unwrap();
                let k = rotate % samples.len();
                samples.rotate_left(k);
                let b = score_sv(&sv_evidence(Method::SvConsistent, samples)).unwrap();
                prop_assert!((a.value - b.value).abs() < 1e-12);
            }
        }
    }
}
