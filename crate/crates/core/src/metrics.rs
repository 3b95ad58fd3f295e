//! Cost-benefit evaluation: probabilistic deferral, IBC and delta-IBC.
//!
//! The threshold-agnostic policy defers each query to the large model with
//! a probability tied to the calibrated base confidence. Incremental
//! benefit per cost (IBC) is the accuracy gain per unit cost of a policy;
//! delta-IBC is its percentage improvement over the base-to-large
//! interpolation baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{predict, CalibrateError, TierCalibrators};
use crate::cost::{stage_costs, CostError};
use crate::stats::{derive_seed, sample_se};
use crate::trace::{Tier, TraceSet};
use crate::verify::{score, VerifyError};

const STREAM_DEFER: u64 = 10;
const STREAM_PREDICT: u64 = 11;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("evaluation requires a non-empty trace set")]
    EmptySet,
    #[error("IBC undefined: cost delta is zero")]
    ZeroCostDelta,
    #[error("delta-IBC undefined: baseline IBC is zero")]
    ZeroBaseline,
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Calibrate(#[from] CalibrateError),
}

/// Direction of the deferral probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeferralMode {
    /// Defer with probability `phi_base` (the literal statement).
    #[serde(rename = "PAPER_LITERAL")]
    PaperLiteral,
    /// Defer with probability `1 - phi_base` (defer when unconfident).
    #[serde(rename = "COMPLEMENT")]
    Complement,
}

impl DeferralMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DeferralMode::PaperLiteral => "PAPER_LITERAL",
            DeferralMode::Complement => "COMPLEMENT",
        }
    }
}

impl std::fmt::Display for DeferralMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Accuracy/cost summary with standard errors of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub cost_per_sample: f64,
    pub n: usize,
    /// Binomial standard error of the accuracy.
    pub accuracy_se: f64,
    /// Sample standard error of the mean cost.
    pub cost_se: f64,
}

fn summarize(correct: &[bool], costs: &[f64]) -> EvalSummary {
    let n = correct.len();
    let accuracy = correct.iter().filter(|&&c| c).count() as f64 / n as f64;
    EvalSummary {
        accuracy,
        cost_per_sample: costs.iter().sum::<f64>() / n as f64,
        n,
        accuracy_se: (accuracy * (1.0 - accuracy) / n as f64).sqrt(),
        cost_se: sample_se(costs),
    }
}

/// Evaluate the probabilistic-deferral cascade: per record, defer to the
/// large model with probability `phi_base` (PAPER_LITERAL) or
/// `1 - phi_base` (COMPLEMENT); score the chosen tier's correctness and
/// charge `c1` plus `c2` on deferral. Deterministic under `seed`.
pub fn eval_probabilistic_deferral(
    stream: &TraceSet,
    calibrators: &TierCalibrators,
    mode: DeferralMode,
    n_draws: usize,
    seed: u64,
) -> Result<EvalSummary, MetricsError> {
    if stream.records.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut defer_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_DEFER, 0));
    let mut correct = Vec::with_capacity(stream.records.len());
    let mut costs = Vec::with_capacity(stream.records.len());
    for (index, record) in stream.records.iter().enumerate() {
        let evidence = record
            .evidence_for(calibrators.method, calibrators.verifier, Tier::Base)
            .ok_or_else(|| CostError::MissingEvidence {
                id: record.id.clone(),
                method: calibrators.method,
                verifier: calibrators.verifier,
                target: Tier::Base,
            })?;
        let raw = score(evidence)?.value;
        let phi = predict(
            &calibrators.base,
            raw,
            n_draws,
            derive_seed(seed, STREAM_PREDICT, index as u64),
        )?
        .phi;
        let q = match mode {
            DeferralMode::PaperLiteral => phi,
            DeferralMode::Complement => 1.0 - phi,
        };
        let stage = stage_costs(
            record,
            &stream.base_model,
            &stream.large_model,
            calibrators.method,
            calibrators.verifier,
            stream.rho,
        )?;
        let defer = defer_rng.gen_bool(q.clamp(0.0, 1.0));
        if defer {
            correct.push(record.large.correct);
            costs.push(stage.c1 + stage.c2);
        } else {
            correct.push(record.base.correct);
            costs.push(stage.c1);
        }
    }
    Ok(summarize(&correct, &costs))
}

/// Degenerate policy summaries used as cost-benefit baselines: the
/// never-defer cascade (base answers, cost `c1`) and the always-defer
/// cascade (large answers, cost `c1 + c2`).
pub fn baseline_summary(
    stream: &TraceSet,
    method: crate::trace::Method,
    verifier: Tier,
    defer_always: bool,
) -> Result<EvalSummary, MetricsError> {
    if stream.records.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut correct = Vec::with_capacity(stream.records.len());
    let mut costs = Vec::with_capacity(stream.records.len());
    for record in &stream.records {
        let stage = stage_costs(
            record,
            &stream.base_model,
            &stream.large_model,
            method,
            verifier,
            stream.rho,
        )?;
        if defer_always {
            correct.push(record.large.correct);
            costs.push(stage.c1 + stage.c2);
        } else {
            correct.push(record.base.correct);
            costs.push(stage.c1);
        }
    }
    Ok(summarize(&correct, &costs))
}

/// Incremental benefit per cost: accuracy gain per unit cost.
pub fn ibc(p_from: f64, p_to: f64, c_from: f64, c_to: f64) -> Result<f64, MetricsError> {
    if c_to == c_from {
        return Err(MetricsError::ZeroCostDelta);
    }
    Ok((p_to - p_from) / (c_to - c_from))
}

/// Relative IBC gain of the cascade over the baseline, in percent.
pub fn delta_ibc(ibc_cascade: f64, ibc_base: f64) -> Result<f64, MetricsError> {
    if ibc_base == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok((ibc_cascade - ibc_base) / ibc_base * 100.0)
}
