//! Token cost model and per-stage cascade costs.
//!
//! Cost scales linearly with model size and token counts, with output
//! tokens weighted by the ratio `rho`. Stage one (`c1`) is base generation
//! plus its verification; stage two (`c2`) is large generation plus the
//! large-stage verification, incurred only on deferral. Multi-sample
//! verification is charged once per pass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::is_positive;
use crate::trace::{Method, ModelSpec, Tier, TraceRecord};

#[derive(Debug, Error)]
pub enum CostError {
    #[error("invalid cost arguments: {0}")]
    InvalidArgs(String),
    #[error("record {id:?} lacks evidence for ({method}, verifier {verifier}, target {target})")]
    MissingEvidence {
        id: String,
        method: Method,
        verifier: Tier,
        target: Tier,
    },
}

/// Generation and verification cost per cascade stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCosts {
    /// Base-stage cost, incurred on every query.
    pub c1: f64,
    /// Large-stage cost, incurred only on deferral.
    pub c2: f64,
}

/// `size * (t_in + rho * t_out)` for one model invocation.
pub fn token_cost(size: f64, t_in: u64, t_out: u64, rho: f64) -> Result<f64, CostError> {
    if !is_positive(size) {
        return Err(CostError::InvalidArgs(format!(
            "model size must be positive, got {size}"
        )));
    }
    if !is_positive(rho) {
        return Err(CostError::InvalidArgs(format!(
            "rho must be positive, got {rho}"
        )));
    }
    Ok(size * (t_in as f64 + rho * t_out as f64))
}

/// Assemble c1 and c2 for one record under the configured verification key.
/// The verifier's size comes from whichever model the evidence names.
pub fn stage_costs(
    record: &TraceRecord,
    base_model: &ModelSpec,
    large_model: &ModelSpec,
    method: Method,
    verifier: Tier,
    rho: f64,
) -> Result<StageCosts, CostError> {
    let model_size = |tier: Tier| match tier {
        Tier::Base => base_model.size,
        Tier::Large => large_model.size,
    };
    let stage = |target: Tier| -> Result<f64, CostError> {
        let generation = record.generation(target);
        let gen_cost = token_cost(model_size(target), generation.t_in, generation.t_out, rho)?;
        let evidence = record
            .evidence_for(method, verifier, target)
            .ok_or_else(|| CostError::MissingEvidence {
                id: record.id.clone(),
                method,
                verifier,
                target,
            })?;
        let per_pass = token_cost(
            model_size(evidence.verifier),
            evidence.t_in_ver,
            evidence.t_out_ver,
            rho,
        )?;
        Ok(gen_cost + evidence.n_samples() as f64 * per_pass)
    };
    Ok(StageCosts {
        c1: stage(Tier::Base)?,
        c2: stage(Tier::Large)?,
    })
}
