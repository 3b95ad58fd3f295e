//! The decision core: hard two-tier routing, its differentiable soft-mask
//! relaxation, and the system-risk objective.
//!
//! Hard routing accepts the base answer when calibrated confidence clears
//! the deferral threshold and uncertainty stays below the abstention
//! threshold; deferred queries are answered by the large model unless its
//! uncertainty also trips, in which case the query goes to a human. The
//! soft version replaces every Boolean test with a logistic step
//! `g_k(z) = sigmoid(k z)` so the risk is differentiable in the thresholds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::StageCosts;
use crate::stats::sigmoid;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("threshold {name} = {value} outside the open interval (0, 1)")]
    InvalidThreshold { name: &'static str, value: f64 },
    #[error("deferred decision requires the large model's uncertainty")]
    MissingLargeUncertainty,
}

/// The three decision parameters, each strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Deferral threshold on base confidence.
    pub phi_base: f64,
    /// Stage-1 abstention threshold on base uncertainty.
    pub xi_base: f64,
    /// Stage-2 abstention threshold on large uncertainty.
    pub xi_large: f64,
}

impl Thresholds {
    pub fn new(phi_base: f64, xi_base: f64, xi_large: f64) -> Result<Self, CascadeError> {
        let check = |name: &'static str, value: f64| {
            if value > 0.0 && value < 1.0 {
                Ok(value)
            } else {
                Err(CascadeError::InvalidThreshold { name, value })
            }
        };
        Ok(Thresholds {
            phi_base: check("phi_base", phi_base)?,
            xi_base: check("xi_base", xi_base)?,
            xi_large: check("xi_large", xi_large)?,
        })
    }
}

/// Unconstrained preimages of [`Thresholds`] under the sigmoid map; these
/// are the actual optimization variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawThresholds {
    pub phi_base_raw: f64,
    pub xi_base_raw: f64,
    pub xi_large_raw: f64,
}

impl RawThresholds {
    pub fn as_array(self) -> [f64; 3] {
        [self.phi_base_raw, self.xi_base_raw, self.xi_large_raw]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        RawThresholds {
            phi_base_raw: a[0],
            xi_base_raw: a[1],
            xi_large_raw: a[2],
        }
    }
}

/// The five differentiable routing masses for one query. The first three
/// partition unit mass; the stage-2 pair partitions the deferred mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftMasks {
    pub p_abst1: f64,
    pub m_pred1: f64,
    pub m_defer1: f64,
    pub p_abst2: f64,
    pub m_pred2: f64,
}

impl SoftMasks {
    /// Total abstention probability across both stages.
    pub fn p_abstain(&self) -> f64 {
        self.p_abst1 + self.p_abst2
    }
}

/// Hard route for one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    AnswerBase,
    AnswerLarge,
    AbstainStage1,
    AbstainStage2,
}

impl Decision {
    pub fn is_abstention(self) -> bool {
        matches!(self, Decision::AbstainStage1 | Decision::AbstainStage2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::AnswerBase => "ANSWER_BASE",
            Decision::AnswerLarge => "ANSWER_LARGE",
            Decision::AbstainStage1 => "ABSTAIN_STAGE1",
            Decision::AbstainStage2 => "ABSTAIN_STAGE2",
        }
    }
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Soft logistic step: `g_k(z) = sigmoid(k z)`.
pub fn soft_step(k: f64, z: f64) -> f64 {
    sigmoid(k * z)
}

/// Hard cascade routing. Abstention (`>=` on uncertainty) takes priority
/// over the confidence test; confidence ties (`<=`) route to deferral.
/// `xi_large` is only needed when the query is actually deferred.
pub fn decide(
    phi_base: f64,
    xi_base: f64,
    xi_large: Option<f64>,
    theta: &Thresholds,
) -> Result<Decision, CascadeError> {
    if xi_base >= theta.xi_base {
        return Ok(Decision::AbstainStage1);
    }
    if phi_base > theta.phi_base {
        return Ok(Decision::AnswerBase);
    }
    let xi_large = xi_large.ok_or(CascadeError::MissingLargeUncertainty)?;
    if xi_large >= theta.xi_large {
        Ok(Decision::AbstainStage2)
    } else {
        Ok(Decision::AnswerLarge)
    }
}

/// Soft relaxation of [`decide`]: every Boolean test becomes a logistic
/// step of steepness `k`.
pub fn soft_masks(
    phi_base: f64,
    xi_base: f64,
    xi_large: f64,
    theta: &Thresholds,
    k: f64,
) -> SoftMasks {
    let p_abst1 = soft_step(k, xi_base - theta.xi_base);
    let keep = 1.0 - p_abst1;
    let m_pred1 = keep * soft_step(k, phi_base - theta.phi_base);
    let m_defer1 = keep * soft_step(k, theta.phi_base - phi_base);
    let g_abst2 = soft_step(k, xi_large - theta.xi_large);
    SoftMasks {
        p_abst1,
        m_pred1,
        m_defer1,
        p_abst2: m_defer1 * g_abst2,
        m_pred2: m_defer1 * (1.0 - g_abst2),
    }
}

/// Differentiable system risk for one query:
/// error mass not covered by a weighted prediction, plus cost and
/// abstention penalties.
pub fn soft_risk(
    masks: &SoftMasks,
    phi_base: f64,
    phi_large: f64,
    costs: &StageCosts,
    lambda_c: f64,
    lambda_a: f64,
) -> f64 {
    let expected_correct = masks.m_pred1 * phi_base + masks.m_pred2 * phi_large;
    let expected_cost = costs.c1 + masks.m_defer1 * costs.c2;
    1.0 - expected_correct + lambda_c * expected_cost + lambda_a * masks.p_abstain()
}

/// Soft risk of running a single model alone with one abstention threshold.
pub fn single_model_soft_risk(
    phi: f64,
    xi: f64,
    xi_thresh: f64,
    cost: f64,
    lambda_c: f64,
    lambda_a: f64,
    k: f64,
) -> f64 {
    let m_abst = soft_step(k, xi - xi_thresh);
    1.0 - (1.0 - m_abst) * phi + lambda_c * cost + lambda_a * m_abst
}
