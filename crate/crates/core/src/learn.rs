//! Online threshold optimization.
//!
//! Thresholds live in (0, 1) through a sigmoid reparameterization; the
//! unconstrained preimages are the optimization variables. Every query is
//! scored with the soft system risk at the current thresholds. When the
//! cascade abstains, the query (with its expert label) joins a replay
//! buffer and one Adam step runs on the analytic gradient of the mean
//! buffered risk. Single-model baselines learn their lone abstention
//! threshold with the same protocol, and a grid-search baseline replaces
//! the gradient step with an argmin sweep over a cubic threshold grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{self, CalibrateError, ConfidenceEstimate, TierCalibrators};
use crate::cascade::{
    decide, single_model_soft_risk, soft_masks, soft_risk, soft_step, CascadeError, Decision,
    RawThresholds, SoftMasks, Thresholds,
};
use crate::cost::{stage_costs, CostError, StageCosts};
use crate::stats::{derive_seed, is_non_negative, is_positive, logit, sigmoid};
use crate::trace::{Method, Tier, TraceSet};
use crate::verify::{score, VerifyError};

// Sub-stream tags for deterministic seed derivation.
const STREAM_PREDICT: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_CORRUPT: u64 = 3;
const STREAM_FIT: u64 = 4;

/// Sigmoid saturates to exactly 0/1 in floating point; keep mapped
/// thresholds strictly inside the open interval.
const THRESHOLD_CLAMP: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("gradient requested on an empty batch")]
    EmptyBatch,
    #[error("grid search requires a non-empty grid")]
    EmptyGrid,
    #[error("grid value {0} outside the open interval (0, 1)")]
    GridValueOutOfRange(f64),
    #[error("calibration and stream sets overlap on record id {id:?}")]
    DisjointnessViolation { id: String },
    #[error("invalid online config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Calibrate(#[from] CalibrateError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
}

/// Map unconstrained raw thresholds into (0, 1) component-wise.
pub fn map_thresholds(raw: &RawThresholds) -> Thresholds {
    let squash = |r: f64| sigmoid(r).clamp(THRESHOLD_CLAMP, 1.0 - THRESHOLD_CLAMP);
    Thresholds {
        phi_base: squash(raw.phi_base_raw),
        xi_base: squash(raw.xi_base_raw),
        xi_large: squash(raw.xi_large_raw),
    }
}

/// Inverse of [`map_thresholds`].
pub fn thresholds_to_raw(theta: &Thresholds) -> RawThresholds {
    RawThresholds {
        phi_base_raw: logit(theta.phi_base),
        xi_base_raw: logit(theta.xi_base),
        xi_large_raw: logit(theta.xi_large),
    }
}

/// One buffered query: the calibrated estimates, stage costs, and the
/// expert-resolved correctness labels revealed on abstention. Training risk
/// weights masks by the calibrated confidences; the realized labels are
/// retained for analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub phi_base: f64,
    pub xi_base: f64,
    pub phi_large: f64,
    pub xi_large: f64,
    pub c1: f64,
    pub c2: f64,
    pub base_correct: bool,
    pub large_correct: bool,
}

/// Unbounded store of abstained queries; grows by one per abstention.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    entries: Vec<ReplayEntry>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: ReplayEntry) {
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    /// Uniform sample of `min(n, len)` entries without replacement.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<ReplayEntry> {
        let take = n.min(self.entries.len());
        rand::seq::index::sample(rng, self.entries.len(), take)
            .iter()
            .map(|i| self.entries[i])
            .collect()
    }
}

/// Weights of the soft risk objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskParams {
    pub k: f64,
    pub lambda_c: f64,
    pub lambda_a: f64,
}

fn entry_costs(entry: &ReplayEntry) -> StageCosts {
    StageCosts {
        c1: entry.c1,
        c2: entry.c2,
    }
}

fn entry_masks(entry: &ReplayEntry, theta: &Thresholds, k: f64) -> SoftMasks {
    soft_masks(entry.phi_base, entry.xi_base, entry.xi_large, theta, k)
}

/// Cascade soft risk of one buffered entry at the given thresholds.
pub fn entry_risk(entry: &ReplayEntry, theta: &Thresholds, params: &RiskParams) -> f64 {
    soft_risk(
        &entry_masks(entry, theta, params.k),
        entry.phi_base,
        entry.phi_large,
        &entry_costs(entry),
        params.lambda_c,
        params.lambda_a,
    )
}

/// Mean cascade soft risk over a batch at thresholds `sigmoid(raw)`.
pub fn batch_risk(batch: &[ReplayEntry], raw: &RawThresholds, params: &RiskParams) -> f64 {
    let theta = map_thresholds(raw);
    batch
        .iter()
        .map(|e| entry_risk(e, &theta, params))
        .sum::<f64>()
        / batch.len() as f64
}

/// Analytic gradient of the mean cascade soft risk with respect to the raw
/// thresholds, chained through the sigmoid reparameterization and the
/// logistic masks.
pub fn risk_gradient(
    batch: &[ReplayEntry],
    raw: &RawThresholds,
    params: &RiskParams,
) -> Result<[f64; 3], LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let theta = map_thresholds(raw);
    let k = params.k;
    let mut grad = [0.0f64; 3];
    for entry in batch {
        let abst1 = soft_step(k, entry.xi_base - theta.xi_base);
        let keep = 1.0 - abst1;
        let pred_gate = soft_step(k, entry.phi_base - theta.phi_base);
        let defer_gate = soft_step(k, theta.phi_base - entry.phi_base);
        let m_defer1 = keep * defer_gate;
        let abst2 = soft_step(k, entry.xi_large - theta.xi_large);

        // coefficient of m_defer1 in the risk
        let defer_coeff =
            -(1.0 - abst2) * entry.phi_large + params.lambda_c * entry.c2 + params.lambda_a * abst2;

        // d/d phi_base
        let d_pred = -k * pred_gate * (1.0 - pred_gate);
        let d_defer = k * defer_gate * (1.0 - defer_gate);
        let d_phi = -entry.phi_base * keep * d_pred + defer_coeff * keep * d_defer;

        // d/d xi_base (through abst1)
        let d_abst1 = -k * abst1 * (1.0 - abst1);
        let d_xi_base =
            d_abst1 * (-(-entry.phi_base * pred_gate + defer_coeff * defer_gate) + params.lambda_a);

        // d/d xi_large (through abst2)
        let d_abst2 = -k * abst2 * (1.0 - abst2);
        let d_xi_large = m_defer1 * (entry.phi_large + params.lambda_a) * d_abst2;

        grad[0] += d_phi;
        grad[1] += d_xi_base;
        grad[2] += d_xi_large;
    }
    let n = batch.len() as f64;
    // chain through the sigmoid reparameterization
    let jac = [
        theta.phi_base * (1.0 - theta.phi_base),
        theta.xi_base * (1.0 - theta.xi_base),
        theta.xi_large * (1.0 - theta.xi_large),
    ];
    for i in 0..3 {
        grad[i] = grad[i] / n * jac[i];
    }
    Ok(grad)
}

/// Gradient of the mean single-model soft risk with respect to the raw
/// abstention threshold.
pub fn single_risk_gradient(
    batch: &[ReplayEntry],
    raw_xi: f64,
    policy: Policy,
    params: &RiskParams,
) -> Result<f64, LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let xi_thresh = sigmoid(raw_xi).clamp(THRESHOLD_CLAMP, 1.0 - THRESHOLD_CLAMP);
    let mut total = 0.0;
    for entry in batch {
        let (phi, xi) = match policy {
            Policy::BaseOnly => (entry.phi_base, entry.xi_base),
            Policy::LargeOnly => (entry.phi_large, entry.xi_large),
            Policy::Cascade => {
                return Err(LearnError::InvalidConfig(
                    "single_risk_gradient expects a single-model policy".to_string(),
                ))
            }
        };
        let m = soft_step(params.k, xi - xi_thresh);
        total += -params.k * m * (1.0 - m) * (phi + params.lambda_a);
    }
    Ok(total / batch.len() as f64 * xi_thresh * (1.0 - xi_thresh))
}

/// Adam optimizer state with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        AdamState {
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One Adam update in place. `params` and `grad` must match the state
    /// dimension.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.first_moment.len());
        assert_eq!(grad.len(), self.first_moment.len());
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for i in 0..params.len() {
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * grad[i];
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Which system runs the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Policy {
    Cascade,
    BaseOnly,
    LargeOnly,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Cascade => "CASCADE",
            Policy::BaseOnly => "BASE_ONLY",
            Policy::LargeOnly => "LARGE_ONLY",
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Configuration of one online run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub theta0: Thresholds,
    /// Initial abstention threshold of the single-model baselines.
    pub xi_single: f64,
    pub k: f64,
    pub lambda_c: f64,
    pub lambda_a: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_draws: usize,
    pub prior_variance: f64,
    pub method: Method,
    pub verifier: Tier,
    /// Fraction of calibration labels flipped before fitting.
    pub corruption_fraction: f64,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            theta0: Thresholds {
                phi_base: 0.5,
                xi_base: 0.05,
                xi_large: 0.05,
            },
            xi_single: 0.05,
            k: 50.0,
            lambda_c: 1e-5,
            lambda_a: 0.1,
            batch_size: 10,
            learning_rate: 0.05,
            n_draws: 1000,
            prior_variance: 1.0,
            method: Method::Stp,
            verifier: Tier::Large,
            corruption_fraction: 0.0,
            seed: 0,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(LearnError::InvalidConfig(format!(
                    "{name} = {v} outside (0, 1)"
                )))
            }
        };
        open_unit("theta0.phi_base", self.theta0.phi_base)?;
        open_unit("theta0.xi_base", self.theta0.xi_base)?;
        open_unit("theta0.xi_large", self.theta0.xi_large)?;
        open_unit("xi_single", self.xi_single)?;
        if !is_positive(self.k) {
            return Err(LearnError::InvalidConfig("k must be positive".to_string()));
        }
        if !is_non_negative(self.lambda_c) || !is_non_negative(self.lambda_a) {
            return Err(LearnError::InvalidConfig(
                "lambda_c and lambda_a must be non-negative".to_string(),
            ));
        }
        if self.batch_size == 0 {
            return Err(LearnError::InvalidConfig(
                "batch_size must be positive".to_string(),
            ));
        }
        if !is_positive(self.learning_rate) {
            return Err(LearnError::InvalidConfig(
                "learning_rate must be positive".to_string(),
            ));
        }
        if self.n_draws < 2 {
            return Err(LearnError::InvalidConfig(
                "n_draws must be at least 2".to_string(),
            ));
        }
        if !is_positive(self.prior_variance) {
            return Err(LearnError::InvalidConfig(
                "prior_variance must be positive".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.corruption_fraction) {
            return Err(LearnError::InvalidConfig(
                "corruption_fraction must lie in [0, 1]".to_string(),
            ));
        }
        Ok(())
    }

    pub fn risk_params(&self) -> RiskParams {
        RiskParams {
            k: self.k,
            lambda_c: self.lambda_c,
            lambda_a: self.lambda_a,
        }
    }
}

/// Per-query soft risk, its running sum, the threshold trajectory and the
/// hard decisions of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSeries {
    pub per_query_risk: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub theta_trajectory: Vec<Thresholds>,
    pub decisions: Vec<Decision>,
}

impl RegretSeries {
    fn with_capacity(n: usize) -> Self {
        RegretSeries {
            per_query_risk: Vec::with_capacity(n),
            cumulative: Vec::with_capacity(n),
            theta_trajectory: Vec::with_capacity(n),
            decisions: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, risk: f64, theta: Thresholds, decision: Decision) {
        let prev = self.cumulative.last().copied().unwrap_or(0.0);
        self.per_query_risk.push(risk);
        self.cumulative.push(prev + risk);
        self.theta_trajectory.push(theta);
        self.decisions.push(decision);
    }

    pub fn len(&self) -> usize {
        self.per_query_risk.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_query_risk.is_empty()
    }

    /// Final cumulative regret (0 for an empty run).
    pub fn final_cumulative(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn abstention_count(&self) -> usize {
        self.decisions.iter().filter(|d| d.is_abstention()).count()
    }

    /// Tabular serialization: one row per query.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,decision,risk,cumulative,phi_base,xi_base,xi_large\n");
        for i in 0..self.len() {
            let theta = &self.theta_trajectory[i];
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                i,
                self.decisions[i],
                self.per_query_risk[i],
                self.cumulative[i],
                theta.phi_base,
                theta.xi_base,
                theta.xi_large
            ));
        }
        out
    }
}

/// Which calibration labels to flip: `round(fraction * n)` indices chosen
/// without replacement.
pub fn corruption_flips(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let count = ((fraction * n as f64).round() as usize).min(n);
    let mut flips = vec![false; n];
    if count > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in rand::seq::index::sample(&mut rng, n, count) {
            flips[i] = true;
        }
    }
    flips
}

/// Fit the per-tier calibrators on a calibration set, optionally flipping a
/// fraction of the expert labels (the imperfect-expert protocol). A flipped
/// record corrupts both tiers' labels.
pub fn fit_cascade_calibrators(
    calib: &TraceSet,
    method: Method,
    verifier: Tier,
    prior_variance: f64,
    corruption_fraction: f64,
    seed: u64,
) -> Result<TierCalibrators, LearnError> {
    let flips = corruption_flips(
        calib.records.len(),
        corruption_fraction,
        derive_seed(seed, STREAM_CORRUPT, 0),
    );
    let fit_tier = |tier: Tier| -> Result<_, LearnError> {
        let mut scores = Vec::with_capacity(calib.records.len());
        let mut labels = Vec::with_capacity(calib.records.len());
        for (record, &flip) in calib.records.iter().zip(&flips) {
            let evidence = record.evidence_for(method, verifier, tier).ok_or_else(|| {
                CostError::MissingEvidence {
                    id: record.id.clone(),
                    method,
                    verifier,
                    target: tier,
                }
            })?;
            scores.push(score(evidence)?.value);
            labels.push(record.generation(tier).correct != flip);
        }
        Ok(calibrate::fit(
            &scores,
            &labels,
            prior_variance,
            derive_seed(seed, STREAM_FIT, tier as u64),
        )?)
    };
    Ok(TierCalibrators {
        method,
        verifier,
        base: fit_tier(Tier::Base)?,
        large: fit_tier(Tier::Large)?,
    })
}

/// Calibrated estimates for both tiers of one stream record. The predict
/// seed is derived from the run seed and the record's stream position, so
/// every policy sees the same estimates.
pub fn record_estimates(
    record: &crate::trace::TraceRecord,
    calibrators: &TierCalibrators,
    n_draws: usize,
    run_seed: u64,
    index: u64,
) -> Result<(ConfidenceEstimate, ConfidenceEstimate), LearnError> {
    let estimate = |tier: Tier| -> Result<ConfidenceEstimate, LearnError> {
        let evidence = record
            .evidence_for(calibrators.method, calibrators.verifier, tier)
            .ok_or_else(|| CostError::MissingEvidence {
                id: record.id.clone(),
                method: calibrators.method,
                verifier: calibrators.verifier,
                target: tier,
            })?;
        let raw = score(evidence)?.value;
        Ok(calibrate::predict(
            calibrators.for_tier(tier),
            raw,
            n_draws,
            derive_seed(run_seed, STREAM_PREDICT, 2 * index + tier as u64),
        )?)
    };
    Ok((estimate(Tier::Base)?, estimate(Tier::Large)?))
}

fn check_disjoint(calib: &TraceSet, stream: &TraceSet) -> Result<(), LearnError> {
    let calib_ids: std::collections::HashSet<&str> =
        calib.records.iter().map(|r| r.id.as_str()).collect();
    for record in &stream.records {
        if calib_ids.contains(record.id.as_str()) {
            return Err(LearnError::DisjointnessViolation {
                id: record.id.clone(),
            });
        }
    }
    Ok(())
}

enum UpdateRule {
    Adam,
    Grid(Vec<f64>),
}

struct LoopOutcome {
    series: RegretSeries,
    final_thresholds: Thresholds,
}

/// Stream a trace set through one policy with abstention-driven updates.
fn run_stream(
    calib: &TraceSet,
    stream: &TraceSet,
    policy: Policy,
    config: &OnlineConfig,
    update: UpdateRule,
) -> Result<LoopOutcome, LearnError> {
    config.validate()?;
    check_disjoint(calib, stream)?;
    let params = config.risk_params();
    let calibrators = fit_cascade_calibrators(
        calib,
        config.method,
        config.verifier,
        config.prior_variance,
        config.corruption_fraction,
        config.seed,
    )?;

    // optimization variables: three raw thresholds for the cascade, one raw
    // abstention threshold for a single model
    let mut raw_cascade = thresholds_to_raw(&config.theta0);
    let mut raw_single = [logit(config.xi_single)];
    let dim = match policy {
        Policy::Cascade => 3,
        _ => 1,
    };
    let mut adam = AdamState::new(dim, config.learning_rate);
    let mut buffer = ReplayBuffer::new();
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_BATCH, 0));
    let mut series = RegretSeries::with_capacity(stream.records.len());

    for (index, record) in stream.records.iter().enumerate() {
        let costs = stage_costs(
            record,
            &stream.base_model,
            &stream.large_model,
            config.method,
            config.verifier,
            stream.rho,
        )?;
        let (base_est, large_est) = record_estimates(
            record,
            &calibrators,
            config.n_draws,
            config.seed,
            index as u64,
        )?;

        // thresholds in effect for this query (pre-update snapshot)
        let theta = match policy {
            Policy::Cascade => map_thresholds(&raw_cascade),
            Policy::BaseOnly => Thresholds {
                xi_base: sigmoid(raw_single[0]).clamp(THRESHOLD_CLAMP, 1.0 - THRESHOLD_CLAMP),
                ..config.theta0
            },
            Policy::LargeOnly => Thresholds {
                xi_large: sigmoid(raw_single[0]).clamp(THRESHOLD_CLAMP, 1.0 - THRESHOLD_CLAMP),
                ..config.theta0
            },
        };

        let (risk, decision) = match policy {
            Policy::Cascade => {
                let masks = soft_masks(base_est.phi, base_est.xi, large_est.xi, &theta, params.k);
                let risk = soft_risk(
                    &masks,
                    base_est.phi,
                    large_est.phi,
                    &costs,
                    params.lambda_c,
                    params.lambda_a,
                );
                let decision = decide(base_est.phi, base_est.xi, Some(large_est.xi), &theta)?;
                (risk, decision)
            }
            Policy::BaseOnly => {
                let risk = single_model_soft_risk(
                    base_est.phi,
                    base_est.xi,
                    theta.xi_base,
                    costs.c1,
                    params.lambda_c,
                    params.lambda_a,
                    params.k,
                );
                let decision = if base_est.xi >= theta.xi_base {
                    Decision::AbstainStage1
                } else {
                    Decision::AnswerBase
                };
                (risk, decision)
            }
            Policy::LargeOnly => {
                let risk = single_model_soft_risk(
                    large_est.phi,
                    large_est.xi,
                    theta.xi_large,
                    costs.c2,
                    params.lambda_c,
                    params.lambda_a,
                    params.k,
                );
                let decision = if large_est.xi >= theta.xi_large {
                    Decision::AbstainStage2
                } else {
                    Decision::AnswerLarge
                };
                (risk, decision)
            }
        };

        series.push(risk, theta, decision);

        if decision.is_abstention() {
            buffer.push(ReplayEntry {
                phi_base: base_est.phi,
                xi_base: base_est.xi,
                phi_large: large_est.phi,
                xi_large: large_est.xi,
                c1: costs.c1,
                c2: costs.c2,
                base_correct: record.base.correct,
                large_correct: record.large.correct,
            });
            debug_assert_eq!(buffer.len(), series.abstention_count());
            match &update {
                UpdateRule::Adam => {
                    let batch = buffer.sample(config.batch_size, &mut batch_rng);
                    match policy {
                        Policy::Cascade => {
                            let grad = risk_gradient(&batch, &raw_cascade, &params)?;
                            let mut values = raw_cascade.as_array();
                            adam.step(&mut values, &grad);
                            raw_cascade = RawThresholds::from_array(values);
                        }
                        _ => {
                            let grad =
                                single_risk_gradient(&batch, raw_single[0], policy, &params)?;
                            adam.step(&mut raw_single, &[grad]);
                        }
                    }
                }
                UpdateRule::Grid(grid) => {
                    let best = grid_argmin(buffer.entries(), grid, &params)?;
                    raw_cascade = thresholds_to_raw(&best);
                }
            }
        }
    }

    let final_thresholds = match policy {
        Policy::Cascade => map_thresholds(&raw_cascade),
        Policy::BaseOnly => Thresholds {
            xi_base: sigmoid(raw_single[0]).clamp(THRESHOLD_CLAMP, 1.0 - THRESHOLD_CLAMP),
            ..config.theta0
        },
        Policy::LargeOnly => Thresholds {
            xi_large: sigmoid(raw_single[0]).clamp(THRESHOLD_CLAMP, 1.0 - THRESHOLD_CLAMP),
            ..config.theta0
        },
    };
    Ok(LoopOutcome {
        series,
        final_thresholds,
    })
}

/// Run one policy over a stream with gradient (Adam) threshold updates on
/// every abstention. Fully deterministic under the config seed.
pub fn online_run(
    calib: &TraceSet,
    stream: &TraceSet,
    policy: Policy,
    config: &OnlineConfig,
) -> Result<RegretSeries, LearnError> {
    run_stream(calib, stream, policy, config, UpdateRule::Adam).map(|o| o.series)
}

/// Mean buffered risk argmin over the full cubic grid; ties break toward
/// the lexicographically smallest (phi_base, xi_base, xi_large).
/// The full cubic candidate set of a per-axis grid, in lexicographic
/// order of the sorted values. A 10-value grid yields exactly 1000 points.
pub fn grid_points(grid: &[f64]) -> Result<Vec<Thresholds>, LearnError> {
    if grid.is_empty() {
        return Err(LearnError::EmptyGrid);
    }
    for &v in grid {
        let inside = v > 0.0 && v < 1.0;
        if !inside {
            return Err(LearnError::GridValueOutOfRange(v));
        }
    }
    let mut values: Vec<f64> = grid.to_vec();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut points = Vec::with_capacity(values.len().pow(3));
    for &phi in &values {
        for &xi_b in &values {
            for &xi_l in &values {
                points.push(Thresholds {
                    phi_base: phi,
                    xi_base: xi_b,
                    xi_large: xi_l,
                });
            }
        }
    }
    Ok(points)
}

pub fn grid_argmin(
    entries: &[ReplayEntry],
    grid: &[f64],
    params: &RiskParams,
) -> Result<Thresholds, LearnError> {
    if entries.is_empty() && !grid.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let mut best: Option<(f64, Thresholds)> = None;
    for theta in grid_points(grid)? {
        let risk = entries
            .iter()
            .map(|e| entry_risk(e, &theta, params))
            .sum::<f64>()
            / entries.len() as f64;
        if best.as_ref().is_none_or(|(b, _)| risk < *b) {
            best = Some((risk, theta));
        }
    }
    Ok(best.expect("non-empty grid").1)
}

/// Grid-search baseline: identical streaming protocol to [`online_run`]
/// (cascade policy), but every abstention event re-selects the thresholds
/// by exhaustive search over the cubic grid instead of a gradient step.
pub fn grid_search(
    calib: &TraceSet,
    stream: &TraceSet,
    grid: &[f64],
    config: &OnlineConfig,
) -> Result<(Thresholds, RegretSeries), LearnError> {
    if grid.is_empty() {
        return Err(LearnError::EmptyGrid);
    }
    let outcome = run_stream(
        calib,
        stream,
        Policy::Cascade,
        config,
        UpdateRule::Grid(grid.to_vec()),
    )?;
    Ok((outcome.final_thresholds, outcome.series))
}
