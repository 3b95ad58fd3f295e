//! Bayesian calibration of raw verification scores.
//!
//! Raw scores are pushed through a log transform that spreads out clusters
//! of overconfident probabilities, then fed to a two-parameter Bayesian
//! logistic regression (a Bayesian form of Platt scaling) with a Normal
//! prior. The posterior is approximated with a Laplace fit: Newton MAP plus
//! inverse-Hessian covariance. Prediction draws weights from the Gaussian
//! posterior; the mean of the posterior predictive gives the calibrated
//! confidence `phi` and its standard deviation the uncertainty `xi`.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{is_positive, mean, population_std, sigmoid};
use crate::trace::{Method, Tier};

/// Raw scores are clamped to [EPS, 1 - EPS] before the transform, which
/// diverges at the endpoints.
pub const RAW_CLAMP_EPS: f64 = 1e-6;

/// Newton iteration cap for the MAP fit.
const MAX_NEWTON_ITERS: usize = 100;

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("transform input {0} outside the open interval (0, 1)")]
    OutOfDomain(f64),
    #[error("scores ({scores}) and labels ({labels}) differ in length")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("calibration needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("prior variance must be positive, got {0}")]
    InvalidPriorVariance(f64),
    #[error("MAP optimizer did not converge within {0} iterations")]
    NonConvergence(usize),
    #[error("posterior prediction needs at least 2 draws, got {0}")]
    TooFewDraws(usize),
    #[error("covariance is not symmetric positive-definite")]
    BadCovariance,
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("persistence format error at line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Nonlinear transform applied to a probability before calibration:
/// `log(1 / (1 - p))` for `p >= 0.5`, else `log 2 - log(1 / p)`.
///
/// The branch condition is `>=`, so the upper branch applies at exactly 0.5
/// and the function jumps from 0 (limit from below) to `log 2` there.
pub fn transform(p: f64) -> Result<f64, CalibrateError> {
    let in_domain = p > 0.0 && p < 1.0; // NaN fails both
    if !in_domain {
        return Err(CalibrateError::OutOfDomain(p));
    }
    if p >= 0.5 {
        Ok((1.0 / (1.0 - p)).ln())
    } else {
        Ok(2.0f64.ln() - (1.0 / p).ln())
    }
}

/// Clamp a raw score away from the endpoints and transform it. Total on
/// [0, 1]; this is the feature the calibrator consumes.
pub fn feature_of(raw: f64) -> f64 {
    let clamped = raw.clamp(RAW_CLAMP_EPS, 1.0 - RAW_CLAMP_EPS);
    transform(clamped).expect("clamped input is inside (0, 1)")
}

/// Gaussian posterior over (slope, intercept) from the Laplace fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorPosterior {
    /// MAP estimate: (slope, intercept).
    pub mean: [f64; 2],
    /// Inverse Hessian of the negative log posterior at the MAP.
    pub covariance: [[f64; 2]; 2],
    pub n_fit: usize,
    pub prior_variance: f64,
    /// Set when all calibration labels agree; the fit is then dominated by
    /// the prior but prediction stays defined.
    pub degenerate_labels: bool,
}

impl CalibratorPosterior {
    /// Check the symmetric positive-definite invariant.
    pub fn validate(&self) -> Result<(), CalibrateError> {
        let [[a, b], [c, d]] = self.covariance;
        let symmetric = (b - c).abs() <= 1e-9 * (1.0 + b.abs().max(c.abs()));
        // 2x2 SPD: positive diagonal and positive determinant
        let spd = is_positive(a) && is_positive(d) && is_positive(a * d - b * c);
        if !symmetric || !spd {
            return Err(CalibrateError::BadCovariance);
        }
        Ok(())
    }

    fn cholesky(&self) -> Result<[f64; 3], CalibrateError> {
        self.validate()?;
        let [[a, b], [_, d]] = self.covariance;
        let l11 = a.sqrt();
        let l21 = b / l11;
        let l22 = (d - l21 * l21).max(0.0).sqrt();
        Ok([l11, l21, l22])
    }
}

/// Calibrated confidence and model-based uncertainty for one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceEstimate {
    /// Posterior-predictive mean correctness probability.
    pub phi: f64,
    /// Posterior-predictive standard deviation; at most 0.5 for a
    /// [0, 1]-valued variable.
    pub xi: f64,
}

fn log1p_exp(z: f64) -> f64 {
    if z > 35.0 {
        z
    } else if z < -35.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// Negative log posterior (up to a constant).
fn objective(features: &[f64], labels: &[bool], w: f64, b: f64, prior_var: f64) -> f64 {
    let mut value = (w * w + b * b) / (2.0 * prior_var);
    for (&f, &y) in features.iter().zip(labels) {
        let z = w * f + b;
        value += log1p_exp(z) - if y { z } else { 0.0 };
    }
    value
}

/// Fit the Bayesian logistic calibrator on raw scores and correctness
/// labels. The posterior is a Laplace approximation around the Newton MAP;
/// the fit itself is deterministic, `seed` is reserved for sampling-based
/// posterior approximations behind the same signature.
pub fn fit(
    raw_scores: &[f64],
    labels: &[bool],
    prior_variance: f64,
    seed: u64,
) -> Result<CalibratorPosterior, CalibrateError> {
    let _ = seed;
    if raw_scores.len() != labels.len() {
        return Err(CalibrateError::LengthMismatch {
            scores: raw_scores.len(),
            labels: labels.len(),
        });
    }
    if raw_scores.len() < 2 {
        return Err(CalibrateError::TooFewSamples(raw_scores.len()));
    }
    if !is_positive(prior_variance) {
        return Err(CalibrateError::InvalidPriorVariance(prior_variance));
    }
    let features: Vec<f64> = raw_scores.iter().map(|&r| feature_of(r)).collect();
    let degenerate_labels = labels.iter().all(|&y| y) || labels.iter().all(|&y| !y);

    let mut w = 0.0;
    let mut b = 0.0;
    let mut converged = false;
    for _ in 0..MAX_NEWTON_ITERS {
        // gradient and Hessian of the negative log posterior
        let mut g = [w / prior_variance, b / prior_variance];
        let mut h = [[1.0 / prior_variance, 0.0], [0.0, 1.0 / prior_variance]];
        for (&f, &y) in features.iter().zip(labels) {
            let p = sigmoid(w * f + b);
            let r = p - if y { 1.0 } else { 0.0 };
            g[0] += r * f;
            g[1] += r;
            let s = p * (1.0 - p);
            h[0][0] += s * f * f;
            h[0][1] += s * f;
            h[1][1] += s;
        }
        h[1][0] = h[0][1];
        let grad_norm = g[0].abs().max(g[1].abs());
        if grad_norm < 1e-8 {
            converged = true;
            break;
        }
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let step = [
            (h[1][1] * g[0] - h[0][1] * g[1]) / det,
            (h[0][0] * g[1] - h[1][0] * g[0]) / det,
        ];
        // Backtracking keeps Newton inside the basin for extreme features.
        // The slack admits full steps once the objective is flat at f64
        // resolution, where quadratic convergence finishes the job.
        let current = objective(&features, labels, w, b, prior_variance);
        let slack = 1e-12 * (1.0 + current.abs());
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let (wn, bn) = (w - scale * step[0], b - scale * step[1]);
            if objective(&features, labels, wn, bn, prior_variance) <= current + slack {
                w = wn;
                b = bn;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            converged = true; // objective cannot be improved further
            break;
        }
    }
    if !converged {
        return Err(CalibrateError::NonConvergence(MAX_NEWTON_ITERS));
    }

    // covariance = inverse Hessian at the MAP
    let mut h = [[1.0 / prior_variance, 0.0], [0.0, 1.0 / prior_variance]];
    for &f in &features {
        let p = sigmoid(w * f + b);
        let s = p * (1.0 - p);
        h[0][0] += s * f * f;
        h[0][1] += s * f;
        h[1][1] += s;
    }
    h[1][0] = h[0][1];
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    let covariance = [
        [h[1][1] / det, -h[0][1] / det],
        [-h[1][0] / det, h[0][0] / det],
    ];

    Ok(CalibratorPosterior {
        mean: [w, b],
        covariance,
        n_fit: raw_scores.len(),
        prior_variance,
        degenerate_labels,
    })
}

/// Posterior-predictive estimate for one raw score: `phi` is the mean of
/// `sigmoid(w f + b)` over `n_draws` posterior weight samples, `xi` their
/// (population) standard deviation. Deterministic under `seed`.
pub fn predict(
    posterior: &CalibratorPosterior,
    raw: f64,
    n_draws: usize,
    seed: u64,
) -> Result<ConfidenceEstimate, CalibrateError> {
    if n_draws < 2 {
        return Err(CalibrateError::TooFewDraws(n_draws));
    }
    let [l11, l21, l22] = posterior.cholesky()?;
    let f = feature_of(raw);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut ps = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let z1: f64 = normal.sample(&mut rng);
        let z2: f64 = normal.sample(&mut rng);
        let w = posterior.mean[0] + l11 * z1;
        let b = posterior.mean[1] + l21 * z1 + l22 * z2;
        ps.push(sigmoid(w * f + b));
    }
    Ok(ConfidenceEstimate {
        phi: mean(&ps),
        xi: population_std(&ps),
    })
}

/// Expected calibration error over equal-width confidence bins.
pub fn expected_calibration_error(probs: &[f64], labels: &[bool], n_bins: usize) -> f64 {
    assert_eq!(probs.len(), labels.len());
    assert!(n_bins > 0);
    let n = probs.len();
    if n == 0 {
        return 0.0;
    }
    let mut count = vec![0usize; n_bins];
    let mut conf = vec![0.0f64; n_bins];
    let mut acc = vec![0.0f64; n_bins];
    for (&p, &y) in probs.iter().zip(labels) {
        let bin = ((p * n_bins as f64) as usize).min(n_bins - 1);
        count[bin] += 1;
        conf[bin] += p;
        acc[bin] += if y { 1.0 } else { 0.0 };
    }
    let mut ece = 0.0;
    for i in 0..n_bins {
        if count[i] > 0 {
            let k = count[i] as f64;
            ece += k / n as f64 * (acc[i] / k - conf[i] / k).abs();
        }
    }
    ece
}

/// The calibrators a cascade experiment needs: one per verification target
/// tier, fitted on that tier's own correctness labels. The two never share
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TierCalibrators {
    pub method: Method,
    pub verifier: Tier,
    pub base: CalibratorPosterior,
    pub large: CalibratorPosterior,
}

impl TierCalibrators {
    pub fn for_tier(&self, tier: Tier) -> &CalibratorPosterior {
        match tier {
            Tier::Base => &self.base,
            Tier::Large => &self.large,
        }
    }
}

/// One persisted posterior, keyed by (method, verifier, tier).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersistedPosterior {
    pub method: Method,
    pub verifier: Tier,
    /// Which tier's answers the calibrator scores.
    pub tier: Tier,
    pub mean: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    pub n_fit: usize,
    pub prior_variance: f64,
    pub degenerate_labels: bool,
}

impl PersistedPosterior {
    pub fn new(method: Method, verifier: Tier, tier: Tier, p: &CalibratorPosterior) -> Self {
        PersistedPosterior {
            method,
            verifier,
            tier,
            mean: p.mean,
            covariance: p.covariance,
            n_fit: p.n_fit,
            prior_variance: p.prior_variance,
            degenerate_labels: p.degenerate_labels,
        }
    }

    pub fn posterior(&self) -> CalibratorPosterior {
        CalibratorPosterior {
            mean: self.mean,
            covariance: self.covariance,
            n_fit: self.n_fit,
            prior_variance: self.prior_variance,
            degenerate_labels: self.degenerate_labels,
        }
    }
}

/// Write posteriors to a line-delimited text file.
pub fn save_posteriors(
    entries: &[PersistedPosterior],
    path: impl AsRef<Path>,
) -> Result<(), CalibrateError> {
    let path = path.as_ref();
    let io_err = |source| CalibrateError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    for entry in entries {
        let line = serde_json::to_string(entry).expect("posterior serializes");
        writeln!(file, "{line}").map_err(io_err)?;
    }
    Ok(())
}

/// Load posteriors previously written by [`save_posteriors`], validating
/// the covariance invariant of every entry.
pub fn load_posteriors(path: impl AsRef<Path>) -> Result<Vec<PersistedPosterior>, CalibrateError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CalibrateError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: PersistedPosterior =
            serde_json::from_str(line).map_err(|e| CalibrateError::Format {
                line: idx + 1,
                message: e.to_string(),
            })?;
        entry.posterior().validate()?;
        out.push(entry);
    }
    Ok(out)
}
