//! Experiment configuration file (TOML). Every hyperparameter defaults to
//! the standard protocol values, so a config can be as small as a trace
//! path.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cascade_core::cascade::Thresholds;
use cascade_core::learn::OnlineConfig;
use cascade_core::metrics::DeferralMode;
use cascade_core::trace::{Method, SynthConfig, Tier, TraceSet};

/// Which deferral-probability direction(s) the cost-benefit command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfiguredMode {
    #[serde(rename = "PAPER_LITERAL")]
    PaperLiteral,
    #[serde(rename = "COMPLEMENT")]
    Complement,
    #[serde(rename = "BOTH")]
    Both,
}

impl ConfiguredMode {
    pub fn modes(self) -> Vec<DeferralMode> {
        match self {
            ConfiguredMode::PaperLiteral => vec![DeferralMode::PaperLiteral],
            ConfiguredMode::Complement => vec![DeferralMode::Complement],
            ConfiguredMode::Both => vec![DeferralMode::PaperLiteral, DeferralMode::Complement],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub trace_path: PathBuf,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "defaults::calib_n")]
    pub calib_n: usize,
    #[serde(default = "defaults::method")]
    pub method: Method,
    #[serde(default = "defaults::verifier")]
    pub verifier: Tier,
    /// Overrides the trace header's output/input cost ratio when set.
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default = "defaults::k")]
    pub k: f64,
    #[serde(default = "defaults::lambda_c")]
    pub lambda_c: f64,
    #[serde(default = "defaults::lambda_a")]
    pub lambda_a: f64,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::n_draws")]
    pub n_draws: usize,
    #[serde(default = "defaults::prior_variance")]
    pub prior_variance: f64,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "defaults::corruption_fractions")]
    pub corruption_fractions: Vec<f64>,
    #[serde(default = "defaults::deferral_mode")]
    pub deferral_mode: ConfiguredMode,
    /// Initial thresholds (phi_base, xi_base, xi_large).
    #[serde(default = "defaults::theta0")]
    pub theta0: [f64; 3],
    /// Initial abstention threshold of the single-model baselines.
    #[serde(default = "defaults::xi_single")]
    pub xi_single: f64,
    /// Per-axis values of the cubic grid-search baseline.
    #[serde(default = "defaults::grid")]
    pub grid: Vec<f64>,
    #[serde(default)]
    pub synth: SynthConfig,
}

mod defaults {
    use super::*;

    pub fn output_dir() -> PathBuf {
        PathBuf::from("out")
    }
    pub fn calib_n() -> usize {
        100
    }
    pub fn method() -> Method {
        Method::Stp
    }
    pub fn verifier() -> Tier {
        Tier::Large
    }
    pub fn k() -> f64 {
        50.0
    }
    pub fn lambda_c() -> f64 {
        1e-5
    }
    pub fn lambda_a() -> f64 {
        0.1
    }
    pub fn learning_rate() -> f64 {
        0.05
    }
    pub fn batch_size() -> usize {
        10
    }
    pub fn n_draws() -> usize {
        1000
    }
    pub fn prior_variance() -> f64 {
        1.0
    }
    pub fn seeds() -> Vec<u64> {
        (0..10).collect()
    }
    pub fn corruption_fractions() -> Vec<f64> {
        vec![0.0, 0.1, 0.2, 0.3, 0.4]
    }
    pub fn deferral_mode() -> ConfiguredMode {
        ConfiguredMode::Both
    }
    pub fn theta0() -> [f64; 3] {
        [0.5, 0.05, 0.05]
    }
    pub fn xi_single() -> f64 {
        0.05
    }
    pub fn grid() -> Vec<f64> {
        vec![0.5, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95]
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("config field `seeds` must be non-empty");
        }
        if self.calib_n == 0 {
            bail!("config field `calib_n` must be positive");
        }
        if let Some(rho) = self.rho {
            if !cascade_core::stats::is_positive(rho) {
                bail!("config field `rho` must be positive, got {rho}");
            }
        }
        for (i, f) in self.corruption_fractions.iter().enumerate() {
            if !(0.0..=1.0).contains(f) {
                bail!("config field `corruption_fractions[{i}]` = {f} outside [0, 1]");
            }
        }
        Thresholds::new(self.theta0[0], self.theta0[1], self.theta0[2])
            .map_err(|e| anyhow::anyhow!("config field `theta0`: {e}"))?;
        // remaining ranges are enforced by OnlineConfig::validate
        self.online_config(self.seeds[0], 0.0)
            .validate()
            .map_err(|e| anyhow::anyhow!("config: {e}"))?;
        Ok(())
    }

    pub fn online_config(&self, seed: u64, corruption_fraction: f64) -> OnlineConfig {
        OnlineConfig {
            theta0: Thresholds {
                phi_base: self.theta0[0],
                xi_base: self.theta0[1],
                xi_large: self.theta0[2],
            },
            xi_single: self.xi_single,
            k: self.k,
            lambda_c: self.lambda_c,
            lambda_a: self.lambda_a,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            n_draws: self.n_draws,
            prior_variance: self.prior_variance,
            method: self.method,
            verifier: self.verifier,
            corruption_fraction,
            seed,
        }
    }

    /// Load the trace file and apply the rho override, if any.
    pub fn load_traces(&self) -> Result<TraceSet> {
        let mut set = cascade_core::trace::load_traces(&self.trace_path)
            .with_context(|| format!("loading traces from {}", self.trace_path.display()))?;
        if let Some(rho) = self.rho {
            set.rho = rho;
        }
        Ok(set)
    }
}
