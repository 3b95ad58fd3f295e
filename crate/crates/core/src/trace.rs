//! Frozen experiment traces: schema, loading, splitting, synthesis.
//!
//! A trace file captures one dataset's complete interaction with both models
//! of a cascade — generated answers, correctness flags, token counts and raw
//! verification evidence — so every experiment downstream runs without model
//! access. The on-disk format is UTF-8 JSON lines: a header object first
//! (`"header": true`, carrying both model specs and the output/input cost
//! ratio), then one record object per line. Unknown keys are rejected.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{is_non_negative, is_positive};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace file not found: {0}")]
    MissingFile(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation at line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("calibration size {calib_n} must be smaller than the record count {available}")]
    CalibTooLarge { calib_n: usize, available: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Verification method used to produce raw evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Single self-verification pass emitting a scalar confidence.
    #[serde(rename = "SV")]
    Sv,
    /// Self-verification repeated under stochastic sampling, scores averaged.
    #[serde(rename = "SV_CONSISTENT")]
    SvConsistent,
    /// Surrogate token probability: next-token mass on YES vs NO.
    #[serde(rename = "STP")]
    Stp,
    /// Surrogate token probability over stochastic forward passes.
    #[serde(rename = "MC_STP")]
    McStp,
}

impl Method {
    /// SV-family methods carry scalar samples; STP-family methods carry
    /// (YES, NO) token-probability pairs.
    pub fn is_scalar_family(self) -> bool {
        matches!(self, Method::Sv | Method::SvConsistent)
    }

    /// The multi-sample variants require at least two passes.
    pub fn is_multi_sample(self) -> bool {
        matches!(self, Method::SvConsistent | Method::McStp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sv => "SV",
            Method::SvConsistent => "SV_CONSISTENT",
            Method::Stp => "STP",
            Method::McStp => "MC_STP",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which cascade tier a verifier or verification target refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    #[serde(rename = "BASE")]
    Base,
    #[serde(rename = "LARGE")]
    Large,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Base => "BASE",
            Tier::Large => "LARGE",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A model participating in the cascade. `size` is in billions of parameters
/// and drives the token cost model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub size: f64,
}

/// One model's answer to one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationRecord {
    /// Multiple-choice label, e.g. "B".
    pub answer: String,
    pub correct: bool,
    pub t_in: u64,
    pub t_out: u64,
}

/// Raw verification output for one (method, verifier, target) combination.
///
/// Exactly one of `scalar_samples` / `token_pairs` is populated, matching the
/// method family. Token counts are per verification pass; multi-sample
/// methods are charged once per pass at cost time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationEvidence {
    pub method: Method,
    /// Which model produced the verification.
    pub verifier: Tier,
    /// Whose answer is being judged.
    pub target: Tier,
    /// Scalar confidence values in [0, 1] (SV family).
    pub scalar_samples: Vec<f64>,
    /// (YES mass, NO mass) per pass; need not be normalized (STP family).
    pub token_pairs: Vec<(f64, f64)>,
    pub t_in_ver: u64,
    pub t_out_ver: u64,
}

impl VerificationEvidence {
    /// Number of verification passes recorded.
    pub fn n_samples(&self) -> usize {
        self.scalar_samples.len().max(self.token_pairs.len())
    }
}

/// One question's frozen interaction with both models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub id: String,
    /// Optional dataset/subject tag for group-by summaries.
    pub group: Option<String>,
    pub base: GenerationRecord,
    pub large: GenerationRecord,
    pub evidence: Vec<VerificationEvidence>,
}

impl TraceRecord {
    pub fn generation(&self, tier: Tier) -> &GenerationRecord {
        match tier {
            Tier::Base => &self.base,
            Tier::Large => &self.large,
        }
    }

    /// Look up evidence by its (method, verifier, target) key.
    pub fn evidence_for(
        &self,
        method: Method,
        verifier: Tier,
        target: Tier,
    ) -> Option<&VerificationEvidence> {
        self.evidence
            .iter()
            .find(|e| e.method == method && e.verifier == verifier && e.target == target)
    }
}

/// An ordered, immutable set of trace records plus the cascade header.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub base_model: ModelSpec,
    pub large_model: ModelSpec,
    /// Output/input token cost ratio.
    pub rho: f64,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    header: bool,
    base_model: ModelSpec,
    large_model: ModelSpec,
    rho: f64,
}

fn schema_err(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::SchemaViolation {
        line,
        message: message.into(),
    }
}

fn validate_header(line: usize, h: &HeaderLine) -> Result<(), TraceError> {
    if !h.header {
        return Err(schema_err(line, "field `header` must be true"));
    }
    if !is_positive(h.base_model.size) {
        return Err(schema_err(line, "field `base_model.size` must be positive"));
    }
    if !is_positive(h.large_model.size) {
        return Err(schema_err(
            line,
            "field `large_model.size` must be positive",
        ));
    }
    if h.base_model.size >= h.large_model.size {
        return Err(schema_err(
            line,
            "field `base_model.size` must be smaller than `large_model.size`",
        ));
    }
    if !is_positive(h.rho) {
        return Err(schema_err(line, "field `rho` must be positive"));
    }
    Ok(())
}

fn validate_record(line: usize, record: &TraceRecord) -> Result<(), TraceError> {
    if record.id.is_empty() {
        return Err(schema_err(line, "field `id` must be non-empty"));
    }
    let mut keys = HashSet::new();
    for (i, ev) in record.evidence.iter().enumerate() {
        let field = format!("evidence[{i}]");
        if !keys.insert((ev.method, ev.verifier, ev.target)) {
            return Err(schema_err(
                line,
                format!(
                    "{field}: duplicate evidence key ({}, {}, {})",
                    ev.method, ev.verifier, ev.target
                ),
            ));
        }
        let scalar = !ev.scalar_samples.is_empty();
        let pairs = !ev.token_pairs.is_empty();
        if scalar == pairs {
            return Err(schema_err(
                line,
                format!("{field}: exactly one of `scalar_samples`/`token_pairs` must be non-empty"),
            ));
        }
        if ev.method.is_scalar_family() != scalar {
            return Err(schema_err(
                line,
                format!("{field}: sample family does not match method {}", ev.method),
            ));
        }
        let n = ev.n_samples();
        if ev.method.is_multi_sample() {
            if n < 2 {
                return Err(schema_err(
                    line,
                    format!("{field}: method {} requires n >= 2 samples", ev.method),
                ));
            }
        } else if n != 1 {
            return Err(schema_err(
                line,
                format!("{field}: method {} requires exactly 1 sample", ev.method),
            ));
        }
        for (j, s) in ev.scalar_samples.iter().enumerate() {
            if !(0.0..=1.0).contains(s) {
                return Err(schema_err(
                    line,
                    format!("{field}.scalar_samples[{j}]: value {s} outside [0, 1]"),
                ));
            }
        }
        for (j, (yes, no)) in ev.token_pairs.iter().enumerate() {
            if !is_non_negative(*yes) || !is_non_negative(*no) || !is_positive(yes + no) {
                return Err(schema_err(
                    line,
                    format!(
                        "{field}.token_pairs[{j}]: pair ({yes}, {no}) must be non-negative with positive sum"
                    ),
                ));
            }
        }
    }
    Ok(())
}

/// Validate every type-level invariant of a `TraceSet` (header assumptions,
/// evidence shapes, id uniqueness). Line numbers follow file layout: header
/// on line 1, record `i` on line `i + 2`.
pub fn validate_set(set: &TraceSet) -> Result<(), TraceError> {
    let header = HeaderLine {
        header: true,
        base_model: set.base_model.clone(),
        large_model: set.large_model.clone(),
        rho: set.rho,
    };
    validate_header(1, &header)?;
    let mut seen = HashSet::new();
    for (i, record) in set.records.iter().enumerate() {
        validate_record(i + 2, record)?;
        if !seen.insert(record.id.as_str()) {
            return Err(TraceError::DuplicateId(record.id.clone()));
        }
    }
    Ok(())
}

/// Load and validate a trace file. Record order equals file order.
pub fn load_traces(path: impl AsRef<Path>) -> Result<TraceSet, TraceError> {
    let path = path.as_ref();
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(TraceError::MissingFile(path.to_path_buf()))
        }
        Err(e) => {
            return Err(TraceError::Io {
                path: path.to_path_buf(),
                source: e,
            })
        }
    };
    parse_traces(&text)
}

/// Parse trace file contents (see [`load_traces`]).
pub fn parse_traces(text: &str) -> Result<TraceSet, TraceError> {
    let mut header: Option<HeaderLine> = None;
    let mut records: Vec<TraceRecord> = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        if header.is_none() {
            let h: HeaderLine = serde_json::from_str(line)
                .map_err(|e| schema_err(line_no, format!("header: {e}")))?;
            validate_header(line_no, &h)?;
            header = Some(h);
            continue;
        }
        let record: TraceRecord =
            serde_json::from_str(line).map_err(|e| schema_err(line_no, e.to_string()))?;
        validate_record(line_no, &record)?;
        if !seen.insert(record.id.clone()) {
            return Err(TraceError::DuplicateId(record.id));
        }
        records.push(record);
    }
    let header = header.ok_or_else(|| schema_err(1, "missing header line"))?;
    Ok(TraceSet {
        base_model: header.base_model,
        large_model: header.large_model,
        rho: header.rho,
        records,
    })
}

/// Serialize a trace set to the line-delimited on-disk format.
pub fn to_jsonl(set: &TraceSet) -> String {
    let header = HeaderLine {
        header: true,
        base_model: set.base_model.clone(),
        large_model: set.large_model.clone(),
        rho: set.rho,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for record in &set.records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Write a trace set to disk in the line-delimited format.
pub fn save_traces(set: &TraceSet, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    let io_err = |source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(to_jsonl(set).as_bytes()).map_err(io_err)?;
    Ok(())
}

/// Split a trace set into a calibration part of exactly `calib_n` records
/// (sampled without replacement under `seed`) and the remaining stream. The
/// stream comes back shuffled, matching the random-order deployment protocol.
pub fn split_calibration(
    set: &TraceSet,
    calib_n: usize,
    seed: u64,
) -> Result<(TraceSet, TraceSet), TraceError> {
    if calib_n == 0 {
        return Err(TraceError::InvalidConfig(
            "calib_n must be positive".to_string(),
        ));
    }
    if calib_n >= set.records.len() {
        return Err(TraceError::CalibTooLarge {
            calib_n,
            available: set.records.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..set.records.len()).collect();
    indices.shuffle(&mut rng);
    let pick = |ixs: &[usize]| TraceSet {
        base_model: set.base_model.clone(),
        large_model: set.large_model.clone(),
        rho: set.rho,
        records: ixs.iter().map(|&i| set.records[i].clone()).collect(),
    };
    Ok((pick(&indices[..calib_n]), pick(&indices[calib_n..])))
}

/// One difficulty stratum of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStratum {
    /// Mixing fraction; all fractions must sum to 1.
    pub fraction: f64,
    pub base_accuracy: f64,
    pub large_accuracy: f64,
    /// Group tag stored on generated records.
    #[serde(default)]
    pub group: Option<String>,
}

/// Configuration for [`synth_generate`].
///
/// Raw verification scores are drawn around class-conditional centers
/// `0.5 + score_bias ± score_margin / 2` (correct vs. incorrect) with
/// Gaussian noise, then clamped to [0, 1]; the margin controls how
/// informative scores are of correctness. Fields left out of a config
/// file fall back to the mixed-difficulty defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_records: usize,
    pub strata: Vec<SynthStratum>,
    pub score_margin: f64,
    pub score_noise: f64,
    pub score_bias: f64,
    /// (method, verifier) combinations to emit; each is generated for both
    /// verification targets.
    pub methods: Vec<(Method, Tier)>,
    /// Pass count for the multi-sample methods.
    pub multi_sample_n: usize,
    pub t_in_range: (u64, u64),
    pub t_out_range: (u64, u64),
    pub t_in_ver_range: (u64, u64),
    pub t_out_ver_range: (u64, u64),
    pub rho: f64,
    pub base_model: ModelSpec,
    pub large_model: ModelSpec,
}

impl Default for SynthConfig {
    /// A mixed-difficulty set: the base model is strong on an easy 70%
    /// stratum and weak elsewhere, the large model is uniformly strong, and
    /// verification scores are informative.
    fn default() -> Self {
        SynthConfig {
            n_records: 1100,
            strata: vec![
                SynthStratum {
                    fraction: 0.7,
                    base_accuracy: 0.95,
                    large_accuracy: 0.9,
                    group: Some("easy".to_string()),
                },
                SynthStratum {
                    fraction: 0.3,
                    base_accuracy: 0.2,
                    large_accuracy: 0.9,
                    group: Some("hard".to_string()),
                },
            ],
            score_margin: 0.8,
            score_noise: 0.15,
            score_bias: 0.0,
            methods: vec![(Method::Stp, Tier::Large)],
            multi_sample_n: 5,
            t_in_range: (80, 200),
            t_out_range: (40, 160),
            t_in_ver_range: (60, 140),
            t_out_ver_range: (1, 1),
            rho: 5.0,
            base_model: ModelSpec {
                name: "base-1.5b".to_string(),
                size: 1.5,
            },
            large_model: ModelSpec {
                name: "large-7b".to_string(),
                size: 7.0,
            },
        }
    }
}

fn check_prob(value: f64, field: &str) -> Result<(), TraceError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(TraceError::InvalidConfig(format!(
            "{field} = {value} outside [0, 1]"
        )));
    }
    Ok(())
}

fn check_range(range: (u64, u64), field: &str) -> Result<(), TraceError> {
    if range.0 > range.1 {
        return Err(TraceError::InvalidConfig(format!(
            "{field} = ({}, {}) has lower bound above upper bound",
            range.0, range.1
        )));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.n_records == 0 {
            return Err(TraceError::InvalidConfig(
                "n_records must be positive".to_string(),
            ));
        }
        if self.strata.is_empty() {
            return Err(TraceError::InvalidConfig(
                "strata must be non-empty".to_string(),
            ));
        }
        let mut total = 0.0;
        for (i, s) in self.strata.iter().enumerate() {
            if !is_positive(s.fraction) {
                return Err(TraceError::InvalidConfig(format!(
                    "strata[{i}].fraction must be positive"
                )));
            }
            total += s.fraction;
            check_prob(s.base_accuracy, &format!("strata[{i}].base_accuracy"))?;
            check_prob(s.large_accuracy, &format!("strata[{i}].large_accuracy"))?;
        }
        if (total - 1.0).abs() > 1e-6 {
            return Err(TraceError::InvalidConfig(format!(
                "strata fractions sum to {total}, expected 1"
            )));
        }
        check_prob(self.score_margin, "score_margin")?;
        if !is_non_negative(self.score_noise) {
            return Err(TraceError::InvalidConfig(
                "score_noise must be non-negative".to_string(),
            ));
        }
        if self.methods.is_empty() {
            return Err(TraceError::InvalidConfig(
                "methods must be non-empty".to_string(),
            ));
        }
        if self.multi_sample_n < 2 {
            return Err(TraceError::InvalidConfig(
                "multi_sample_n must be at least 2".to_string(),
            ));
        }
        check_range(self.t_in_range, "t_in_range")?;
        check_range(self.t_out_range, "t_out_range")?;
        check_range(self.t_in_ver_range, "t_in_ver_range")?;
        check_range(self.t_out_ver_range, "t_out_ver_range")?;
        if !is_positive(self.rho) {
            return Err(TraceError::InvalidConfig(
                "rho must be positive".to_string(),
            ));
        }
        if !is_positive(self.base_model.size) || !is_positive(self.large_model.size) {
            return Err(TraceError::InvalidConfig(
                "model sizes must be positive".to_string(),
            ));
        }
        if self.base_model.size >= self.large_model.size {
            return Err(TraceError::InvalidConfig(
                "base model size must be smaller than large model size".to_string(),
            ));
        }
        Ok(())
    }
}

const CHOICES: [&str; 4] = ["A", "B", "C", "D"];

/// Generate a synthetic trace set. Deterministic under `seed`.
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<TraceSet, TraceError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut records = Vec::with_capacity(config.n_records);
    for i in 0..config.n_records {
        let stratum = {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = config.strata.last().expect("non-empty strata");
            for s in &config.strata {
                acc += s.fraction;
                if u < acc {
                    chosen = s;
                    break;
                }
            }
            chosen
        };
        let truth = CHOICES[rng.gen_range(0..CHOICES.len())];
        let mut generate = |accuracy: f64| -> GenerationRecord {
            let correct = rng.gen_bool(accuracy);
            let answer = if correct {
                truth.to_string()
            } else {
                let wrong: Vec<&str> = CHOICES.iter().copied().filter(|c| *c != truth).collect();
                wrong[rng.gen_range(0..wrong.len())].to_string()
            };
            GenerationRecord {
                answer,
                correct,
                t_in: rng.gen_range(config.t_in_range.0..=config.t_in_range.1),
                t_out: rng.gen_range(config.t_out_range.0..=config.t_out_range.1),
            }
        };
        let base = generate(stratum.base_accuracy);
        let large = generate(stratum.large_accuracy);

        let mut evidence = Vec::new();
        for &(method, verifier) in &config.methods {
            for target in [Tier::Base, Tier::Large] {
                let correct = match target {
                    Tier::Base => base.correct,
                    Tier::Large => large.correct,
                };
                let center = 0.5
                    + config.score_bias
                    + if correct {
                        config.score_margin / 2.0
                    } else {
                        -config.score_margin / 2.0
                    };
                let n = if method.is_multi_sample() {
                    config.multi_sample_n
                } else {
                    1
                };
                let mut scalar_samples = Vec::new();
                let mut token_pairs = Vec::new();
                for _ in 0..n {
                    let eps: f64 = normal.sample(&mut rng);
                    let p = (center + config.score_noise * eps).clamp(0.0, 1.0);
                    if method.is_scalar_family() {
                        scalar_samples.push(p);
                    } else {
                        // unnormalized pair; scoring normalizes it back
                        let scale: f64 = rng.gen_range(0.5..2.0);
                        token_pairs.push((scale * p, scale * (1.0 - p)));
                    }
                }
                evidence.push(VerificationEvidence {
                    method,
                    verifier,
                    target,
                    scalar_samples,
                    token_pairs,
                    t_in_ver: rng.gen_range(config.t_in_ver_range.0..=config.t_in_ver_range.1),
                    t_out_ver: rng.gen_range(config.t_out_ver_range.0..=config.t_out_ver_range.1),
                });
            }
        }
        records.push(TraceRecord {
            id: format!("q{i:05}"),
            group: stratum.group.clone(),
            base,
            large,
            evidence,
        });
    }
    let set = TraceSet {
        base_model: config.base_model.clone(),
        large_model: config.large_model.clone(),
        rho: config.rho,
        records,
    };
    validate_set(&set).expect("generated set satisfies invariants");
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_file() -> String {
        let mut s = String::new();
        s.push_str(r#"{"header":true,"base_model":{"name":"b","size":1.5},"large_model":{"name":"l","size":7.0},"rho":5.0}"#);
        s.push('\n');
        for (id, score) in [("q1", 0.9), ("q2", 0.4), ("q3", 0.7)] {
            s.push_str(&format!(
                concat!(
                    r#"{{"id":"{}","group":null,"base":{{"answer":"A","correct":true,"t_in":100,"t_out":50}},"#,
                    r#""large":{{"answer":"A","correct":true,"t_in":100,"t_out":60}},"#,
                    r#""evidence":[{{"method":"SV","verifier":"LARGE","target":"BASE","scalar_samples":[{}],"token_pairs":[],"t_in_ver":80,"t_out_ver":1}}]}}"#
                ),
                id, score
            ));
            s.push('\n');
        }
        s
    }

    #[test]
    fn load_preserves_order() {
        let set = parse_traces(&sample_file()).unwrap();
        assert_eq!(set.records.len(), 3);
        let ids: Vec<&str> = set.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["q1", "q2", "q3"]);
        assert_eq!(set.rho, 5.0);
        assert_eq!(set.base_model.size, 1.5);
    }

    #[test]
    fn load_missing_file() {
        let err = load_traces("/nonexistent/traces.jsonl").unwrap_err();
        assert!(matches!(err, TraceError::MissingFile(_)));
    }

    #[test]
    fn out_of_range_scalar_sample_names_line() {
        let text = sample_file().replace("[0.4]", "[1.2]");
        let err = parse_traces(&text).unwrap_err();
        match err {
            TraceError::SchemaViolation { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("scalar_samples"), "{message}");
            }
            other => panic!("expected SchemaViolation, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = sample_file()
            .replace("\"q2\"", "\"q7\"")
            .replace("\"q3\"", "\"q7\"");
        let err = parse_traces(&text).unwrap_err();
        match err {
            TraceError::DuplicateId(id) => assert_eq!(id, "q7"),
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = sample_file().replace(r#""group":null"#, r#""group":null,"extra":1"#);
        let err = parse_traces(&text).unwrap_err();
        assert!(matches!(err, TraceError::SchemaViolation { .. }));
    }

    #[test]
    fn mismatched_family_rejected() {
        let text = sample_file().replacen(
            r#""method":"SV","verifier":"LARGE","target":"BASE","scalar_samples":[0.9],"token_pairs":[]"#,
            r#""method":"SV","verifier":"LARGE","target":"BASE","scalar_samples":[],"token_pairs":[[0.9,0.1]]"#,
            1,
        );
        let err = parse_traces(&text).unwrap_err();
        assert!(matches!(err, TraceError::SchemaViolation { line: 2, .. }));
    }

    #[test]
    fn round_trip_through_disk() {
        let set = parse_traces(&sample_file()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.jsonl");
        save_traces(&set, &path).unwrap();
        let loaded = load_traces(&path).unwrap();
        assert_eq!(set, loaded);
    }

    #[test]
    fn split_exact_sizes_and_disjoint() {
        let set = synth_generate(
            &SynthConfig {
                n_records: 1000,
                ..SynthConfig::default()
            },
            3,
        )
        .unwrap();
        let (calib, stream) = split_calibration(&set, 100, 11).unwrap();
        assert_eq!(calib.records.len(), 100);
        assert_eq!(stream.records.len(), 900);
        let calib_ids: HashSet<&str> = calib.records.iter().map(|r| r.id.as_str()).collect();
        let stream_ids: HashSet<&str> = stream.records.iter().map(|r| r.id.as_str()).collect();
        assert!(calib_ids.is_disjoint(&stream_ids));
        assert_eq!(calib_ids.len() + stream_ids.len(), 1000);
    }

    #[test]
    fn split_rejects_calib_too_large() {
        let set = synth_generate(
            &SynthConfig {
                n_records: 10,
                ..SynthConfig::default()
            },
            0,
        )
        .unwrap();
        assert!(matches!(
            split_calibration(&set, 10, 0),
            Err(TraceError::CalibTooLarge { .. })
        ));
    }

    #[test]
    fn split_deterministic() {
        let set = synth_generate(
            &SynthConfig {
                n_records: 50,
                ..SynthConfig::default()
            },
            1,
        )
        .unwrap();
        let (c1, s1) = split_calibration(&set, 12, 99).unwrap();
        let (c2, s2) = split_calibration(&set, 12, 99).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn split_partitions_for_every_size() {
        let set = synth_generate(
            &SynthConfig {
                n_records: 12,
                ..SynthConfig::default()
            },
            5,
        )
        .unwrap();
        let all: HashSet<String> = set.records.iter().map(|r| r.id.clone()).collect();
        for calib_n in 1..set.records.len() {
            let (calib, stream) = split_calibration(&set, calib_n, 7).unwrap();
            assert_eq!(calib.records.len(), calib_n);
            let mut union: HashSet<String> = calib.records.iter().map(|r| r.id.clone()).collect();
            for r in &stream.records {
                assert!(union.insert(r.id.clone()), "overlap on {}", r.id);
            }
            assert_eq!(union, all);
        }
    }

    #[test]
    fn synth_accuracies_match_binomial_expectation() {
        // binomial standard error oracle: sqrt(p (1 - p) / n)
        let config = SynthConfig {
            n_records: 500,
            strata: vec![SynthStratum {
                fraction: 1.0,
                base_accuracy: 0.6,
                large_accuracy: 0.8,
                group: None,
            }],
            ..SynthConfig::default()
        };
        let set = synth_generate(&config, 42).unwrap();
        let n = set.records.len() as f64;
        let base_acc = set.records.iter().filter(|r| r.base.correct).count() as f64 / n;
        let large_acc = set.records.iter().filter(|r| r.large.correct).count() as f64 / n;
        let se = |p: f64| (p * (1.0 - p) / n).sqrt();
        assert!((base_acc - 0.6).abs() < 3.0 * se(0.6), "base {base_acc}");
        assert!((large_acc - 0.8).abs() < 3.0 * se(0.8), "large {large_acc}");
    }

    #[test]
    fn synth_degenerate_noise_separates_exactly() {
        let config = SynthConfig {
            n_records: 60,
            score_margin: 1.0,
            score_noise: 0.0,
            methods: vec![(Method::Sv, Tier::Large), (Method::Stp, Tier::Large)],
            ..SynthConfig::default()
        };
        let set = synth_generate(&config, 9).unwrap();
        for record in &set.records {
            for target in [Tier::Base, Tier::Large] {
                let expect = if record.generation(target).correct {
                    1.0
                } else {
                    0.0
                };
                let sv = record
                    .evidence_for(Method::Sv, Tier::Large, target)
                    .unwrap();
                assert_eq!(sv.scalar_samples[0], expect);
                let stp = record
                    .evidence_for(Method::Stp, Tier::Large, target)
                    .unwrap();
                let (yes, no) = stp.token_pairs[0];
                assert_eq!(yes / (yes + no), expect);
            }
        }
    }

    #[test]
    fn synth_deterministic_bytes() {
        let config = SynthConfig::default();
        let a = to_jsonl(&synth_generate(&config, 123).unwrap());
        let b = to_jsonl(&synth_generate(&config, 123).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn synth_rejects_bad_probability() {
        let config = SynthConfig {
            strata: vec![SynthStratum {
                fraction: 1.0,
                base_accuracy: 1.3,
                large_accuracy: 0.9,
                group: None,
            }],
            ..SynthConfig::default()
        };
        let err = synth_generate(&config, 0).unwrap_err();
        match err {
            TraceError::InvalidConfig(msg) => assert!(msg.contains("base_accuracy"), "{msg}"),
            other => panic!("expected InvalidConfig, got {other:?}"),
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_stratum() -> impl Strategy<Value = (f64, f64, f64, Option<String>)> {
            (
                0.05f64..1.0,
                0.0f64..=1.0,
                0.0f64..=1.0,
                proptest::option::of("[a-z]{1,6}"),
            )
        }

        fn arb_range(max: u64) -> impl Strategy<Value = (u64, u64)> {
            (0..max, 0..max).prop_map(|(a, b)| (a.min(a + b), a + b))
        }

        prop_compose! {
            fn arb_config()(
                n_records in 1usize..60,
                weights in proptest::collection::vec(arb_stratum(), 1..4),
                score_margin in 0.0f64..=1.0,
                score_noise in 0.0f64..0.5,
                score_bias in -0.3f64..0.3,
                method_picks in proptest::sample::subsequence(
                    vec![
                        (Method::Sv, Tier::Base),
                        (Method::Sv, Tier::Large),
                        (Method::SvConsistent, Tier::Large),
                        (Method::Stp, Tier::Base),
                        (Method::Stp, Tier::Large),
                        (Method::McStp, Tier::Large),
                    ],
                    1..4,
                ),
                multi_sample_n in 2usize..6,
                t_in_range in arb_range(300),
                t_out_range in arb_range(300),
                t_in_ver_range in arb_range(200),
                t_out_ver_range in arb_range(5),
                rho in 0.1f64..20.0,
                base_size in 0.1f64..10.0,
                size_gap in 0.1f64..10.0,
            ) -> SynthConfig {
                let total: f64 = weights.iter().map(|w| w.0).sum();
                let strata = weights
                    .into_iter()
                    .map(|(w, base_accuracy, large_accuracy, group)| SynthStratum {
                        fraction: w / total,
                        base_accuracy,
                        large_accuracy,
                        group,
                    })
                    .collect();
                SynthConfig {
                    n_records,
                    strata,
                    score_margin,
                    score_noise,
                    score_bias,
                    methods: method_picks,
                    multi_sample_n,
                    t_in_range,
                    t_out_range,
                    t_in_ver_range,
                    t_out_ver_range,
                    rho,
                    base_model: ModelSpec { name: "b".to_string(), size: base_size },
                    large_model: ModelSpec { name: "l".to_string(), size: base_size + size_gap },
                }
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            /// Generated sets satisfy every type invariant and round-trip
            /// through the line-delimited format unchanged.
            #[test]
            fn synth_respects_invariants_and_round_trips(
                config in arb_config(),
                seed in 0u64..1_000_000,
            ) {
                let set = synth_generate(&config, seed).unwrap();
                prop_assert!(validate_set(&set).is_ok());
                prop_assert_eq!(set.records.len(), config.n_records);
                let reloaded = parse_traces(&to_jsonl(&set)).unwrap();
                prop_assert_eq!(reloaded, set);
            }
        }
    }
}
