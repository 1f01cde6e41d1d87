//! Evaluation pipeline: runs the full score suite over two samples and
//! assembles the [`MetricReport`] with its configuration echo, warnings,
//! and wall-clock timings.
//!
//! Reports serialize deterministically: keys are emitted in sorted
//! order, every float is rounded to nine significant digits, and the
//! timing block is the only part allowed to differ between otherwise
//! identical runs.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::time::Instant;
use thiserror::Error;

use crate::covmmd::{cov_mmd, effective_subsample, CovMmdProtocol};
use crate::efp::{efp_set_features, EfpConfig, EfpError};
use crate::emd::{EmdConfig, EmdError};
use crate::frechet::{
    fpnd_from_matrices, surrogate_from_series, ActivationMatrix, FrechetError, DEFAULT_FPND_SAMPLES,
};
use crate::kinematics::jet_mass;
use crate::model::{CloudSample, FrechetProvider, MetricReport, ModelError};
use crate::w1::{w1efp_from_series, w1m_from_tables, w1p, W1Error, W1Protocol};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    W1(#[from] W1Error),
    #[error(transparent)]
    Emd(#[from] EmdError),
    #[error(transparent)]
    Frechet(#[from] FrechetError),
    #[error(transparent)]
    Efp(#[from] EfpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything the pipeline needs beyond the two samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub w1: W1Protocol,
    pub cov: CovMmdProtocol,
    pub emd: EmdConfig,
    pub efp: EfpConfig,
    pub frechet_samples: usize,
    pub frechet_enabled: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            w1: W1Protocol::default(),
            cov: CovMmdProtocol::default(),
            emd: EmdConfig::default(),
            efp: EfpConfig::default(),
            frechet_samples: DEFAULT_FPND_SAMPLES,
            frechet_enabled: true,
            seed: 0,
        }
    }
}

impl EvalConfig {
    /// Propagate one user seed into every protocol stream.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.w1.rng_seed = seed;
        self.cov.rng_seed = seed;
        self
    }
}

/// Evaluation constants echoed verbatim into every report, plus the
/// conventions that fix otherwise ambiguous readings of the scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEcho {
    pub seed: u64,
    pub w1_batch_size: usize,
    pub w1_n_batches: usize,
    pub cov_subsample: usize,
    pub cov_n_batches: usize,
    pub emd_radius: f64,
    pub efp_beta: f64,
    pub efp_normalize_z: bool,
    /// Canonical text forms of the correlator graphs, in series order.
    pub efp_graphs: Vec<String>,
    pub frechet_samples: usize,
    pub mass_convention: String,
    pub sampling: String,
    pub spread_convention: String,
    pub cov_direction: String,
    pub angle_convention: String,
}

impl EvalEcho {
    pub fn from_config(cfg: &EvalConfig) -> Self {
        Self {
            seed: cfg.seed,
            w1_batch_size: cfg.w1.batch_size,
            w1_n_batches: cfg.w1.n_batches,
            cov_subsample: cfg.cov.subsample,
            cov_n_batches: cfg.cov.n_batches,
            emd_radius: cfg.emd.radius,
            efp_beta: cfg.efp.beta,
            efp_normalize_z: cfg.efp.normalize_z,
            efp_graphs: crate::efp::default_graph_set().iter().map(|g| g.to_string()).collect(),
            frechet_samples: cfg.frechet_samples,
            mass_convention: "massless constituents".to_string(),
            sampling: "without replacement, shared per-batch streams".to_string(),
            spread_convention: "sample standard deviation across batches".to_string(),
            cov_direction: "nearest x in X for each y in Y".to_string(),
            angle_convention: "delta phi wrapped to (-pi, pi]".to_string(),
        }
    }
}

/// Wall-clock timings in milliseconds, reported but excluded from
/// byte-reproducibility guarantees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub features_ms: f64,
    pub w1m_ms: f64,
    pub w1p_ms: f64,
    pub w1efp_ms: f64,
    pub cov_mmd_ms: f64,
    pub frechet_ms: f64,
    pub total_ms: f64,
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Run the full suite. External activation matrices, when given for both
/// sides, take precedence over the built-in surrogate.
pub fn evaluate(
    real: &CloudSample,
    gen: &CloudSample,
    activations: Option<(&ActivationMatrix, &ActivationMatrix)>,
    cfg: &EvalConfig,
) -> Result<(MetricReport, Timings), EvalError> {
    let total_start = Instant::now();
    let mut warnings = Vec::new();

    if cfg.w1.batch_size > real.len() || cfg.w1.batch_size > gen.len() {
        warnings.push(format!(
            "w1 batch size {} clamped to min(sample sizes) = {}",
            cfg.w1.batch_size,
            real.len().min(gen.len())
        ));
    }
    if effective_subsample(&cfg.cov, real, gen) < cfg.cov.subsample {
        warnings.push(format!(
            "cov/mmd subsample {} clamped to min(sample sizes) = {}",
            cfg.cov.subsample,
            real.len().min(gen.len())
        ));
    }

    let start = Instant::now();
    let real_series = efp_set_features(real, &cfg.efp)?;
    let gen_series = efp_set_features(gen, &cfg.efp)?;
    let real_masses: Vec<f64> = real.clouds().iter().map(jet_mass).collect();
    let gen_masses: Vec<f64> = gen.clouds().iter().map(jet_mass).collect();
    let features_ms = ms(start);

    let start = Instant::now();
    let w1m = w1m_from_tables(&real_masses, &gen_masses, &cfg.w1)?;
    let w1m_ms = ms(start);

    let start = Instant::now();
    let w1p_score = w1p(real, gen, &cfg.w1)?;
    let w1p_ms = ms(start);

    let start = Instant::now();
    let w1efp = w1efp_from_series(&real_series, &gen_series, &cfg.w1)?;
    let w1efp_ms = ms(start);

    let start = Instant::now();
    let (cov, mmd) = cov_mmd(real, gen, &cfg.cov, &cfg.emd)?;
    let cov_mmd_ms = ms(start);

    let start = Instant::now();
    let (frechet, frechet_provider) = if !cfg.frechet_enabled {
        (None, None)
    } else if let Some((acts_real, acts_gen)) = activations {
        if acts_real.n_rows() != real.len() {
            return Err(FrechetError::ProviderMismatch {
                rows: acts_real.n_rows(),
                sample: real.len(),
            }
            .into());
        }
        if acts_gen.n_rows() != gen.len() {
            return Err(FrechetError::ProviderMismatch {
                rows: acts_gen.n_rows(),
                sample: gen.len(),
            }
            .into());
        }
        if cfg.frechet_samples > real.len() || cfg.frechet_samples > gen.len() {
            warnings.push(format!(
                "frechet draw size {} clamped to min(sample sizes) = {}",
                cfg.frechet_samples,
                real.len().min(gen.len())
            ));
        }
        let d = fpnd_from_matrices(acts_real, acts_gen, cfg.frechet_samples, cfg.seed)?;
        (Some(d), Some(FrechetProvider::External))
    } else {
        if cfg.frechet_samples > real.len() || cfg.frechet_samples > gen.len() {
            warnings.push(format!(
                "frechet draw size {} clamped to min(sample sizes) = {}",
                cfg.frechet_samples,
                real.len().min(gen.len())
            ));
        }
        let acts_real = surrogate_from_series(real, &real_series)?;
        let acts_gen = surrogate_from_series(gen, &gen_series)?;
        let d = fpnd_from_matrices(&acts_real, &acts_gen, cfg.frechet_samples, cfg.seed)?;
        (Some(d), Some(FrechetProvider::EfpSurrogate))
    };
    let frechet_ms = ms(start);

    let report = MetricReport {
        schema: REPORT_SCHEMA,
        w1m,
        w1p: w1p_score,
        w1efp,
        frechet,
        frechet_provider,
        cov,
        mmd,
        config: EvalEcho::from_config(cfg),
        warnings,
    };
    debug_assert!((0.0..=1.0).contains(&report.cov));
    debug_assert!(report.mmd >= 0.0);

    let timings = Timings {
        features_ms,
        w1m_ms,
        w1p_ms,
        w1efp_ms,
        cov_mmd_ms,
        frechet_ms,
        total_ms: ms(total_start),
    };
    Ok((report, timings))
}

/// Round every number in a JSON tree to nine significant digits so
/// reports diff cleanly across platforms.
fn round_floats(value: &mut Value) {
    match value {
        Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if n.as_i64().is_none() && n.as_u64().is_none() {
                    let rounded: f64 = format!("{f:.8e}").parse().unwrap_or(f);
                    if let Some(num) = serde_json::Number::from_f64(rounded) {
                        *value = Value::Number(num);
                    }
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Serialize a report (plus optional timings) as deterministic pretty
/// JSON: sorted keys, nine significant digits.
pub fn report_to_json(report: &MetricReport, timings: Option<&Timings>) -> String {
    let mut value = serde_json::to_value(report).expect("report serializes");
    if let Some(t) = timings {
        value["timings"] = serde_json::to_value(t).expect("timings serialize");
    }
    round_floats(&mut value);
    serde_json::to_string_pretty(&value).expect("json renders")
}

/// Deterministic JSON for ad-hoc command output.
pub fn value_to_json(mut value: Value) -> String {
    round_floats(&mut value);
    serde_json::to_string_pretty(&value).expect("json renders")
}

/// The baseline triple in report-shaped JSON.
pub fn baseline_to_json(
    scores: &(crate::w1::W1Score, crate::w1::W1Score, crate::w1::W1Score),
    cfg: &EvalConfig,
    warnings: &[String],
) -> String {
    let value = json!({
        "schema": REPORT_SCHEMA,
        "baseline": {
            "w1m": scores.0,
            "w1p": scores.1,
            "w1efp": scores.2,
        },
        "config": EvalEcho::from_config(cfg),
        "warnings": warnings,
    });
    value_to_json(value)
}
