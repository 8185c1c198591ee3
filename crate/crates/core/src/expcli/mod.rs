//! Experiment runner: one JSON config in, CSV artifacts plus `manifest.json` out.

mod runners;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::drivers::DriverSpec;
use crate::fraclevy::LIL_EPSILON;
use crate::kernels::{KernelConfig, KernelKind};
use crate::{Error, Result};

pub use runners::run_experiment;

/// Max `|direct - by_parts| / (1 + |M|)` over grid and replicas.
pub const BY_PARTS_TOL: f64 = 1e-12;
/// Max `|J1 + J2 - ΔY| / |ΔY|`.
pub const DECOMPOSITION_TOL: f64 = 1e-8;
/// `|∫_0^1 f_δ dv - 1/d|` at the smallest δ.
pub const FDELTA_TOL: f64 = 1e-9;
/// `|∫_0^{h0/δ} g_δ dv + 1/d|` at the smallest δ.
pub const GDELTA_TOL: f64 = 2e-3;
/// Relative gap between the quadrature of `g_δ` and its power-kernel antiderivative.
pub const ANTIDERIVATIVE_TOL: f64 = 1e-8;
/// Relative error of the extrapolated ratio at jump probes.
pub const THM1_JUMP_TOL: f64 = 0.05;
/// `|limit| / (1 + ‖X‖∞)` at off-jump probes.
pub const THM1_OFF_TOL: f64 = 5e-2;
/// Ratio identity at a lone jump.
pub const SINGLE_JUMP_TOL: f64 = 1e-12;
/// Relative error of the uniform ratio against `sup |Δ_X|`.
pub const THM2_TOL: f64 = 0.10;
pub const THM3_SLOPE_TOL: f64 = 0.05;
pub const THM3_MIN_R2: f64 = 0.98;
/// Calibration exponent and tolerance for `v(t) = t^0.4`.
pub const CALIBRATION_EXPONENT: f64 = 0.4;
pub const CALIBRATION_TOL: f64 = 0.02;
pub const TAIL_LINEARITY_TOL: f64 = 1e-12;
/// Residual bound for the power kernel's smooth-variation limits.
pub const SMOOTH_POWER_TOL: f64 = 1e-12;
/// Verdict tolerance for other kernels, whose residuals decay slowly.
pub const SMOOTH_LIMIT_TOL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SmoothVariation,
    ByPartsOracle,
    Decomposition,
    Theorem1,
    Theorem2,
    Theorem3,
    Lemma35,
    Lemma36,
    TailBound,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::SmoothVariation => "smooth-variation",
            ExperimentKind::ByPartsOracle => "by-parts-oracle",
            ExperimentKind::Decomposition => "decomposition",
            ExperimentKind::Theorem1 => "theorem1",
            ExperimentKind::Theorem2 => "theorem2",
            ExperimentKind::Theorem3 => "theorem3",
            ExperimentKind::Lemma35 => "lemma35",
            ExperimentKind::Lemma36 => "lemma36",
            ExperimentKind::TailBound => "tail-bound",
        }
    }

    fn needs_driver(self) -> bool {
        !matches!(
            self,
            ExperimentKind::SmoothVariation | ExperimentKind::Lemma35 | ExperimentKind::Lemma36
        )
    }

    fn is_fractional(self) -> bool {
        matches!(self, ExperimentKind::Theorem3 | ExperimentKind::TailBound)
    }
}

/// One experiment. Empty schedules and absent options take per-experiment defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub kernel: KernelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<DriverSpec>,
    #[serde(default)]
    pub grid_n: usize,
    #[serde(default)]
    pub h_schedule: Vec<f64>,
    #[serde(default)]
    pub delta_schedule: Vec<f64>,
    #[serde(default = "one")]
    pub replicas: usize,
    /// Replaces the driver's own seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Sup interval for the kernel diagnostics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_interval: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h0: Option<f64>,
    /// Quasi-random pairs per h for the uniform modulus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder_first_level: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder_levels: Option<usize>,
    /// Cutoff `T` of the fractional representation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_t: Option<f64>,
    /// Upper ends `a < 0` of the tail windows `[-T, a]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_ends: Option<Vec<f64>>,
    /// Base time `t` of the tail increments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_t: Option<f64>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    /// Minimal config; everything else defaulted.
    pub fn new(experiment: ExperimentKind, kernel: KernelConfig, driver: Option<DriverSpec>) -> Self {
        ExperimentConfig {
            experiment,
            kernel,
            driver,
            grid_n: 0,
            h_schedule: Vec::new(),
            delta_schedule: Vec::new(),
            replicas: 1,
            seed: 0,
            out_dir: None,
            t_interval: None,
            h0: None,
            pair_budget: None,
            holder_first_level: None,
            holder_levels: None,
            truncation_t: None,
            tail_ends: None,
            tail_t: None,
        }
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Reads and parses `path`; parse errors carry `path:line:column`.
    pub fn load(path: &Path) -> std::result::Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: cannot read config: {e}", path.display()))?;
        Self::from_json(&text)
            .map_err(|e| format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
    }
}

/// A single schema or invariant violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite() && *x > 0.0) && xs.windows(2).all(|w| w[1] < w[0])
}

/// Schema and invariant check without running; empty means valid.
pub fn validate(cfg: &ExperimentConfig) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut push = |field: &str, message: String| {
        out.push(Finding {
            field: field.into(),
            message,
        })
    };
    if let Err(e) = cfg.kernel.build() {
        push("kernel", e.to_string());
    }
    if !strictly_decreasing(&cfg.h_schedule) {
        push("h_schedule", "must be positive and strictly decreasing".into());
    }
    if !strictly_decreasing(&cfg.delta_schedule) {
        push("delta_schedule", "must be positive and strictly decreasing".into());
    }
    if cfg.replicas < 1 {
        push("replicas", "must be at least 1".into());
    }
    let kind = cfg.experiment;
    match (&cfg.driver, kind.needs_driver()) {
        (None, true) => push("driver", format!("experiment {} needs a driver", kind.as_str())),
        (Some(d), _) => {
            let checked = if kind.is_fractional() {
                d.validate_fractional()
            } else {
                d.validate()
            };
            if let Err(e) = checked {
                let hint = if matches!(e, Error::MomentCondition(_)) {
                    " (fractional Lévy moment conditions)"
                } else {
                    ""
                };
                push("driver", format!("{e}{hint}"));
            }
        }
        (None, false) => {}
    }
    if kind.is_fractional() {
        let d = cfg.kernel.rho;
        if cfg.kernel.kind != KernelKind::Power {
            push("kernel.kind", "fractional experiments use the power kernel with rho = d".into());
        }
        if !(d > 0.0 && d + LIL_EPSILON < 0.5) {
            push("kernel.rho", format!("fractional order d must lie in (0, {}), got {d}", 0.5 - LIL_EPSILON));
        }
    }
    if let Some((a, b)) = cfg.t_interval {
        if !(a.is_finite() && b.is_finite() && a <= b) {
            push("t_interval", format!("needs lo <= hi, got ({a}, {b})"));
        }
    }
    if let Some(h0) = cfg.h0 {
        if !(h0 > 0.0 && h0 <= 1.0) {
            push("h0", format!("must lie in (0,1], got {h0}"));
        }
    }
    if let Some(t) = cfg.truncation_t {
        if !(t > 0.0 && t.is_finite()) {
            push("truncation_t", format!("must be positive, got {t}"));
        }
    }
    if let Some(ends) = &cfg.tail_ends {
        let cut = cfg.truncation_t.unwrap_or(runners::DEFAULT_TAIL_CUTOFF);
        if ends.is_empty() || ends.iter().any(|a| !(*a < 0.0 && *a > -cut)) {
            push("tail_ends", format!("entries must lie in (-{cut}, 0)"));
        }
    }
    out
}

/// Named comparison of a metric with its acceptance threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `"<="` or `">="`.
    pub relation: &'static str,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            relation: "<=",
            threshold,
            passed: value <= threshold,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            relation: ">=",
            threshold,
            passed: value >= threshold,
        }
    }

    /// A boolean condition reported as 1/0 against 1.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Check::at_least(name, if ok { 1.0 } else { 0.0 }, 1.0)
    }
}

/// Everything an experiment produced, before anything touches the disk.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, f64>,
    /// `(file name, bytes)` in write order.
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    passed: bool,
    checks: &'a [Check],
    metrics: &'a BTreeMap<String, f64>,
    files: Vec<&'a str>,
}

/// Runs `cfg` and writes its CSVs and `manifest.json` into `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Outcome> {
    let findings = validate(cfg);
    if !findings.is_empty() {
        let lines: Vec<String> = findings.iter().map(|f| f.to_string()).collect();
        return Err(Error::Config(lines.join("; ")));
    }
    let outcome = run_experiment(cfg)?;
    let io = |e: std::io::Error| Error::Config(format!("cannot write to {}: {e}", out_dir.display()));
    fs::create_dir_all(out_dir).map_err(io)?;
    for (name, bytes) in &outcome.files {
        fs::write(out_dir.join(name), bytes).map_err(io)?;
    }
    let manifest = Manifest {
        experiment: cfg.experiment.as_str(),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        passed: outcome.passed(),
        checks: &outcome.checks,
        metrics: &outcome.metrics,
        files: outcome.files.iter().map(|(n, _)| n.as_str()).collect(),
    };
    let mut json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization failed: {e}")))?;
    json.push('\n');
    fs::write(out_dir.join("manifest.json"), json).map_err(io)?;
    Ok(outcome)
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ACCEPTANCE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Exit status for a failed run.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParameter { .. } | Error::MomentCondition(_) | Error::OutsideHorizon { .. } => {
            EXIT_CONFIG
        }
        Error::Quadrature { .. }
        | Error::DiagnosticFailure { .. }
        | Error::Domain { .. }
        | Error::KernelInvariant { .. }
        | Error::Degenerate(_) => EXIT_NUMERICAL,
    }
}
