//! Two-argument kernels `F(t, r)` on `{r <= t}` and their near-diagonal
//! diagnostics.
//!
//! Built-in kernels depend on `u = t - r` only and carry analytic partials.
//! User-defined kernels may supply just `F`; every partial then falls back to
//! central differences with step `max(1e-7, 1e-4 (t - r))`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad;

/// Largest `t - r` accepted by the power-log kernel; `|log u|` vanishes at 1.
pub const POWER_LOG_MAX_SPAN: f64 = 1.0 - 1e-9;

/// Residuals at or below this level count as zero when checking monotonicity.
pub const MONOTONE_NOISE_FLOOR: f64 = 1e-12;

/// Number of interior points of the uniform t-grid approximating a supremum.
pub const SUP_GRID_POINTS: usize = 64;

type KernelFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Power,
    PowerLog,
    UserDefined,
}

#[derive(Clone)]
enum Shape {
    Power,
    PowerLog { eta: f64 },
    User { name: String, eval: Arc<KernelFn> },
}

/// A kernel `F(t, r)` of smooth-variation index `rho`.
///
/// Cheap to clone and safe to share across threads.
#[derive(Clone)]
pub struct Kernel {
    rho: f64,
    shape: Shape,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(invalid("rho", format!("must lie in (0,1), got {rho}")))
    }
}

/// `F(t, r) = (t - r)^rho`.
pub fn make_power_kernel(rho: f64) -> Result<Kernel> {
    check_rho(rho)?;
    Ok(Kernel {
        rho,
        shape: Shape::Power,
    })
}

/// `F(t, r) = (t - r)^rho |log(t - r)|^eta`, restricted to `t - r < 1`.
pub fn make_power_log_kernel(rho: f64, eta: f64) -> Result<Kernel> {
    check_rho(rho)?;
    if !eta.is_finite() {
        return Err(invalid("eta", format!("must be finite, got {eta}")));
    }
    Ok(Kernel {
        rho,
        shape: Shape::PowerLog { eta },
    })
}

/// A kernel given only by its values; partials use central differences.
pub fn make_user_kernel<F>(name: impl Into<String>, rho: f64, eval: F) -> Result<Kernel>
where
    F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
{
    check_rho(rho)?;
    Ok(Kernel {
        rho,
        shape: Shape::User {
            name: name.into(),
            eval: Arc::new(eval),
        },
    })
}

/// Finite-difference step used for kernels without analytic partials.
pub fn fd_step(span: f64) -> f64 {
    1e-7f64.max(1e-4 * span).min(0.25 * span)
}

impl Kernel {
    pub fn index(&self) -> f64 {
        self.rho
    }

    pub fn kind(&self) -> KernelKind {
        match self.shape {
            Shape::Power => KernelKind::Power,
            Shape::PowerLog { .. } => KernelKind::PowerLog,
            Shape::User { .. } => KernelKind::UserDefined,
        }
    }

    /// Provenance tag, e.g. `power(rho=0.5)`.
    pub fn label(&self) -> String {
        match &self.shape {
            Shape::Power => format!("power(rho={})", self.rho),
            Shape::PowerLog { eta } => format!("power-log(rho={},eta={})", self.rho, eta),
            Shape::User { name, .. } => format!("user:{}(rho={})", name, self.rho),
        }
    }

    /// Largest `t - r` the kernel accepts.
    pub fn max_span(&self) -> f64 {
        match self.shape {
            Shape::PowerLog { .. } => POWER_LOG_MAX_SPAN,
            _ => f64::INFINITY,
        }
    }

    fn check_span(&self, t: f64, u: f64, strict: bool) -> Result<f64> {
        if !u.is_finite() || u < 0.0 || (strict && u == 0.0) {
            return Err(Error::Domain {
                t,
                r: t - u,
                reason: if strict {
                    "partials need r < t".into()
                } else {
                    "kernel needs r <= t".into()
                },
            });
        }
        if u >= self.max_span() {
            return Err(Error::Domain {
                t,
                r: t - u,
                reason: format!("t - r = {u} exceeds kernel span {}", self.max_span()),
            });
        }
        Ok(u)
    }

    /// `F(t, r)`.
    pub fn eval(&self, t: f64, r: f64) -> Result<f64> {
        self.eval_span(t, t - r)
    }

    /// `F(t, t - u)`, with the span `u` passed exactly.
    pub fn eval_span(&self, t: f64, u: f64) -> Result<f64> {
        let u = self.check_span(t, u, false)?;
        Ok(match &self.shape {
            Shape::Power => u.powf(self.rho),
            Shape::PowerLog { eta } => {
                if u == 0.0 {
                    0.0
                } else {
                    u.powf(self.rho) * (-u.ln()).powf(*eta)
                }
            }
            Shape::User { eval, .. } => eval(t, t - u),
        })
    }

    // Profile derivatives G'(u), G''(u) for kernels F(t,r) = G(t - r).
    fn profile_d1(&self, u: f64) -> f64 {
        let rho = self.rho;
        match self.shape {
            Shape::Power => rho * u.powf(rho - 1.0),
            Shape::PowerLog { eta } => {
                let l = -u.ln();
                u.powf(rho - 1.0) * l.powf(eta - 1.0) * (rho * l - eta)
            }
            Shape::User { .. } => unreachable!("user kernels have no profile"),
        }
    }

    fn profile_d2(&self, u: f64) -> f64 {
        let rho = self.rho;
        match self.shape {
            Shape::Power => rho * (rho - 1.0) * u.powf(rho - 2.0),
            Shape::PowerLog { eta } => {
                let l = -u.ln();
                u.powf(rho - 2.0)
                    * l.powf(eta - 2.0)
                    * (rho * (rho - 1.0) * l * l - eta * (2.0 * rho - 1.0) * l + eta * (eta - 1.0))
            }
            Shape::User { .. } => unreachable!("user kernels have no profile"),
        }
    }

    fn user_eval(&self) -> Option<&KernelFn> {
        match &self.shape {
            Shape::User { eval, .. } => Some(eval.as_ref()),
            _ => None,
        }
    }

    /// `f(t, r) = F^(0,1)(t, r)`.
    pub fn d_dr(&self, t: f64, r: f64) -> Result<f64> {
        self.d_dr_span(t, t - r)
    }

    /// `F^(1,0)(t, r)`.
    pub fn d_dt(&self, t: f64, r: f64) -> Result<f64> {
        self.d_dt_span(t, t - r)
    }

    /// `F^(1,1)(t, r)`.
    pub fn d2_dtdr(&self, t: f64, r: f64) -> Result<f64> {
        self.d2_dtdr_span(t, t - r)
    }

    /// `F^(0,2)(t, r)`.
    pub fn d2_dr2(&self, t: f64, r: f64) -> Result<f64> {
        self.d2_dr2_span(t, t - r)
    }

    /// `f(t, t - u)`.
    pub fn d_dr_span(&self, t: f64, u: f64) -> Result<f64> {
        let u = self.check_span(t, u, true)?;
        match self.user_eval() {
            None => Ok(-self.profile_d1(u)),
            Some(g) => {
                let (h, r) = (fd_step(u), t - u);
                Ok((g(t, r + h) - g(t, r - h)) / (2.0 * h))
            }
        }
    }

    /// `F^(1,0)(t, t - u)`.
    pub fn d_dt_span(&self, t: f64, u: f64) -> Result<f64> {
        let u = self.check_span(t, u, true)?;
        match self.user_eval() {
            None => Ok(self.profile_d1(u)),
            Some(g) => {
                let (h, r) = (fd_step(u), t - u);
                Ok((g(t + h, r) - g(t - h, r)) / (2.0 * h))
            }
        }
    }

    /// `F^(1,1)(t, t - u)`.
    pub fn d2_dtdr_span(&self, t: f64, u: f64) -> Result<f64> {
        let u = self.check_span(t, u, true)?;
        match self.user_eval() {
            None => Ok(-self.profile_d2(u)),
            Some(g) => {
                let (h, r) = (fd_step(u), t - u);
                Ok((g(t + h, r + h) - g(t + h, r - h) - g(t - h, r + h) + g(t - h, r - h))
                    / (4.0 * h * h))
            }
        }
    }

    /// `F^(0,2)(t, t - u)`.
    pub fn d2_dr2_span(&self, t: f64, u: f64) -> Result<f64> {
        let u = self.check_span(t, u, true)?;
        match self.user_eval() {
            None => Ok(self.profile_d2(u)),
            Some(g) => {
                let (h, r) = (fd_step(u), t - u);
                Ok((g(t, r + h) - 2.0 * g(t, r) + g(t, r - h)) / (h * h))
            }
        }
    }
}

/// Kernel description as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

impl KernelConfig {
    pub fn power(rho: f64) -> Self {
        KernelConfig {
            kind: KernelKind::Power,
            rho,
            eta: None,
        }
    }

    pub fn power_log(rho: f64, eta: f64) -> Self {
        KernelConfig {
            kind: KernelKind::PowerLog,
            rho,
            eta: Some(eta),
        }
    }

    pub fn build(&self) -> Result<Kernel> {
        match self.kind {
            KernelKind::Power => make_power_kernel(self.rho),
            KernelKind::PowerLog => make_power_log_kernel(self.rho, self.eta.unwrap_or(0.0)),
            KernelKind::UserDefined => Err(Error::Config(
                "user-defined kernels cannot be built from a config record".into(),
            )),
        }
    }
}

/// Pass/fail of one limit condition, with the reason when it failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub passed: bool,
    pub reason: Option<String>,
}

/// Verdict rule shared by all limit diagnostics: the two smallest-h residuals
/// are below `tol` and the last three do not increase (up to
/// [`MONOTONE_NOISE_FLOOR`]).
pub fn limit_verdict(residuals: &[f64], tol: f64) -> Verdict {
    let fail = |reason: String| Verdict {
        passed: false,
        reason: Some(reason),
    };
    let n = residuals.len();
    if n < 3 {
        return fail(format!("needs at least three schedule values, got {n}"));
    }
    if let Some(i) = residuals.iter().position(|r| !r.is_finite()) {
        return fail(format!("non-finite residual at schedule index {i}"));
    }
    let tail = &residuals[n - 3..];
    if !(tail[1] < tol && tail[2] < tol) {
        return fail(format!(
            "smallest-h residuals {:e}, {:e} not below {:e}",
            tail[1], tail[2], tol
        ));
    }
    if tail[1] > tail[0].max(MONOTONE_NOISE_FLOOR) || tail[2] > tail[1].max(MONOTONE_NOISE_FLOOR) {
        return fail(format!(
            "residuals increase over the last three values: {:e}, {:e}, {:e}",
            tail[0], tail[1], tail[2]
        ));
    }
    Verdict {
        passed: true,
        reason: None,
    }
}

fn validate_schedule(name: &'static str, schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(invalid(name, "empty schedule"));
    }
    if schedule.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(invalid(name, "entries must be positive and finite"));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid(name, "must be strictly decreasing"));
    }
    Ok(())
}

pub(crate) fn check_decreasing(name: &'static str, schedule: &[f64]) -> Result<()> {
    validate_schedule(name, schedule)
}

fn sup_grid(lo: f64, hi: f64, interior: usize) -> Vec<f64> {
    let n = interior + 1;
    (0..=n)
        .map(|i| if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 })
        .collect()
}

/// Residuals of the four smooth-variation limits and of the `F / (h f)` ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothVariationReport {
    pub h_schedule: Vec<f64>,
    /// Conditions a–d, each indexed like `h_schedule`.
    pub condition_residuals: [Vec<f64>; 4],
    /// `sup_t |F(t,t-h) / (h f(t,t-h)) + 1/rho|`.
    pub ratio_residual: Vec<f64>,
    pub verdicts: [Verdict; 4],
}

impl SmoothVariationReport {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
        w.write_record(["h", "res_a", "res_b", "res_c", "res_d", "res_ratio"])
            .map_err(io)?;
        for (i, h) in self.h_schedule.iter().enumerate() {
            let row = [
                *h,
                self.condition_residuals[0][i],
                self.condition_residuals[1][i],
                self.condition_residuals[2][i],
                self.condition_residuals[3][i],
                self.ratio_residual[i],
            ];
            w.write_record(row.iter().map(|x| x.to_string())).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Config(format!("csv flush failed: {e}")))?;
        Ok(())
    }
}

/// Checks the smooth-variation limits of `k` on the compact `[t_lo, t_hi]`.
///
/// Partial-derivative domain errors do not abort the run; the affected
/// condition gets a NaN residual and a failing verdict with the reason.
pub fn check_smooth_variation(
    k: &Kernel,
    interval: (f64, f64),
    h_schedule: &[f64],
    tol: f64,
) -> Result<SmoothVariationReport> {
    let (t_lo, t_hi) = interval;
    if !(t_lo < t_hi) {
        return Err(invalid("interval", format!("empty interval [{t_lo}, {t_hi}]")));
    }
    validate_schedule("h_schedule", h_schedule)?;
    if h_schedule.len() < 3 {
        return Err(invalid("h_schedule", "needs at least three values"));
    }
    if h_schedule[0] >= t_hi - t_lo {
        return Err(invalid("h_schedule", "largest h must be below the interval length"));
    }
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    let rho = k.index();
    let grid = sup_grid(t_lo, t_hi, SUP_GRID_POINTS);
    let mut residuals: [Vec<f64>; 4] = Default::default();
    let mut ratio = Vec::with_capacity(h_schedule.len());
    let mut reasons: [Option<String>; 4] = Default::default();

    for &h in h_schedule {
        let mut sup = [0.0f64; 4];
        let mut sup_ratio = 0.0f64;
        let mut broken = [false; 4];
        for &t in &grid {
            let conds: [Result<f64>; 4] = [
                k.eval_span(t, h)
                    .and_then(|f| Ok((h * k.d_dr_span(t, h)? / f + rho).abs())),
                k.eval_span(t + h, h)
                    .and_then(|f| Ok((h * k.d_dt_span(t + h, h)? / f - rho).abs())),
                k.eval_span(t, h).and_then(|f| {
                    Ok((h * h * k.d2_dtdr_span(t, h)? / f + rho * (rho - 1.0)).abs())
                }),
                k.eval_span(t, h).and_then(|f| {
                    Ok((h * h * k.d2_dr2_span(t, h)? / f - rho * (rho - 1.0)).abs())
                }),
            ];
            for (i, c) in conds.into_iter().enumerate() {
                match c {
                    Ok(v) if v.is_finite() => sup[i] = sup[i].max(v),
                    Ok(v) => {
                        broken[i] = true;
                        reasons[i].get_or_insert_with(|| {
                            format!("non-finite residual {v} at t={t}, h={h}")
                        });
                    }
                    Err(e) => {
                        broken[i] = true;
                        reasons[i].get_or_insert_with(|| e.to_string());
                    }
                }
            }
            let r = k
                .eval_span(t, h)
                .and_then(|f| Ok((f / (h * k.d_dr_span(t, h)?) + 1.0 / rho).abs()));
            sup_ratio = match r {
                Ok(v) => sup_ratio.max(v),
                Err(_) => f64::NAN,
            };
        }
        for i in 0..4 {
            residuals[i].push(if broken[i] { f64::NAN } else { sup[i] });
        }
        ratio.push(sup_ratio);
    }

    let verdicts = std::array::from_fn(|i| match &reasons[i] {
        Some(reason) => Verdict {
            passed: false,
            reason: Some(reason.clone()),
        },
        None => limit_verdict(&residuals[i], tol),
    });
    Ok(SmoothVariationReport {
        h_schedule: h_schedule.to_vec(),
        condition_residuals: residuals,
        ratio_residual: ratio,
        verdicts,
    })
}

/// `f(t + δ, t)`, rejected when zero.
pub(crate) fn diagonal_weight(k: &Kernel, t: f64, delta: f64) -> Result<f64> {
    let den = k.d_dr_span(t + delta, delta)?;
    if den == 0.0 {
        return Err(Error::KernelInvariant {
            t: t + delta,
            r: t,
            reason: "f vanishes next to the diagonal".into(),
        });
    }
    Ok(den)
}

/// `g_delta(t, v) = (f(t+δ, t-δv) - f(t, t-δv)) / f(t+δ, t)`.
pub fn g_delta(k: &Kernel, t: f64, v: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) || !(v >= 0.0) {
        return Err(invalid("g_delta", format!("need delta > 0 and v >= 0 (delta={delta}, v={v})")));
    }
    let den = diagonal_weight(k, t, delta)?;
    Ok((k.d_dr_span(t + delta, delta + delta * v)? - k.d_dr_span(t, delta * v)?) / den)
}

/// `f_delta(t, v) = f(t+δ, t+δ-δv) / f(t+δ, t)` for `v` in `(0, 1]`.
///
/// `v = 0` sits on the diagonal where `f` is singular for every index below
/// one, so it is reported as a domain error.
pub fn f_delta(k: &Kernel, t: f64, v: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) || !(0.0..=1.0).contains(&v) {
        return Err(invalid("f_delta", format!("need delta > 0 and v in [0,1] (delta={delta}, v={v})")));
    }
    let den = diagonal_weight(k, t, delta)?;
    if v == 1.0 {
        return Ok(1.0);
    }
    Ok(k.d_dr_span(t + delta, delta * v)? / den)
}

/// `∫_a^b g_δ(t, v) dv` (or of `|g_δ|`), singularity-aware at `v = 0`.
pub fn integrate_g_delta(
    k: &Kernel,
    t: f64,
    delta: f64,
    a: f64,
    b: f64,
    absolute: bool,
) -> Result<f64> {
    let r = quad::integrate_graded(
        |v, _| {
            let g = g_delta(k, t, v, delta)?;
            Ok(if absolute { g.abs() } else { g })
        },
        a,
        b,
        0.0,
        k.index(),
        quad::DEFAULT_REL_TOL,
    )?;
    Ok(r.value)
}

/// `∫_0^1 f_δ(t, v) dv` (or of `|f_δ|`).
pub fn integrate_f_delta(k: &Kernel, t: f64, delta: f64, absolute: bool) -> Result<f64> {
    let r = quad::integrate_graded(
        |v, _| {
            let f = f_delta(k, t, v, delta)?;
            Ok(if absolute { f.abs() } else { f })
        },
        0.0,
        1.0,
        0.0,
        k.index(),
        quad::DEFAULT_REL_TOL,
    )?;
    Ok(r.value)
}

/// Residual sequences of the `g_δ` / `f_δ` integral limits over a δ-schedule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegralDiagnostics {
    pub delta_schedule: Vec<f64>,
    /// Component names, e.g. `["a", "b", "c", "d"]`.
    pub names: Vec<&'static str>,
    /// `residuals[i][j]`: component `i` at `delta_schedule[j]`.
    pub residuals: Vec<Vec<f64>>,
    pub verdicts: Vec<Verdict>,
}

impl IntegralDiagnostics {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
        let mut header = vec!["delta".to_string()];
        header.extend(self.names.iter().map(|n| format!("res_{n}")));
        w.write_record(&header).map_err(io)?;
        for (j, d) in self.delta_schedule.iter().enumerate() {
            let mut row = vec![d.to_string()];
            row.extend(self.residuals.iter().map(|r| r[j].to_string()));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Config(format!("csv flush failed: {e}")))?;
        Ok(())
    }
}

/// Number of interior t-points used by the integral diagnostics.
pub const DIAGNOSTIC_GRID_POINTS: usize = 15;

fn at(t: f64, delta: f64) -> impl Fn(Error) -> Error {
    move |e| Error::DiagnosticFailure {
        t,
        delta,
        source: Box::new(e),
    }
}

/// Residuals of the `g_δ` integral limits:
///
/// * (a) `sup_{t >= h0} ∫_{h0/δ}^{t/δ} |g_δ| dv`
/// * (b) `sup_t |∫_0^{h0/δ} g_δ dv + 1/d|`
/// * (c) `sup_{t >= h0} |∫_0^{t/δ} g_δ dv + 1/d|`
/// * (d) `sup_{t >= h0} |∫_0^{h0/δ} |g_δ| dv - 1/d|`
pub fn gdelta_integral_diagnostics(
    k: &Kernel,
    t_interval: (f64, f64),
    h0: f64,
    delta_schedule: &[f64],
    tol: f64,
) -> Result<IntegralDiagnostics> {
    let (t_lo, t_hi) = t_interval;
    if !(h0 > 0.0 && h0 <= 1.0) {
        return Err(invalid("h0", format!("must lie in (0,1], got {h0}")));
    }
    if !(t_lo <= t_hi) || t_hi < h0 {
        return Err(invalid("t_interval", "needs t_lo <= t_hi and t_hi >= h0"));
    }
    validate_schedule("delta_schedule", delta_schedule)?;
    let d = k.index();
    let grid = if t_lo == t_hi {
        vec![t_lo]
    } else {
        sup_grid(t_lo, t_hi, DIAGNOSTIC_GRID_POINTS)
    };
    let upper: Vec<f64> = grid.iter().copied().filter(|&t| t >= h0).collect();
    let mut residuals = vec![Vec::new(); 4];
    for &delta in delta_schedule {
        let (mut ra, mut rb, mut rc, mut rd) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for &t in &grid {
            let v0 = h0 / delta;
            let int_h0 = integrate_g_delta(k, t, delta, 0.0, v0, false).map_err(at(t, delta))?;
            rb = rb.max((int_h0 + 1.0 / d).abs());
            if t < h0 {
                continue;
            }
            let vt = t / delta;
            let tail_abs = integrate_g_delta(k, t, delta, v0, vt, true).map_err(at(t, delta))?;
            let tail = integrate_g_delta(k, t, delta, v0, vt, false).map_err(at(t, delta))?;
            let abs_h0 = integrate_g_delta(k, t, delta, 0.0, v0, true).map_err(at(t, delta))?;
            ra = ra.max(tail_abs);
            rc = rc.max((int_h0 + tail + 1.0 / d).abs());
            rd = rd.max((abs_h0 - 1.0 / d).abs());
        }
        if upper.is_empty() {
            ra = 0.0;
        }
        residuals[0].push(ra);
        residuals[1].push(rb);
        residuals[2].push(rc);
        residuals[3].push(rd);
    }
    let verdicts = residuals.iter().map(|r| limit_verdict(r, tol)).collect();
    Ok(IntegralDiagnostics {
        delta_schedule: delta_schedule.to_vec(),
        names: vec!["a", "b", "c", "d"],
        residuals,
        verdicts,
    })
}

/// Residuals of the `f_δ` integral limits:
///
/// * (a) `sup_t |∫_0^1 |f_δ| dv - 1/d|`
/// * (b) `sup_t |∫_0^1 f_δ dv - 1/d|`
pub fn fdelta_integral_diagnostics(
    k: &Kernel,
    t_interval: (f64, f64),
    delta_schedule: &[f64],
    tol: f64,
) -> Result<IntegralDiagnostics> {
    let (t_lo, t_hi) = t_interval;
    if !(t_lo <= t_hi) {
        return Err(invalid("t_interval", "needs t_lo <= t_hi"));
    }
    validate_schedule("delta_schedule", delta_schedule)?;
    let d = k.index();
    let grid = if t_lo == t_hi {
        vec![t_lo]
    } else {
        sup_grid(t_lo, t_hi, DIAGNOSTIC_GRID_POINTS)
    };
    let mut residuals = vec![Vec::new(); 2];
    for &delta in delta_schedule {
        let (mut ra, mut rb) = (0.0f64, 0.0f64);
        for &t in &grid {
            let abs = integrate_f_delta(k, t, delta, true).map_err(at(t, delta))?;
            let plain = integrate_f_delta(k, t, delta, false).map_err(at(t, delta))?;
            ra = ra.max((abs - 1.0 / d).abs());
            rb = rb.max((plain - 1.0 / d).abs());
        }
        residuals[0].push(ra);
        residuals[1].push(rb);
    }
    let verdicts = residuals.iter().map(|r| limit_verdict(r, tol)).collect();
    Ok(IntegralDiagnostics {
        delta_schedule: delta_schedule.to_vec(),
        names: vec!["a", "b"],
        residuals,
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn power_kernel_values() {
        let k = make_power_kernel(0.5).unwrap();
        assert_eq!(k.eval(1.0, 0.75).unwrap(), 0.5);
        assert_eq!(k.eval(0.3, 0.3).unwrap(), 0.0);
        assert_eq!(k.kind(), KernelKind::Power);
        let k = make_power_kernel(0.3).unwrap();
        for &(t, h) in &[(1.0, 1e-3), (0.4, 0.2), (5.0, 1e-8)] {
            let ratio = h * k.d_dr_span(t, h).unwrap() / k.eval_span(t, h).unwrap();
            assert!((ratio + 0.3).abs() < 1e-12, "{ratio}");
        }
    }

    #[test]
    fn rho_outside_unit_interval_is_rejected() {
        for rho in [0.0, 1.0, 1.5, -0.2, f64::NAN] {
            assert!(make_power_kernel(rho).is_err());
            assert!(make_power_log_kernel(rho, 1.0).is_err());
        }
    }

    #[test]
    fn power_log_values_and_domain() {
        let k = make_power_log_kernel(0.5, 0.0).unwrap();
        assert!((k.eval(1.0, 0.75).unwrap() - 0.5).abs() < 1e-15);
        let k = make_power_log_kernel(0.3, 1.0).unwrap();
        let r = 1.0 - (-1.0f64).exp();
        let v = k.eval(1.0, r).unwrap();
        assert!((v - (-0.3f64).exp()).abs() < 1e-14);
        assert!((v - 0.7408).abs() < 5e-5);
        assert_eq!(k.eval(2.0, 2.0).unwrap(), 0.0);
        assert!(matches!(k.eval(2.0, 1.0), Err(Error::Domain { .. })));
        assert!(matches!(k.d_dr(2.0, 2.0), Err(Error::Domain { .. })));
        assert!(matches!(k.eval(0.0, 1.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn analytic_partials_match_finite_differences() {
        let kernels = [
            make_power_kernel(0.25).unwrap(),
            make_power_kernel(0.75).unwrap(),
            make_power_log_kernel(0.3, 1.0).unwrap(),
            make_power_log_kernel(0.6, -0.5).unwrap(),
        ];
        for k in &kernels {
            for &u in &[1e-3f64, 3e-3, 0.01, 0.1, 0.5, 0.9] {
                let (t, r) = (0.25 + u, 0.25);
                // Wider steps than the fallback for the second differences.
                let w = u.min(1.0 - u);
                let h1 = 1e-5 * w;
                let h2 = 1e-3 * w;
                let f = |a: f64, b: f64| k.eval(a, b).unwrap();
                let fd_dr = (f(t, r + h1) - f(t, r - h1)) / (2.0 * h1);
                let fd_dt = (f(t + h1, r) - f(t - h1, r)) / (2.0 * h1);
                let fd_rr = (f(t, r + h2) - 2.0 * f(t, r) + f(t, r - h2)) / (h2 * h2);
                // The mixed stencil sees an effective step of 2 h3 in t - r.
                let h3 = 0.5 * h2;
                let fd_tr = (f(t + h3, r + h3) - f(t + h3, r - h3) - f(t - h3, r + h3)
                    + f(t - h3, r - h3))
                    / (4.0 * h3 * h3);
                let label = k.label();
                assert!(rel(k.d_dr(t, r).unwrap(), fd_dr) < 1e-6, "{label} d_dr u={u}");
                assert!(rel(k.d_dt(t, r).unwrap(), fd_dt) < 1e-6, "{label} d_dt u={u}");
                // Second partials can nearly cancel; measure them on the scale F/u^2.
                let scale2 = f(t, r) / (u * u);
                let rel2 = |a: f64, b: f64| (a - b).abs() / b.abs().max(scale2);
                assert!(rel2(k.d2_dr2(t, r).unwrap(), fd_rr) < 1e-6, "{label} d2_dr2 u={u}");
                assert!(rel2(k.d2_dtdr(t, r).unwrap(), fd_tr) < 1e-6, "{label} d2_dtdr u={u}");
            }
        }
    }

    #[test]
    fn user_kernel_fallback_tracks_analytic_partials() {
        let rho = 0.4;
        let user = make_user_kernel("pow", rho, move |t, r| (t - r).powf(rho)).unwrap();
        let exact = make_power_kernel(rho).unwrap();
        assert_eq!(user.kind(), KernelKind::UserDefined);
        for &u in &[1e-3, 0.05, 0.7] {
            let (t, r) = (2.0, 2.0 - u);
            assert!(rel(user.d_dr(t, r).unwrap(), exact.d_dr(t, r).unwrap()) < 1e-7);
            assert!(rel(user.d_dt(t, r).unwrap(), exact.d_dt(t, r).unwrap()) < 1e-7);
            assert!(rel(user.d2_dr2(t, r).unwrap(), exact.d2_dr2(t, r).unwrap()) < 1e-4);
            assert!(rel(user.d2_dtdr(t, r).unwrap(), exact.d2_dtdr(t, r).unwrap()) < 1e-4);
        }
    }

    #[test]
    fn power_kernel_smooth_variation_residuals_vanish() {
        let k = make_power_kernel(0.5).unwrap();
        let hs = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
        let rep = check_smooth_variation(&k, (0.1, 0.9), &hs, 1e-10).unwrap();
        for res in rep.condition_residuals.iter().chain(std::iter::once(&rep.ratio_residual)) {
            assert_eq!(res.len(), hs.len());
            assert!(res.iter().all(|r| *r <= 1e-12), "{res:?}");
        }
        assert!(rep.all_passed(), "{:?}", rep.verdicts);
    }

    #[test]
    fn power_log_residuals_match_closed_form() {
        // Condition (a) residual is exactly eta / |log h| for this kernel, and the
        // F/(h f) residual is eta / (rho (rho |log h| - eta)).
        let (rho, eta) = (0.3, 1.0);
        let k = make_power_log_kernel(rho, eta).unwrap();
        let hs = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
        let rep = check_smooth_variation(&k, (0.1, 0.5), &hs, 0.1).unwrap();
        for (i, &h) in hs.iter().enumerate() {
            let l = -f64::ln(h);
            assert!(rel(rep.condition_residuals[0][i], eta / l) < 1e-9);
            assert!(rel(rep.condition_residuals[1][i], eta / l) < 1e-9);
            let c = (eta * (2.0 * rho - 1.0) / l - eta * (eta - 1.0) / (l * l)).abs();
            assert!(rel(rep.condition_residuals[2][i], c) < 1e-9);
            assert!(rel(rep.condition_residuals[3][i], c) < 1e-9);
            let expect_ratio = eta / (rho * (rho * l - eta));
            assert!(rel(rep.ratio_residual[i], expect_ratio) < 1e-9);
        }
        assert!(rep.ratio_residual.windows(2).all(|w| w[1] < w[0]));
        assert!(rep.all_passed(), "{:?}", rep.verdicts);
    }

    #[test]
    fn oscillating_kernel_fails_condition_a() {
        let k = make_user_kernel("oscillating", 0.3, |t, r| {
            let u: f64 = t - r;
            u.powf(0.3) * (2.0 + (1.0 / u).sin())
        })
        .unwrap();
        let hs = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
        let rep = check_smooth_variation(&k, (0.1, 0.9), &hs, 0.1).unwrap();
        assert!(!rep.verdicts[0].passed);
        assert!(rep.condition_residuals[0][4] > 1.0);
    }

    #[test]
    fn verdict_rule() {
        assert!(limit_verdict(&[0.5, 0.05, 0.01], 0.1).passed);
        assert!(!limit_verdict(&[0.5, 0.05, 0.06], 0.1).passed);
        assert!(!limit_verdict(&[0.5, 0.2, 0.01], 0.1).passed);
        assert!(!limit_verdict(&[0.05, 0.01], 0.1).passed);
        assert!(limit_verdict(&[1e-16, 3e-16, 2e-16], 1e-12).passed);
        assert!(!limit_verdict(&[1.0, f64::NAN, 0.0], 0.1).passed);
    }

    #[test]
    fn schedules_must_decrease() {
        let k = make_power_kernel(0.5).unwrap();
        assert!(check_smooth_variation(&k, (0.1, 0.9), &[1e-3, 1e-2, 1e-4], 0.1).is_err());
        assert!(check_smooth_variation(&k, (0.1, 0.9), &[1e-2, 1e-3], 0.1).is_err());
    }

    #[test]
    fn g_and_f_delta_for_power_kernel() {
        let d = 0.25;
        let k = make_power_kernel(d).unwrap();
        let g = g_delta(&k, 0.5, 2.0, 1e-3).unwrap();
        let expect = 3f64.powf(d - 1.0) - 2f64.powf(d - 1.0);
        assert!(rel(g, expect) < 1e-12);
        let k5 = make_power_kernel(0.5).unwrap();
        let f = f_delta(&k5, 0.3, 0.5, 1e-4).unwrap();
        assert!((f - 1.41421).abs() < 1e-5);
        assert_eq!(f_delta(&k5, 0.3, 1.0, 1e-4).unwrap(), 1.0);
        assert!(f_delta(&k5, 0.3, 0.0, 1e-4).is_err());
        // g_δ → −∞ like −v^(d-1) at small v
        let small = g_delta(&k, 0.5, 1e-8, 1e-3).unwrap();
        assert!(small < -1e5);
    }

    #[test]
    fn g_delta_integral_closed_form() {
        let d = 0.25;
        let k = make_power_kernel(d).unwrap();
        let big_v: f64 = 1e3;
        let closed = ((1.0 + big_v).powf(d) - big_v.powf(d) - 1.0) / d;
        let q = integrate_g_delta(&k, 0.5, 1e-4, 0.0, big_v, false).unwrap();
        assert!(rel(q, closed) < 1e-9, "{q} vs {closed}");
        let q_abs = integrate_g_delta(&k, 0.5, 1e-4, 0.0, big_v, true).unwrap();
        assert!(rel(q_abs, -closed) < 1e-9);
        let f = integrate_f_delta(&make_power_kernel(0.5).unwrap(), 0.5, 1e-3, false).unwrap();
        assert!((f - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gdelta_diagnostics_power_kernel() {
        let k = make_power_kernel(0.25).unwrap();
        let rep = gdelta_integral_diagnostics(&k, (0.5, 1.0), 0.5, &[1e-3, 1e-4], 1.0).unwrap();
        let v = 0.5 / 1e-4;
        let closed = ((1.0f64 + v).powf(0.25) - v.powf(0.25)) / 0.25;
        assert!(rel(rep.residuals[1][1], closed) < 1e-6);
        assert!(rep.residuals[1][1] < 2e-3);
        // (b) and (d) coincide since g_δ < 0 everywhere for the power kernel.
        assert!(rel(rep.residuals[3][1], rep.residuals[1][1]) < 1e-6);

        // Empty tail range when t = h0.
        let rep = gdelta_integral_diagnostics(&k, (0.5, 0.5), 0.5, &[1e-2, 1e-3, 1e-4], 1.0).unwrap();
        assert!(rep.residuals[0].iter().all(|r| *r == 0.0));

        let k = make_power_kernel(0.5).unwrap();
        let rep = gdelta_integral_diagnostics(&k, (0.2, 1.0), 1.0, &[1e-3, 1e-4, 1e-5], 1e-2).unwrap();
        for comp in &rep.residuals {
            assert!(comp[2] < 1e-2, "{comp:?}");
        }
    }

    #[test]
    fn fdelta_diagnostics() {
        let k = make_power_kernel(0.5).unwrap();
        let rep = fdelta_integral_diagnostics(&k, (0.0, 1.0), &[1e-2, 1e-3, 1e-4], 1e-9).unwrap();
        for comp in &rep.residuals {
            assert!(comp.iter().all(|r| *r < 1e-10), "{comp:?}");
        }
        assert_eq!(rep.residuals[0], rep.residuals[1]);

        // Power-log: ∫_0^1 f_δ dv - 1/ρ = 1 / (ρ (ρ|log δ| - 1)) for η = 1.
        let rho = 0.3;
        let k = make_power_log_kernel(rho, 1.0).unwrap();
        let ds = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
        let rep = fdelta_integral_diagnostics(&k, (0.1, 0.5), &ds, 0.1).unwrap();
        for (j, &d) in ds.iter().enumerate() {
            let expect = 1.0 / (rho * (rho * -f64::ln(d) - 1.0));
            assert!(rel(rep.residuals[1][j], expect) < 1e-7, "{} {}", rep.residuals[1][j], expect);
        }
        assert!(rep.residuals[1].windows(2).all(|w| w[1] < w[0]));
    }

    proptest! {
        #[test]
        fn built_in_kernels_vanish_on_diagonal_and_are_positive_off_it(
            t in -5.0f64..5.0, u in 1e-6f64..0.99, rho in 0.05f64..0.95, eta in -2.0f64..2.0
        ) {
            for k in [make_power_kernel(rho).unwrap(), make_power_log_kernel(rho, eta).unwrap()] {
                prop_assert_eq!(k.eval(t, t).unwrap(), 0.0);
                prop_assert!(k.eval(t, t - u).unwrap() > 0.0);
            }
        }

        #[test]
        fn power_kernel_ratios_are_invariant_in_t_and_delta(
            t1 in 0.0f64..1.0, t2 in 0.0f64..1.0,
            l1 in -2.0f64..-1.0, l2 in -2.0f64..-1.0,
            v in 0.001f64..50.0, w in 0.001f64..1.0, d in 0.05f64..0.95
        ) {
            let k = make_power_kernel(d).unwrap();
            let (d1, d2) = (10f64.powf(l1), 10f64.powf(l2));
            let g1 = g_delta(&k, t1, v, d1).unwrap();
            let g2 = g_delta(&k, t2, v, d2).unwrap();
            prop_assert!((g1 - g2).abs() <= 1e-12 * g1.abs().max(1.0));
            let f1 = f_delta(&k, t1, w, d1).unwrap();
            let f2 = f_delta(&k, t2, w, d2).unwrap();
            prop_assert!((f1 - f2).abs() <= 1e-12 * f1.abs().max(1.0));
        }
    }
}
