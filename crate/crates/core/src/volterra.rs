//! Pathwise evaluation of `M(t) = ∫_0^t F(t, r) dX(r)`.
//!
//! Two independent routes are provided. [`eval_direct`] sums the jumps
//! exactly and integrates `F` against the piecewise-linear continuous part.
//! [`eval_by_parts`] computes `-Y(t)` with `Y(t) = ∫_0^t f(t, r) X(r) dr`,
//! exact on jump segments and by singular quadrature for the continuous part.
//! [`decompose_increment`] splits `Y(t+δ) - Y(t)` into the near-diagonal
//! piece `J1` and the remainder `J2`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::drivers::CadlagPath;
use crate::error::{invalid, Error, Result};
use crate::kernels::{diagonal_weight, Kernel, KernelKind};
use crate::quad::{self, QuadResult};

/// Evaluation route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Direct,
    ByParts,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::ByParts => "by-parts",
        }
    }
}

/// `M` on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolterraPath {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub method: Method,
    pub kernel_id: String,
    pub driver_id: String,
}

impl VolterraPath {
    /// CSV with columns `t,value,method`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
        w.write_record(["t", "value", "method"]).map_err(io)?;
        for (t, v) in self.grid.iter().zip(&self.values) {
            w.write_record([t.to_string(), v.to_string(), self.method.as_str().to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Config(format!("csv flush failed: {e}")))?;
        Ok(())
    }
}

/// `Y(t+δ) - Y(t) = J1 + J2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IncrementDecomposition {
    pub t: f64,
    pub delta: f64,
    pub j1: f64,
    pub j2: f64,
    pub total: f64,
    /// Quadrature scale `∫|integrand|` summed over both pieces.
    pub abs_scale: f64,
}

impl IncrementDecomposition {
    pub fn write_csv<W: Write>(rows: &[IncrementDecomposition], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
        w.write_record(["t", "delta", "J1", "J2", "total"]).map_err(io)?;
        for r in rows {
            w.write_record([r.t, r.delta, r.j1, r.j2, r.total].iter().map(|x| x.to_string()))
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Config(format!("csv flush failed: {e}")))?;
        Ok(())
    }
}

fn check_time(x: &CadlagPath, t: f64) -> Result<()> {
    let (_, t_end) = x.horizon();
    if t >= 0.0 && t <= t_end {
        Ok(())
    } else {
        Err(Error::OutsideHorizon {
            t,
            t_begin: 0.0,
            t_end,
        })
    }
}

/// `∫_lo^hi F(t, r) dr` for `lo <= hi <= t`.
fn kernel_mass(k: &Kernel, t: f64, lo: f64, hi: f64) -> Result<f64> {
    let (u_lo, u_hi) = (t - hi, t - lo);
    if k.kind() == KernelKind::Power {
        let p = k.index() + 1.0;
        return Ok((u_hi.powf(p) - u_lo.powf(p)) / p);
    }
    let r = quad::integrate_graded(
        |r, s| k.eval_span(t, if r == t { 0.0 } else { s }),
        lo,
        hi,
        t,
        k.index() + 1.0,
        quad::DEFAULT_REL_TOL,
    )?;
    Ok(r.value)
}

/// Segment boundaries `0 = s_0 < ... < s_n = t` at the diffusion knots.
fn knot_segments(x: &CadlagPath, t: f64) -> Vec<f64> {
    let mut pts = vec![0.0];
    pts.extend(x.knots_between(0.0, t));
    pts.push(t);
    pts
}

/// `M(t)` by the direct route: exact jump sum plus `∫ F dC` for the
/// piecewise-linear continuous part `C(r) = b r + W(r)`.
pub fn eval_direct(k: &Kernel, x: &CadlagPath, t: f64) -> Result<f64> {
    check_time(x, t)?;
    let mut m = 0.0;
    for (&tau, &size) in x.jump_times().iter().zip(x.jump_sizes()) {
        if tau <= 0.0 {
            continue;
        }
        if tau > t {
            break;
        }
        m += size * k.eval_span(t, t - tau)?;
    }
    if x.is_pure_jump() || t == 0.0 {
        return Ok(m);
    }
    let seg = knot_segments(x, t);
    for w in seg.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let slope = (x.continuous_part(hi) - x.continuous_part(lo)) / (hi - lo);
        if slope != 0.0 {
            m += slope * kernel_mass(k, t, lo, hi)?;
        }
    }
    Ok(m)
}

/// Breakpoints of `v ↦ X(anchor - scale v)` on `(0, v_max)`, as an increasing
/// list starting at 0 and ending at `v_max`.
fn v_pieces(x: &CadlagPath, anchor: f64, scale: f64, v_max: f64) -> Vec<f64> {
    let lo = anchor - scale * v_max;
    let mut vs: Vec<f64> = x
        .breakpoints(lo, anchor)
        .into_iter()
        .map(|b| (anchor - b) / scale)
        .filter(|&v| v > 0.0 && v < v_max)
        .collect();
    vs.push(0.0);
    vs.push(v_max);
    vs.sort_by(f64::total_cmp);
    vs.dedup();
    vs
}

/// Which parts of the driver enter a path integral.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Parts {
    All,
    Continuous,
}

/// `∫_0^{v_max} w(v, v) X(anchor - scale v) dv`, split at the path's
/// breakpoints. The jump part is read once per piece at its midpoint, so
/// rounding in `anchor - scale v` cannot move a node across a jump.
fn integrate_against_path<W>(
    x: &CadlagPath,
    anchor: f64,
    scale: f64,
    v_max: f64,
    alpha: f64,
    parts: Parts,
    mut weight: W,
) -> Result<QuadResult>
where
    W: FnMut(f64) -> Result<f64>,
{
    let mut total = QuadResult::ZERO;
    if v_max <= 0.0 {
        return Ok(total);
    }
    let pieces = v_pieces(x, anchor, scale, v_max);
    let with_cont = !x.is_pure_jump();
    for p in pieces.windows(2) {
        let (va, vb) = (p[0], p[1]);
        let jump = match parts {
            Parts::All => x.jump_part(anchor - scale * 0.5 * (va + vb)),
            Parts::Continuous => 0.0,
        };
        if jump == 0.0 && !with_cont {
            continue;
        }
        let r = quad::integrate_graded(
            |v, _| {
                let c = if with_cont { x.continuous_part(anchor - scale * v) } else { 0.0 };
                Ok(weight(v)? * (jump + c))
            },
            va,
            vb,
            0.0,
            alpha,
            quad::DEFAULT_REL_TOL,
        )?;
        total.value += r.value;
        total.abs_value += r.abs_value;
        total.nodes += r.nodes;
    }
    Ok(total)
}

/// `Y(t) = ∫_0^t f(t, r) X(r) dr`.
///
/// Jump segments use `∫_lo^hi f(t, r) dr = F(t, hi) - F(t, lo)`; the
/// continuous part is integrated with singular quadrature anchored at `r = t`.
pub fn by_parts_integral(k: &Kernel, x: &CadlagPath, t: f64) -> Result<f64> {
    check_time(x, t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let mut y = 0.0;
    let mut lo = 0.0;
    let mut f_lo = k.eval_span(t, t)?;
    let inside = x.jump_times_between(0.0, t);
    for &tau in inside.iter().chain(std::iter::once(&t)) {
        let level = x.jump_part(0.5 * (lo + tau));
        let f_hi = k.eval_span(t, t - tau)?;
        if level != 0.0 {
            y += level * (f_hi - f_lo);
        }
        lo = tau;
        f_lo = f_hi;
    }
    if !x.is_pure_jump() {
        // ∫_0^t f(t, t-u) C(t-u) du with the singularity at u = 0.
        let r = integrate_against_path(x, t, 1.0, t, k.index(), Parts::Continuous, |u| {
            k.d_dr_span(t, u)
        })?;
        y += r.value;
    }
    Ok(y)
}

/// `M(t) = -Y(t)`.
pub fn eval_by_parts(k: &Kernel, x: &CadlagPath, t: f64) -> Result<f64> {
    Ok(0.0 - by_parts_integral(k, x, t)?)
}

/// Evaluates `M` on `grid` by the chosen route.
pub fn evaluate_path(k: &Kernel, x: &CadlagPath, grid: &[f64], method: Method, driver_id: &str) -> Result<VolterraPath> {
    let values = grid
        .iter()
        .map(|&t| match method {
            Method::Direct => eval_direct(k, x, t),
            Method::ByParts => eval_by_parts(k, x, t),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VolterraPath {
        grid: grid.to_vec(),
        values,
        method,
        kernel_id: k.label(),
        driver_id: driver_id.to_string(),
    })
}

fn check_increment(x: &CadlagPath, t: f64, delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(invalid("delta", format!("must be positive, got {delta}")));
    }
    check_time(x, t)?;
    check_time(x, t + delta)
}

/// `J1 = δ ∫_0^1 f(t+δ, t+δ-δv) X(t+δ-δv) dv`.
fn j1(k: &Kernel, x: &CadlagPath, t: f64, delta: f64) -> Result<QuadResult> {
    let s = t + delta;
    let mut r = integrate_against_path(x, s, delta, 1.0, k.index(), Parts::All, |v| {
        k.d_dr_span(s, delta * v)
    })?;
    r.value *= delta;
    r.abs_value *= delta;
    Ok(r)
}

/// `J2 = δ ∫_0^{t/δ} [f(t+δ, t-δv) - f(t, t-δv)] X(t-δv) dv`.
fn j2(k: &Kernel, x: &CadlagPath, t: f64, delta: f64) -> Result<QuadResult> {
    let mut r = integrate_against_path(x, t, delta, t / delta, k.index(), Parts::All, |v| {
        Ok(k.d_dr_span(t + delta, delta + delta * v)? - k.d_dr_span(t, delta * v)?)
    })?;
    r.value *= delta;
    r.abs_value *= delta;
    Ok(r)
}

/// Splits `Y(t+δ) - Y(t)` into `J1 + J2`.
pub fn decompose_increment(k: &Kernel, x: &CadlagPath, t: f64, delta: f64) -> Result<IncrementDecomposition> {
    check_increment(x, t, delta)?;
    let a = j1(k, x, t, delta)?;
    let b = j2(k, x, t, delta)?;
    Ok(IncrementDecomposition {
        t,
        delta,
        j1: a.value,
        j2: b.value,
        total: a.value + b.value,
        abs_scale: a.abs_value + b.abs_value,
    })
}

/// `∫_0^{t/δ} g_δ(t, v) X(t - δv) dv`; tends to `-X(t-)/d`.
pub fn gdelta_functional(k: &Kernel, x: &CadlagPath, t: f64, delta: f64) -> Result<f64> {
    check_increment(x, t, delta)?;
    let den = diagonal_weight(k, t, delta)?;
    Ok(j2(k, x, t, delta)?.value / (delta * den))
}

/// `∫_0^1 f_δ(t, v) X(t + δ(1 - v)) dv`; tends to `X(t)/d`.
pub fn fdelta_functional(k: &Kernel, x: &CadlagPath, t: f64, delta: f64) -> Result<f64> {
    check_increment(x, t, delta)?;
    let den = diagonal_weight(k, t, delta)?;
    Ok(j1(k, x, t, delta)?.value / (delta * den))
}

/// Geometric schedule `start, start q, start q^2, ...` with `n` entries.
pub fn geometric_schedule(start: f64, ratio: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| start * ratio.powi(i as i32)).collect()
}
