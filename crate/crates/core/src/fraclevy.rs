//! Fractional Lévy paths from the moving-average representation
//! `M_d(t) = 1/Γ(d) ∫ [(t-r)_+^(d-1) - (-r)_+^(d-1)] L(r) dr`,
//! truncated to `r >= -T` and split as `M1 + M2` at `r = 0`.
//!
//! For a pure-jump two-sided `L` both pieces reduce to finite sums over jumps:
//! per constant segment `∫ (t-r)^(d-1) dr = [(t-lo)^d - (t-hi)^d] / d`.

use std::io::Write;

use serde::Serialize;

use crate::drivers::CadlagPath;
use crate::error::{invalid, Error, Result};
use crate::quad;

/// Exponent slack of the iterated-logarithm envelope `u^(1/2 + ε)`.
pub const LIL_EPSILON: f64 = 0.01;

/// Target of the default cutoff: tail bound at most this times `√E[L(1)^2]`.
pub const DEFAULT_TAIL_FRACTION: f64 = 1e-3;

/// Default cutoff is never below this multiple of the largest grid time.
pub const MIN_CUTOFF_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FracLevyPath {
    pub d: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub m1_values: Vec<f64>,
    pub m2_values: Vec<f64>,
    pub truncation_t: f64,
    /// Bound on the neglected tail's increments over one grid step; `None`
    /// when `d + ε >= 1/2` leaves the envelope integral divergent.
    pub truncation_bound: Option<f64>,
}

impl FracLevyPath {
    /// CSV with columns `t,M,M1,M2`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
        w.write_record(["t", "M", "M1", "M2"]).map_err(io)?;
        for i in 0..self.grid.len() {
            let row = [self.grid[i], self.values[i], self.m1_values[i], self.m2_values[i]];
            w.write_record(row.iter().map(|x| x.to_string())).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Config(format!("csv flush failed: {e}")))?;
        Ok(())
    }
}

fn check_d(d: f64) -> Result<()> {
    if d > 0.0 && d < 0.5 {
        Ok(())
    } else {
        Err(invalid("d", format!("fractional integration parameter must lie in (0, 0.5), got {d}")))
    }
}

fn gamma_d1(d: f64) -> f64 {
    libm::tgamma(d + 1.0)
}

/// `(a + t)^d - a^d` without cancellation for `a >> t`.
fn shift_gap(a: f64, t: f64, d: f64) -> f64 {
    if a == 0.0 {
        t.powf(d)
    } else {
        a.powf(d) * (d * (t / a).ln_1p()).exp_m1()
    }
}

/// `M1(t) = 1/Γ(d) ∫_0^t (t-r)^(d-1) L(r) dr`.
pub fn m1(l: &CadlagPath, d: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut lo = 0.0;
    let inside = l.jump_times_between(0.0, t);
    for &hi in inside.iter().chain(std::iter::once(&t)) {
        let level = l.jump_part(0.5 * (lo + hi));
        if level != 0.0 {
            acc += level * ((t - lo).powf(d) - (t - hi).powf(d));
        }
        lo = hi;
    }
    acc / gamma_d1(d)
}

/// `M2(t) = 1/Γ(d) ∫_{-T}^0 [(t-r)^(d-1) - (-r)^(d-1)] L(r) dr`.
///
/// Each constant segment `[lo, hi]` contributes `L (D(-lo) - D(-hi)) / d` with
/// `D(a) = (a + t)^d - a^d`.
pub fn m2(l: &CadlagPath, d: f64, t: f64, cutoff: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut lo = -cutoff;
    let inside = l.jump_times_between(-cutoff, 0.0);
    for &hi in inside.iter().chain(std::iter::once(&0.0)) {
        let level = l.jump_part(0.5 * (lo + hi));
        if level != 0.0 {
            acc += level * (shift_gap(-lo, t, d) - shift_gap(-hi, t, d));
        }
        lo = hi;
    }
    acc / gamma_d1(d)
}

/// `M2(t)` by singular quadrature anchored at `r = 0`; an independent check
/// of [`m2`].
pub fn m2_by_quadrature(l: &CadlagPath, d: f64, t: f64, cutoff: f64) -> Result<f64> {
    check_d(d)?;
    if t <= 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    let mut lo = -cutoff;
    let inside = l.jump_times_between(-cutoff, 0.0).to_vec();
    for hi in inside.into_iter().chain(std::iter::once(0.0)) {
        let level = l.jump_part(0.5 * (lo + hi));
        if level != 0.0 {
            let r = quad::integrate_graded(
                |r, s| Ok((t - r).powf(d - 1.0) - s.powf(d - 1.0)),
                lo,
                hi,
                0.0,
                d,
                quad::DEFAULT_REL_TOL,
            )?;
            acc += level * r.value;
        }
        lo = hi;
    }
    Ok(acc / libm::tgamma(d))
}

/// Conservative bound on `|tail(t+δ) - tail(t)|` for `|δ| <= delta_max`, where
/// `tail(t) = 1/Γ(d) ∫_{-∞}^{-T} [(t-r)^(d-1) - (-r)^(d-1)] L(r) dr`.
///
/// Uses `|(t+δ+u)^(d-1) - (t+u)^(d-1)| <= (1-d) δ u^(d-2)` and the envelope
/// `|L(-u)| <= σ u^(1/2+ε)`, integrated over `u >= T`.
pub fn truncation_tail_bound(sigma: f64, d: f64, t: f64, cutoff: f64, delta_max: f64) -> Result<f64> {
    check_d(d)?;
    let expo = d - 0.5 + LIL_EPSILON;
    if expo >= 0.0 {
        return Err(invalid(
            "d",
            format!("envelope integral diverges for d + {LIL_EPSILON} >= 1/2 (d = {d})"),
        ));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid("sigma", "must be finite and >= 0"));
    }
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(invalid("T", format!("must be positive, got {cutoff}")));
    }
    if !(delta_max >= 0.0) {
        return Err(invalid("delta_max", "must be >= 0"));
    }
    if !(t >= 0.0) || delta_max >= t + cutoff {
        return Err(invalid("T", format!("needs delta_max < t + T (t={t}, T={cutoff}, delta_max={delta_max})")));
    }
    Ok(sigma * (1.0 - d) * delta_max * cutoff.powf(expo) / (-expo * libm::tgamma(d)))
}

/// Smallest cutoff whose tail bound is at most
/// [`DEFAULT_TAIL_FRACTION`]` σ`, floored at [`MIN_CUTOFF_FACTOR`]` t_max`.
pub fn default_cutoff(sigma: f64, d: f64, t_max: f64, delta_max: f64) -> Result<f64> {
    check_d(d)?;
    let floor = MIN_CUTOFF_FACTOR * t_max.max(1e-3);
    let expo = d - 0.5 + LIL_EPSILON;
    if expo >= 0.0 || sigma == 0.0 || delta_max == 0.0 {
        return Ok(floor);
    }
    // Solve (1-d) δ T^expo / (-expo Γ(d)) = DEFAULT_TAIL_FRACTION.
    let rhs = DEFAULT_TAIL_FRACTION * -expo * libm::tgamma(d) / ((1.0 - d) * delta_max);
    Ok(rhs.powf(1.0 / expo).max(floor))
}

/// Evaluates `M_d = M1 + M2` on `grid` with cutoff `T`.
///
/// `sigma = √E[L(1)^2]` only enters the reported truncation bound.
pub fn eval_fraclevy(l: &CadlagPath, d: f64, grid: &[f64], cutoff: f64, sigma: f64) -> Result<FracLevyPath> {
    check_d(d)?;
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(invalid("T", format!("must be positive, got {cutoff}")));
    }
    if grid.iter().any(|t| !(*t >= 0.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("grid", "times must be >= 0 and strictly increasing"));
    }
    let (t_begin, t_end) = l.horizon();
    let t_max = grid.last().copied().unwrap_or(0.0);
    if t_begin > -cutoff || t_end < t_max {
        return Err(invalid(
            "horizon",
            format!("driver covers [{t_begin}, {t_end}] but needs [-{cutoff}, {t_max}]"),
        ));
    }
    if !l.is_pure_jump() {
        return Err(Error::MomentCondition(
            "fractional Lévy evaluation needs a pure-jump driver without drift or Brownian part".into(),
        ));
    }
    let m1_values: Vec<f64> = grid.iter().map(|&t| m1(l, d, t)).collect();
    let m2_values: Vec<f64> = grid.iter().map(|&t| m2(l, d, t, cutoff)).collect();
    let values = m1_values.iter().zip(&m2_values).map(|(a, b)| a + b).collect();
    let step = grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let truncation_bound = truncation_tail_bound(sigma, d, t_max, cutoff, step).ok();
    Ok(FracLevyPath {
        d,
        grid: grid.to_vec(),
        values,
        m1_values,
        m2_values,
        truncation_t: cutoff,
        truncation_bound,
    })
}

/// Realized increment `tail_a(t+δ) - tail_a(t)` of the part of the
/// representation with `r` in `[-T, a]`, `a < 0`:
/// `1/Γ(d) ∫_{-T}^a [(t+δ-r)^(d-1) - (t-r)^(d-1)] L(r) dr`.
pub fn realized_tail_increment(l: &CadlagPath, d: f64, a: f64, t: f64, delta: f64) -> Result<f64> {
    check_d(d)?;
    let (t_begin, _) = l.horizon();
    if !(a < 0.0 && a > t_begin) {
        return Err(invalid("a", format!("must lie in ({t_begin}, 0), got {a}")));
    }
    if !(t >= 0.0 && delta > 0.0) {
        return Err(invalid("delta", "needs t >= 0 and delta > 0"));
    }
    let gap = |u: f64| shift_gap(t + u, delta, d);
    let mut acc = 0.0;
    let mut lo = t_begin;
    let inside = l.jump_times_between(t_begin, a);
    for &hi in inside.iter().chain(std::iter::once(&a)) {
        let level = l.jump_part(0.5 * (lo + hi));
        if level != 0.0 {
            acc += level * (gap(-lo) - gap(-hi));
        }
        lo = hi;
    }
    Ok(acc / gamma_d1(d))
}
