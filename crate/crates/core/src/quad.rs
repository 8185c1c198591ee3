//! Quadrature for integrands with a power-law endpoint singularity.
//!
//! An integrand that behaves like `|x - anchor|^(alpha - 1)` near `anchor` is
//! regularized by the substitution `x - anchor = ±w^(1/alpha)`, which turns
//! the pure power law into a constant. The transformed integrand is then
//! integrated with composite 16-point Gauss–Legendre panels whose count
//! doubles until two successive results agree. When the interval touches the
//! anchor, the panel next to it is additionally split into a dyadic geometric
//! cascade so that residual logarithmic factors (power-log kernels) do not
//! stall convergence.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Target relative agreement between successive refinements.
pub const DEFAULT_REL_TOL: f64 = 1e-9;
/// Hard cap on integrand evaluations for a single interval.
pub const MAX_NODES: usize = 1 << 20;

const GL_ORDER: usize = 16;
const GEOMETRIC_LEVELS: usize = 40;

/// Outcome of one quadrature call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    /// Integral of the absolute integrand; the scale used for the stopping rule.
    pub abs_value: f64,
    /// Integrand evaluations spent on the final refinement.
    pub nodes: usize,
}

impl QuadResult {
    pub const ZERO: QuadResult = QuadResult {
        value: 0.0,
        abs_value: 0.0,
        nodes: 0,
    };

    fn accumulate(&mut self, other: QuadResult) {
        self.value += other.value;
        self.abs_value += other.abs_value;
        self.nodes += other.nodes;
    }
}

struct GaussLegendre {
    nodes: [f64; GL_ORDER],
    weights: [f64; GL_ORDER],
}

fn gauss_legendre() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_ORDER;
        let mut nodes = [0.0; GL_ORDER];
        let mut weights = [0.0; GL_ORDER];
        for i in 0..n.div_ceil(2) {
            // Chebyshev-like initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let k = k as f64;
                    let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    })
}

fn panel<F>(f: &mut F, a: f64, b: f64, out: &mut QuadResult) -> Result<()>
where
    F: FnMut(f64) -> Result<f64>,
{
    let rule = gauss_legendre();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut sum = 0.0;
    let mut abs_sum = 0.0;
    for (x, w) in rule.nodes.iter().zip(rule.weights.iter()) {
        let y = f(mid + half * x)?;
        if !y.is_finite() {
            return Err(Error::Domain {
                t: f64::NAN,
                r: mid + half * x,
                reason: format!("non-finite integrand value {y}"),
            });
        }
        sum += w * y;
        abs_sum += w * y.abs();
    }
    out.value += half * sum;
    out.abs_value += half.abs() * abs_sum;
    out.nodes += GL_ORDER;
    Ok(())
}

fn composite<F>(f: &mut F, a: f64, b: f64, panels: usize, grade_left: bool) -> Result<QuadResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut out = QuadResult::ZERO;
    let width = (b - a) / panels as f64;
    let first = if grade_left {
        // Dyadic cascade over the first panel: [a + w/2^(j+1), a + w/2^j].
        let mut hi = width;
        for _ in 0..GEOMETRIC_LEVELS {
            let lo = 0.5 * hi;
            panel(f, a + lo, a + hi, &mut out)?;
            hi = lo;
        }
        panel(f, a, a + hi, &mut out)?;
        1
    } else {
        0
    };
    for k in first..panels {
        let lo = a + width * k as f64;
        let hi = if k + 1 == panels { b } else { a + width * (k + 1) as f64 };
        panel(f, lo, hi, &mut out)?;
    }
    Ok(out)
}

/// Composite Gauss–Legendre on `[a, b]` with panel doubling.
///
/// `grade_left` requests the geometric cascade at `a`.
pub fn adaptive_gauss_legendre<F>(
    mut f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    grade_left: bool,
) -> Result<QuadResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    if a == b {
        return Ok(QuadResult::ZERO);
    }
    let mut panels = 2;
    let mut previous = composite(&mut f, a, b, panels, grade_left)?;
    loop {
        panels *= 2;
        let current = composite(&mut f, a, b, panels, grade_left)?;
        let diff = (current.value - previous.value).abs();
        if diff <= rel_tol * current.abs_value || current.abs_value == 0.0 {
            return Ok(current);
        }
        if current.nodes * 2 > MAX_NODES {
            return Err(Error::Quadrature {
                a,
                b,
                nodes: current.nodes,
                last_diff: diff,
            });
        }
        previous = current;
    }
}

/// Integrates `f` over `[a, b]` where `f(x) ~ |x - anchor|^(alpha - 1)` near
/// `anchor`, which must lie outside the open interval `(a, b)`.
///
/// Uses `x = anchor ± w^(1/alpha)` before Gauss–Legendre. The integrand is
/// called as `f(x, s)` with `s = |x - anchor|` computed directly from `w`, so
/// distances below the resolution of `x` stay exact.
pub fn integrate_graded<F>(
    mut f: F,
    a: f64,
    b: f64,
    anchor: f64,
    alpha: f64,
    rel_tol: f64,
) -> Result<QuadResult>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    if !(alpha > 0.0) {
        return Err(crate::error::invalid("alpha", format!("must be positive, got {alpha}")));
    }
    if b < a {
        let mut r = integrate_graded(f, b, a, anchor, alpha, rel_tol)?;
        r.value = -r.value;
        return Ok(r);
    }
    if a == b {
        return Ok(QuadResult::ZERO);
    }
    let inv = 1.0 / alpha;
    if anchor <= a {
        let wa = (a - anchor).powf(alpha);
        let wb = (b - anchor).powf(alpha);
        let touches = a == anchor;
        adaptive_gauss_legendre(
            |w| {
                let jac = inv * w.powf(inv - 1.0);
                let s = w.powf(inv);
                Ok(f(anchor + s, s)? * jac)
            },
            wa,
            wb,
            rel_tol,
            touches,
        )
    } else if anchor >= b {
        // Integrate in w from (anchor-b)^alpha up to (anchor-a)^alpha.
        let wb = (anchor - b).powf(alpha);
        let wa = (anchor - a).powf(alpha);
        let touches = b == anchor;
        adaptive_gauss_legendre(
            |w| {
                let jac = inv * w.powf(inv - 1.0);
                let s = w.powf(inv);
                Ok(f(anchor - s, s)? * jac)
            },
            wb,
            wa,
            rel_tol,
            touches,
        )
    } else {
        Err(crate::error::invalid(
            "anchor",
            format!("anchor {anchor} lies inside ({a}, {b})"),
        ))
    }
}

/// Graded integration over `[a, b]` split at interior `breaks` (assumed sorted),
/// all pieces sharing the same singular anchor.
pub fn integrate_graded_pieces<F>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    anchor: f64,
    alpha: f64,
    rel_tol: f64,
) -> Result<QuadResult>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    let mut total = QuadResult::ZERO;
    let mut lo = a;
    for &x in breaks.iter().filter(|&&x| x > a && x < b) {
        total.accumulate(integrate_graded(&mut f, lo, x, anchor, alpha, rel_tol)?);
        lo = x;
    }
    total.accumulate(integrate_graded(&mut f, lo, b, anchor, alpha, rel_tol)?);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_rule_is_exact_for_polynomials() {
        let r = adaptive_gauss_legendre(|x| Ok(x.powi(7) - 3.0 * x * x), -1.0, 2.0, 1e-14, false)
            .unwrap();
        let exact = (2f64.powi(8) - 1.0) / 8.0 - (8.0 + 1.0);
        assert!((r.value - exact).abs() < 1e-12, "{} vs {}", r.value, exact);
        let wsum: f64 = gauss_legendre().weights.iter().sum();
        assert!((wsum - 2.0).abs() < 1e-14);
    }

    #[test]
    fn power_singularity_is_integrated_exactly() {
        for &d in &[0.1, 0.25, 0.5, 0.75] {
            let r = integrate_graded(|v, _| Ok(v.powf(d - 1.0)), 0.0, 1.0, 0.0, d, 1e-12).unwrap();
            assert!((r.value - 1.0 / d).abs() < 1e-12, "d={d}: {}", r.value);
        }
    }

    #[test]
    fn right_anchor_and_reversed_bounds() {
        let d = 0.3;
        // ∫_0^2 (2-x)^(d-1) dx = 2^d / d
        let r = integrate_graded(|_, s| Ok(s.powf(d - 1.0)), 0.0, 2.0, 2.0, d, 1e-12).unwrap();
        assert!((r.value - 2f64.powf(d) / d).abs() < 1e-11);
        let rev = integrate_graded(|_, s| Ok(s.powf(d - 1.0)), 2.0, 0.0, 2.0, d, 1e-12).unwrap();
        assert!((rev.value + r.value).abs() < 1e-12);
    }

    #[test]
    fn log_factor_converges_with_geometric_cascade() {
        // ∫_0^1 v^(d-1) |ln v| dv = 1/d^2
        let d = 0.3;
        let r = integrate_graded(|v, _| Ok(v.powf(d - 1.0) * (-v.ln())), 0.0, 1.0, 0.0, d, 1e-10).unwrap();
        assert!((r.value - 1.0 / (d * d)).abs() < 1e-8, "{}", r.value);
    }

    #[test]
    fn pieces_with_breakpoints_handle_step_integrands() {
        let d = 0.5;
        let step = |x: f64| if x < 0.3 { 2.0 } else { -1.0 };
        let r = integrate_graded_pieces(
            |x, s| Ok(step(x) * s.powf(d - 1.0)),
            0.0,
            1.0,
            &[0.3],
            1.0,
            d,
            1e-12,
        )
        .unwrap();
        // ∫ (1-x)^(-1/2) = -2 sqrt(1-x)
        let exact = 2.0 * 2.0 * (1.0 - 0.7f64.sqrt()) - 2.0 * 0.7f64.sqrt();
        assert!((r.value - exact).abs() < 1e-11);
    }

    #[test]
    fn anchor_inside_interval_is_rejected() {
        assert!(integrate_graded(|x, _| Ok(x), 0.0, 1.0, 0.5, 0.5, 1e-9).is_err());
    }

    #[test]
    fn non_convergent_integrand_hits_node_cap() {
        let r = adaptive_gauss_legendre(|x| Ok((1.0 / x).sin() / x), 0.0, 1.0, 1e-12, false);
        assert!(matches!(r, Err(Error::Quadrature { .. })));
    }
}
