//! Regularity diagnostics on evaluated paths: pointwise normalized increments
//! at probe times, the kernel-normalized uniform modulus, and a log-log
//! Hölder exponent fit of the global modulus of continuity.

use std::collections::VecDeque;
use std::io::Write;

use serde::Serialize;

use crate::drivers::{sup_jump, CadlagPath};
use crate::error::{invalid, Error, Result};
use crate::kernels::{check_decreasing, Kernel};

/// Straddle pairs use `(τ, τ + h (1 - STRADDLE_SHRINK))`.
pub const STRADDLE_SHRINK: f64 = 1e-9;
/// Smallest accepted quasi-random pair budget.
pub const MIN_PAIR_BUDGET: usize = 1000;
/// Smallest accepted number of dyadic levels in a Hölder fit.
pub const MIN_DYADIC_LEVELS: usize = 5;

// Additive recurrence constants of the two-dimensional R2 sequence.
const R2_PLASTIC: f64 = 1.324_717_957_244_746;

fn io_err(e: csv::Error) -> Error {
    Error::Config(format!("csv write failed: {e}"))
}

fn flush<W: Write>(w: &mut csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::Config(format!("csv flush failed: {e}")))
}

/// Ordinary least squares of `ln y` on `ln x`: `(slope, intercept, r2)`.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(invalid("fit", "needs at least two paired points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Degenerate("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, my - slope * mx, r2))
}

/// Normalized increments `(M(s+h) - M(s)) / F(s+h, s)` at probe times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointwiseScan {
    pub probes: Vec<f64>,
    pub h_schedule: Vec<f64>,
    /// `ratios[p][j]` at `probes[p]`, `h_schedule[j]`.
    pub ratios: Vec<Vec<f64>>,
    /// Ratio at the smallest `h`.
    pub raw_limit: Vec<f64>,
    /// Two-point Richardson extrapolation over the two smallest `h`.
    pub extrapolated_limit: Vec<f64>,
    /// `Δ_X(s)` from the driver.
    pub jump_truth: Vec<f64>,
}

impl PointwiseScan {
    /// CSV with columns `probe,h,ratio,truth`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["probe", "h", "ratio", "truth"]).map_err(io_err)?;
        for (p, s) in self.probes.iter().enumerate() {
            for (j, h) in self.h_schedule.iter().enumerate() {
                let row = [*s, *h, self.ratios[p][j], self.jump_truth[p]];
                w.write_record(row.iter().map(|x| x.to_string())).map_err(io_err)?;
            }
        }
        flush(&mut w)
    }
}

/// Richardson extrapolation to `h = 0` from `(h1, r1)`, `(h2, r2)`, assuming a
/// residual linear in `h`.
pub fn richardson(h1: f64, r1: f64, h2: f64, r2: f64) -> f64 {
    (h1 * r2 - h2 * r1) / (h1 - h2)
}

/// Evaluates `(M(s+h) - M(s)) / F(s+h, s)` for every probe and `h`.
pub fn pointwise_ratio_scan<M>(
    k: &Kernel,
    x: &CadlagPath,
    m_eval: M,
    probes: &[f64],
    h_schedule: &[f64],
) -> Result<PointwiseScan>
where
    M: Fn(f64) -> Result<f64>,
{
    check_decreasing("h_schedule", h_schedule)?;
    if h_schedule.len() < 2 {
        return Err(invalid("h_schedule", "needs at least two values"));
    }
    let (_, t_end) = x.horizon();
    let h_max = h_schedule[0];
    let mut ratios = Vec::with_capacity(probes.len());
    let mut raw = Vec::with_capacity(probes.len());
    let mut extra = Vec::with_capacity(probes.len());
    let mut truth = Vec::with_capacity(probes.len());
    for &s in probes {
        if !(s > 0.0 && s + h_max <= t_end) {
            return Err(invalid("probes", format!("probe {s} must lie in (0, {})", t_end - h_max)));
        }
        let m_s = m_eval(s)?;
        let row = h_schedule
            .iter()
            .map(|&h| {
                let t = s + h;
                Ok((m_eval(t)? - m_s) / k.eval_span(t, t - s)?)
            })
            .collect::<Result<Vec<f64>>>()?;
        let n = row.len();
        raw.push(row[n - 1]);
        extra.push(richardson(h_schedule[n - 2], row[n - 2], h_schedule[n - 1], row[n - 1]));
        truth.push(x.jump_at(s));
        ratios.push(row);
    }
    Ok(PointwiseScan {
        probes: probes.to_vec(),
        h_schedule: h_schedule.to_vec(),
        ratios,
        raw_limit: raw,
        extrapolated_limit: extra,
        jump_truth: truth,
    })
}

/// Per-`h` supremum of `|M(t) - M(s)| / F(t, s)` over `0 < t - s <= h`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformScan {
    pub h_schedule: Vec<f64>,
    pub uniform_ratios: Vec<f64>,
    /// `sup |Δ_X|` on the scanned interval.
    pub sup_jump: f64,
    /// Pairs evaluated per `h` (straddles plus quasi-random).
    pub pairs_per_h: Vec<usize>,
}

impl UniformScan {
    /// CSV with columns `h,uniform_ratio,sup_jump`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["h", "uniform_ratio", "sup_jump"]).map_err(io_err)?;
        for (h, r) in self.h_schedule.iter().zip(&self.uniform_ratios) {
            w.write_record([h.to_string(), r.to_string(), self.sup_jump.to_string()])
                .map_err(io_err)?;
        }
        flush(&mut w)
    }
}

/// The `n`-th point of the R2 low-discrepancy sequence in `[0,1)^2`.
pub fn r2_point(n: usize) -> (f64, f64) {
    let a1 = 1.0 / R2_PLASTIC;
    let a2 = 1.0 / (R2_PLASTIC * R2_PLASTIC);
    let n = n as f64 + 1.0;
    ((0.5 + a1 * n).fract(), (0.5 + a2 * n).fract())
}

/// Pairs `(s, t)` in `interval` with `0 < t - s <= h`: a jump straddle
/// `(τ, τ + h (1 - 1e-9))` per jump, then `pair_budget` quasi-random pairs.
pub fn modulus_pairs(x: &CadlagPath, interval: (f64, f64), h: f64, pair_budget: usize) -> Vec<(f64, f64)> {
    let (a, b) = interval;
    let mut pairs = Vec::with_capacity(pair_budget + x.jump_times().len());
    for &tau in x.jump_times() {
        if tau >= a && tau < b {
            let t = (tau + h * (1.0 - STRADDLE_SHRINK)).min(b);
            if t > tau {
                pairs.push((tau, t));
            }
        }
    }
    let span = b - a;
    for n in 0..pair_budget {
        let (u1, u2) = r2_point(n);
        let len = h * (1.0 - u2).max(f64::MIN_POSITIVE);
        let s = a + (span - len).max(0.0) * u1;
        let t = (s + len).min(b);
        if t > s {
            pairs.push((s, t));
        }
    }
    pairs
}

/// `sup |M(t) - M(s)| / F(t, s)` over the pair set of every `h`.
pub fn uniform_modulus_scan<M>(
    k: &Kernel,
    x: &CadlagPath,
    m_eval: M,
    interval: (f64, f64),
    h_schedule: &[f64],
    pair_budget: usize,
) -> Result<UniformScan>
where
    M: Fn(f64) -> Result<f64>,
{
    check_decreasing("h_schedule", h_schedule)?;
    if pair_budget < MIN_PAIR_BUDGET {
        return Err(invalid("pair_budget", format!("must be at least {MIN_PAIR_BUDGET}, got {pair_budget}")));
    }
    let (a, b) = interval;
    if !(a < b) || h_schedule[0] > b - a {
        return Err(invalid("interval", "needs a < b and h below the interval length"));
    }
    let mut sups = Vec::with_capacity(h_schedule.len());
    let mut counts = Vec::with_capacity(h_schedule.len());
    for &h in h_schedule {
        let pairs = modulus_pairs(x, interval, h, pair_budget);
        counts.push(pairs.len());
        sups.push(sup_over_pairs(k, &m_eval, &pairs)?);
    }
    Ok(UniformScan {
        h_schedule: h_schedule.to_vec(),
        uniform_ratios: sups,
        sup_jump: sup_jump(x, interval),
        pairs_per_h: counts,
    })
}

/// `max |M(t) - M(s)| / F(t, s)` over `pairs`.
pub fn sup_over_pairs<M>(k: &Kernel, m_eval: &M, pairs: &[(f64, f64)]) -> Result<f64>
where
    M: Fn(f64) -> Result<f64>,
{
    let mut best = 0.0f64;
    for &(s, t) in pairs {
        let f = k.eval_span(t, t - s)?;
        if f > 0.0 {
            best = best.max((m_eval(t)? - m_eval(s)?).abs() / f);
        }
    }
    Ok(best)
}

/// Log-log fit of the global modulus of continuity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderFit {
    pub levels: Vec<usize>,
    pub h: Vec<f64>,
    pub modulus: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl HolderFit {
    /// CSV with columns `level,h,modulus,slope,r2`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "h", "modulus", "slope", "r2"]).map_err(io_err)?;
        for i in 0..self.levels.len() {
            w.write_record([
                self.levels[i].to_string(),
                self.h[i].to_string(),
                self.modulus[i].to_string(),
                self.slope.to_string(),
                self.r2.to_string(),
            ])
            .map_err(io_err)?;
        }
        flush(&mut w)
    }
}

/// `max_{|i-j| <= lag} |v_i - v_j|`, i.e. the largest range of any window of
/// `lag + 1` consecutive samples.
pub fn discrete_modulus(values: &[f64], lag: usize) -> f64 {
    let win = lag + 1;
    if values.len() < 2 || lag == 0 {
        return 0.0;
    }
    let mut hi: VecDeque<usize> = VecDeque::new();
    let mut lo: VecDeque<usize> = VecDeque::new();
    let mut best = 0.0f64;
    for (i, &v) in values.iter().enumerate() {
        while hi.back().is_some_and(|&j| values[j] <= v) {
            hi.pop_back();
        }
        hi.push_back(i);
        while lo.back().is_some_and(|&j| values[j] >= v) {
            lo.pop_back();
        }
        lo.push_back(i);
        if hi[0] + win <= i {
            hi.pop_front();
        }
        if lo[0] + win <= i {
            lo.pop_front();
        }
        best = best.max(values[hi[0]] - values[lo[0]]);
    }
    best
}

/// Hölder exponent estimate from samples on a uniform grid of spacing `dt`:
/// regresses `ln w(h)` on `ln h` for `h = 2^j dt`,
/// `j = first_level, ..., first_level + dyadic_levels - 1`.
pub fn holder_exponent(values: &[f64], dt: f64, first_level: usize, dyadic_levels: usize) -> Result<HolderFit> {
    if dyadic_levels < MIN_DYADIC_LEVELS {
        return Err(invalid(
            "dyadic_levels",
            format!("needs at least {MIN_DYADIC_LEVELS}, got {dyadic_levels}"),
        ));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", "must be positive"));
    }
    let top = first_level + dyadic_levels - 1;
    if top >= usize::BITS as usize - 1 || (1usize << top) >= values.len() {
        return Err(invalid(
            "dyadic_levels",
            format!("largest lag 2^{top} exceeds the {} samples", values.len()),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("values", "must be finite"));
    }
    let levels: Vec<usize> = (first_level..=top).collect();
    let h: Vec<f64> = levels.iter().map(|&j| dt * (1u64 << j) as f64).collect();
    let modulus: Vec<f64> = levels.iter().map(|&j| discrete_modulus(values, 1 << j)).collect();
    if modulus.iter().all(|w| *w == 0.0) {
        return Err(Error::Degenerate("constant path: modulus of continuity vanishes, slope undefined".into()));
    }
    if modulus.iter().any(|w| *w == 0.0) {
        return Err(Error::Degenerate("modulus vanishes at some level".into()));
    }
    let (slope, intercept, r2) = loglog_fit(&h, &modulus)?;
    Ok(HolderFit {
        levels,
        h,
        modulus,
        slope,
        intercept,
        r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{simulate, DriverSpec, JumpLaw};
    use crate::kernels::make_power_kernel;
    use crate::volterra::eval_direct;
    use proptest::prelude::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..=n).map(|i| i as f64 / n as f64).collect()
    }

    #[test]
    fn single_jump_ratio_is_exact() {
        let k = make_power_kernel(0.5).unwrap();
        let x = simulate(&DriverSpec::deterministic(vec![(0.5, 1.0)]), (0.0, 1.0)).unwrap();
        let hs = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
        let scan = pointwise_ratio_scan(&k, &x, |t| eval_direct(&k, &x, t), &[0.5, 0.3], &hs).unwrap();
        assert!(scan.ratios[0].iter().all(|r| (r - 1.0).abs() <= 1e-12));
        assert_eq!(scan.jump_truth, vec![1.0, 0.0]);
        assert!(scan.ratios[1].iter().all(|r| *r == 0.0));
        assert!(pointwise_ratio_scan(&k, &x, |t| eval_direct(&k, &x, t), &[0.95], &hs).is_err());
    }

    #[test]
    fn richardson_removes_linear_term() {
        let f = |h: f64| 2.0 + 3.0 * h;
        assert!((richardson(1e-2, f(1e-2), 1e-3, f(1e-3)) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn uniform_scan_cases() {
        let k = make_power_kernel(0.25).unwrap();
        let zero = CadlagPath::zero((0.0, 1.0)).unwrap();
        let scan = uniform_modulus_scan(&k, &zero, |_| Ok(0.0), (0.0, 1.0), &[1e-2, 1e-3], 1000).unwrap();
        assert_eq!(scan.uniform_ratios, vec![0.0, 0.0]);
        assert_eq!(scan.sup_jump, 0.0);

        let x = simulate(&DriverSpec::deterministic(vec![(0.4, 1.0), (0.7, -2.0)]), (0.0, 1.0)).unwrap();
        let m = |t| eval_direct(&k, &x, t);
        let scan = uniform_modulus_scan(&k, &x, m, (0.0, 1.0), &[1e-2, 1e-3, 1e-4], 1000).unwrap();
        assert_eq!(scan.sup_jump, 2.0);
        let last = *scan.uniform_ratios.last().unwrap();
        assert!((last - 2.0).abs() < 0.2, "{last}");
        assert!(uniform_modulus_scan(&k, &x, m, (0.0, 1.0), &[1e-2, 1e-3], 10).is_err());
    }

    #[test]
    fn holder_calibration() {
        let n = 1 << 14;
        let g = grid(n);
        let pow: Vec<f64> = g.iter().map(|t| t.powf(0.4)).collect();
        let fit = holder_exponent(&pow, 1.0 / n as f64, 0, 10).unwrap();
        assert!((fit.slope - 0.4).abs() < 0.02, "{}", fit.slope);
        let lin: Vec<f64> = g.clone();
        let fit = holder_exponent(&lin, 1.0 / n as f64, 0, 10).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.02);
        let flat = vec![3.0; n + 1];
        assert!(matches!(holder_exponent(&flat, 1.0 / n as f64, 0, 10), Err(Error::Degenerate(_))));
        assert!(holder_exponent(&lin, 1.0 / n as f64, 0, 4).is_err());
        assert!(holder_exponent(&lin[..64], 1.0 / n as f64, 0, 8).is_err());
    }

    #[test]
    fn discrete_modulus_matches_brute_force() {
        let v: [f64; 8] = [0.0, 3.0, -1.0, 2.0, 2.5, -4.0, 1.0, 0.5];
        for lag in 1..v.len() {
            let mut brute = 0.0f64;
            for i in 0..v.len() {
                for j in i..(i + lag + 1).min(v.len()) {
                    brute = brute.max((v[i] - v[j]).abs());
                }
            }
            assert_eq!(discrete_modulus(&v, lag), brute);
        }
    }

    #[test]
    fn scaling_equivariance() {
        let k = make_power_kernel(0.5).unwrap();
        let x = simulate(&DriverSpec::compound_poisson(5.0, JumpLaw::default(), 12), (0.0, 1.0)).unwrap();
        let x2 = x.scale_jumps(2.0);
        let probes: Vec<f64> = x.jump_times().iter().copied().filter(|&t| t < 0.9).collect();
        let hs = [1e-2, 1e-3, 1e-4];
        let a = pointwise_ratio_scan(&k, &x, |t| eval_direct(&k, &x, t), &probes, &hs).unwrap();
        let b = pointwise_ratio_scan(&k, &x2, |t| eval_direct(&k, &x2, t), &probes, &hs).unwrap();
        for (p, q) in a.extrapolated_limit.iter().zip(&b.extrapolated_limit) {
            assert!((q - 2.0 * p).abs() <= 1e-10 * q.abs());
        }
        let ua = uniform_modulus_scan(&k, &x, |t| eval_direct(&k, &x, t), (0.0, 1.0), &hs, 1000).unwrap();
        let ub = uniform_modulus_scan(&k, &x2, |t| eval_direct(&k, &x2, t), (0.0, 1.0), &hs, 1000).unwrap();
        for (p, q) in ua.uniform_ratios.iter().zip(&ub.uniform_ratios) {
            assert!((q - 2.0 * p).abs() <= 1e-10 * q.abs());
        }
    }

    #[test]
    fn csv_blocks() {
        let k = make_power_kernel(0.5).unwrap();
        let x = simulate(&DriverSpec::deterministic(vec![(0.5, 1.0)]), (0.0, 1.0)).unwrap();
        let scan = pointwise_ratio_scan(&k, &x, |t| eval_direct(&k, &x, t), &[0.5], &[1e-2, 1e-3]).unwrap();
        let mut buf = Vec::new();
        scan.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("probe,h,ratio,truth\n"));
        let fit = holder_exponent(&grid(256), 1.0 / 256.0, 0, 5).unwrap();
        let mut buf = Vec::new();
        fit.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("level,h,modulus,slope,r2\n0,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn uniform_sup_grows_with_pair_set(seed in 0u64..1000, small in 10usize..500, extra in 1usize..500) {
            let k = make_power_kernel(0.25).unwrap();
            let x = simulate(&DriverSpec::compound_poisson(5.0, JumpLaw::default(), seed), (0.0, 1.0)).unwrap();
            let m = |t| eval_direct(&k, &x, t);
            let sub = modulus_pairs(&x, (0.0, 1.0), 1e-2, small);
            let sup = modulus_pairs(&x, (0.0, 1.0), 1e-2, small + extra);
            prop_assert_eq!(&sup[..sub.len()], &sub[..]);
            prop_assert!(sup_over_pairs(&k, &m, &sup).unwrap() >= sup_over_pairs(&k, &m, &sub).unwrap());
        }
    }
}
