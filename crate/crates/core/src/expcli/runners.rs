use std::collections::BTreeMap;

use rand::Rng;

use super::*;
use crate::drivers::{make_two_sided_replica, simulate_stream, stream_rng, CadlagPath};
use crate::fraclevy::{default_cutoff, eval_fraclevy, realized_tail_increment, truncation_tail_bound};
use crate::kernels::{
    check_smooth_variation, fdelta_integral_diagnostics, gdelta_integral_diagnostics, integrate_g_delta, Kernel,
    MONOTONE_NOISE_FLOOR,
};
use crate::regdiag::{holder_exponent, loglog_fit, pointwise_ratio_scan, uniform_modulus_scan};
use crate::volterra::{by_parts_integral, decompose_increment, eval_by_parts, eval_direct, IncrementDecomposition};

pub(crate) const DEFAULT_TAIL_CUTOFF: f64 = 1000.0;
const UNIT: (f64, f64) = (0.0, 1.0);
/// Streams at and above this offset feed auxiliary draws, never driver paths.
const AUX_STREAM: u64 = 1 << 40;

fn or<'a>(given: &'a [f64], fallback: &'a [f64]) -> &'a [f64] {
    if given.is_empty() {
        fallback
    } else {
        given
    }
}

fn driver_of(cfg: &ExperimentConfig) -> Result<DriverSpec> {
    let mut d = cfg
        .driver
        .clone()
        .ok_or_else(|| Error::Config(format!("experiment {} needs a driver", cfg.experiment.as_str())))?;
    d.seed = cfg.seed;
    Ok(d)
}

struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Result<Self> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(csv_err)?;
        Ok(Table { w })
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).map_err(csv_err)
    }

    fn finish(self) -> Result<Vec<u8>> {
        self.w
            .into_inner()
            .map_err(|e| Error::Config(format!("csv flush failed: {e}")))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv write failed: {e}"))
}

fn into_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

fn non_increasing(r: &[f64]) -> bool {
    r.windows(2).all(|w| w[1] <= w[0].max(MONOTONE_NOISE_FLOOR))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Runs the experiment in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    let k = cfg.kernel.build()?;
    match cfg.experiment {
        ExperimentKind::SmoothVariation => smooth_variation(cfg, &k),
        ExperimentKind::ByPartsOracle => by_parts_oracle(cfg, &k),
        ExperimentKind::Decomposition => decomposition(cfg, &k),
        ExperimentKind::Lemma35 => lemma35(cfg, &k),
        ExperimentKind::Lemma36 => lemma36(cfg, &k),
        ExperimentKind::Theorem1 => theorem1(cfg, &k),
        ExperimentKind::Theorem2 => theorem2(cfg, &k),
        ExperimentKind::Theorem3 => theorem3(cfg),
        ExperimentKind::TailBound => tail_bound(cfg),
    }
}

fn smooth_variation(cfg: &ExperimentConfig, k: &Kernel) -> Result<Outcome> {
    let hs = or(&cfg.h_schedule, &[1e-2, 1e-3, 1e-4, 1e-5, 1e-6]);
    let interval = cfg.t_interval.unwrap_or((0.1, 0.9));
    let power = cfg.kernel.kind == KernelKind::Power;
    let tol = if power { SMOOTH_POWER_TOL } else { SMOOTH_LIMIT_TOL };
    let rep = check_smooth_variation(k, interval, hs, tol)?;
    let all: Vec<&Vec<f64>> = rep.condition_residuals.iter().chain([&rep.ratio_residual]).collect();
    let worst = all.iter().flat_map(|r| r.iter()).fold(0.0f64, |a, b| a.max(*b));
    let mut checks: Vec<Check> = ["a", "b", "c", "d"]
        .iter()
        .zip(&rep.verdicts)
        .map(|(n, v)| Check::holds(format!("condition_{n}"), v.passed))
        .collect();
    checks.push(Check::holds("residuals_non_increasing", all.iter().all(|r| non_increasing(r))));
    if power {
        checks.push(Check::at_most("max_residual", worst, SMOOTH_POWER_TOL));
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("max_residual".into(), worst);
    for (n, r) in ["a", "b", "c", "d"].iter().zip(&rep.condition_residuals) {
        metrics.insert(format!("last_residual_{n}"), *r.last().unwrap_or(&f64::NAN));
    }
    Ok(Outcome {
        checks,
        metrics,
        files: vec![("smooth_variation.csv".into(), into_bytes(|b| rep.write_csv(b))?)],
    })
}

fn by_parts_oracle(cfg: &ExperimentConfig, k: &Kernel) -> Result<Outcome> {
    let spec = driver_of(cfg)?;
    let n = if cfg.grid_n == 0 { 50 } else { cfg.grid_n.max(2) };
    let grid = linspace(UNIT.0, UNIT.1, n);
    let mut t = Table::new(&["replica", "t", "direct", "by_parts"])?;
    let mut worst = 0.0f64;
    for r in 0..cfg.replicas {
        let x = simulate_stream(&spec, UNIT, r as u64)?;
        for &s in &grid {
            let a = eval_direct(k, &x, s)?;
            let b = eval_by_parts(k, &x, s)?;
            worst = worst.max((a - b).abs() / (1.0 + a.abs()));
            t.row([r.to_string(), s.to_string(), a.to_string(), b.to_string()])?;
        }
    }
    Ok(Outcome {
        checks: vec![Check::at_most("max_discrepancy", worst, BY_PARTS_TOL)],
        metrics: BTreeMap::from([("max_discrepancy".into(), worst)]),
        files: vec![("by_parts.csv".into(), t.finish()?)],
    })
}

fn decomposition(cfg: &ExperimentConfig, k: &Kernel) -> Result<Outcome> {
    let spec = driver_of(cfg)?;
    let ds = or(&cfg.delta_schedule, &[1e-1, 1e-4]);
    let (lo, hi) = (ds[ds.len() - 1].ln(), ds[0].ln());
    let mut rows = Vec::with_capacity(cfg.replicas);
    let mut worst = 0.0f64;
    for r in 0..cfg.replicas {
        let x = simulate_stream(&spec, UNIT, r as u64)?;
        let mut rng = stream_rng(cfg.seed, AUX_STREAM + r as u64);
        let delta = (lo + (hi - lo) * rng.random::<f64>()).exp();
        let t = (1.0 - delta) * rng.random::<f64>();
        let dec = decompose_increment(k, &x, t, delta)?;
        let exact = by_parts_integral(k, &x, t + delta)? - by_parts_integral(k, &x, t)?;
        let diff = (dec.total - exact).abs();
        if diff > 0.0 {
            worst = worst.max(diff / exact.abs());
        }
        rows.push(dec);
    }
    Ok(Outcome {
        checks: vec![Check::at_most("max_relative_error", worst, DECOMPOSITION_TOL)],
        metrics: BTreeMap::from([("max_relative_error".into(), worst)]),
        files: vec![(
            "decomposition.csv".into(),
            into_bytes(|b| IncrementDecomposition::write_csv(&rows, b))?,
        )],
    })
}

fn lemma35(cfg: &ExperimentConfig, k: &Kernel) -> Result<Outcome> {
    let ds = or(&cfg.delta_schedule, &[1e-2, 1e-3, 1e-4]);
    let h0 = cfg.h0.unwrap_or(0.5);
    let interval = cfg.t_interval.unwrap_or((h0, 1.0));
    let rep = gdelta_integral_diagnostics(k, interval, h0, ds, GDELTA_TOL)?;
    let last = ds.len() - 1;
    let res = rep.residuals[1][last];
    let mut checks = vec![Check::at_most("gdelta_residual", res, GDELTA_TOL)];
    let mut metrics = BTreeMap::from([("gdelta_residual".into(), res)]);
    if cfg.kernel.kind == KernelKind::Power {
        let d = k.index();
        let delta = ds[last];
        let v = h0 / delta;
        let closed = ((1.0 + v).powf(d) - v.powf(d) - 1.0) / d;
        let quad = integrate_g_delta(k, interval.0, delta, 0.0, v, false)?;
        let gap = ((quad - closed) / closed).abs();
        checks.push(Check::at_most("antiderivative_gap", gap, ANTIDERIVATIVE_TOL));
        metrics.insert("antiderivative_gap".into(), gap);
        metrics.insert("closed_form_residual".into(), (closed + 1.0 / d).abs());
    }
    Ok(Outcome {
        checks,
        metrics,
        files: vec![("lemma35.csv".into(), into_bytes(|b| rep.write_csv(b))?)],
    })
}

fn lemma36(cfg: &ExperimentConfig, k: &Kernel) -> Result<Outcome> {
    let ds = or(&cfg.delta_schedule, &[1e-2, 1e-3, 1e-4]);
    let interval = cfg.t_interval.unwrap_or((0.0, 1.0));
    let rep = fdelta_integral_diagnostics(k, interval, ds, FDELTA_TOL)?;
    let last = ds.len() - 1;
    let res = rep.residuals[1][last];
    let abs_res = rep.residuals[0][last];
    Ok(Outcome {
        checks: vec![
            Check::at_most("fdelta_residual", res, FDELTA_TOL),
            Check::at_most("fdelta_abs_residual", abs_res, FDELTA_TOL),
        ],
        metrics: BTreeMap::from([("fdelta_residual".into(), res), ("fdelta_abs_residual".into(), abs_res)]),
        files: vec![("lemma36.csv".into(), into_bytes(|b| rep.write_csv(b))?)],
    })
}

/// Jump probes and off-jump probes for a scan with largest step `h_max`.
fn probes(x: &CadlagPath, h_max: f64) -> (Vec<f64>, Vec<f64>) {
    let jumps: Vec<f64> = x
        .jump_times_between(UNIT.0, UNIT.1)
        .iter()
        .copied()
        .filter(|&s| s + h_max <= UNIT.1)
        .collect();
    let mut marks = vec![UNIT.0];
    marks.extend_from_slice(x.jump_times_between(UNIT.0, UNIT.1));
    marks.push(UNIT.1);
    let off = marks
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .filter(|&m| m > 0.0 && marks.iter().all(|&b| b <= m || b - m > h_max))
        .collect();
    (jumps, off)
}

fn theorem1(cfg: &ExperimentConfig, k: &Kernel) -> Result<Outcome> {
    let spec = driver_of(cfg)?;
    let hs = or(&cfg.h_schedule, &[1e-2, 1e-3, 1e-4, 1e-5]);
    let mut scans = Table::new(&["replica", "probe", "h", "ratio", "truth"])?;
    let mut limits = Table::new(&["replica", "probe", "on_jump", "raw", "extrapolated", "truth"])?;
    let (mut worst_jump, mut worst_off) = (0.0f64, 0.0f64);
    let (mut n_jump, mut n_off) = (0usize, 0usize);
    for r in 0..cfg.replicas {
        let x = simulate_stream(&spec, UNIT, r as u64)?;
        let norm = 1.0 + x.sup_norm(UNIT)?;
        let (jumps, off) = probes(&x, hs[0]);
        for (on_jump, set) in [(true, &jumps), (false, &off)] {
            if set.is_empty() {
                continue;
            }
            let scan = pointwise_ratio_scan(k, &x, |t| eval_direct(k, &x, t), set, hs)?;
            for (p, &s) in scan.probes.iter().enumerate() {
                for (j, h) in hs.iter().enumerate() {
                    scans.row([
                        r.to_string(),
                        s.to_string(),
                        h.to_string(),
                        scan.ratios[p][j].to_string(),
                        scan.jump_truth[p].to_string(),
                    ])?;
                }
                let (lim, truth) = (scan.extrapolated_limit[p], scan.jump_truth[p]);
                limits.row([
                    r.to_string(),
                    s.to_string(),
                    on_jump.to_string(),
                    scan.raw_limit[p].to_string(),
                    lim.to_string(),
                    truth.to_string(),
                ])?;
                if on_jump {
                    n_jump += 1;
                    worst_jump = worst_jump.max(((lim - truth) / truth).abs());
                } else {
                    n_off += 1;
                    worst_off = worst_off.max(lim.abs() / norm);
                }
            }
        }
    }
    Ok(Outcome {
        checks: vec![
            Check::at_most("jump_relative_error", worst_jump, THM1_JUMP_TOL),
            Check::at_most("off_jump_limit", worst_off, THM1_OFF_TOL),
        ],
        metrics: BTreeMap::from([
            ("jump_relative_error".into(), worst_jump),
            ("off_jump_limit".into(), worst_off),
            ("jump_probes".into(), n_jump as f64),
            ("off_jump_probes".into(), n_off as f64),
        ]),
        files: vec![
            ("theorem1_scan.csv".into(), scans.finish()?),
            ("theorem1_limits.csv".into(), limits.finish()?),
        ],
    })
}

fn theorem2(cfg: &ExperimentConfig, k: &Kernel) -> Result<Outcome> {
    let spec = driver_of(cfg)?;
    let hs = or(&cfg.h_schedule, &[1e-2, 1e-3, 1e-4]);
    let budget = cfg.pair_budget.unwrap_or(2000);
    let mut t = Table::new(&["replica", "h", "uniform_ratio", "sup_jump"])?;
    let mut worst = 0.0f64;
    for r in 0..cfg.replicas {
        let x = simulate_stream(&spec, UNIT, r as u64)?;
        let scan = uniform_modulus_scan(k, &x, |s| eval_direct(k, &x, s), UNIT, hs, budget)?;
        for (h, u) in hs.iter().zip(&scan.uniform_ratios) {
            t.row([r.to_string(), h.to_string(), u.to_string(), scan.sup_jump.to_string()])?;
        }
        let u = *scan.uniform_ratios.last().unwrap_or(&f64::NAN);
        let err = if scan.sup_jump > 0.0 {
            ((u - scan.sup_jump) / scan.sup_jump).abs()
        } else {
            u.abs()
        };
        worst = worst.max(err);
    }
    Ok(Outcome {
        checks: vec![Check::at_most("uniform_relative_error", worst, THM2_TOL)],
        metrics: BTreeMap::from([("uniform_relative_error".into(), worst)]),
        files: vec![("theorem2.csv".into(), t.finish()?)],
    })
}

fn theorem3(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = driver_of(cfg)?;
    spec.validate_fractional()?;
    let d = cfg.kernel.rho;
    let n = if cfg.grid_n == 0 { 1 << 14 } else { cfg.grid_n };
    let dt = 1.0 / n as f64;
    let grid: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
    let first = cfg.holder_first_level.unwrap_or(2);
    let levels = cfg.holder_levels.unwrap_or(5);
    let sigma = spec.second_moment_at_one().sqrt();
    let cutoff = match cfg.truncation_t {
        Some(t) => t,
        None => default_cutoff(sigma, d, 1.0, dt)?,
    };
    let mut fits = Table::new(&["replica", "level", "h", "modulus", "slope", "r2"])?;
    let (mut slopes, mut min_r2) = (Vec::with_capacity(cfg.replicas), f64::INFINITY);
    let mut first_path = Vec::new();
    for r in 0..cfg.replicas {
        let l = make_two_sided_replica(&spec, &spec, cutoff, 1.0, true, r as u64)?;
        let path = eval_fraclevy(&l, d, &grid, cutoff, sigma)?;
        let fit = holder_exponent(&path.values, dt, first, levels)?;
        for i in 0..fit.levels.len() {
            fits.row([
                r.to_string(),
                fit.levels[i].to_string(),
                fit.h[i].to_string(),
                fit.modulus[i].to_string(),
                fit.slope.to_string(),
                fit.r2.to_string(),
            ])?;
        }
        slopes.push(fit.slope);
        min_r2 = min_r2.min(fit.r2);
        if r == 0 {
            first_path = into_bytes(|b| path.write_csv(b))?;
        }
    }
    let med = median(slopes);
    let calib: Vec<f64> = grid.iter().map(|t| t.powf(CALIBRATION_EXPONENT)).collect();
    let cal = holder_exponent(&calib, dt, first, levels)?;
    let cal_err = (cal.slope - CALIBRATION_EXPONENT).abs();
    Ok(Outcome {
        checks: vec![
            Check::at_most("median_slope_error", (med - d).abs(), THM3_SLOPE_TOL),
            Check::at_least("min_r2", min_r2, THM3_MIN_R2),
            Check::at_most("calibration_error", cal_err, CALIBRATION_TOL),
        ],
        metrics: BTreeMap::from([
            ("median_slope".into(), med),
            ("min_r2".into(), min_r2),
            ("calibration_slope".into(), cal.slope),
            ("truncation_t".into(), cutoff),
        ]),
        files: vec![
            ("theorem3_fits.csv".into(), fits.finish()?),
            ("theorem3_path.csv".into(), first_path),
        ],
    })
}

fn tail_bound(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = driver_of(cfg)?;
    spec.validate_fractional()?;
    let d = cfg.kernel.rho;
    let ds = or(&cfg.delta_schedule, &[1e-1, 1e-2, 1e-3, 1e-4]);
    let cutoff = cfg.truncation_t.unwrap_or(DEFAULT_TAIL_CUTOFF);
    let ends = cfg.tail_ends.clone().unwrap_or_else(|| vec![-5.0, -10.0]);
    let t0 = cfg.tail_t.unwrap_or(0.5);
    let sigma = spec.second_moment_at_one().sqrt();
    let mut t = Table::new(&["replica", "a", "delta", "increment", "bound"])?;
    let mut min_slope = f64::INFINITY;
    let mut fitted = 0usize;
    for r in 0..cfg.replicas {
        let l = make_two_sided_replica(&spec, &spec, cutoff, t0 + ds[0], true, r as u64)?;
        for &a in &ends {
            let mut incs = Vec::with_capacity(ds.len());
            for &delta in ds {
                let inc = realized_tail_increment(&l, d, a, t0, delta)?.abs();
                let bound = truncation_tail_bound(sigma, d, t0, -a, delta)?;
                t.row([r.to_string(), a.to_string(), delta.to_string(), inc.to_string(), bound.to_string()])?;
                incs.push(inc);
            }
            if incs.iter().all(|v| *v > 0.0) {
                let (slope, _, _) = loglog_fit(ds, &incs)?;
                min_slope = min_slope.min(slope);
                fitted += 1;
            }
        }
    }
    let base = truncation_tail_bound(sigma, d, t0, cutoff, ds[0])?;
    let mut lin = 0.0f64;
    for &delta in ds {
        let b = truncation_tail_bound(sigma, d, t0, cutoff, delta)?;
        lin = lin.max((b - base * delta / ds[0]).abs() / b);
    }
    Ok(Outcome {
        checks: vec![
            Check::at_least("min_tail_slope", min_slope, d),
            Check::holds("tail_fits_present", fitted > 0),
            Check::at_most("bound_linearity", lin, TAIL_LINEARITY_TOL),
        ],
        metrics: BTreeMap::from([
            ("min_tail_slope".into(), min_slope),
            ("fits".into(), fitted as f64),
            ("bound_linearity".into(), lin),
        ]),
        files: vec![("tail_bound.csv".into(), t.finish()?)],
    })
}
