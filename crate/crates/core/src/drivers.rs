//! Finite-activity driver paths with exact càdlàg queries.
//!
//! A [`CadlagPath`] is `X(t) = b t + J(t) + W(t)` where `J` is a finite jump
//! sum and `W` an optional Brownian part sampled on a uniform grid and
//! linearly interpolated. Every path is anchored so that `X(0) = X(0-) = 0`;
//! on the negative half-line this reads `X(t) = b t - Σ_{t < τ <= 0} ΔX(τ)`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default spacing of the sampled Brownian part.
pub const DEFAULT_DIFFUSION_STEP: f64 = 1e-4;

const MEAN_TOL: f64 = 1e-12;

/// Distribution of jump sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum JumpLaw {
    Normal { mu: f64, sigma: f64 },
    Uniform { a: f64, b: f64 },
    /// `x1` with probability `p`, `x2` otherwise.
    TwoPoint { p: f64, x1: f64, x2: f64 },
    /// Magnitude uniform on `[lo, hi]`, sign `±` with equal probability.
    SymmetricUniform { lo: f64, hi: f64 },
}

impl Default for JumpLaw {
    fn default() -> Self {
        JumpLaw::Normal { mu: 0.0, sigma: 1.0 }
    }
}

impl JumpLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            JumpLaw::Normal { mu, .. } => mu,
            JumpLaw::Uniform { a, b } => 0.5 * (a + b),
            JumpLaw::TwoPoint { p, x1, x2 } => p * x1 + (1.0 - p) * x2,
            JumpLaw::SymmetricUniform { .. } => 0.0,
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            JumpLaw::Normal { mu, sigma } => mu * mu + sigma * sigma,
            JumpLaw::Uniform { a, b } => (a * a + a * b + b * b) / 3.0,
            JumpLaw::TwoPoint { p, x1, x2 } => p * x1 * x1 + (1.0 - p) * x2 * x2,
            JumpLaw::SymmetricUniform { lo, hi } => (lo * lo + lo * hi + hi * hi) / 3.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            JumpLaw::Normal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma >= 0.0,
            JumpLaw::Uniform { a, b } => a.is_finite() && b.is_finite() && a <= b,
            JumpLaw::TwoPoint { p, x1, x2 } => {
                (0.0..=1.0).contains(&p) && x1.is_finite() && x2.is_finite()
            }
            JumpLaw::SymmetricUniform { lo, hi } => lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("jump_law", format!("invalid parameters {self:?}")))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JumpLaw::Normal { mu, sigma } => {
                mu + sigma * Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
            }
            JumpLaw::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
            JumpLaw::TwoPoint { p, x1, x2 } => {
                if rng.random::<f64>() < p {
                    x1
                } else {
                    x2
                }
            }
            JumpLaw::SymmetricUniform { lo, hi } => {
                let m = lo + (hi - lo) * rng.random::<f64>();
                if rng.random::<bool>() {
                    m
                } else {
                    -m
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriverKind {
    CompoundPoisson,
    CpWithDrift,
    CpWithDiffusion,
    DeterministicJumps,
    /// Exactly `jump_count` jumps per branch, uniform times kept at least
    /// `min_gap` apart and from both branch ends.
    ConditionedJumps,
}

/// Rejection attempts before a conditioned-jumps draw gives up.
pub const MAX_GAP_REJECTIONS: usize = 100_000;

/// Recipe for a driver path; fully determines the path together with the
/// horizon and stream index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverSpec {
    pub kind: DriverKind,
    #[serde(default)]
    pub jump_intensity: f64,
    #[serde(default)]
    pub jump_law: JumpLaw,
    #[serde(default)]
    pub drift_rate: f64,
    #[serde(default)]
    pub diffusion_vol: f64,
    #[serde(default = "default_step")]
    pub diffusion_step: f64,
    /// `(time, size)` pairs for `deterministic-jumps`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub jumps: Vec<(f64, f64)>,
    /// Number of jumps per branch for `conditioned-jumps`.
    #[serde(default, skip_serializing_if = "is_zero_usize")]
    pub jump_count: usize,
    /// Minimum jump separation for `conditioned-jumps`.
    #[serde(default, skip_serializing_if = "is_zero_f64")]
    pub min_gap: f64,
    #[serde(default)]
    pub seed: u64,
}

fn is_zero_usize(n: &usize) -> bool {
    *n == 0
}

fn is_zero_f64(x: &f64) -> bool {
    *x == 0.0
}

fn default_step() -> f64 {
    DEFAULT_DIFFUSION_STEP
}

impl DriverSpec {
    pub fn compound_poisson(intensity: f64, law: JumpLaw, seed: u64) -> Self {
        DriverSpec {
            kind: DriverKind::CompoundPoisson,
            jump_intensity: intensity,
            jump_law: law,
            drift_rate: 0.0,
            diffusion_vol: 0.0,
            diffusion_step: DEFAULT_DIFFUSION_STEP,
            jumps: Vec::new(),
            jump_count: 0,
            min_gap: 0.0,
            seed,
        }
    }

    /// `n` jumps with sizes from `law`, pairwise and end gaps at least `min_gap`.
    pub fn conditioned(n: usize, min_gap: f64, law: JumpLaw, seed: u64) -> Self {
        DriverSpec {
            kind: DriverKind::ConditionedJumps,
            jump_count: n,
            min_gap,
            ..DriverSpec::compound_poisson(0.0, law, seed)
        }
    }

    pub fn deterministic(jumps: Vec<(f64, f64)>) -> Self {
        DriverSpec {
            kind: DriverKind::DeterministicJumps,
            jumps,
            ..DriverSpec::compound_poisson(0.0, JumpLaw::default(), 0)
        }
    }

    pub fn with_drift(mut self, drift: f64) -> Self {
        self.drift_rate = drift;
        if self.kind == DriverKind::CompoundPoisson {
            self.kind = DriverKind::CpWithDrift;
        }
        self
    }

    pub fn with_diffusion(mut self, vol: f64, step: f64) -> Self {
        self.diffusion_vol = vol;
        self.diffusion_step = step;
        if matches!(self.kind, DriverKind::CompoundPoisson | DriverKind::CpWithDrift) {
            self.kind = DriverKind::CpWithDiffusion;
        }
        self
    }

    /// Schema and parameter checks.
    pub fn validate(&self) -> Result<()> {
        if !(self.jump_intensity.is_finite() && self.jump_intensity >= 0.0) {
            return Err(invalid(
                "jump_intensity",
                format!("must be finite and >= 0, got {}", self.jump_intensity),
            ));
        }
        self.jump_law.validate()?;
        if !self.drift_rate.is_finite() {
            return Err(invalid("drift_rate", "must be finite"));
        }
        if !(self.diffusion_vol.is_finite() && self.diffusion_vol >= 0.0) {
            return Err(invalid("diffusion_vol", "must be finite and >= 0"));
        }
        if !(self.diffusion_step.is_finite() && self.diffusion_step > 0.0) {
            return Err(invalid("diffusion_step", "must be positive"));
        }
        match self.kind {
            DriverKind::CompoundPoisson if self.drift_rate != 0.0 || self.diffusion_vol != 0.0 => {
                Err(invalid("kind", "compound-poisson takes no drift or diffusion; use cp-with-drift / cp-with-diffusion"))
            }
            DriverKind::CpWithDrift if self.diffusion_vol != 0.0 => {
                Err(invalid("kind", "cp-with-drift takes no diffusion; use cp-with-diffusion"))
            }
            DriverKind::DeterministicJumps => {
                if self.jump_intensity != 0.0 {
                    return Err(invalid("jump_intensity", "deterministic-jumps needs intensity 0"));
                }
                if self.jumps.iter().any(|(t, s)| !t.is_finite() || !s.is_finite() || *t == 0.0) {
                    return Err(invalid("jumps", "jump times and sizes must be finite, no jump at 0"));
                }
                Ok(())
            }
            DriverKind::ConditionedJumps => {
                if self.jump_intensity != 0.0 {
                    return Err(invalid("jump_intensity", "conditioned-jumps needs intensity 0"));
                }
                if !(self.min_gap.is_finite() && self.min_gap >= 0.0) {
                    return Err(invalid("min_gap", "must be finite and >= 0"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Moment conditions for a fractional Lévy driver: `E[L(1)] = 0`,
    /// `E[L(1)^2] < ∞`, no Brownian component.
    pub fn validate_fractional(&self) -> Result<()> {
        self.validate()?;
        if self.diffusion_vol != 0.0 {
            return Err(Error::MomentCondition(format!(
                "a fractional Lévy driver has no Brownian component, got diffusion_vol={}",
                self.diffusion_vol
            )));
        }
        let mean = self.drift_rate
            + match self.kind {
                DriverKind::DeterministicJumps => 0.0,
                DriverKind::ConditionedJumps => self.jump_count as f64 * self.jump_law.mean(),
                _ => self.jump_intensity * self.jump_law.mean(),
            };
        let random_jumps = self.jump_intensity > 0.0 || self.kind == DriverKind::ConditionedJumps && self.jump_count > 0;
        if self.drift_rate != 0.0 || self.jump_law.mean().abs() > MEAN_TOL && random_jumps {
            return Err(Error::MomentCondition(format!(
                "E[L(1)] must be 0 with zero drift and centered jumps, got drift {} and jump mean {} (E[L(1)]={mean})",
                self.drift_rate,
                self.jump_law.mean()
            )));
        }
        Ok(())
    }

    /// `E[L(1)^2]` of the Lévy process this recipe describes.
    pub fn second_moment_at_one(&self) -> f64 {
        let m = self.drift_rate + self.jump_intensity * self.jump_law.mean();
        self.jump_intensity * self.jump_law.second_moment() + self.diffusion_vol.powi(2) + m * m
    }
}

/// Counter-based generator for `(seed, stream)`; independent per stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Brownian samples on `origin + k step`, with value 0 at time 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionGrid {
    pub origin: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl DiffusionGrid {
    fn value(&self, t: f64) -> f64 {
        let x = (t - self.origin) / self.step;
        let last = self.values.len() - 1;
        if x <= 0.0 {
            return self.values[0];
        }
        let i = (x.floor() as usize).min(last);
        if i >= last {
            return self.values[last];
        }
        let w = x - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    fn knot(&self, i: usize) -> f64 {
        self.origin + self.step * i as f64
    }
}

/// A realized càdlàg driver trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CadlagPath {
    t_begin: f64,
    t_end: f64,
    jump_times: Vec<f64>,
    jump_sizes: Vec<f64>,
    /// `cum[i] = Σ_{j < i} jump_sizes[j]`.
    cum: Vec<f64>,
    /// Jump mass at or before 0, subtracted to anchor `X(0) = 0`.
    offset: f64,
    drift_rate: f64,
    diffusion: Option<DiffusionGrid>,
}

/// Compact serialized form of a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub t_begin: f64,
    pub t_end: f64,
    pub jump_times: Vec<f64>,
    pub jump_sizes: Vec<f64>,
    pub drift_rate: f64,
    pub grid_step: Option<f64>,
    pub grid_origin: Option<f64>,
    pub diffusion_samples: Vec<f64>,
}

impl CadlagPath {
    /// Builds a path from explicit parts. Jumps must be strictly increasing,
    /// inside `(t_begin, t_end]` and away from 0.
    pub fn new(
        horizon: (f64, f64),
        jump_times: Vec<f64>,
        jump_sizes: Vec<f64>,
        drift_rate: f64,
        diffusion: Option<DiffusionGrid>,
    ) -> Result<Self> {
        let (t_begin, t_end) = horizon;
        if !(t_begin.is_finite() && t_end.is_finite() && t_begin < t_end) {
            return Err(invalid("horizon", format!("needs t_begin < t_end, got [{t_begin}, {t_end}]")));
        }
        if !(t_begin <= 0.0 && 0.0 <= t_end) {
            return Err(invalid("horizon", "must contain the origin"));
        }
        if jump_times.len() != jump_sizes.len() {
            return Err(invalid("jumps", "times and sizes differ in length"));
        }
        if jump_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("jump_times", "must be strictly increasing"));
        }
        if jump_times.iter().any(|&t| t <= t_begin || t > t_end || t == 0.0) {
            return Err(invalid("jump_times", "must lie in (t_begin, t_end] and avoid 0"));
        }
        if let Some(g) = &diffusion {
            if g.values.len() < 2 || !(g.step > 0.0) {
                return Err(invalid("diffusion", "needs at least two samples and a positive step"));
            }
            if g.origin > t_begin + 1e-12 || g.knot(g.values.len() - 1) < t_end - 1e-12 {
                return Err(invalid("diffusion", "grid must cover the horizon"));
            }
            if g.value(0.0).abs() > 1e-12 {
                return Err(invalid("diffusion", "Brownian part must vanish at 0"));
            }
        }
        let mut cum = Vec::with_capacity(jump_sizes.len() + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for s in &jump_sizes {
            acc += s;
            cum.push(acc);
        }
        let n_nonpos = jump_times.partition_point(|&t| t <= 0.0);
        let offset = cum[n_nonpos];
        Ok(CadlagPath {
            t_begin,
            t_end,
            jump_times,
            jump_sizes,
            cum,
            offset,
            drift_rate,
            diffusion,
        })
    }

    /// `X ≡ 0` on the horizon.
    pub fn zero(horizon: (f64, f64)) -> Result<Self> {
        CadlagPath::new(horizon, Vec::new(), Vec::new(), 0.0, None)
    }

    pub fn horizon(&self) -> (f64, f64) {
        (self.t_begin, self.t_end)
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn jump_sizes(&self) -> &[f64] {
        &self.jump_sizes
    }

    pub fn drift_rate(&self) -> f64 {
        self.drift_rate
    }

    pub fn diffusion(&self) -> Option<&DiffusionGrid> {
        self.diffusion.as_ref()
    }

    /// True when the path is piecewise constant.
    pub fn is_pure_jump(&self) -> bool {
        self.drift_rate == 0.0 && self.diffusion.is_none()
    }

    /// Returns a copy with every jump size multiplied by `factor`.
    pub fn scale_jumps(&self, factor: f64) -> Self {
        let sizes = self.jump_sizes.iter().map(|s| s * factor).collect();
        CadlagPath::new(
            self.horizon(),
            self.jump_times.clone(),
            sizes,
            self.drift_rate,
            self.diffusion.clone(),
        )
        .expect("scaling preserves validity")
    }

    fn check(&self, t: f64) -> Result<()> {
        if t >= self.t_begin && t <= self.t_end {
            Ok(())
        } else {
            Err(Error::OutsideHorizon {
                t,
                t_begin: self.t_begin,
                t_end: self.t_end,
            })
        }
    }

    /// Pure-jump component `J(t)`.
    pub(crate) fn jump_part(&self, t: f64) -> f64 {
        self.cum[self.jump_times.partition_point(|&s| s <= t)] - self.offset
    }

    /// Continuous component `b t + W(t)`.
    pub(crate) fn continuous_part(&self, t: f64) -> f64 {
        self.drift_rate * t + self.diffusion.as_ref().map_or(0.0, |g| g.value(t))
    }

    pub(crate) fn value_unchecked(&self, t: f64) -> f64 {
        self.jump_part(t) + self.continuous_part(t)
    }

    /// `X(t)`.
    pub fn value(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.value_unchecked(t))
    }

    /// `X(t-)`.
    pub fn left_limit(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.value_unchecked(t) - self.jump_at(t))
    }

    /// `Δ_X(t) = X(t) - X(t-)`.
    pub fn jump_at(&self, t: f64) -> f64 {
        match self.jump_times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(i) => self.jump_sizes[i],
            Err(_) => 0.0,
        }
    }

    /// Indices of jumps with time in `[a, b]`.
    fn jump_range(&self, a: f64, b: f64) -> std::ops::Range<usize> {
        let lo = self.jump_times.partition_point(|&s| s < a);
        let hi = self.jump_times.partition_point(|&s| s <= b);
        lo..hi.max(lo)
    }

    /// Jump times in the open interval `(a, b)`.
    pub fn jump_times_between(&self, a: f64, b: f64) -> &[f64] {
        let lo = self.jump_times.partition_point(|&s| s <= a);
        let hi = self.jump_times.partition_point(|&s| s < b);
        &self.jump_times[lo..hi.max(lo)]
    }

    /// Diffusion grid knots in the open interval `(a, b)`.
    pub fn knots_between(&self, a: f64, b: f64) -> Vec<f64> {
        let Some(g) = &self.diffusion else {
            return Vec::new();
        };
        let first = ((a - g.origin) / g.step).floor().max(0.0) as usize;
        (first..g.values.len())
            .map(|i| g.knot(i))
            .skip_while(|&x| x <= a)
            .take_while(|&x| x < b)
            .collect()
    }

    /// Sorted breakpoints (jumps and knots) strictly inside `(a, b)`.
    pub fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let mut pts: Vec<f64> = self.jump_times_between(a, b).to_vec();
        pts.extend(self.knots_between(a, b));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// `sup_{t in [a,b]} |X(t)|`, exact: the path is linear between knots and
    /// jumps, so the supremum is attained at one of them or a left limit.
    pub fn sup_norm(&self, interval: (f64, f64)) -> Result<f64> {
        let (a, b) = interval;
        self.check(a)?;
        self.check(b)?;
        let mut best = self.value_unchecked(a).abs().max(self.value_unchecked(b).abs());
        for i in self.jump_range(a, b) {
            let t = self.jump_times[i];
            if t > a {
                let v = self.value_unchecked(t);
                best = best.max(v.abs()).max((v - self.jump_sizes[i]).abs());
            }
        }
        for t in self.knots_between(a, b) {
            best = best.max(self.value_unchecked(t).abs());
        }
        Ok(best)
    }

    pub fn to_record(&self) -> PathRecord {
        PathRecord {
            t_begin: self.t_begin,
            t_end: self.t_end,
            jump_times: self.jump_times.clone(),
            jump_sizes: self.jump_sizes.clone(),
            drift_rate: self.drift_rate,
            grid_step: self.diffusion.as_ref().map(|g| g.step),
            grid_origin: self.diffusion.as_ref().map(|g| g.origin),
            diffusion_samples: self.diffusion.as_ref().map_or(Vec::new(), |g| g.values.clone()),
        }
    }

    pub fn from_record(rec: &PathRecord) -> Result<Self> {
        let diffusion = match (rec.grid_step, rec.grid_origin) {
            (Some(step), Some(origin)) if !rec.diffusion_samples.is_empty() => Some(DiffusionGrid {
                origin,
                step,
                values: rec.diffusion_samples.clone(),
            }),
            _ => None,
        };
        CadlagPath::new(
            (rec.t_begin, rec.t_end),
            rec.jump_times.clone(),
            rec.jump_sizes.clone(),
            rec.drift_rate,
            diffusion,
        )
    }

    /// CSV with columns `kind,time,value`: one `drift` row, one row per jump
    /// (value = size) and one per diffusion sample.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
        w.write_record(["kind", "time", "value"]).map_err(io)?;
        w.write_record(["drift", "0", &self.drift_rate.to_string()]).map_err(io)?;
        for (t, s) in self.jump_times.iter().zip(&self.jump_sizes) {
            w.write_record(["jump", &t.to_string(), &s.to_string()]).map_err(io)?;
        }
        if let Some(g) = &self.diffusion {
            for (i, v) in g.values.iter().enumerate() {
                w.write_record(["diffusion", &g.knot(i).to_string(), &v.to_string()])
                    .map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::Config(format!("csv flush failed: {e}")))?;
        Ok(())
    }
}

/// One-sided branch on `(0, length]`: jump times, sizes and Brownian samples at `k step`.
struct Branch {
    times: Vec<f64>,
    sizes: Vec<f64>,
    brownian: Option<Vec<f64>>,
}

fn conditioned_times<R: Rng>(n: usize, gap: f64, length: f64, rng: &mut R) -> Result<Vec<f64>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if (n + 1) as f64 * gap >= length {
        return Err(invalid(
            "min_gap",
            format!("{n} jumps with gap {gap} do not fit in a branch of length {length}"),
        ));
    }
    for _ in 0..MAX_GAP_REJECTIONS {
        let mut times: Vec<f64> = (0..n).map(|_| gap + (length - 2.0 * gap) * rng.random::<f64>()).collect();
        times.sort_by(f64::total_cmp);
        if times.windows(2).all(|w| w[1] - w[0] >= gap) {
            return Ok(times);
        }
    }
    Err(invalid("min_gap", format!("no admissible draw after {MAX_GAP_REJECTIONS} attempts")))
}

fn simulate_branch<R: Rng>(spec: &DriverSpec, length: f64, rng: &mut R) -> Result<Branch> {
    let mut times = Vec::new();
    let mut sizes = Vec::new();
    if spec.kind == DriverKind::ConditionedJumps {
        times = conditioned_times(spec.jump_count, spec.min_gap, length, rng)?;
        sizes = times.iter().map(|_| spec.jump_law.sample(rng)).collect();
    } else if spec.kind == DriverKind::DeterministicJumps {
        let mut jumps: Vec<(f64, f64)> = spec
            .jumps
            .iter()
            .copied()
            .filter(|&(t, _)| t > 0.0 && t <= length)
            .collect();
        jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (t, s) in jumps {
            times.push(t);
            sizes.push(s);
        }
    } else if spec.jump_intensity > 0.0 {
        let exp = Exp::new(spec.jump_intensity).expect("positive intensity");
        let mut t = 0.0;
        loop {
            t += exp.sample(rng);
            if t > length {
                break;
            }
            times.push(t);
            sizes.push(spec.jump_law.sample(rng));
        }
    }
    let brownian = (spec.diffusion_vol > 0.0).then(|| {
        let n = (length / spec.diffusion_step).ceil() as usize;
        let scale = spec.diffusion_vol * spec.diffusion_step.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut w = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        w.push(0.0);
        for _ in 0..n {
            acc += scale * normal.sample(rng);
            w.push(acc);
        }
        w
    });
    Ok(Branch {
        times,
        sizes,
        brownian,
    })
}

fn assemble(
    pos: Branch,
    neg: Option<Branch>,
    horizon: (f64, f64),
    drift: f64,
    step: f64,
) -> Result<CadlagPath> {
    let (t_begin, t_end) = horizon;
    let mut times = Vec::new();
    let mut sizes = Vec::new();
    let mut neg_w: Option<Vec<f64>> = None;
    if let Some(neg) = neg {
        // L(t) = -L2((-t)-): a jump of size s at σ of L2 is a jump of size s at -σ.
        for (t, s) in neg.times.iter().zip(&neg.sizes).rev() {
            if -t > t_begin {
                times.push(-t);
                sizes.push(*s);
            }
        }
        neg_w = neg.brownian;
    }
    times.extend(pos.times.iter().copied());
    sizes.extend(pos.sizes.iter().copied());

    let diffusion = match (neg_w, pos.brownian) {
        (None, None) => None,
        (neg_w, pos_w) => {
            let n_neg = if t_begin < 0.0 { (-t_begin / step).ceil() as usize } else { 0 };
            let n_pos = (t_end / step).ceil() as usize;
            let mut values = Vec::with_capacity(n_neg + n_pos + 1);
            let neg_w = neg_w.unwrap_or_else(|| vec![0.0; n_neg + 1]);
            for k in (1..=n_neg).rev() {
                values.push(-neg_w[k]);
            }
            let pos_w = pos_w.unwrap_or_else(|| vec![0.0; n_pos + 1]);
            values.extend_from_slice(&pos_w[..=n_pos]);
            if values.len() < 2 {
                values.push(0.0);
            }
            Some(DiffusionGrid {
                origin: -(n_neg as f64) * step,
                step,
                values,
            })
        }
    };
    CadlagPath::new(horizon, times, sizes, drift, diffusion)
}

fn check_horizon(horizon: (f64, f64)) -> Result<()> {
    let (a, b) = horizon;
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(invalid("horizon", format!("needs positive length, got [{a}, {b}]")));
    }
    if !(a <= 0.0 && b >= 0.0) {
        return Err(invalid("horizon", "must contain the origin"));
    }
    Ok(())
}

/// Realizes `spec` on `horizon` using stream `stream` of its seed.
///
/// A horizon reaching below 0 gets an independent left branch drawn after the
/// right branch from the same stream.
pub fn simulate_stream(spec: &DriverSpec, horizon: (f64, f64), stream: u64) -> Result<CadlagPath> {
    spec.validate()?;
    check_horizon(horizon)?;
    let (t_begin, t_end) = horizon;
    let mut rng = stream_rng(spec.seed, stream);
    if spec.kind == DriverKind::DeterministicJumps {
        let mut jumps: Vec<(f64, f64)> = spec
            .jumps
            .iter()
            .copied()
            .filter(|&(t, _)| t > t_begin && t <= t_end)
            .collect();
        jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let pos = Branch {
            times: jumps.iter().map(|j| j.0).collect(),
            sizes: jumps.iter().map(|j| j.1).collect(),
            brownian: None,
        };
        let mut path = assemble(pos, None, horizon, spec.drift_rate, spec.diffusion_step)?;
        if spec.diffusion_vol > 0.0 {
            let pos_w = simulate_branch(&DriverSpec { jumps: Vec::new(), ..spec.clone() }, t_end, &mut rng)?;
            let neg_w = if t_begin < 0.0 {
                Some(simulate_branch(&DriverSpec { jumps: Vec::new(), ..spec.clone() }, -t_begin, &mut rng)?)
            } else {
                None
            };
            let grid = assemble(pos_w, neg_w, horizon, 0.0, spec.diffusion_step)?.diffusion;
            path = CadlagPath::new(horizon, path.jump_times, path.jump_sizes, spec.drift_rate, grid)?;
        }
        return Ok(path);
    }
    let pos = simulate_branch(spec, t_end, &mut rng)?;
    let neg = if t_begin < 0.0 {
        Some(simulate_branch(spec, -t_begin, &mut rng)?)
    } else {
        None
    };
    assemble(pos, neg, horizon, spec.drift_rate, spec.diffusion_step)
}

/// Realizes `spec` on `horizon` (stream 0).
pub fn simulate(spec: &DriverSpec, horizon: (f64, f64)) -> Result<CadlagPath> {
    simulate_stream(spec, horizon, 0)
}

/// Two-sided path on `[-t_neg, t_pos]` from independent branches.
///
/// `spec_neg` describes `L2` with `L(t) = -L2((-t)-)` for `t < 0`; for
/// `deterministic-jumps` its jump times are given on the `L2` clock (a jump at
/// `σ > 0` lands at `-σ`). Branches use streams `2 replica` and
/// `2 replica + 1`, so equal seeds still give independent branches.
pub fn make_two_sided_replica(
    spec_pos: &DriverSpec,
    spec_neg: &DriverSpec,
    t_neg: f64,
    t_pos: f64,
    require_fractional: bool,
    replica: u64,
) -> Result<CadlagPath> {
    if !(t_neg > 0.0 && t_pos > 0.0 && t_neg.is_finite() && t_pos.is_finite()) {
        return Err(invalid("horizon", format!("t_neg and t_pos must be positive, got {t_neg}, {t_pos}")));
    }
    if require_fractional {
        spec_pos.validate_fractional()?;
        spec_neg.validate_fractional()?;
    } else {
        spec_pos.validate()?;
        spec_neg.validate()?;
    }
    if spec_pos.drift_rate != spec_neg.drift_rate {
        return Err(invalid("drift_rate", "both branches need the same drift"));
    }
    if spec_pos.diffusion_vol > 0.0 && spec_neg.diffusion_vol > 0.0 && spec_pos.diffusion_step != spec_neg.diffusion_step {
        return Err(invalid("diffusion_step", "both branches need the same grid step"));
    }
    let step = if spec_pos.diffusion_vol > 0.0 { spec_pos.diffusion_step } else { spec_neg.diffusion_step };
    let mut rng_pos = stream_rng(spec_pos.seed, 2 * replica);
    let mut rng_neg = stream_rng(spec_neg.seed, 2 * replica + 1);
    let pos = simulate_branch(spec_pos, t_pos, &mut rng_pos)?;
    let neg = simulate_branch(spec_neg, t_neg, &mut rng_neg)?;
    let neg = Branch {
        times: neg.times.into_iter().filter(|&s| s < t_neg).collect::<Vec<_>>(),
        ..neg
    };
    // Re-align sizes after the strict filter above.
    let neg = Branch {
        sizes: neg.sizes[..neg.times.len()].to_vec(),
        ..neg
    };
    assemble(pos, Some(neg), (-t_neg, t_pos), spec_pos.drift_rate, step)
}

/// [`make_two_sided_replica`] for replica 0.
pub fn make_two_sided(
    spec_pos: &DriverSpec,
    spec_neg: &DriverSpec,
    t_neg: f64,
    t_pos: f64,
    require_fractional: bool,
) -> Result<CadlagPath> {
    make_two_sided_replica(spec_pos, spec_neg, t_neg, t_pos, require_fractional, 0)
}

/// `max |Δ_X(s)|` over jump times `s` in `[a, b]`; 0 without jumps.
pub fn sup_jump(path: &CadlagPath, interval: (f64, f64)) -> f64 {
    let (a, b) = interval;
    path.jump_range(a, b)
        .map(|i| path.jump_sizes[i].abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_driver_is_identically_zero() {
        let spec = DriverSpec::compound_poisson(0.0, JumpLaw::default(), 1);
        let x = simulate(&spec, (0.0, 1.0)).unwrap();
        assert!(x.jump_times().is_empty());
        assert_eq!(x.sup_norm((0.0, 1.0)).unwrap(), 0.0);
        assert_eq!(x.value(0.37).unwrap(), 0.0);
    }

    #[test]
    fn unit_step_queries() {
        let x = simulate(&DriverSpec::deterministic(vec![(0.5, 1.0)]), (0.0, 1.0)).unwrap();
        assert_eq!(x.value(0.49).unwrap(), 0.0);
        assert_eq!(x.value(0.5).unwrap(), 1.0);
        assert_eq!(x.left_limit(0.5).unwrap(), 0.0);
        assert_eq!(x.jump_at(0.5), 1.0);
        assert_eq!(x.jump_at(0.6), 0.0);
        assert_eq!(x.value(0.0).unwrap(), 0.0);
        assert_eq!(x.left_limit(0.0).unwrap(), 0.0);
        assert!(matches!(x.value(1.5), Err(Error::OutsideHorizon { .. })));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let spec = DriverSpec::compound_poisson(-1.0, JumpLaw::default(), 1);
        assert!(simulate(&spec, (0.0, 1.0)).is_err());
        let spec = DriverSpec::compound_poisson(1.0, JumpLaw::default(), 1);
        assert!(simulate(&spec, (0.0, 0.0)).is_err());
        assert!(simulate(&spec, (1.0, 0.5)).is_err());
        let mut bad = spec.clone();
        bad.drift_rate = 1.0;
        assert!(bad.validate().is_err());
        assert!(DriverSpec::deterministic(vec![(0.0, 1.0)]).validate().is_err());
    }

    #[test]
    fn poisson_counts_match_intensity() {
        let spec = DriverSpec::compound_poisson(5.0, JumpLaw::default(), 2024);
        let n = 10_000;
        let counts: Vec<f64> = (0..n)
            .map(|i| simulate_stream(&spec, (0.0, 1.0), i).unwrap().jump_times().len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let se = (5.0f64 / n as f64).sqrt();
        assert!((mean - 5.0).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn drift_and_diffusion_parts() {
        let spec = DriverSpec::compound_poisson(0.0, JumpLaw::default(), 3).with_drift(2.0);
        let x = simulate(&spec, (0.0, 1.0)).unwrap();
        assert!((x.value(0.25).unwrap() - 0.5).abs() < 1e-15);
        assert!((x.sup_norm((0.0, 1.0)).unwrap() - 2.0).abs() < 1e-15);

        let spec = DriverSpec::compound_poisson(3.0, JumpLaw::default(), 3).with_diffusion(0.5, 1e-3);
        let x = simulate(&spec, (0.0, 1.0)).unwrap();
        let g = x.diffusion().unwrap();
        assert_eq!(g.values[0], 0.0);
        assert_eq!(x.value(0.0).unwrap(), 0.0);
        // Linear interpolation between knots.
        let (a, b) = (g.knot(10), g.knot(11));
        let mid = x.value(0.5 * (a + b)).unwrap() - x.jump_part(0.5 * (a + b));
        assert!((mid - 0.5 * (g.values[10] + g.values[11])).abs() < 1e-12);
    }

    #[test]
    fn sup_norm_matches_dense_scan() {
        let spec = DriverSpec::compound_poisson(8.0, JumpLaw::default(), 11).with_diffusion(0.3, 1e-3);
        let x = simulate(&spec, (0.0, 1.0)).unwrap();
        let exact = x.sup_norm((0.0, 1.0)).unwrap();
        let mut scan = 0.0f64;
        for i in 0..=200_000 {
            let t = i as f64 / 200_000.0;
            scan = scan.max(x.value(t).unwrap().abs()).max(x.left_limit(t).unwrap().abs());
        }
        assert!(scan <= exact + 1e-12);
        assert!(exact - scan < 1e-3, "{exact} vs {scan}");
    }

    #[test]
    fn conditioned_jumps_respect_count_and_gap() {
        let law = JumpLaw::SymmetricUniform { lo: 0.5, hi: 3.0 };
        let spec = DriverSpec::conditioned(5, 0.05, law, 17);
        for stream in 0..50 {
            let x = simulate_stream(&spec, (0.0, 1.0), stream).unwrap();
            assert_eq!(x.jump_times().len(), 5);
            let t = x.jump_times();
            assert!(t[0] >= 0.05 && t[4] <= 0.95);
            assert!(t.windows(2).all(|w| w[1] - w[0] >= 0.05));
            assert!(x.jump_sizes().iter().all(|s| (0.5..=3.0).contains(&s.abs())));
        }
        assert!(simulate(&DriverSpec::conditioned(20, 0.05, law, 1), (0.0, 1.0)).is_err());
        assert!(spec.validate_fractional().is_ok());
    }

    #[test]
    fn sup_jump_cases() {
        let zero = CadlagPath::zero((0.0, 1.0)).unwrap();
        assert_eq!(sup_jump(&zero, (0.0, 1.0)), 0.0);
        let x = simulate(&DriverSpec::deterministic(vec![(0.2, 1.0), (0.5, -3.0), (0.8, 2.0)]), (0.0, 1.0))
            .unwrap();
        assert_eq!(sup_jump(&x, (0.0, 1.0)), 3.0);
        assert_eq!(sup_jump(&x, (0.6, 1.0)), 2.0);
    }

    #[test]
    fn sup_jump_matches_grid_scan() {
        let jumps = vec![(0.11, 0.4), (0.305, -1.7), (0.52, 0.9), (0.77, 1.2), (0.93, -0.3)];
        let x = simulate(&DriverSpec::deterministic(jumps), (0.0, 1.0)).unwrap();
        // The grid contains every jump time exactly (multiples of 1e-3).
        let scan = (0..=1000)
            .map(|i| {
                let t = i as f64 / 1000.0;
                (x.value(t).unwrap() - x.left_limit(t).unwrap()).abs()
            })
            .fold(0.0, f64::max);
        assert!((scan - sup_jump(&x, (0.0, 1.0))).abs() < 1e-12);
    }

    #[test]
    fn two_sided_convention() {
        let pos = DriverSpec::deterministic(vec![]);
        let neg = DriverSpec::deterministic(vec![(1.0, 2.0)]);
        let l = make_two_sided(&pos, &neg, 2.0, 1.0, true).unwrap();
        assert_eq!(l.value(-1.01).unwrap(), -2.0);
        assert_eq!(l.value(-0.99).unwrap(), 0.0);
        assert_eq!(l.value(-1.0).unwrap(), 0.0);
        assert_eq!(l.left_limit(-1.0).unwrap(), -2.0);
        assert_eq!(l.jump_at(-1.0), 2.0);
        assert_eq!(l.value(0.0).unwrap(), 0.0);

        let empty = DriverSpec::compound_poisson(0.0, JumpLaw::default(), 5);
        let z = make_two_sided(&empty, &empty, 3.0, 1.0, true).unwrap();
        assert_eq!(z.sup_norm((-3.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn two_sided_is_reproducible_and_branches_independent() {
        let spec = DriverSpec::compound_poisson(4.0, JumpLaw::default(), 77);
        let a = make_two_sided(&spec, &spec, 5.0, 1.0, true).unwrap();
        let b = make_two_sided(&spec, &spec, 5.0, 1.0, true).unwrap();
        assert_eq!(a, b);
        let pos: Vec<f64> = a.jump_sizes()[a.jump_times().partition_point(|&t| t < 0.0)..].to_vec();
        let neg_first = a.jump_sizes()[..a.jump_times().partition_point(|&t| t < 0.0)].last().copied();
        assert_ne!(pos.first().copied(), neg_first);
        let c = make_two_sided_replica(&spec, &spec, 5.0, 1.0, true, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fractional_moment_guard() {
        let diff = DriverSpec::compound_poisson(1.0, JumpLaw::default(), 1).with_diffusion(0.1, 1e-3);
        assert!(matches!(diff.validate_fractional(), Err(Error::MomentCondition(_))));
        let biased = DriverSpec::compound_poisson(1.0, JumpLaw::Normal { mu: 0.5, sigma: 1.0 }, 1);
        assert!(matches!(biased.validate_fractional(), Err(Error::MomentCondition(_))));
        let drift = DriverSpec::compound_poisson(1.0, JumpLaw::default(), 1).with_drift(0.2);
        assert!(drift.validate_fractional().is_err());
        let ok = DriverSpec::compound_poisson(1.0, JumpLaw::TwoPoint { p: 0.5, x1: 1.0, x2: -1.0 }, 1);
        assert!(ok.validate_fractional().is_ok());
        assert!(make_two_sided(&ok, &biased, 1.0, 1.0, true).is_err());
        assert!(make_two_sided(&ok, &biased, 1.0, 1.0, false).is_ok());
    }

    #[test]
    fn record_and_csv_round_trip() {
        let spec = DriverSpec::compound_poisson(6.0, JumpLaw::default(), 9).with_diffusion(0.2, 1e-2);
        let x = simulate(&spec, (0.0, 1.0)).unwrap();
        let json = serde_json::to_string(&x.to_record()).unwrap();
        let back: PathRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(CadlagPath::from_record(&back).unwrap(), x);
        let mut a = Vec::new();
        let mut b = Vec::new();
        x.write_csv(&mut a).unwrap();
        simulate(&spec, (0.0, 1.0)).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        assert!(String::from_utf8(a).unwrap().starts_with("kind,time,value\n"));
    }

    proptest! {
        #[test]
        fn jumps_are_exactly_the_one_sided_differences(seed in 0u64..500, lambda in 0.5f64..20.0) {
            let spec = DriverSpec::compound_poisson(lambda, JumpLaw::default(), seed).with_drift(0.7);
            let x = simulate(&spec, (0.0, 1.0)).unwrap();
            prop_assert!(x.jump_times().windows(2).all(|w| w[0] < w[1]));
            for (&t, &s) in x.jump_times().iter().zip(x.jump_sizes()) {
                prop_assert_eq!(x.jump_at(t), s);
                let left = x.left_limit(t).unwrap();
                prop_assert!((x.value(t).unwrap() - left - s).abs() < 1e-12);
                for h in [1e-6, 1e-9] {
                    if t + h <= 1.0 && x.jump_times_between(t, t + h).is_empty() {
                        prop_assert!((x.value(t + h).unwrap() - x.value(t).unwrap()).abs() <= 0.7 * h + 1e-12);
                    }
                    if x.jump_times_between(t - h, t).is_empty() {
                        prop_assert!((x.value(t - h).unwrap() - left).abs() <= 0.7 * h + 1e-12);
                    }
                }
            }
        }
    }
}
