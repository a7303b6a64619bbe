//! The limiting random field `W_a = Γ[ξ(a) + σB + (κ - λ a^{-p}) ι]` and its
//! functionals.
//!
//! Every level shares one Brownian sample. Paths are built by the Lindley
//! recursion on a uniform time grid, which reproduces the Skorohod map at grid
//! points and keeps `a ↦ W_a(t)` exactly nondecreasing in floating point.
//!
//! Integrals over levels treat `x ↦ W_x(t)` as linear between grid levels and
//! integrate it against the weight with Gauss-Legendre per segment. The parts
//! below the first and above the last finite level are bracketed.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dists::ServiceDist;
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::functions::{One, TestFunction};
use crate::quadrature::gauss_legendre;
use crate::rng::{stream_id, stream_rng};
use crate::skorohod::{last_zero_derivative_flagged, SampledPath};

/// Stream family reserved for Brownian drivers.
pub const BROWNIAN_STREAM_FAMILY: u32 = 2;

/// Limit `ξ(·)` of the scaled initial truncated workloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LimitInitialProfile {
    #[default]
    Zero,
    /// Linear interpolation through `(knots, values)` from `ξ(0) = 0`,
    /// constant after the last knot.
    PiecewiseLinear { knots: Vec<f64>, values: Vec<f64> },
    /// `ξ(a) = q* E[v̆*; v̆* <= a]`.
    Scaled { q_star: f64, size_law: ServiceDist },
}

impl LimitInitialProfile {
    pub fn validate(&self) -> Result<()> {
        match self {
            LimitInitialProfile::Zero => Ok(()),
            LimitInitialProfile::PiecewiseLinear { knots, values } => {
                let ok = !knots.is_empty()
                    && knots.len() == values.len()
                    && knots[0] > 0.0
                    && knots.windows(2).all(|w| w[1] > w[0])
                    && values[0] >= 0.0
                    && values.windows(2).all(|w| w[1] >= w[0])
                    && values.iter().chain(knots).all(|v| v.is_finite());
                if ok {
                    Ok(())
                } else {
                    Err(Error::Parameter(
                        "profile needs positive ascending knots and nonnegative nondecreasing values".into(),
                    ))
                }
            }
            LimitInitialProfile::Scaled { q_star, .. } => {
                if *q_star >= 0.0 && q_star.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!("q* must be nonnegative, got {q_star}")))
                }
            }
        }
    }

    /// `ξ(a)`, with `a = inf` giving `ξ(∞)`.
    pub fn value(&self, a: f64) -> f64 {
        if a <= 0.0 {
            return 0.0;
        }
        match self {
            LimitInitialProfile::Zero => 0.0,
            LimitInitialProfile::PiecewiseLinear { knots, values } => {
                let i = knots.partition_point(|k| *k <= a);
                if i == knots.len() {
                    return values[i - 1];
                }
                let (x0, y0) = if i == 0 { (0.0, 0.0) } else { (knots[i - 1], values[i - 1]) };
                y0 + (values[i] - y0) * (a - x0) / (knots[i] - x0)
            }
            LimitInitialProfile::Scaled { q_star, size_law } => q_star * size_law.lower_partial_mean(a),
        }
    }

    pub fn at_infinity(&self) -> f64 {
        self.value(f64::INFINITY)
    }

    /// Whether `x^p (ξ(∞) - ξ(x)) → 0`.
    pub fn has_light_tail(&self, p: f64) -> bool {
        match self {
            LimitInitialProfile::Zero | LimitInitialProfile::PiecewiseLinear { .. } => true,
            LimitInitialProfile::Scaled { q_star, size_law } => {
                *q_star == 0.0 || size_law.tail_index().is_none_or(|q| q > p)
            }
        }
    }
}

/// Parameters of the limit field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSpec {
    pub kappa: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub p: f64,
    #[serde(default)]
    pub xi: LimitInitialProfile,
}

impl LimitSpec {
    /// `λ = 1/E v`, `σ² = λ Var v + λ σ_A²`, `p` from the tail of `dist`.
    pub fn from_dist(dist: &ServiceDist, sigma_a: f64, kappa: f64, xi: LimitInitialProfile) -> Result<Self> {
        let p = dist
            .tail_index()
            .ok_or_else(|| Error::Parameter("processing-time law has no regularly varying tail".into()))?;
        let spec = Self {
            kappa,
            lambda: 1.0 / dist.mean(),
            sigma: dist.diffusion_variance(sigma_a).sqrt(),
            p,
            xi,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Parameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.p > 1.0) {
            return Err(Error::Parameter(format!("p must exceed 1, got {}", self.p)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) || !self.kappa.is_finite() {
            return Err(Error::Parameter("lambda must be positive and kappa finite".into()));
        }
        self.xi.validate()
    }

    /// Drift `κ - λ a^{-p}` of level `a` (`κ` at `a = ∞`).
    pub fn drift(&self, a: f64) -> f64 {
        if a.is_infinite() {
            self.kappa
        } else {
            self.kappa - self.lambda / a.powf(self.p)
        }
    }
}

/// `a_1 ρ^{j}` for `j = 0..`, up to `a_max`, with `per_octave` levels per doubling.
pub fn geometric_levels(a_min: f64, a_max: f64, per_octave: u32) -> Vec<f64> {
    let n = ((a_max / a_min).log2() * per_octave as f64).round() as i32;
    (0..=n)
        .map(|j| a_min * 2f64.powf(j as f64 / per_octave as f64))
        .collect()
}

/// `2^{-6} … 2^{6}` with four levels per doubling (49 levels).
pub fn default_levels() -> Vec<f64> {
    geometric_levels(2f64.powi(-6), 2f64.powi(6), 4)
}

/// Standard Brownian motion sampled on `k·dt`, `k = 0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl BrownianPath {
    pub fn sample(horizon: f64, dt: f64, seed: u64) -> Result<Self> {
        Self::sample_stream(horizon, dt, seed, 0)
    }

    /// Same as [`BrownianPath::sample`] on replication stream `index`.
    pub fn sample_stream(horizon: f64, dt: f64, seed: u64, index: u32) -> Result<Self> {
        let n = steps(horizon, dt)?;
        let mut rng = stream_rng(seed, stream_id(BROWNIAN_STREAM_FAMILY, index));
        let sd = dt.sqrt();
        let mut values = Vec::with_capacity(n + 1);
        let mut b = 0.0;
        values.push(b);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            b += sd * z;
            values.push(b);
        }
        Ok(Self { dt, values })
    }

    pub fn horizon(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }
}

fn steps(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Parameter(format!("need horizon > 0 and dt > 0, got {horizon}, {dt}")));
    }
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::Parameter(format!("horizon {horizon} is not a multiple of dt {dt}")));
    }
    Ok(n as usize)
}

/// Reflected paths for a level grid plus `∞`, all driven by one `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomField {
    pub spec: LimitSpec,
    pub dt: f64,
    /// Finite levels, ascending.
    pub levels: Vec<f64>,
    /// `paths[j][k] = W_{a_j}(k·dt)`; the last row is `W_∞`.
    paths: Vec<Vec<f64>>,
    brownian: BrownianPath,
}

/// Samples `B` and builds the field on `[0, horizon]`.
pub fn sample_field(spec: &LimitSpec, horizon: f64, dt: f64, levels: &[f64], seed: u64) -> Result<RandomField> {
    let b = BrownianPath::sample(horizon, dt, seed)?;
    RandomField::from_brownian(spec, &b, levels)
}

impl RandomField {
    pub fn from_brownian(spec: &LimitSpec, b: &BrownianPath, levels: &[f64]) -> Result<Self> {
        spec.validate()?;
        if levels.is_empty()
            || !(levels[0] > 0.0)
            || levels.windows(2).any(|w| !(w[1] > w[0]))
            || levels.iter().any(|a| !a.is_finite())
        {
            return Err(Error::Parameter("levels must be positive, finite and ascending".into()));
        }
        let mut paths = Vec::with_capacity(levels.len() + 1);
        for a in levels.iter().copied().chain(std::iter::once(f64::INFINITY)) {
            paths.push(lindley(spec.xi.value(a), spec.sigma, spec.drift(a), b));
        }
        Ok(Self {
            spec: spec.clone(),
            dt: b.dt,
            levels: levels.to_vec(),
            paths,
            brownian: b.clone(),
        })
    }

    pub fn n_times(&self) -> usize {
        self.brownian.values.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.n_times() - 1)
    }

    pub fn brownian(&self) -> &BrownianPath {
        &self.brownian
    }

    /// Grid index of `t`; `t` must lie on the grid.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if !(k >= 0.0) || k as usize >= self.n_times() || (k * self.dt - t).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(Error::OutOfRange {
                t,
                horizon: self.horizon(),
            });
        }
        Ok(k as usize)
    }

    /// Index of a finite level equal to `a`.
    pub fn level_index(&self, a: f64) -> Result<usize> {
        self.levels
            .iter()
            .position(|l| (l - a).abs() <= 1e-12 * a.abs())
            .ok_or_else(|| Error::Parameter(format!("level {a} is not on the level grid")))
    }

    /// `W_{a_j}` at grid index `k`; `j = levels.len()` is the `∞` level.
    pub fn w(&self, j: usize, k: usize) -> f64 {
        self.paths[j][k]
    }

    pub fn w_inf(&self, k: usize) -> f64 {
        self.paths[self.levels.len()][k]
    }

    /// Path of level `j` (`levels.len()` for `∞`).
    pub fn path(&self, j: usize) -> &[f64] {
        &self.paths[j]
    }

    /// Finite-level values `W_{a_1}(t), …, W_{a_K}(t)` at index `k`.
    pub fn level_values(&self, k: usize) -> Vec<f64> {
        (0..self.levels.len()).map(|j| self.paths[j][k]).collect()
    }

    /// Unreflected `X_{a_j}` at index `k`.
    pub fn netput(&self, j: usize, k: usize) -> f64 {
        let a = self.levels.get(j).copied().unwrap_or(f64::INFINITY);
        self.spec.xi.value(a) + self.spec.sigma * self.brownian.values[k] + self.spec.drift(a) * self.time(k)
    }

    /// Level `j` as a piecewise-linear path.
    pub fn level_path(&self, j: usize) -> Result<SampledPath> {
        let times = (0..self.n_times()).map(|k| self.time(k)).collect();
        SampledPath::linear(times, self.paths[j].clone())
    }

    /// CSV matrix: one row per grid time, one column per level (`inf` last).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.levels.iter().map(|a| format!("W_{}", fmt_f64(*a))));
        header.push("W_inf".to_string());
        w.write_record(&header)?;
        for k in 0..self.n_times() {
            let mut row = vec![fmt_f64(self.time(k))];
            row.extend(self.paths.iter().map(|p| fmt_f64(p[k])));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<field csv>", e))?;
        Ok(())
    }
}

fn lindley(start: f64, sigma: f64, drift: f64, b: &BrownianPath) -> Vec<f64> {
    let step = drift * b.dt;
    let mut out = Vec::with_capacity(b.values.len());
    let mut w = start;
    out.push(w);
    for pair in b.values.windows(2) {
        w = (w + sigma * (pair[1] - pair[0]) + step).max(0.0);
        out.push(w);
    }
    out
}

/// An estimate with a bracket `[lower, upper]` that contains it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracketed {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Bracketed {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Precomputed weights for `Z_f(t) = ∫ h(x) W_x(t) dx + L W_∞(t)` with
/// `h = f/χ² - f'/χ` and `L = lim f(x)/x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelWeights {
    levels: Vec<f64>,
    /// Per segment `[a_j, a_{j+1}]`: `∫ h·W ≈ alpha_j W_j + beta_j W_{j+1}`.
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// `h(a_1) a_1`, multiplying `W_{a_1}` in the head bracket.
    head: f64,
    /// `g(a_K) - L` with `g = f/χ`, multiplying `[W_{a_K}, W_∞]` in the tail bracket.
    tail: f64,
    slope: f64,
}

fn weight_of(f: &dyn TestFunction) -> impl Fn(f64) -> f64 + '_ {
    move |x: f64| f.value(x) / (x * x) - f.derivative(x) / x
}

/// `(∫ h(x)(x1 - x)/Δ, ∫ h(x)(x - x0)/Δ)` over `[x0, x1]`.
fn segment_weights(h: &dyn Fn(f64) -> f64, x0: f64, x1: f64) -> (f64, f64) {
    let d = x1 - x0;
    let lo = gauss_legendre(|x| h(x) * (x1 - x) / d, x0, x1);
    let hi = gauss_legendre(|x| h(x) * (x - x0) / d, x0, x1);
    (lo, hi)
}

impl LevelWeights {
    pub fn new(levels: &[f64], f: &dyn TestFunction) -> Result<Self> {
        let slope = f
            .slope_at_infinity()
            .ok_or_else(|| Error::Parameter("test function needs a finite limit of f(x)/x".into()))?;
        let h = weight_of(f);
        let mut alpha = Vec::with_capacity(levels.len().saturating_sub(1));
        let mut beta = Vec::with_capacity(levels.len().saturating_sub(1));
        for w in levels.windows(2) {
            let (a, b) = segment_weights(&h, w[0], w[1]);
            alpha.push(a);
            beta.push(b);
        }
        let a1 = levels[0];
        let ak = *levels.last().expect("nonempty levels");
        Ok(Self {
            levels: levels.to_vec(),
            alpha,
            beta,
            head: h(a1) * a1,
            tail: f.value(ak) / ak - slope,
            slope,
        })
    }

    /// Integral over `[a_1, a_K]` from finite-level values.
    pub fn interior(&self, w: &[f64]) -> f64 {
        (0..self.alpha.len())
            .map(|j| self.alpha[j] * w[j] + self.beta[j] * w[j + 1])
            .sum()
    }

    pub fn evaluate(&self, w: &[f64], w_inf: f64) -> Bracketed {
        let interior = self.interior(w);
        let k = self.levels.len() - 1;
        let (h0, h1) = order(0.0, self.head * w[0]);
        let (t0, t1) = order(self.tail * w[k], self.tail * w_inf);
        let fixed = interior + self.slope * w_inf;
        Bracketed {
            estimate: fixed + 0.5 * (h0 + h1) + 0.5 * (t0 + t1),
            lower: fixed + h0 + t0,
            upper: fixed + h1 + t1,
        }
    }
}

fn order(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// `Q(t) = ∫ x^{-2} W_x(t) dx` with its bracket.
pub fn limit_queue_length(field: &RandomField, t: f64) -> Result<Bracketed> {
    let k = field.time_index(t)?;
    let lw = LevelWeights::new(&field.levels, &One)?;
    Ok(lw.evaluate(&field.level_values(k), field.w_inf(k)))
}

/// `Q` at every grid time.
pub fn limit_queue_length_path(field: &RandomField) -> Result<Vec<Bracketed>> {
    limit_zf(field, &One)
}

/// `Z_f` at every grid time.
pub fn limit_zf(field: &RandomField, f: &dyn TestFunction) -> Result<Vec<Bracketed>> {
    let lw = LevelWeights::new(&field.levels, f)?;
    Ok((0..field.n_times())
        .map(|k| lw.evaluate(&field.level_values(k), field.w_inf(k)))
        .collect())
}

/// `W_x(t)` interpolated linearly between grid levels.
fn interpolate_level(field: &RandomField, k: usize, x: f64) -> f64 {
    let lv = &field.levels;
    let i = lv.partition_point(|a| *a <= x);
    if i == 0 {
        return field.w(0, k);
    }
    if i == lv.len() || lv[i - 1] == x {
        return field.w(i - 1, k);
    }
    let (x0, x1) = (lv[i - 1], lv[i]);
    let (w0, w1) = (field.w(i - 1, k), field.w(i, k));
    w0 + (w1 - w0) * (x - x0) / (x1 - x0)
}

/// `-∫_a^b g'(x) W_x(t) dx + g(b) W_b(t) - g(a) W_a(t)` with `g = f/χ`.
///
/// For `f = 1` this is the limit measure of `[a, b]`. Both ends must lie in
/// the span of the level grid; between grid levels `W` is interpolated.
pub fn limit_integral_on(field: &RandomField, t: f64, f: &dyn TestFunction, a: f64, b: f64) -> Result<f64> {
    let k = field.time_index(t)?;
    let lv = &field.levels;
    let (lo, hi) = (lv[0], *lv.last().expect("nonempty"));
    if !(a >= lo && b <= hi && a < b) {
        return Err(Error::Parameter(format!(
            "interval [{a}, {b}] must lie inside the level span [{lo}, {hi}]"
        )));
    }
    let h = weight_of(f);
    let mut knots = vec![a];
    knots.extend(lv.iter().copied().filter(|x| *x > a && *x < b));
    knots.push(b);
    let mut integral = 0.0;
    for w in knots.windows(2) {
        let (al, be) = segment_weights(&h, w[0], w[1]);
        integral += al * interpolate_level(field, k, w[0]) + be * interpolate_level(field, k, w[1]);
    }
    let g = |x: f64| f.value(x) / x;
    Ok(integral + g(b) * interpolate_level(field, k, b) - g(a) * interpolate_level(field, k, a))
}

/// Limit measure of `[a, b]`: `∫_a^b x^{-2} W_x dx + W_b/b - W_a/a`.
pub fn limit_measure(field: &RandomField, t: f64, a: f64, b: f64) -> Result<f64> {
    limit_integral_on(field, t, &One, a, b)
}

/// Tail functionals at level `a` against the busy-period derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRatios {
    pub a: f64,
    /// `(a^p/λ)(W_∞ - W_a)`.
    pub work: f64,
    /// `((p+1) a^{p+1} / (pλ))` times the limit mass of `[a, ∞)`.
    pub mass: f64,
    /// `t - sup{s <= t : W_∞(s) = 0}`.
    pub w_prime: f64,
    /// Set when `W_∞` has no zero on `[0, t]`.
    pub empty_zero_set: bool,
}

pub fn tail_ratios(field: &RandomField, t: f64, a: f64) -> Result<TailRatios> {
    let spec = &field.spec;
    if !spec.xi.has_light_tail(spec.p) {
        return Err(Error::Precondition(
            "tail ratios need x^p (ξ(∞) - ξ(x)) → 0".into(),
        ));
    }
    let k = field.time_index(t)?;
    let j = field.level_index(a)?;
    let kk = field.levels.len() - 1;
    let ak = field.levels[kk];
    let (lam, p) = (spec.lambda, spec.p);
    let w_inf = field.w_inf(k);
    let w_a = field.w(j, k);
    let work = a.powf(p) / lam * (w_inf - w_a);

    let lw = LevelWeights::new(&field.levels[j..], &One)?;
    let w: Vec<f64> = (j..=kk).map(|i| field.w(i, k)).collect();
    let tail_mid = 0.5 * (field.w(kk, k) + w_inf) / ak;
    let tail_mass = lw.interior(&w) + tail_mid - w_a / a;
    let mass = (p + 1.0) * a.powf(p + 1.0) / (p * lam) * tail_mass;

    let (w_prime, empty) = last_zero_derivative_flagged(&field.level_path(kk + 1)?, t, 0.0)?;
    Ok(TailRatios {
        a,
        work,
        mass,
        w_prime,
        empty_zero_set: empty,
    })
}

/// `sup_t |Q^{(p)}(t) - W_∞^{(p)}(t)|` for one `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseRow {
    pub p: f64,
    pub sigma: f64,
    pub gap: f64,
    /// Largest bracket width of `Q` over the grid.
    pub bracket: f64,
}

/// Parameters of the Lomax family used for the collapse sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseSpec {
    pub kappa: f64,
    pub lambda: f64,
    pub sigma_a: f64,
}

impl Default for CollapseSpec {
    fn default() -> Self {
        Self {
            kappa: 0.0,
            lambda: 1.0,
            sigma_a: 1.0,
        }
    }
}

impl CollapseSpec {
    /// `σ_p² = λ Var v^{(p)} + λ σ_A²` with `Var v^{(p)} = λ^{-2}(p+1)/(p-1)`.
    pub fn sigma(&self, p: f64) -> Result<f64> {
        let d = ServiceDist::lomax(self.lambda, p)?;
        Ok(d.diffusion_variance(self.sigma_a).sqrt())
    }
}

/// Runs every `p` on the same Brownian sample and reports the collapse gap.
pub fn collapse_gap(
    p_list: &[f64],
    base: &CollapseSpec,
    b: &BrownianPath,
    levels: &[f64],
) -> Result<Vec<CollapseRow>> {
    p_list
        .iter()
        .map(|&p| {
            let sigma = base.sigma(p)?;
            let spec = LimitSpec {
                kappa: base.kappa,
                lambda: base.lambda,
                sigma,
                p,
                xi: LimitInitialProfile::Zero,
            };
            let field = RandomField::from_brownian(&spec, b, levels)?;
            let q = limit_queue_length_path(&field)?;
            let mut gap = 0.0f64;
            let mut bracket = 0.0f64;
            for (k, qk) in q.iter().enumerate() {
                gap = gap.max((qk.estimate - field.w_inf(k)).abs());
                bracket = bracket.max(qk.width());
            }
            Ok(CollapseRow {
                p,
                sigma,
                gap,
                bracket,
            })
        })
        .collect()
}

pub fn write_tail_csv<W: Write>(rows: &[(u64, TailRatios)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["seed", "a", "work_ratio", "mass_ratio", "w_prime", "empty_zero_set"])?;
    for (seed, r) in rows {
        w.write_record([
            seed.to_string(),
            fmt_f64(r.a),
            fmt_f64(r.work),
            fmt_f64(r.mass),
            fmt_f64(r.w_prime),
            r.empty_zero_set.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<tail csv>", e))?;
    Ok(())
}

pub fn write_collapse_csv<W: Write>(rows: &[(u64, CollapseRow)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["seed", "p", "sigma", "gap", "bracket"])?;
    for (seed, r) in rows {
        w.write_record([
            seed.to_string(),
            fmt_f64(r.p),
            fmt_f64(r.sigma),
            fmt_f64(r.gap),
            fmt_f64(r.bracket),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<collapse csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{Identity, Polynomial};
    use crate::harness::{ks_one_sample, reflected_bm_marginal_cdf};

    fn pareto_spec() -> LimitSpec {
        let d = ServiceDist::pareto(1.0, 2.0).unwrap();
        LimitSpec::from_dist(&d, 1.5, 0.0, LimitInitialProfile::Zero).unwrap()
    }

    fn constant_field(c: f64, levels: &[f64]) -> RandomField {
        let spec = pareto_spec();
        let b = BrownianPath {
            dt: 1.0,
            values: vec![0.0],
        };
        let mut f = RandomField::from_brownian(&spec, &b, levels).unwrap();
        for p in f.paths.iter_mut() {
            p[0] = c;
        }
        f
    }

    #[test]
    fn spec_from_pareto() {
        let s = pareto_spec();
        assert!((s.sigma * s.sigma - 2.0).abs() < 1e-12);
        assert!((s.lambda - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.p, 2.0);
        assert_eq!(default_levels().len(), 49);
        assert_eq!(default_levels()[48], 64.0);
    }

    #[test]
    fn zero_profile_starts_at_zero() {
        let f = sample_field(&pareto_spec(), 1.0, 1e-3, &default_levels(), 3).unwrap();
        for j in 0..=f.levels.len() {
            assert_eq!(f.w(j, 0), 0.0);
        }
        let q = limit_queue_length(&f, 0.0).unwrap();
        assert_eq!((q.estimate, q.lower, q.upper), (0.0, 0.0, 0.0));
        assert_eq!(limit_measure(&f, 0.0, 0.5, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn levels_are_ordered_and_synchronized() {
        let mut spec = pareto_spec();
        spec.kappa = 0.3;
        spec.xi = LimitInitialProfile::PiecewiseLinear {
            knots: vec![0.5, 2.0],
            values: vec![0.1, 0.8],
        };
        let f = sample_field(&spec, 1.0, 1e-3, &default_levels(), 9).unwrap();
        let n = f.levels.len();
        for k in 0..f.n_times() {
            for j in 0..n {
                assert!(f.w(j, k) <= f.w(j + 1, k));
                assert!(f.w(j, k) >= 0.0);
            }
            let t = f.time(k);
            for (i, j) in [(0usize, 5usize), (10, 30), (20, 48)] {
                let (a, b) = (f.levels[i], f.levels[j]);
                let expected = spec.xi.value(b) - spec.xi.value(a) + spec.lambda * (a.powf(-2.0) - b.powf(-2.0)) * t;
                let got = f.netput(j, k) - f.netput(i, k);
                assert!((got - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
            }
        }
    }

    #[test]
    fn constant_field_integrals() {
        let levels = [0.5, 1.0, 2.0, 4.0];
        let c = 0.8;
        let f = constant_field(c, &levels);
        let q = limit_queue_length(&f, 0.0).unwrap();
        let interior = c * (1.0 / 0.5 - 1.0 / 4.0);
        // GL8 is not exact for x^{-2}
        assert!((q.lower - (interior + c / 4.0)).abs() < 1e-9);
        assert!((q.upper - (interior + c / 4.0 + c / 0.5)).abs() < 1e-9);
        assert!(q.lower <= q.estimate && q.estimate <= q.upper);
        let zx = limit_zf(&f, &Identity).unwrap();
        assert_eq!(zx[0].estimate, c);
        assert_eq!(zx[0].width(), 0.0);
    }

    #[test]
    fn square_on_three_levels_matches_hand_trapezoid() {
        // f = x^2: h = -1 and g = x, so the value is -∫ W + b W_b - a W_a
        let spec = pareto_spec();
        let b = BrownianPath {
            dt: 1.0,
            values: vec![0.0],
        };
        let mut f = RandomField::from_brownian(&spec, &b, &[1.0, 2.0, 4.0]).unwrap();
        let w = [0.2, 0.5, 0.9];
        for (j, v) in w.iter().enumerate() {
            f.paths[j][0] = *v;
        }
        let sq = Polynomial::new(vec![0.0, 0.0, 1.0]);
        let got = limit_integral_on(&f, 0.0, &sq, 1.0, 4.0).unwrap();
        let trap = 0.5 * (0.2 + 0.5) * 1.0 + 0.5 * (0.5 + 0.9) * 2.0;
        let hand = -trap + 4.0 * 0.9 - 1.0 * 0.2;
        assert!((got - hand).abs() < 1e-12, "{got} vs {hand}");
    }

    #[test]
    fn measure_is_additive_and_consistent_with_q() {
        let f = sample_field(&pareto_spec(), 1.0, 1e-3, &default_levels(), 4).unwrap();
        let t = 1.0;
        let m1 = limit_measure(&f, t, 0.25, 1.0).unwrap();
        let m2 = limit_measure(&f, t, 1.0, 8.0).unwrap();
        let m = limit_measure(&f, t, 0.25, 8.0).unwrap();
        assert!((m1 + m2 - m).abs() < 1e-12);
        assert!(limit_measure(&f, t, 0.001, 1.0).is_err());
        // total over the grid span plus both brackets contains Q
        let q = limit_queue_length(&f, t).unwrap();
        let (lo, hi) = (f.levels[0], f.levels[48]);
        let k = f.time_index(t).unwrap();
        let span = limit_measure(&f, t, lo, hi).unwrap();
        // Q = span + W_{a1}/a1 + head + tail - W_{aK}/aK
        let base = span + f.w(0, k) / lo - f.w(48, k) / hi;
        assert!(q.lower <= base + f.w(48, k) / hi + f.w(0, k) / lo + 1e-12);
        assert!((q.lower - (base + f.w(48, k) / hi)).abs() < 1e-10);
    }

    #[test]
    fn refinement_changes_less_than_bracket() {
        // each step halves a_1 and doubles a_K, roughly doubling K; the head
        // bracket is only reliable once W vanishes below a_1
        let spec = pareto_spec();
        for seed in 0..20 {
            let b = BrownianPath::sample(1.0, 1e-3, seed).unwrap();
            let mut prev: Option<Bracketed> = None;
            for m in 3..=7 {
                let e = 2f64.powi(m);
                let f = RandomField::from_brownian(&spec, &b, &geometric_levels(1.0 / e, e, 4)).unwrap();
                let q = limit_queue_length(&f, 1.0).unwrap();
                assert!(q.lower <= q.estimate && q.estimate <= q.upper);
                if let Some(p) = prev {
                    assert!((q.estimate - p.estimate).abs() <= p.width() + 1e-12, "seed {seed} m {m}");
                    assert!(q.width() <= p.width() + 1e-15, "seed {seed} m {m}");
                }
                prev = Some(q);
            }
        }
    }

    #[test]
    fn marginal_matches_reflected_bm() {
        let spec = pareto_spec();
        let a = 2.0;
        let mu = spec.drift(a);
        let samples: Vec<f64> = (0..2000)
            .map(|s| {
                let b = BrownianPath::sample(1.0, 1e-3, s).unwrap();
                let f = RandomField::from_brownian(&spec, &b, &[a]).unwrap();
                f.w(0, f.n_times() - 1)
            })
            .collect();
        let ks = ks_one_sample(&samples, |w| reflected_bm_marginal_cdf(w, 1.0, mu, spec.sigma).unwrap()).unwrap();
        assert!(ks < 0.05, "ks = {ks}");
    }

    #[test]
    fn tail_ratio_at_fresh_busy_period() {
        // W_∞ stays positive after 0, so the last zero is at 0
        let mut spec = pareto_spec();
        spec.kappa = 50.0;
        let f = sample_field(&spec, 1.0, 1e-3, &default_levels(), 2).unwrap();
        let tr = tail_ratios(&f, 1.0, 16.0).unwrap();
        assert_eq!(tr.w_prime, 1.0);
        assert!(!tr.empty_zero_set);
        let k = f.n_times() - 1;
        let j = f.level_index(16.0).unwrap();
        assert!((tr.work * spec.lambda / 16f64.powi(2) - (f.w_inf(k) - f.w(j, k))).abs() < 1e-12);
    }

    #[test]
    fn collapse_first_time_is_zero() {
        let b = BrownianPath::sample(1.0, 1e-3, 0).unwrap();
        let rows = collapse_gap(&[2.0, 4.0], &CollapseSpec::default(), &b, &default_levels()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!((rows[0].sigma * rows[0].sigma - 4.0).abs() < 1e-12);
        for r in rows {
            assert!(r.gap >= 0.0 && r.gap.is_finite());
        }
    }
}
