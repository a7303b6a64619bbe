//! Processing-time and inter-arrival laws.
//!
//! Besides sampling, a processing-time law exposes the tail first moment
//! `E[v; v > x]`, the scaling function `S(x) = 1 / E[v; v > x]` and its
//! right-continuous inverse `c^r = S^{-1}(r)`, which sets the space scale of
//! the measure-valued state descriptor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::open_closed_uniform;

/// Serialized form of a processing-time law, e.g. `{"kind": "pareto", "m": 1.0, "p": 2.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistSpec {
    /// `F̄(x) = min(m^{p+1} x^{-(p+1)}, 1)`.
    Pareto { m: f64, p: f64 },
    /// `F̄(x) = (1 + λx/p)^{-(p+1)}`, mean `1/λ`.
    Lomax { lambda: f64, p: f64 },
    /// Uniform law on the listed values.
    Empirical { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Pareto { m: f64, p: f64 },
    Lomax { lambda: f64, p: f64 },
    Empirical { sorted: Vec<f64>, tail_sums: Vec<f64> },
}

/// A processing-time distribution with cached first two moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistSpec", into = "DistSpec")]
pub struct ServiceDist {
    kind: Kind,
    mean: f64,
    second_moment: f64,
}

impl TryFrom<DistSpec> for ServiceDist {
    type Error = Error;

    fn try_from(spec: DistSpec) -> Result<Self> {
        match spec {
            DistSpec::Pareto { m, p } => ServiceDist::pareto(m, p),
            DistSpec::Lomax { lambda, p } => ServiceDist::lomax(lambda, p),
            DistSpec::Empirical { values } => ServiceDist::empirical(values),
        }
    }
}

impl From<ServiceDist> for DistSpec {
    fn from(d: ServiceDist) -> Self {
        d.spec()
    }
}

impl ServiceDist {
    pub fn pareto(m: f64, p: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Parameter(format!("pareto scale m must be positive, got {m}")));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::Parameter(format!("pareto index p must exceed 1, got {p}")));
        }
        // shape p+1 on [m, inf)
        let mean = (p + 1.0) * m / p;
        let second_moment = (p + 1.0) * m * m / (p - 1.0);
        Ok(Self {
            kind: Kind::Pareto { m, p },
            mean,
            second_moment,
        })
    }

    pub fn lomax(lambda: f64, p: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!("lomax rate must be positive, got {lambda}")));
        }
        if !(p >= 2.0 && p.is_finite()) {
            return Err(Error::Parameter(format!("lomax index must be at least 2, got {p}")));
        }
        let mean = 1.0 / lambda;
        let variance = (p + 1.0) / ((p - 1.0) * lambda * lambda);
        Ok(Self {
            kind: Kind::Lomax { lambda, p },
            mean,
            second_moment: variance + mean * mean,
        })
    }

    pub fn empirical(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Parameter("empirical law needs at least one value".into()));
        }
        if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Parameter("empirical values must be positive and finite".into()));
        }
        values.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        // tail_sums[i] = sum of sorted[i..] / n
        let mut tail_sums = vec![0.0; values.len() + 1];
        for i in (0..values.len()).rev() {
            tail_sums[i] = tail_sums[i + 1] + values[i] / n;
        }
        let mean = tail_sums[0];
        let second_moment = values.iter().map(|v| v * v).sum::<f64>() / n;
        Ok(Self {
            kind: Kind::Empirical {
                sorted: values,
                tail_sums,
            },
            mean,
            second_moment,
        })
    }

    pub fn spec(&self) -> DistSpec {
        match &self.kind {
            Kind::Pareto { m, p } => DistSpec::Pareto { m: *m, p: *p },
            Kind::Lomax { lambda, p } => DistSpec::Lomax {
                lambda: *lambda,
                p: *p,
            },
            Kind::Empirical { sorted, .. } => DistSpec::Empirical {
                values: sorted.clone(),
            },
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn variance(&self) -> f64 {
        (self.second_moment - self.mean * self.mean).max(0.0)
    }

    /// Tail index `p` for the regularly varying families, `None` for empirical laws.
    pub fn tail_index(&self) -> Option<f64> {
        match self.kind {
            Kind::Pareto { p, .. } | Kind::Lomax { p, .. } => Some(p),
            Kind::Empirical { .. } => None,
        }
    }

    /// `P(v > x)`.
    pub fn ccdf(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Pareto { m, p } => {
                if x <= *m {
                    1.0
                } else {
                    (m / x).powf(p + 1.0)
                }
            }
            Kind::Lomax { lambda, p } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (1.0 + lambda * x / p).powf(-(p + 1.0))
                }
            }
            Kind::Empirical { sorted, .. } => {
                let below = sorted.partition_point(|v| *v <= x);
                (sorted.len() - below) as f64 / sorted.len() as f64
            }
        }
    }

    /// Generalized inverse of the CCDF: returns `x` with `P(v > x) = u`.
    pub fn inverse_cdf_sample(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u <= 1.0) {
            return Err(Error::Domain(format!("uniform draw must lie in (0, 1], got {u}")));
        }
        Ok(match &self.kind {
            Kind::Pareto { m, p } => m * u.powf(-1.0 / (p + 1.0)),
            Kind::Lomax { lambda, p } => (p / lambda) * (u.powf(-1.0 / (p + 1.0)) - 1.0),
            Kind::Empirical { sorted, .. } => {
                let n = sorted.len();
                let idx = (((1.0 - u) * n as f64).floor() as usize).min(n - 1);
                sorted[idx]
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = open_closed_uniform(rng);
        self.inverse_cdf_sample(u)
            .expect("open_closed_uniform stays in (0, 1]")
    }

    /// `E[v; v > x]`.
    pub fn truncated_first_moment(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Pareto { m, p } => {
                if x <= *m {
                    self.mean
                } else {
                    (p + 1.0) * m.powf(p + 1.0) / (p * x.powf(*p))
                }
            }
            Kind::Lomax { lambda, p } => {
                if x <= 0.0 {
                    self.mean
                } else {
                    let base = 1.0 + lambda * x / p;
                    base.powf(-p) / lambda + x * base.powf(-(p + 1.0))
                }
            }
            Kind::Empirical { sorted, tail_sums } => {
                let below = sorted.partition_point(|v| *v <= x);
                tail_sums[below]
            }
        }
    }

    /// `E[v; v <= x]`.
    pub fn lower_partial_mean(&self, x: f64) -> f64 {
        if x.is_infinite() && x > 0.0 {
            return self.mean;
        }
        (self.mean - self.truncated_first_moment(x)).max(0.0)
    }

    /// `S(x) = 1 / E[v; v > x]`, infinite beyond the support.
    pub fn s_function(&self, x: f64) -> f64 {
        let tail = self.truncated_first_moment(x);
        if tail > 0.0 {
            1.0 / tail
        } else {
            f64::INFINITY
        }
    }

    /// Space scale `c^r = S^{-1}(r) = inf{u > 0 : S(u) > r}`.
    ///
    /// Pareto uses the closed form `(c_p r)^{1/p}` with `c_p = m^{p+1}(p+1)/p`;
    /// Lomax bisects the continuous increasing `S`; empirical laws scan the
    /// sorted support, where `S` is a step function and only `S(c^r) > r` holds.
    pub fn scale_parameter(&self, r: f64) -> Result<f64> {
        let s0 = 1.0 / self.mean;
        if !(r > s0) || !r.is_finite() {
            return Err(Error::Precondition(format!(
                "scale r = {r} must exceed S(0) = {s0}; c^r is undefined otherwise"
            )));
        }
        match &self.kind {
            Kind::Pareto { m, p } => {
                let c_p = m.powf(p + 1.0) * (p + 1.0) / p;
                Ok((c_p * r).powf(1.0 / p))
            }
            Kind::Lomax { .. } => Ok(self.invert_s_by_bisection(r, 0.0)),
            Kind::Empirical { sorted, tail_sums } => {
                let target = 1.0 / r;
                // first sorted index whose strict tail moment drops below 1/r
                let n = sorted.len();
                let mut lo = 0usize;
                let mut hi = n - 1;
                let tail_after = |i: usize| tail_sums[sorted.partition_point(|v| *v <= sorted[i])];
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    if tail_after(mid) < target {
                        hi = mid;
                    } else {
                        lo = mid + 1;
                    }
                }
                Ok(sorted[lo])
            }
        }
    }

    /// Bisection for `S(x) = r` on `[lower, x_hi]`, doubling `x_hi` until
    /// `S(x_hi) > r`. Requires `S` continuous and strictly increasing there.
    pub fn invert_s_by_bisection(&self, r: f64, lower: f64) -> f64 {
        let mut lo = lower;
        let mut hi = if lower > 0.0 { 2.0 * lower } else { 1.0 };
        while self.s_function(hi) <= r {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.s_function(mid) > r {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// `λ^r = (1 + κ/r) / E[v]`, so that `r(λ^r E[v] - 1) = κ`.
    pub fn heavy_traffic_arrival_rate(&self, r: f64, kappa: f64) -> Result<f64> {
        let rate = (1.0 + kappa / r) / self.mean;
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "arrival rate {rate} is not positive for r = {r}, kappa = {kappa}"
            )));
        }
        Ok(rate)
    }

    /// `σ² = λ Var(v) + λ σ_A²` with `λ = 1/E[v]`.
    pub fn diffusion_variance(&self, sigma_a: f64) -> f64 {
        let lambda = 1.0 / self.mean;
        lambda * self.variance() + lambda * sigma_a * sigma_a
    }
}

/// Scale-dependent constants of the r-th system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeavyTrafficParams {
    pub kappa: f64,
    pub r: f64,
    pub lambda_r: f64,
    pub c_r: f64,
}

impl HeavyTrafficParams {
    pub fn new(dist: &ServiceDist, r: f64, kappa: f64) -> Result<Self> {
        Ok(Self {
            kappa,
            r,
            lambda_r: dist.heavy_traffic_arrival_rate(r, kappa)?,
            c_r: dist.scale_parameter(r)?,
        })
    }

    /// Mass carried by one job in the scaled measure.
    pub fn atom_mass(&self) -> f64 {
        self.c_r / self.r
    }
}

/// Renewal law for inter-arrival gaps.
///
/// The simulator rescales the law to the requested arrival rate, so only its
/// shape (coefficient of variation) matters for heavy-traffic runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterArrival {
    Exponential { rate: f64 },
    Deterministic { gap: f64 },
    ShiftedUniform { lo: f64, hi: f64 },
}

impl InterArrival {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            InterArrival::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            InterArrival::Deterministic { gap } => gap > 0.0 && gap.is_finite(),
            InterArrival::ShiftedUniform { lo, hi } => lo >= 0.0 && hi > lo && hi.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid inter-arrival law {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            InterArrival::Exponential { rate } => 1.0 / rate,
            InterArrival::Deterministic { gap } => gap,
            InterArrival::ShiftedUniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn std_dev(&self) -> f64 {
        match *self {
            InterArrival::Exponential { rate } => 1.0 / rate,
            InterArrival::Deterministic { .. } => 0.0,
            InterArrival::ShiftedUniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InterArrival::Exponential { rate } => -open_closed_uniform(rng).ln() / rate,
            InterArrival::Deterministic { gap } => gap,
            InterArrival::ShiftedUniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSpec {
    pub inter_arrival: InterArrival,
    /// Law of the first gap; `None` draws an ordinary gap.
    #[serde(default)]
    pub initial_delay: Option<InterArrival>,
}

impl Default for ArrivalSpec {
    fn default() -> Self {
        Self::poisson()
    }
}

impl ArrivalSpec {
    pub fn poisson() -> Self {
        Self {
            inter_arrival: InterArrival::Exponential { rate: 1.0 },
            initial_delay: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.inter_arrival.validate()?;
        if let Some(d) = &self.initial_delay {
            d.validate()?;
        }
        Ok(())
    }

    /// Standard deviation of a generic gap at the stated parameters.
    pub fn sigma_a(&self) -> f64 {
        self.inter_arrival.std_dev()
    }

    /// Standard deviation of a gap once the law is rescaled to `rate`.
    pub fn sigma_a_at_rate(&self, rate: f64) -> f64 {
        self.inter_arrival.std_dev() / (self.inter_arrival.mean() * rate)
    }

    /// Multiplier turning a raw gap draw into one with mean `1/rate`.
    pub fn time_scale(&self, rate: f64) -> f64 {
        1.0 / (self.inter_arrival.mean() * rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    // Independent oracle: E[v; v > x] = ∫_x^∞ F̄(t) dt + x F̄(x), the integral
    // computed by composite Simpson after t = x / s^2 style substitution.
    fn quadrature_tail_moment(d: &ServiceDist, x: f64) -> f64 {
        // ∫_x^∞ F̄(t) dt with t = x + u/(1-u), u in [0,1)
        let n = 200_000;
        let h = 1.0 / n as f64;
        let g = |u: f64| {
            if u >= 1.0 {
                return 0.0;
            }
            let t = x + u / (1.0 - u);
            d.ccdf(t) / ((1.0 - u) * (1.0 - u))
        };
        let mut s = g(0.0) + g(1.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * g(i as f64 * h);
        }
        s * h / 3.0 + x * d.ccdf(x)
    }

    fn pareto12() -> ServiceDist {
        ServiceDist::pareto(1.0, 2.0).unwrap()
    }

    #[test]
    fn inverse_cdf_examples() {
        let d = pareto12();
        assert_eq!(d.inverse_cdf_sample(1.0).unwrap(), 1.0);
        assert!((d.inverse_cdf_sample(0.125).unwrap() - 2.0).abs() < 1e-14);
        assert!((d.inverse_cdf_sample(1e-3).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(d.inverse_cdf_sample(0.0), Err(Error::Domain(_))));
        assert!(matches!(d.inverse_cdf_sample(1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn truncated_moment_matches_quadrature() {
        let d = pareto12();
        let oracle_2 = quadrature_tail_moment(&d, 2.0);
        let oracle_1 = quadrature_tail_moment(&d, 1.0);
        assert!((oracle_2 - 0.375).abs() < 1e-6, "{oracle_2}");
        assert!((oracle_1 - 1.5).abs() < 1e-6, "{oracle_1}");
        assert!((d.truncated_first_moment(2.0) - 0.375).abs() < 1e-15);
        assert!((d.truncated_first_moment(1.0) - 1.5).abs() < 1e-15);
        assert_eq!(d.truncated_first_moment(0.5), 1.5);

        let l = ServiceDist::lomax(0.5, 3.0).unwrap();
        for x in [0.0, 0.3, 2.0, 11.0] {
            let q = quadrature_tail_moment(&l, x);
            assert!((l.truncated_first_moment(x) - q).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn scale_parameter_examples() {
        let d = pareto12();
        assert!((d.scale_parameter(100.0).unwrap() - 150f64.sqrt()).abs() < 1e-12);
        // oracle: bisection on S(x) = 2x^2/3 = 6
        let (mut lo, mut hi) = (1.0f64, 10.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 2.0 * mid * mid / 3.0 > 6.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        assert!((d.scale_parameter(6.0).unwrap() - lo).abs() < 1e-12);
        assert!((lo - 3.0).abs() < 1e-12);
        assert!(matches!(d.scale_parameter(0.5), Err(Error::Precondition(_))));
        assert!(matches!(d.scale_parameter(2.0 / 3.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn scale_round_trip() {
        for d in [
            pareto12(),
            ServiceDist::pareto(0.3, 1.5).unwrap(),
            ServiceDist::lomax(1.0, 2.0).unwrap(),
            ServiceDist::lomax(2.0, 7.5).unwrap(),
        ] {
            for r in [1.5 / d.mean(), 10.0, 1e3, 1e6] {
                let c = d.scale_parameter(r).unwrap();
                let s = d.s_function(c);
                assert!(((s - r) / r).abs() < 1e-9, "{d:?} r={r} S(c)={s}");
            }
        }
    }

    #[test]
    fn empirical_scale_is_right_continuous_inverse() {
        let d = ServiceDist::empirical(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // tail moments: T(u<1)=2.5, T[1,2)=2.25, T[2,3)=1.75, T[3,4)=1, T>=4 = 0
        assert_eq!(d.scale_parameter(0.41).unwrap(), 1.0);
        assert_eq!(d.scale_parameter(0.5).unwrap(), 2.0);
        assert_eq!(d.scale_parameter(0.9).unwrap(), 3.0);
        assert_eq!(d.scale_parameter(5.0).unwrap(), 4.0);
        for r in [0.45, 0.6, 0.99, 3.0] {
            let c = d.scale_parameter(r).unwrap();
            assert!(d.s_function(c) > r);
        }
    }

    #[test]
    fn arrival_rate_identity() {
        let d = pareto12();
        assert!((d.heavy_traffic_arrival_rate(50.0, 0.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let rate = d.heavy_traffic_arrival_rate(100.0, 1.0).unwrap();
        assert!((rate - 0.673_333_333_333_333_3).abs() < 1e-15);
        for (r, kappa) in [(100.0, 1.0), (25.0, -3.0), (1e4, 0.7)] {
            let rate = d.heavy_traffic_arrival_rate(r, kappa).unwrap();
            assert!((r * (rate * d.mean() - 1.0) - kappa).abs() < 1e-12);
        }
        assert!(matches!(
            d.heavy_traffic_arrival_rate(2.0, -2.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn diffusion_variance_examples() {
        let d = pareto12();
        assert!((d.diffusion_variance(1.5) - 2.0).abs() < 1e-14);
        assert!((d.diffusion_variance(0.0) - 0.5).abs() < 1e-14);
        let degenerate = ServiceDist::empirical(vec![2.0]).unwrap();
        assert_eq!(degenerate.diffusion_variance(0.0), 0.0);
    }

    #[test]
    fn karamata_ratio_is_exact_for_pareto() {
        let d = pareto12();
        for r in [10.0, 1e3, 1e5] {
            let c = d.scale_parameter(r).unwrap();
            for a in [0.1, 0.5, 1.0, 3.0, 17.0] {
                if a * c < 1.0 {
                    continue;
                }
                let ratio = d.truncated_first_moment(a * c) / d.truncated_first_moment(c);
                assert!((ratio - a.powf(-2.0)).abs() < 1e-12 * a.powf(-2.0).max(1.0));
            }
        }
    }

    #[test]
    fn scale_growth_bracket_and_ratio() {
        let eps = 0.1;
        for (m, p) in [(1.0, 2.0), (0.5, 3.0), (2.0, 1.5)] {
            let d = ServiceDist::pareto(m, p).unwrap();
            let mut prev = f64::INFINITY;
            for k in 3..12 {
                let r = 10f64.powi(k);
                let c = d.scale_parameter(r).unwrap();
                let base = (p + 1.0) * r / p;
                if m == 1.0 {
                    assert!(base.powf(1.0 / (p + eps)) < c && c < base.powf(1.0 / (p - eps)));
                }
                let ratio = c / r;
                assert!(ratio < prev);
                prev = ratio;
            }
            assert!(prev < 1e-3);
        }
    }

    #[test]
    fn sampling_mean_within_three_standard_errors() {
        let d = pareto12();
        let mut rng = stream_rng(11, 0);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let se = (d.variance() / n as f64).sqrt();
        assert!((mean - 1.5).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn json_round_trip() {
        let d: ServiceDist = serde_json::from_str(r#"{"kind": "pareto", "m": 1.0, "p": 2.0}"#).unwrap();
        assert_eq!(d, pareto12());
        let back = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<ServiceDist>(&back).unwrap(), d);
        assert!(serde_json::from_str::<ServiceDist>(r#"{"kind": "lomax", "lambda": 1.0, "p": 1.5}"#).is_err());
    }

    #[test]
    fn arrival_rescaling() {
        let spec = ArrivalSpec::poisson();
        assert!((spec.sigma_a_at_rate(2.0 / 3.0) - 1.5).abs() < 1e-15);
        let uni = ArrivalSpec {
            inter_arrival: InterArrival::ShiftedUniform { lo: 1.0, hi: 3.0 },
            initial_delay: None,
        };
        assert!((uni.time_scale(0.25) - 2.0).abs() < 1e-15);
        assert!((uni.sigma_a() - 2.0 / 12f64.sqrt()).abs() < 1e-15);
    }
}
