//! One-dimensional Skorohod map `Γ[f] = f - min(0, inf_{s<=t} f(s))`.
//!
//! Paths are sampled at knots `t_0 = 0 < t_1 < ...`. Between two knots the
//! path runs linearly from `values[i]` to `left_limits[i+1]` and then jumps to
//! `values[i+1]`, which covers continuous piecewise-linear paths, right-
//! continuous step paths and linear paths with jumps (prelimit netputs).
//! Infima of such paths are attained at knot values or left limits, so the
//! map is computed exactly; kinks of `Γ[f]` inside a segment become knots.

use std::io::Write;

use crate::error::{Error, Result};
use crate::format::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// Continuous, linear between knots.
    Linear,
    /// Right-continuous, constant between knots.
    Constant,
    /// Linear between knots with jumps allowed at knots.
    LinearWithJumps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    times: Vec<f64>,
    values: Vec<f64>,
    left_limits: Vec<f64>,
    interpolation: Interpolation,
}

impl SampledPath {
    fn validate(times: &[f64], values: &[f64]) -> Result<()> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Parameter(
                "path needs matching, nonempty time and value lists".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(Error::Parameter(format!("path must start at time 0, got {}", times[0])));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Parameter("path times must be finite and strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("path values must be finite".into()));
        }
        Ok(())
    }

    pub fn linear(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::validate(&times, &values)?;
        Ok(Self {
            left_limits: values.clone(),
            times,
            values,
            interpolation: Interpolation::Linear,
        })
    }

    pub fn constant(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::validate(&times, &values)?;
        let mut left_limits = Vec::with_capacity(values.len());
        left_limits.push(values[0]);
        left_limits.extend_from_slice(&values[..values.len() - 1]);
        Ok(Self {
            times,
            values,
            left_limits,
            interpolation: Interpolation::Constant,
        })
    }

    /// `left_limits[i]` is `f(t_i-)`; `left_limits[0]` is ignored.
    pub fn with_jumps(times: Vec<f64>, values: Vec<f64>, mut left_limits: Vec<f64>) -> Result<Self> {
        Self::validate(&times, &values)?;
        if left_limits.len() != values.len() || left_limits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("left limits must be finite and match the knots".into()));
        }
        left_limits[0] = values[0];
        Ok(Self {
            times,
            values,
            left_limits,
            interpolation: Interpolation::LinearWithJumps,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn left_limits(&self) -> &[f64] {
        &self.left_limits
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("validated nonempty")
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if (0.0..=self.end_time()).contains(&t) {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                t,
                horizon: self.end_time(),
            })
        }
    }

    /// Index `i` with `t_i <= t < t_{i+1}` (the last knot maps to itself).
    fn segment(&self, t: f64) -> usize {
        self.times.partition_point(|s| *s <= t) - 1
    }

    fn interpolate(&self, i: usize, t: f64) -> f64 {
        let a = self.values[i];
        if t == self.times[i] || i + 1 == self.len() {
            return a;
        }
        let b = self.left_limits[i + 1];
        if a == b {
            return a;
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        a + (b - a) * ((t - t0) / (t1 - t0))
    }

    /// Right-continuous value `f(t)`.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.interpolate(self.segment(t), t))
    }

    /// Left limit `f(t-)`, with `f(0-) = f(0)`.
    pub fn left_limit_at(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let i = self.segment(t);
        if self.times[i] == t {
            Ok(self.left_limits[i])
        } else {
            Ok(self.interpolate(i, t))
        }
    }

    /// `sup |f|` over the path.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .chain(&self.left_limits)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `f + eps·t`, exact for every interpolation (a step path gains slopes).
    pub fn add_drift(&self, eps: f64) -> SampledPath {
        let values = self.times.iter().zip(&self.values).map(|(t, v)| v + eps * t).collect();
        let left_limits = self
            .times
            .iter()
            .zip(&self.left_limits)
            .map(|(t, v)| v + eps * t)
            .collect();
        let interpolation = match self.interpolation {
            Interpolation::Linear => Interpolation::Linear,
            _ => Interpolation::LinearWithJumps,
        };
        SampledPath {
            times: self.times.clone(),
            values,
            left_limits,
            interpolation,
        }
    }

    /// CSV with columns `t,value,left_limit`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "value", "left_limit"])?;
        for i in 0..self.len() {
            w.write_record([
                fmt_f64(self.times[i]),
                fmt_f64(self.values[i]),
                fmt_f64(self.left_limits[i]),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<path csv>", e))?;
        Ok(())
    }
}

/// `Γ[f]` together with the pushing term `-min(0, inf f)` at each output knot.
#[derive(Debug, Clone, PartialEq)]
pub struct Reflection {
    pub path: SampledPath,
    /// Pushing term at `t_j`.
    pub push: Vec<f64>,
    /// Pushing term at `t_j-`.
    pub push_left: Vec<f64>,
}

/// Applies the Skorohod map; requires `f(0) >= 0`.
pub fn reflect(f: &SampledPath) -> Result<SampledPath> {
    Ok(reflect_detailed(f)?.path)
}

pub fn reflect_detailed(f: &SampledPath) -> Result<Reflection> {
    if f.values[0] < 0.0 {
        return Err(Error::Domain(format!(
            "reflection needs f(0) >= 0, got {}",
            f.values[0]
        )));
    }
    let n = f.len();
    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut left = Vec::with_capacity(n);
    let mut push = Vec::with_capacity(n);
    let mut push_left = Vec::with_capacity(n);

    let mut p = 0.0f64;
    times.push(0.0);
    values.push(f.values[0]);
    left.push(f.values[0]);
    push.push(0.0);
    push_left.push(0.0);
    for i in 0..n - 1 {
        let a = f.values[i];
        let b = f.left_limits[i + 1];
        let (t0, t1) = (f.times[i], f.times[i + 1]);
        let start = a + p;
        if b + p < 0.0 && start > 0.0 {
            // the path meets its running minimum inside the segment
            let s = t0 + (start / (a - b)) * (t1 - t0);
            if s > t0 && s < t1 {
                times.push(s);
                values.push(0.0);
                left.push(0.0);
                push.push(p);
                push_left.push(p);
            }
        }
        let p_left = p.max(-b);
        let q = p_left.max(-f.values[i + 1]);
        times.push(t1);
        left.push(if p_left == -b { 0.0 } else { b + p_left });
        values.push(if q == -f.values[i + 1] { 0.0 } else { f.values[i + 1] + q });
        push_left.push(p_left);
        push.push(q);
        p = q;
    }
    let path = SampledPath {
        times,
        values,
        left_limits: left,
        interpolation: f.interpolation,
    };
    Ok(Reflection {
        path,
        push,
        push_left,
    })
}

/// `Γ[f](t)`, evaluated exactly.
pub fn reflected_value_at(f: &SampledPath, t: f64) -> Result<f64> {
    reflect(f)?.value_at(t)
}

/// Default zero tolerance for exact prelimit paths: `1e-9 · sup |w|`.
pub fn default_eps_zero(w: &SampledPath) -> f64 {
    1e-9 * w.sup_norm()
}

/// `sup{s <= t : w(s) <= eps_zero}`, or `None` when the set is empty.
pub fn last_zero(w: &SampledPath, t: f64, eps_zero: f64) -> Result<Option<f64>> {
    let at_t = w.value_at(t)?;
    if at_t <= eps_zero {
        return Ok(Some(t));
    }
    let mut i = w.segment(t);
    // on [t_i, t] the path runs linearly from values[i] to at_t
    let mut end_time = t;
    let mut end_value = at_t;
    loop {
        let a = w.values[i];
        if a <= eps_zero {
            let t0 = w.times[i];
            if end_value == a {
                return Ok(Some(end_time));
            }
            let s = t0 + (eps_zero - a) / (end_value - a) * (end_time - t0);
            return Ok(Some(s.clamp(t0, end_time)));
        }
        if i == 0 {
            return Ok(None);
        }
        if w.left_limits[i] <= eps_zero {
            return Ok(Some(w.times[i]));
        }
        end_time = w.times[i];
        end_value = w.left_limits[i];
        i -= 1;
    }
}

/// `t - sup{s <= t : w(s) <= eps_zero}`, the duration of the current busy
/// period; the empty set counts as `sup = 0`.
pub fn last_zero_derivative(w: &SampledPath, t: f64, eps_zero: f64) -> Result<f64> {
    Ok(last_zero_derivative_flagged(w, t, eps_zero)?.0)
}

/// As [`last_zero_derivative`], also reporting whether the zero set was empty.
pub fn last_zero_derivative_flagged(w: &SampledPath, t: f64, eps_zero: f64) -> Result<(f64, bool)> {
    Ok(match last_zero(w, t, eps_zero)? {
        Some(s) => (t - s, false),
        None => (t, true),
    })
}

/// `(Γ[f + eps·ι](t) - Γ[f](t)) / eps`.
pub fn drift_perturbation_derivative(f: &SampledPath, t: f64, eps: f64) -> Result<f64> {
    if eps == 0.0 || !eps.is_finite() {
        return Err(Error::Parameter(format!("drift step must be finite and nonzero, got {eps}")));
    }
    let base = reflected_value_at(f, t)?;
    let bumped = reflected_value_at(&f.add_drift(eps), t)?;
    Ok((bumped - base) / eps)
}

/// `sup_t |f(t) - g(t)|` over the union of knots, both sides of each jump.
pub fn sup_distance(f: &SampledPath, g: &SampledPath) -> Result<f64> {
    let end = f.end_time().min(g.end_time());
    let mut d = 0.0f64;
    for t in f.times.iter().chain(&g.times).copied().filter(|t| *t <= end) {
        d = d.max((f.value_at(t)? - g.value_at(t)?).abs());
        d = d.max((f.left_limit_at(t)? - g.left_limit_at(t)?).abs());
    }
    Ok(d)
}
