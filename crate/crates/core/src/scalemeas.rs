//! Scaled observables of prelimit SRPT runs.
//!
//! A raw state with remaining sizes `v` becomes the measure with atoms at
//! `v / c^r` of mass `c^r / r`, observed at scaled time `t = s / r²`.
//! Truncated workloads and masses, netput paths `X_a^r` and their
//! reflections `Y_a^r`, and the sandwich bounds relating them to coupled
//! truncated runs live here.

use std::io::Write;

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::functions::TestFunction;
use crate::quadrature::adaptive_simpson;
use crate::skorohod::{reflect, SampledPath};
use crate::srpt::{coupled_truncated_runs, ArrivalStream, Job, Origin, QueueState, Trajectory};

/// Finite atomic measure on `(0, ∞)` at one scaled time.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSnapshot {
    pub time: f64,
    /// `(location, mass)`, ascending by location.
    pub atoms: Vec<(f64, f64)>,
    pub r: f64,
    pub c_r: f64,
}

impl MeasureSnapshot {
    /// Builds a snapshot from arbitrary atoms; nonpositive locations are dropped.
    pub fn from_atoms(time: f64, mut atoms: Vec<(f64, f64)>, r: f64, c_r: f64) -> Self {
        atoms.retain(|(x, _)| *x > 0.0);
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { time, atoms, r, c_r }
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// `(W_a, Z_a) = (⟨χ1_{[0,a]}, ·⟩, ⟨1_{[0,a]}, ·⟩)`.
    pub fn workload_and_mass(&self, a: f64) -> (f64, f64) {
        let n = self.atoms.partition_point(|(x, _)| *x <= a);
        self.atoms[..n]
            .iter()
            .fold((0.0, 0.0), |(w, z), (x, m)| (w + x * m, z + m))
    }

    /// `⟨f, ·⟩`.
    pub fn integrate(&self, f: &dyn TestFunction) -> f64 {
        self.atoms.iter().map(|(x, m)| f.value(*x) * m).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["location", "mass"])?;
        for (x, m) in &self.atoms {
            w.write_record([fmt_f64(*x), fmt_f64(*m)])?;
        }
        w.flush().map_err(|e| Error::io("<snapshot csv>", e))?;
        Ok(())
    }
}

/// Scales a raw state: atoms at `v / c_r` with mass `c_r / r`, time `s / r²`.
pub fn scaled_state(raw: &QueueState, r: f64, c_r: f64) -> MeasureSnapshot {
    let mass = c_r / r;
    let atoms = raw.sizes().map(|v| (v / c_r, mass)).collect();
    MeasureSnapshot::from_atoms(raw.time / (r * r), atoms, r, c_r)
}

pub fn workload_and_mass(snap: &MeasureSnapshot, a: f64) -> (f64, f64) {
    snap.workload_and_mass(a)
}

/// Unscaled netput `N(s) = (initial work <= y) + (arrived work <= y by s) - s`.
///
/// Knots are `0`, every admitted arrival time, the extra times and the
/// horizon, so the path is exact: linear with slope `-1` and upward jumps.
pub fn raw_netput(jobs: &[Job], threshold: f64, horizon: f64, extra_times: &[f64]) -> Result<SampledPath> {
    let initial: f64 = jobs
        .iter()
        .filter(|j| j.origin == Origin::Initial && j.initial_size <= threshold)
        .map(|j| j.initial_size)
        .sum();
    let mut arrivals: Vec<(f64, f64)> = jobs
        .iter()
        .filter(|j| j.origin == Origin::External && j.initial_size <= threshold && j.arrival_time <= horizon)
        .map(|j| (j.arrival_time, j.initial_size))
        .collect();
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut knots: Vec<f64> = std::iter::once(0.0)
        .chain(std::iter::once(horizon))
        .chain(arrivals.iter().map(|a| a.0))
        .chain(extra_times.iter().copied().filter(|t| (0.0..=horizon).contains(t)))
        .collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();

    let mut values = Vec::with_capacity(knots.len());
    let mut left = Vec::with_capacity(knots.len());
    let mut cum = 0.0;
    let mut next = 0;
    for &t in &knots {
        left.push(initial + cum - t);
        while next < arrivals.len() && arrivals[next].0 <= t {
            cum += arrivals[next].1;
            next += 1;
        }
        values.push(initial + cum - t);
    }
    SampledPath::with_jumps(knots, values, left)
}

/// Scaled paths of one level on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPathBundle {
    pub level: f64,
    pub grid: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
}

impl ScaledPathBundle {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "X", "Y", "W", "Z"])?;
        for i in 0..self.grid.len() {
            w.write_record([
                fmt_f64(self.grid[i]),
                fmt_f64(self.x[i]),
                fmt_f64(self.y[i]),
                fmt_f64(self.w[i]),
                fmt_f64(self.z[i]),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<bundle csv>", e))?;
        Ok(())
    }
}

/// `X_a^r`, `Y_a^r = Γ[X_a^r]` and the trajectory's `W_a^r`, `Z_a^r` on a
/// scaled time grid.
///
/// The reflection runs over the jump-resolved path, so its running infimum
/// is exact rather than grid-biased.
pub fn netput_and_reflection(
    traj: &Trajectory,
    r: f64,
    c_r: f64,
    a: f64,
    grid: &[f64],
) -> Result<ScaledPathBundle> {
    if !(c_r > 0.0 && r > 0.0) {
        return Err(Error::Parameter("r and c_r must be positive".into()));
    }
    let r2 = r * r;
    let raw_times: Vec<f64> = grid.iter().map(|t| t * r2).collect();
    if let Some(bad) = raw_times.iter().find(|s| !(0.0..=traj.horizon).contains(*s)) {
        return Err(Error::OutOfRange {
            t: bad / r2,
            horizon: traj.horizon / r2,
        });
    }
    let threshold = if a.is_infinite() { f64::INFINITY } else { a * c_r };
    let x_raw = raw_netput(&traj.jobs(), threshold, traj.horizon, &raw_times)?;
    let y_raw = reflect(&x_raw)?;
    let mut bundle = ScaledPathBundle {
        level: a,
        grid: grid.to_vec(),
        x: Vec::with_capacity(grid.len()),
        y: Vec::with_capacity(grid.len()),
        w: Vec::with_capacity(grid.len()),
        z: Vec::with_capacity(grid.len()),
    };
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|i, j| raw_times[*i].total_cmp(&raw_times[*j]));
    let mut wz = vec![(0.0, 0.0); grid.len()];
    let mut replay = traj.replay();
    for &i in &order {
        let snap = scaled_state(&replay.state_at(raw_times[i])?, r, c_r);
        wz[i] = snap.workload_and_mass(a);
    }
    for (i, s) in raw_times.iter().enumerate() {
        bundle.x.push(x_raw.value_at(*s)? / r);
        bundle.y.push(y_raw.value_at(*s)? / r);
        bundle.w.push(wz[i].0);
        bundle.z.push(wz[i].1);
    }
    Ok(bundle)
}

/// Both sides of `⟨f1_{(δ,M]}, μ⟩ = -∫_δ^M g'(x) W_x dx + g(M) W_M - g(δ+) W_δ`
/// with `g = f / χ` and `W_x = ⟨χ1_{[0,x]}, μ⟩`.
///
/// `W_x` is constant between atoms, so the integral is a finite sum; for
/// polynomials each piece is a difference of `g`, otherwise it is
/// integrated by adaptive Simpson.
pub fn integration_by_parts(snap: &MeasureSnapshot, f: &dyn TestFunction, delta: f64, m: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0) || !(m > delta) || !m.is_finite() {
        return Err(Error::Parameter(format!(
            "need 0 < delta < M < inf, got ({delta}, {m}]"
        )));
    }
    let g = |x: f64| f.value(x) / x;
    let gp = |x: f64| f.derivative(x) / x - f.value(x) / (x * x);
    let piece = |u: f64, v: f64| {
        if f.is_polynomial() {
            g(v) - g(u)
        } else {
            adaptive_simpson(&gp, u, v, 1e-10)
        }
    };

    let lhs: f64 = snap
        .atoms
        .iter()
        .filter(|(x, _)| *x > delta && *x <= m)
        .map(|(x, w)| f.value(*x) * w)
        .sum();

    let (w_delta, _) = snap.workload_and_mass(delta);
    let mut integral = 0.0;
    let mut w_cur = w_delta;
    let mut from = delta;
    for (x, mass) in snap.atoms.iter().filter(|(x, _)| *x > delta && *x <= m) {
        if *x > from {
            integral += w_cur * piece(from, *x);
        }
        w_cur += x * mass;
        from = *x;
    }
    if m > from {
        integral += w_cur * piece(from, m);
    }
    let (w_m, _) = snap.workload_and_mass(m);
    let rhs = -integral + g(m) * w_m - g(delta) * w_delta;
    Ok((lhs, rhs))
}

/// Families of inequalities checked on coupled truncated runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SandwichFamily {
    /// `Y_a ≤ W_a ≤ Y_a + a c^r/r`.
    Workload,
    /// `Q_a ≤ Z_a ≤ Q_a + c^r/r`.
    Mass,
    /// `Y_a ≤ ⟨χ1_{[0,a]}, Q̃_y⟩ ≤ Y_a + a c^r/r` for `a ≤ y`.
    TruncatedWorkload,
    /// `Q_a ≤ ⟨1_{[0,a]}, Q̃_y⟩ ≤ Q_a + c^r/r` for `a ≤ y`.
    TruncatedMass,
    /// `0 ≤ Q_y - Q_x ≤ c^r/r + Y_y/x` for `x ≤ y`.
    QueueGap,
    /// `W_∞ = Y_∞`, `Z_∞ = Q_∞`.
    Identity,
}

impl SandwichFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            SandwichFamily::Workload => "workload",
            SandwichFamily::Mass => "mass",
            SandwichFamily::TruncatedWorkload => "truncated_workload",
            SandwichFamily::TruncatedMass => "truncated_mass",
            SandwichFamily::QueueGap => "queue_gap",
            SandwichFamily::Identity => "identity",
        }
    }

    pub const ALL: [SandwichFamily; 6] = [
        SandwichFamily::Workload,
        SandwichFamily::Mass,
        SandwichFamily::TruncatedWorkload,
        SandwichFamily::TruncatedMass,
        SandwichFamily::QueueGap,
        SandwichFamily::Identity,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichViolation {
    pub family: SandwichFamily,
    /// Scaled time.
    pub time: f64,
    pub a: f64,
    pub y: f64,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SandwichReport {
    /// Number of inequality pairs checked per family, in [`SandwichFamily::ALL`] order.
    pub checks: [usize; 6],
    pub violations: [usize; 6],
    /// The first few violations, for diagnostics.
    pub examples: Vec<SandwichViolation>,
    pub times_checked: usize,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.violations.iter().all(|v| *v == 0)
    }

    pub fn total_violations(&self) -> usize {
        self.violations.iter().sum()
    }

    pub fn merge(&mut self, other: &SandwichReport) {
        for i in 0..6 {
            self.checks[i] += other.checks[i];
            self.violations[i] += other.violations[i];
        }
        self.times_checked += other.times_checked;
        for v in &other.examples {
            if self.examples.len() < 16 {
                self.examples.push(v.clone());
            }
        }
    }

    fn record(&mut self, v: SandwichViolation, slack: f64) {
        let i = SandwichFamily::ALL.iter().position(|f| *f == v.family).expect("listed");
        self.checks[i] += 1;
        let tol = slack * (1.0 + v.value.abs().max(v.upper.abs()));
        if v.value < v.lower - tol || v.value > v.upper + tol {
            self.violations[i] += 1;
            if self.examples.len() < 16 {
                self.examples.push(v);
            }
        }
    }
}

/// Checks the truncation sandwiches at every event time of the coupled runs.
///
/// `levels` are scaled thresholds in `(0, ∞)`; the full run plays `y = ∞`.
/// `inject` is added to every `W_a` before comparison (a negative control).
/// Inequalities are checked with tolerance `slack · (1 + |value|)`.
pub fn check_truncation_sandwiches(
    stream: &ArrivalStream,
    levels: &[f64],
    r: f64,
    c_r: f64,
    slack: f64,
    inject: f64,
) -> Result<SandwichReport> {
    let mut levels: Vec<f64> = levels.iter().copied().filter(|a| a.is_finite()).collect();
    if levels.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Parameter("levels must be positive".into()));
    }
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut all_levels = levels.clone();
    all_levels.push(f64::INFINITY);
    let thresholds: Vec<f64> = all_levels.iter().map(|a| a * c_r).collect();
    let runs = coupled_truncated_runs(stream, &thresholds, None)?;
    let full = runs.last().expect("infinite level present");
    let jobs = full.jobs();
    let r2 = r * r;
    let unit = c_r / r;

    let mut times: Vec<f64> = std::iter::once(0.0)
        .chain(runs.iter().flat_map(|t| t.event_times()))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();

    let netputs: Vec<SampledPath> = thresholds
        .iter()
        .map(|y| raw_netput(&jobs, *y, stream.horizon, &[]).and_then(|x| reflect(&x)))
        .collect::<Result<_>>()?;
    let mut replays: Vec<_> = runs.iter().map(|t| t.replay()).collect();
    let mut report = SandwichReport::default();
    let n = all_levels.len();
    for &s in &times {
        report.times_checked += 1;
        let t = s / r2;
        let snaps: Vec<MeasureSnapshot> = replays
            .iter_mut()
            .map(|rp| rp.state_at(s).map(|st| scaled_state(&st, r, c_r)))
            .collect::<Result<_>>()?;
        let ys: Vec<f64> = netputs
            .iter()
            .map(|p| p.value_at(s).map(|v| v / r))
            .collect::<Result<_>>()?;
        let qs: Vec<f64> = snaps.iter().map(|sn| sn.atoms.len() as f64 * unit).collect();
        let full_snap = &snaps[n - 1];
        let mk = |family, a, y, lower, value, upper| SandwichViolation {
            family,
            time: t,
            a,
            y,
            lower,
            value,
            upper,
        };
        for i in 0..n - 1 {
            let a = all_levels[i];
            let (w, z) = full_snap.workload_and_mass(a);
            let w = w + inject;
            report.record(mk(SandwichFamily::Workload, a, f64::INFINITY, ys[i], w, ys[i] + a * unit), slack);
            report.record(mk(SandwichFamily::Mass, a, f64::INFINITY, qs[i], z, qs[i] + unit), slack);
            for j in i..n {
                let y = all_levels[j];
                let (wy, zy) = snaps[j].workload_and_mass(a);
                let wy = wy + inject;
                report.record(mk(SandwichFamily::TruncatedWorkload, a, y, ys[i], wy, ys[i] + a * unit), slack);
                report.record(mk(SandwichFamily::TruncatedMass, a, y, qs[i], zy, qs[i] + unit), slack);
                report.record(
                    mk(SandwichFamily::QueueGap, a, y, 0.0, qs[j] - qs[i], unit + ys[j] / a),
                    slack,
                );
            }
        }
        let (w_inf, z_inf) = full_snap.workload_and_mass(f64::INFINITY);
        let w_inf = w_inf + inject;
        let y_inf = ys[n - 1];
        report.record(mk(SandwichFamily::Identity, f64::INFINITY, f64::INFINITY, y_inf, w_inf, y_inf), slack);
        report.record(
            mk(SandwichFamily::Identity, f64::INFINITY, f64::INFINITY, qs[n - 1], z_inf, qs[n - 1]),
            slack,
        );
    }
    Ok(report)
}
