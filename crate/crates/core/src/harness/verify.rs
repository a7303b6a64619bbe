//! The invariant ledger: every exact pathwise property, run on a fixed budget.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dists::{ArrivalSpec, HeavyTrafficParams, ServiceDist};
use crate::error::{Error, Result};
use crate::functions::Polynomial;
use crate::limitfield::{limit_queue_length, sample_field, LimitInitialProfile, LimitSpec};
use crate::rng::{derive_seed, stream_rng};
use crate::scalemeas::{check_truncation_sandwiches, integration_by_parts, MeasureSnapshot, SandwichFamily};
use crate::skorohod::{
    drift_perturbation_derivative, last_zero_derivative, reflect, reflect_detailed, sup_distance, SampledPath,
};
use crate::srpt::{
    intertwined_pair_sim, random_intertwined_start, run_srpt, stream_for_seed, ArrivalStream,
};

const VERIFY_FAMILY: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub family: String,
    pub case: String,
    pub checks: usize,
    pub violations: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    pub seed: u64,
    pub negative_control: bool,
    pub rows: Vec<LedgerRow>,
}

impl Ledger {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn family_passed(&self, family: &str) -> bool {
        self.rows.iter().filter(|r| r.family == family).all(|r| r.pass)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["family", "case", "checks", "violations", "status"])?;
        for r in &self.rows {
            w.write_record([
                r.family.as_str(),
                r.case.as_str(),
                &r.checks.to_string(),
                &r.violations.to_string(),
                if r.pass { "pass" } else { "fail" },
            ])?;
        }
        w.flush().map_err(|e| Error::io("<ledger csv>", e))?;
        Ok(())
    }

    /// Writes `ledger.csv` and `ledger.json` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("ledger.csv");
        let f = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_csv(f)?;
        let json_path = dir.join("ledger.json");
        std::fs::write(&json_path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&json_path, e))?;
        Ok(())
    }
}

fn row(family: &str, case: impl Into<String>, checks: usize, violations: usize) -> LedgerRow {
    LedgerRow {
        family: family.to_string(),
        case: case.into(),
        checks,
        violations,
        pass: violations == 0,
    }
}

/// Runs every family. With `negative_control` the workloads fed to the
/// truncation sandwiches are raised by `c^r/r`, which must be caught.
pub fn verify_suite(seed: u64, negative_control: bool) -> Result<Ledger> {
    let mut rows = Vec::new();
    rows.extend(trivial_family()?);
    rows.extend(sandwich_family(seed, negative_control)?);
    rows.extend(intertwining_family(seed)?);
    rows.extend(parts_family(seed)?);
    rows.extend(skorohod_family(seed)?);
    rows.extend(karamata_family()?);
    Ok(Ledger {
        seed,
        negative_control,
        rows,
    })
}

fn trivial_family() -> Result<Vec<LedgerRow>> {
    let mut out = Vec::new();
    let empty = ArrivalStream::new(vec![], vec![], 10.0)?;
    let traj = run_srpt(&empty, f64::INFINITY, None);
    let bad = usize::from(!traj.events().is_empty()) + usize::from(traj.queue_len_at(10.0) != 0);
    out.push(row("trivial", "empty_system_stays_empty", 2, bad));

    let snap = MeasureSnapshot::from_atoms(0.0, vec![], 100.0, 12.0);
    let (w, z) = snap.workload_and_mass(1.0);
    let (l, r) = integration_by_parts(&snap, &Polynomial::new(vec![1.0, 2.0]), 0.5, 3.0)?;
    let bad = [w, z, l, r].iter().filter(|v| **v != 0.0).count();
    out.push(row("trivial", "empty_snapshot_is_zero", 4, bad));

    let zero = SampledPath::linear(vec![0.0, 1.0, 2.0], vec![0.0; 3])?;
    let g = reflect(&zero)?;
    let bad = g.values().iter().filter(|v| **v != 0.0).count();
    out.push(row("trivial", "zero_path_reflects_to_zero", 3, bad));

    let spec = LimitSpec::from_dist(&ServiceDist::pareto(1.0, 2.0)?, 1.5, 0.0, LimitInitialProfile::Zero)?;
    let field = sample_field(&spec, 0.01, 1e-3, &[0.5, 1.0, 2.0], 0)?;
    let q = limit_queue_length(&field, 0.0)?;
    let bad = [q.estimate, q.lower, q.upper].iter().filter(|v| **v != 0.0).count();
    out.push(row("trivial", "limit_field_starts_at_zero", 3, bad));
    Ok(out)
}

fn sandwich_family(seed: u64, negative_control: bool) -> Result<Vec<LedgerRow>> {
    let service = ServiceDist::pareto(1.0, 2.0)?;
    let arrivals = ArrivalSpec::poisson();
    let levels = [0.25, 0.5, 1.0, 2.0];
    let mut out = Vec::new();
    for (ri, r) in [25.0, 100.0].into_iter().enumerate() {
        let ht = HeavyTrafficParams::new(&service, r, 0.0)?;
        let inject = if negative_control { ht.c_r / r } else { 0.0 };
        let mut total = crate::scalemeas::SandwichReport::default();
        for i in 0..10 {
            let s = derive_seed(seed, VERIFY_FAMILY, (ri * 100 + i) as u32);
            let stream = stream_for_seed(&arrivals, &service, ht.lambda_r, &[], r * r, s)?;
            total.merge(&check_truncation_sandwiches(&stream, &levels, r, ht.c_r, 1e-9, inject)?);
        }
        for (k, fam) in SandwichFamily::ALL.iter().enumerate() {
            let family = if *fam == SandwichFamily::QueueGap { "qlxy" } else { "comp" };
            out.push(row(
                family,
                format!("{}_r{}", fam.as_str(), r),
                total.checks[k],
                total.violations[k],
            ));
        }
    }
    Ok(out)
}

fn intertwining_family(seed: u64) -> Result<Vec<LedgerRow>> {
    let service = ServiceDist::pareto(1.0, 2.0)?;
    let arrivals = ArrivalSpec::poisson();
    let lambda = 1.0 / service.mean();
    let mut rng = stream_rng(derive_seed(seed, VERIFY_FAMILY, 1000), 0);
    let (mut checks, mut bound, mut broken) = (0, 0, 0);
    for i in 0..20 {
        let (s1, s2) = random_intertwined_start(&service, 6, &mut rng);
        let s = derive_seed(seed, VERIFY_FAMILY, 1001 + i);
        let pq = intertwined_pair_sim(&arrivals, &service, lambda, &s1, &s2, 400.0, s)?;
        checks += pq.times.len();
        bound += pq.bound_violations();
        broken += pq.broken_intertwinings();
    }
    Ok(vec![
        row("intqlc", "queue_lengths_interlace", checks, bound),
        row("intqlc", "intertwining_preserved", checks, broken),
    ])
}

fn parts_family(seed: u64) -> Result<Vec<LedgerRow>> {
    let mut rng = stream_rng(derive_seed(seed, VERIFY_FAMILY, 2000), 0);
    let (mut checks, mut bad) = (0, 0);
    for _ in 0..200 {
        let n = rng.random_range(0..20);
        let atoms = (0..n)
            .map(|_| (rng.random_range(0.01..5.0), rng.random_range(0.01..1.0)))
            .collect();
        let snap = MeasureSnapshot::from_atoms(0.0, atoms, 1.0, 1.0);
        let deg = rng.random_range(0..5);
        let f = Polynomial::new((0..=deg).map(|_| rng.random_range(-2.0..2.0)).collect());
        let delta = rng.random_range(0.01..2.0);
        let m = delta + rng.random_range(0.01..4.0);
        let (lhs, rhs) = integration_by_parts(&snap, &f, delta, m)?;
        checks += 1;
        if (lhs - rhs).abs() > 1e-9 * (1.0 + lhs.abs()) {
            bad += 1;
        }
    }
    Ok(vec![row("parts", "random_polynomials", checks, bad)])
}

fn random_path<R: Rng>(rng: &mut R, n: usize) -> Result<SampledPath> {
    let mut t = vec![0.0];
    let mut v = vec![rng.random::<f64>()];
    for _ in 1..n {
        t.push(t.last().expect("nonempty") + 0.01 + rng.random::<f64>());
        v.push(v.last().expect("nonempty") + rng.random::<f64>() * 2.0 - 1.0);
    }
    SampledPath::linear(t, v)
}

fn skorohod_family(seed: u64) -> Result<Vec<LedgerRow>> {
    let mut rng = stream_rng(derive_seed(seed, VERIFY_FAMILY, 3000), 0);
    let (mut nc_checks, mut nc_bad) = (0, 0);
    let (mut lip_checks, mut lip_bad) = (0, 0);
    let (mut mono_checks, mut mono_bad) = (0, 0);
    for _ in 0..200 {
        let f1 = random_path(&mut rng, 30)?;
        let mut noisy: Vec<f64> = f1.values().iter().map(|v| v + rng.random::<f64>() - 0.5).collect();
        noisy[0] = noisy[0].abs();
        let f2 = SampledPath::linear(f1.times().to_vec(), noisy)?;
        let r1 = reflect_detailed(&f1)?;
        let g = &r1.path;
        for j in 0..g.len() {
            nc_checks += 1;
            let mut ok = g.values()[j] >= 0.0 && g.left_limits()[j] >= 0.0;
            if j > 0 && r1.push_left[j] > r1.push[j - 1] {
                ok &= g.values()[j - 1] == 0.0 && g.left_limits()[j] == 0.0;
            }
            if r1.push[j] > r1.push_left[j] {
                ok &= g.values()[j] == 0.0;
            }
            nc_bad += usize::from(!ok);
        }
        let g2 = reflect(&f2)?;
        lip_checks += 1;
        if sup_distance(g, &g2)? > 2.0 * sup_distance(&f1, &f2)? + 1e-12 {
            lip_bad += 1;
        }
        // a nondecreasing bump
        let mut acc = 0.0;
        let bumped: Vec<f64> = f1
            .values()
            .iter()
            .map(|v| {
                acc += rng.random::<f64>() * 0.3;
                v + acc
            })
            .collect();
        let g3 = reflect(&SampledPath::linear(f1.times().to_vec(), bumped)?)?;
        for t in f1.times() {
            mono_checks += 1;
            if g.value_at(*t)? > g3.value_at(*t)? + 1e-12 {
                mono_bad += 1;
            }
        }
    }

    let (dt, eps) = (1e-3f64, 1e-3);
    let (mut d_checks, mut d_bad) = (0, 0);
    for _ in 0..20 {
        let mut b = 0.0;
        let mut v = vec![0.0];
        for _ in 0..1000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            b += z * dt.sqrt();
            v.push(b);
        }
        let f = SampledPath::linear((0..=1000).map(|k| k as f64 * dt).collect(), v)?;
        let w = reflect(&f)?;
        if w.value_at(1.0)? <= 0.01 {
            continue;
        }
        d_checks += 1;
        let fd = drift_perturbation_derivative(&f, 1.0, eps)?;
        if (fd - last_zero_derivative(&w, 1.0, 0.0)?).abs() > 10.0 * eps + dt {
            d_bad += 1;
        }
    }
    Ok(vec![
        row("skorohod", "nonnegativity_complementarity", nc_checks, nc_bad),
        row("skorohod", "lipschitz_two", lip_checks, lip_bad),
        row("skorohod", "monotone", mono_checks, mono_bad),
        row("skorohod", "drift_derivative_busy_period", d_checks, d_bad),
    ])
}

fn karamata_family() -> Result<Vec<LedgerRow>> {
    let mut out = Vec::new();
    let (mut checks, mut bad) = (0, 0);
    for (m, p) in [(1.0, 2.0), (0.5, 3.0), (2.0, 1.5)] {
        let d = ServiceDist::pareto(m, p)?;
        for r in [10.0, 1e3, 1e6] {
            let c = d.scale_parameter(r)?;
            for a in [0.7, 1.0, 2.0, 10.0] {
                if a * c < m {
                    continue;
                }
                checks += 1;
                let ratio = d.truncated_first_moment(a * c) / d.truncated_first_moment(c);
                if (ratio - a.powf(-p)).abs() > 1e-12 * a.powf(-p) {
                    bad += 1;
                }
            }
            checks += 1;
            let c_p = m.powf(p + 1.0) * (p + 1.0) / p;
            if (c - (c_p * r).powf(1.0 / p)).abs() > 1e-12 * c {
                bad += 1;
            }
        }
    }
    out.push(row("karamata", "pareto_ratio_and_scale", checks, bad));
    let (mut checks, mut bad) = (0, 0);
    for p in [2.0, 4.0, 8.0] {
        let d = ServiceDist::lomax(1.0, p)?;
        for r in [2.0, 10.0, 1e3, 1e5] {
            checks += 1;
            let c = d.scale_parameter(r)?;
            if (d.s_function(c) - r).abs() > 1e-9 * r {
                bad += 1;
            }
        }
    }
    out.push(row("karamata", "lomax_inverse_round_trip", checks, bad));
    Ok(out)
}
