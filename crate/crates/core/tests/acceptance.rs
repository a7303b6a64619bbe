//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N: PASS|FAIL` line before asserting.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use srptlab::dists::{ArrivalSpec, HeavyTrafficParams, ServiceDist};
use srptlab::functions::Polynomial;
use srptlab::harness::{ks_one_sample, run_convergence_study, ExperimentConfig};
use srptlab::limitfield::{
    collapse_gap, default_levels, sample_field, tail_ratios, BrownianPath, CollapseSpec, LimitInitialProfile,
    LimitSpec, RandomField,
};
use srptlab::rng::stream_rng;
use srptlab::scalemeas::{check_truncation_sandwiches, integration_by_parts, MeasureSnapshot, SandwichReport};
use srptlab::skorohod::{
    drift_perturbation_derivative, last_zero_derivative, reflect, reflect_detailed, sup_distance, SampledPath,
};
use srptlab::srpt::{intertwined_pair_sim, random_intertwined_start, stream_for_seed};

fn verdict(n: u32, ok: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn pareto12() -> ServiceDist {
    ServiceDist::pareto(1.0, 2.0).unwrap()
}

#[test]
fn criterion_01_integration_by_parts() {
    let start = Instant::now();
    let mut rng = stream_rng(101, 0);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..1000 {
        let r = rng.random_range(2.0..200.0);
        let c = rng.random_range(1.0..20.0);
        let n = rng.random_range(0..40);
        let atoms = (0..n).map(|_| (rng.random_range(0.001..8.0), c / r)).collect();
        let snap = MeasureSnapshot::from_atoms(0.0, atoms, r, c);
        let deg = rng.random_range(0..6);
        let f = Polynomial::new((0..=deg).map(|_| rng.random_range(-3.0..3.0)).collect());
        let delta = rng.random_range(0.001..3.0);
        let m = delta + rng.random_range(0.001..6.0);
        let (lhs, rhs) = integration_by_parts(&snap, &f, delta, m).unwrap();
        let err = (lhs - rhs).abs() / (1.0 + lhs.abs());
        worst = worst.max(err);
        if err > 1e-9 {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        failures == 0 && elapsed < Duration::from_secs(5),
        &format!("worst scaled error {worst:.2e}, {failures} failures, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_02_truncation_sandwiches() {
    let start = Instant::now();
    let d = pareto12();
    let arrivals = ArrivalSpec::poisson();
    let levels = [0.25, 0.5, 1.0, 2.0, f64::INFINITY];
    let mut total = SandwichReport::default();
    for r in [25.0, 100.0] {
        let ht = HeavyTrafficParams::new(&d, r, 0.0).unwrap();
        for seed in 0..100 {
            let stream = stream_for_seed(&arrivals, &d, ht.lambda_r, &[], r * r, seed).unwrap();
            total.merge(&check_truncation_sandwiches(&stream, &levels, r, ht.c_r, 1e-9, 0.0).unwrap());
        }
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        total.passed() && elapsed < Duration::from_secs(120),
        &format!(
            "{} inequality checks at {} event times, {} violations, {elapsed:.2?}",
            total.checks.iter().sum::<usize>(),
            total.times_checked,
            total.total_violations()
        ),
    );
}

#[test]
fn criterion_03_intertwined_queue_lengths() {
    let d = pareto12();
    let arrivals = ArrivalSpec::poisson();
    let lambda = 1.0 / d.mean();
    let mut rng = stream_rng(303, 0);
    let (mut times, mut violations) = (0, 0);
    for seed in 0..100 {
        let (s1, s2) = random_intertwined_start(&d, 8, &mut rng);
        assert_eq!(s2.len(), s1.len() + 1);
        let pq = intertwined_pair_sim(&arrivals, &d, lambda, &s1, &s2, 2000.0, seed).unwrap();
        times += pq.times.len();
        violations += pq
            .q1
            .iter()
            .zip(&pq.q2)
            .filter(|(a, b)| !(**a <= **b && **b <= **a + 1))
            .count();
    }
    verdict(3, violations == 0, &format!("{times} event times, {violations} violations"));
}

fn random_path<R: Rng>(rng: &mut R, n: usize) -> SampledPath {
    let mut t = vec![0.0];
    let mut v = vec![rng.random::<f64>()];
    for _ in 1..n {
        t.push(t.last().unwrap() + 0.01 + rng.random::<f64>());
        v.push(v.last().unwrap() + 2.0 * rng.random::<f64>() - 1.0);
    }
    SampledPath::linear(t, v).unwrap()
}

#[test]
fn criterion_04_skorohod_properties() {
    let mut rng = stream_rng(404, 0);
    let mut exact_bad = 0;
    let mut worst_lip = 0.0f64;
    for _ in 0..1000 {
        let f1 = random_path(&mut rng, 40);
        let mut v2: Vec<f64> = f1.values().iter().map(|v| v + rng.random::<f64>() - 0.5).collect();
        v2[0] = v2[0].abs();
        let f2 = SampledPath::linear(f1.times().to_vec(), v2).unwrap();
        for f in [&f1, &f2] {
            let rf = reflect_detailed(f).unwrap();
            let g = &rf.path;
            for j in 0..g.len() {
                // Γ[f] = f + push with push nondecreasing and growing only at 0
                let (t, v, l) = (g.times()[j], g.values()[j], g.left_limits()[j]);
                if v < 0.0 || l < 0.0 {
                    exact_bad += 1;
                }
                if j > 0 {
                    let fl = f.left_limit_at(t).unwrap();
                    if (l - (fl + rf.push_left[j])).abs() > 1e-12 * (1.0 + fl.abs()) {
                        exact_bad += 1;
                    }
                    if rf.push_left[j] > rf.push[j - 1] && (g.values()[j - 1] != 0.0 || l != 0.0) {
                        exact_bad += 1;
                    }
                }
                if rf.push[j] > rf.push_left[j] && v != 0.0 {
                    exact_bad += 1;
                }
            }
        }
        let num = sup_distance(&reflect(&f1).unwrap(), &reflect(&f2).unwrap()).unwrap();
        let den = sup_distance(&f1, &f2).unwrap();
        worst_lip = worst_lip.max(num / den);
    }

    let (dt, eps) = (1e-3f64, 1e-3);
    let (mut tested, mut drift_bad, mut worst_drift) = (0, 0, 0.0f64);
    for _ in 0..100 {
        let mut b = 0.0;
        let mut v = vec![0.0];
        for _ in 0..1000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            b += z * dt.sqrt();
            v.push(b);
        }
        let f = SampledPath::linear((0..=1000).map(|k| k as f64 * dt).collect(), v).unwrap();
        let w = reflect(&f).unwrap();
        if w.value_at(1.0).unwrap().abs() <= 0.01 {
            continue;
        }
        tested += 1;
        let err = (drift_perturbation_derivative(&f, 1.0, eps).unwrap() - last_zero_derivative(&w, 1.0, 0.0).unwrap()).abs();
        worst_drift = worst_drift.max(err);
        if err > 10.0 * eps + dt {
            drift_bad += 1;
        }
    }
    verdict(
        4,
        exact_bad == 0 && worst_lip <= 2.0 + 1e-12 && drift_bad == 0 && tested > 0,
        &format!(
            "{exact_bad} exactness failures, worst Lipschitz ratio {worst_lip:.4}, drift derivative worst {worst_drift:.2e} over {tested} paths ({drift_bad} over bound)"
        ),
    );
}

/// Reflected Brownian marginal, written out from the reflection principle.
fn rbm_cdf(w: f64, t: f64, mu: f64, sigma: f64) -> f64 {
    let n = Normal::standard();
    let s = sigma * t.sqrt();
    n.cdf((w - mu * t) / s) - (2.0 * mu * w / (sigma * sigma)).exp() * n.cdf((-w - mu * t) / s)
}

#[test]
fn criterion_05_limit_marginal() {
    let start = Instant::now();
    let d = pareto12();
    // σ² = λ Var v + λ σ_A² with λ = 2/3, Var v = 3 - 9/4
    let sigma2 = (2.0 / 3.0) * 0.75 + (2.0 / 3.0) * 1.5 * 1.5;
    assert!((sigma2 - 2.0f64).abs() < 1e-12);
    let spec = LimitSpec::from_dist(&d, 1.5, 0.0, LimitInitialProfile::Zero).unwrap();
    assert!((spec.sigma * spec.sigma - sigma2).abs() < 1e-12);
    let a = 2.0;
    let mu = -(2.0 / 3.0) / (a * a);
    let samples: Vec<f64> = (0..10_000u32)
        .map(|i| {
            let b = BrownianPath::sample_stream(1.0, 1e-3, 5, i).unwrap();
            let f = RandomField::from_brownian(&spec, &b, &[a]).unwrap();
            f.w(0, f.n_times() - 1)
        })
        .collect();
    let ks = ks_one_sample(&samples, |w| rbm_cdf(w, 1.0, mu, sigma2.sqrt())).unwrap();
    let elapsed = start.elapsed();
    verdict(
        5,
        ks <= 0.05 && elapsed < Duration::from_secs(60),
        &format!("KS {ks:.4} over 10000 draws, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_06_prelimit_to_limit_trend() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        r_list: vec![25.0, 50.0, 100.0],
        replications: 500,
        limit_draws: 10_000,
        snapshot_times: vec![1.0],
        levels: vec![],
        include_infinity: true,
        master_seed: 0,
        ..Default::default()
    };
    let report = run_convergence_study(&cfg, None).unwrap();
    let ks: Vec<f64> = report.ks_series(1.0, f64::INFINITY).iter().map(|x| x.1).collect();
    assert_eq!(ks.len(), 3);
    let inversions: Vec<f64> = ks.windows(2).filter(|w| w[1] > w[0]).map(|w| w[1] - w[0]).collect();
    let trend_ok = inversions.is_empty() || (inversions.len() == 1 && inversions[0] <= 0.02);
    let elapsed = start.elapsed();
    verdict(
        6,
        trend_ok && ks[2] <= 0.15 && elapsed <= Duration::from_secs(900),
        &format!("KS at r=25,50,100: {:.4}, {:.4}, {:.4}; {elapsed:.2?}", ks[0], ks[1], ks[2]),
    );
}

#[test]
fn criterion_07_tail_ratios() {
    let d = pareto12();
    let spec = LimitSpec::from_dist(&d, 1.5, 0.0, LimitInitialProfile::Zero).unwrap();
    let levels = default_levels();
    let a_list = [4.0, 8.0, 16.0];
    let mut work = vec![Vec::new(); 3];
    let mut mass = vec![Vec::new(); 3];
    for seed in 0..200 {
        let f = sample_field(&spec, 1.0, 1e-3, &levels, seed).unwrap();
        for (i, a) in a_list.iter().enumerate() {
            let tr = tail_ratios(&f, 1.0, *a).unwrap();
            // relative error is undefined when the busy period has length 0
            if tr.w_prime > 0.0 {
                work[i].push(((tr.work - tr.w_prime) / tr.w_prime).abs());
                mass[i].push(((tr.mass - tr.w_prime) / tr.w_prime).abs());
            }
        }
    }
    let mw: Vec<f64> = work.into_iter().map(median).collect();
    let mm: Vec<f64> = mass.into_iter().map(median).collect();
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    verdict(
        7,
        decreasing(&mw) && decreasing(&mm) && mw[2] <= 0.15 && mm[2] <= 0.15,
        &format!(
            "median relative error at a=4,8,16: work {:.2e}, {:.2e}, {:.2e}; mass {:.2e}, {:.2e}, {:.2e}",
            mw[0], mw[1], mw[2], mm[0], mm[1], mm[2]
        ),
    );
}

#[test]
fn criterion_08_collapse() {
    let p_list = [2.0, 4.0, 8.0, 16.0];
    let base = CollapseSpec::default();
    for p in p_list {
        // Lomax with mean 1/λ: Var = λ^{-2}(p+1)/(p-1), σ² = λ Var + λ σ_A²
        let l = base.lambda;
        let want = l * (p + 1.0) / ((p - 1.0) * l * l) + l * base.sigma_a * base.sigma_a;
        assert!((base.sigma(p).unwrap().powi(2) - want).abs() < 1e-12);
    }
    let levels = default_levels();
    let mut gaps = vec![Vec::new(); 4];
    for seed in 0..100 {
        let b = BrownianPath::sample(1.0, 1e-3, seed).unwrap();
        for (i, row) in collapse_gap(&p_list, &base, &b, &levels).unwrap().into_iter().enumerate() {
            gaps[i].push(row.gap);
        }
    }
    let m: Vec<f64> = gaps.into_iter().map(median).collect();
    verdict(
        8,
        m.windows(2).all(|w| w[1] < w[0]),
        &format!("median gap at p=2,4,8,16: {:.4}, {:.4}, {:.4}, {:.4}", m[0], m[1], m[2], m[3]),
    );
}

/// `E[v; v > x]` for Lomax(λ, p): `x F̄(x) + ∫_x^∞ F̄`.
fn lomax_tail_moment(lambda: f64, p: f64, x: f64) -> f64 {
    let base = 1.0 + lambda * x / p;
    x * base.powf(-(p + 1.0)) + base.powf(-p) / lambda
}

#[test]
fn criterion_09_karamata_and_scale() {
    let mut worst_ratio = 0.0f64;
    let mut worst_c = 0.0f64;
    for (m, p) in [(1.0, 2.0), (0.5, 3.0), (2.0, 1.5), (1.0, 5.0)] {
        let d = ServiceDist::pareto(m, p).unwrap();
        let c_p = m.powf(p + 1.0) * (p + 1.0) / p;
        for r in [10.0, 100.0, 1e4, 1e7] {
            let c = d.scale_parameter(r).unwrap();
            worst_c = worst_c.max((c - (c_p * r).powf(1.0 / p)).abs() / c);
            for a in [0.6, 1.0, 1.7, 4.0, 25.0] {
                if a * c >= m {
                    let ratio = d.truncated_first_moment(a * c) / d.truncated_first_moment(c);
                    worst_ratio = worst_ratio.max((ratio * a.powf(p) - 1.0).abs());
                }
            }
        }
    }
    let mut worst_rt = 0.0f64;
    for (lambda, p) in [(1.0, 2.0), (0.5, 4.0), (2.0, 8.0)] {
        let d = ServiceDist::lomax(lambda, p).unwrap();
        for r in [2.0 * lambda, 10.0, 1e3, 1e6] {
            let c = d.scale_parameter(r).unwrap();
            worst_rt = worst_rt.max((1.0 / lomax_tail_moment(lambda, p, c) - r).abs() / r);
        }
    }
    verdict(
        9,
        worst_ratio <= 1e-12 && worst_c <= 1e-12 && worst_rt <= 1e-9,
        &format!("ratio {worst_ratio:.2e}, c^r {worst_c:.2e}, Lomax round trip {worst_rt:.2e}"),
    );
}

#[test]
fn criterion_10_verify_is_deterministic() {
    let exe = env!("CARGO_BIN_EXE_srptlab");
    let base = std::env::temp_dir().join(format!("srptlab-acceptance-{}", std::process::id()));
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let dir = base.join(run);
        let status = std::process::Command::new(exe)
            .args(["verify", "--seed", "0", "--out"])
            .arg(&dir)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
        let csv = std::fs::read(dir.join("ledger.csv")).unwrap();
        let json = std::fs::read(dir.join("ledger.json")).unwrap();
        outputs.push((csv, json));
    }
    std::fs::remove_dir_all(&base).unwrap();
    let same = outputs[0] == outputs[1];
    verdict(
        10,
        same && !outputs[0].0.is_empty(),
        &format!("ledger.csv {} bytes, ledger.json {} bytes, identical: {same}", outputs[0].0.len(), outputs[0].1.len()),
    );
}
