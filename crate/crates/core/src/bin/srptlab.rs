use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use srptlab::dists::{ArrivalSpec, HeavyTrafficParams, ServiceDist};
use srptlab::format::fmt_f64;
use srptlab::harness::{run_convergence_study, verify_suite, ExperimentConfig};
use srptlab::limitfield::{
    collapse_gap, default_levels, limit_queue_length_path, sample_field, tail_ratios, write_collapse_csv,
    write_tail_csv, BrownianPath, CollapseSpec, LimitInitialProfile, LimitSpec,
};
use srptlab::rng::{derive_seed, stream_rng};
use srptlab::scalemeas::{check_truncation_sandwiches, SandwichFamily, SandwichReport};
use srptlab::srpt::{
    generate_initial, intertwined_pair_sim, random_intertwined_start, simulate_srpt, stream_for_seed,
    InitialConditionSpec,
};

#[derive(Parser)]
#[command(name = "srptlab", version, about = "SRPT heavy-traffic simulation and limit laboratory")]
struct Cli {
    /// JSON config for the subcommand; omitted fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "srptlab-out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory and write its event log.
    Simulate,
    /// Check the truncation sandwiches on coupled truncated runs.
    Couple,
    /// Run intertwined pairs and check Q1 <= Q2 <= Q1 + 1.
    Intertwine,
    /// Sample the limit field and report Q, its bracket and tail ratios.
    Limit,
    /// Sweep p on a shared Brownian sample and report the collapse gap.
    Collapse,
    /// Prelimit versus limit convergence study.
    Converge,
    /// Run the invariant ledger.
    Verify {
        /// Raise the sandwich workloads by c^r/r; the ledger must then fail.
        #[arg(long)]
        negative_control: bool,
    },
}

fn load<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateConfig {
    service: ServiceDist,
    arrivals: ArrivalSpec,
    kappa: f64,
    r: f64,
    /// Scaled horizon.
    horizon: f64,
    initial: InitialConditionSpec,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            service: ServiceDist::pareto(1.0, 2.0).expect("valid"),
            arrivals: ArrivalSpec::poisson(),
            kappa: 0.0,
            r: 25.0,
            horizon: 1.0,
            initial: InitialConditionSpec::Empty,
        }
    }
}

fn simulate(cli: &Cli) -> Result<bool> {
    let cfg: SimulateConfig = load(&cli.config)?;
    let ht = HeavyTrafficParams::new(&cfg.service, cfg.r, cfg.kappa)?;
    let initial = generate_initial(&cfg.initial, cfg.r, ht.c_r, cli.seed)?;
    let traj = simulate_srpt(&cfg.arrivals, &cfg.service, ht.lambda_r, &initial, cfg.r * cfg.r * cfg.horizon, cli.seed)?;
    traj.write_csv(create(&cli.out, "trajectory.csv")?)?;
    let s = traj.stats();
    println!(
        "r={} c_r={} lambda_r={} events={} arrivals={} completions={} preemptions={}",
        cfg.r,
        fmt_f64(ht.c_r),
        fmt_f64(ht.lambda_r),
        traj.events().len(),
        s.arrivals,
        s.completions,
        s.preemptions
    );
    Ok(true)
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CoupleConfig {
    service: ServiceDist,
    arrivals: ArrivalSpec,
    kappa: f64,
    r_list: Vec<f64>,
    levels: Vec<f64>,
    seeds: u32,
    horizon: f64,
    slack: f64,
}

impl Default for CoupleConfig {
    fn default() -> Self {
        Self {
            service: ServiceDist::pareto(1.0, 2.0).expect("valid"),
            arrivals: ArrivalSpec::poisson(),
            kappa: 0.0,
            r_list: vec![25.0, 100.0],
            levels: vec![0.25, 0.5, 1.0, 2.0],
            seeds: 100,
            horizon: 1.0,
            slack: 1e-9,
        }
    }
}

fn couple(cli: &Cli) -> Result<bool> {
    let cfg: CoupleConfig = load(&cli.config)?;
    let mut w = csv::Writer::from_writer(create(&cli.out, "couple.csv")?);
    w.write_record(["r", "family", "checks", "violations"])?;
    let mut ok = true;
    for (ri, &r) in cfg.r_list.iter().enumerate() {
        let ht = HeavyTrafficParams::new(&cfg.service, r, cfg.kappa)?;
        let reports: Vec<SandwichReport> = (0..cfg.seeds)
            .into_par_iter()
            .map(|i| {
                let s = derive_seed(cli.seed, 32 + ri as u32, i);
                let stream = stream_for_seed(&cfg.arrivals, &cfg.service, ht.lambda_r, &[], r * r * cfg.horizon, s)?;
                check_truncation_sandwiches(&stream, &cfg.levels, r, ht.c_r, cfg.slack, 0.0)
            })
            .collect::<srptlab::Result<_>>()?;
        let mut total = SandwichReport::default();
        reports.iter().for_each(|rep| total.merge(rep));
        for (k, fam) in SandwichFamily::ALL.iter().enumerate() {
            w.write_record([fmt_f64(r), fam.as_str().into(), total.checks[k].to_string(), total.violations[k].to_string()])?;
        }
        println!("r={r}: {} checks, {} violations", total.checks.iter().sum::<usize>(), total.total_violations());
        ok &= total.passed();
    }
    w.flush()?;
    Ok(ok)
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct IntertwineConfig {
    service: ServiceDist,
    arrivals: ArrivalSpec,
    seeds: u32,
    max_jobs: usize,
    horizon: f64,
}

impl Default for IntertwineConfig {
    fn default() -> Self {
        Self {
            service: ServiceDist::pareto(1.0, 2.0).expect("valid"),
            arrivals: ArrivalSpec::poisson(),
            seeds: 100,
            max_jobs: 8,
            horizon: 1000.0,
        }
    }
}

fn intertwine(cli: &Cli) -> Result<bool> {
    let cfg: IntertwineConfig = load(&cli.config)?;
    let lambda = 1.0 / cfg.service.mean();
    let rows: Vec<(u32, usize, usize, usize, usize)> = (0..cfg.seeds)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(cli.seed, 48, i);
            let mut rng = stream_rng(s, 1);
            let (s1, s2) = random_intertwined_start(&cfg.service, cfg.max_jobs, &mut rng);
            let pq = intertwined_pair_sim(&cfg.arrivals, &cfg.service, lambda, &s1, &s2, cfg.horizon, s)?;
            Ok((i, pq.times.len(), pq.bound_violations(), pq.broken_intertwinings(), pq.swaps()))
        })
        .collect::<srptlab::Result<_>>()?;
    let mut w = csv::Writer::from_writer(create(&cli.out, "intertwine.csv")?);
    w.write_record(["replication", "event_times", "bound_violations", "broken_intertwinings", "swaps"])?;
    let mut bad = 0;
    for (i, n, b, k, s) in &rows {
        w.write_record([i.to_string(), n.to_string(), b.to_string(), k.to_string(), s.to_string()])?;
        bad += b + k;
    }
    w.flush()?;
    println!("{} pairs, {} violations", rows.len(), bad);
    Ok(bad == 0)
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct LimitConfig {
    service: ServiceDist,
    sigma_a: f64,
    kappa: f64,
    xi: LimitInitialProfile,
    horizon: f64,
    dt: f64,
    levels: Option<Vec<f64>>,
    tail_levels: Vec<f64>,
    /// Field draws used for the tail-ratio table.
    draws: u32,
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self {
            service: ServiceDist::pareto(1.0, 2.0).expect("valid"),
            sigma_a: 1.5,
            kappa: 0.0,
            xi: LimitInitialProfile::Zero,
            horizon: 1.0,
            dt: 1e-3,
            levels: None,
            tail_levels: vec![4.0, 8.0, 16.0],
            draws: 200,
        }
    }
}

fn limit(cli: &Cli) -> Result<bool> {
    let cfg: LimitConfig = load(&cli.config)?;
    let spec = LimitSpec::from_dist(&cfg.service, cfg.sigma_a, cfg.kappa, cfg.xi.clone())?;
    let levels = cfg.levels.clone().unwrap_or_else(default_levels);
    let field = sample_field(&spec, cfg.horizon, cfg.dt, &levels, cli.seed)?;
    field.write_csv(create(&cli.out, "field.csv")?)?;
    let q = limit_queue_length_path(&field)?;
    let mut w = csv::Writer::from_writer(create(&cli.out, "queue_length.csv")?);
    w.write_record(["t", "estimate", "lower", "upper", "w_inf"])?;
    let mut ok = true;
    for (k, b) in q.iter().enumerate() {
        ok &= b.lower <= b.estimate && b.estimate <= b.upper;
        w.write_record([fmt_f64(field.time(k)), fmt_f64(b.estimate), fmt_f64(b.lower), fmt_f64(b.upper), fmt_f64(field.w_inf(k))])?;
    }
    w.flush()?;
    if spec.xi.has_light_tail(spec.p) && !cfg.tail_levels.is_empty() {
        let rows: Vec<Vec<_>> = (0..cfg.draws)
            .into_par_iter()
            .map(|i| {
                let b = BrownianPath::sample_stream(cfg.horizon, cfg.dt, cli.seed, i)?;
                let f = srptlab::limitfield::RandomField::from_brownian(&spec, &b, &levels)?;
                cfg.tail_levels
                    .iter()
                    .map(|a| tail_ratios(&f, cfg.horizon, *a).map(|t| (i as u64, t)))
                    .collect::<srptlab::Result<Vec<_>>>()
            })
            .collect::<srptlab::Result<_>>()?;
        let flat: Vec<_> = rows.into_iter().flatten().collect();
        write_tail_csv(&flat, create(&cli.out, "tail_ratios.csv")?)?;
        for a in &cfg.tail_levels {
            let (mut ew, mut em): (Vec<f64>, Vec<f64>) = flat
                .iter()
                .filter(|(_, t)| t.a == *a && t.w_prime > 0.0)
                .map(|(_, t)| (((t.work - t.w_prime) / t.w_prime).abs(), ((t.mass - t.w_prime) / t.w_prime).abs()))
                .unzip();
            if !ew.is_empty() {
                println!("a={a}: median relative error work {:.3e} mass {:.3e}", median(&mut ew), median(&mut em));
            }
        }
    }
    let last = q.last().expect("nonempty grid");
    println!("Q({}) = {} in [{}, {}]", cfg.horizon, last.estimate, last.lower, last.upper);
    Ok(ok)
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CollapseConfig {
    p_list: Vec<f64>,
    base: CollapseSpec,
    horizon: f64,
    dt: f64,
    seeds: u32,
    levels: Option<Vec<f64>>,
}

impl Default for CollapseConfig {
    fn default() -> Self {
        Self {
            p_list: vec![2.0, 4.0, 8.0, 16.0],
            base: CollapseSpec::default(),
            horizon: 1.0,
            dt: 1e-3,
            seeds: 100,
            levels: None,
        }
    }
}

fn collapse(cli: &Cli) -> Result<bool> {
    let cfg: CollapseConfig = load(&cli.config)?;
    if cfg.p_list.iter().any(|p| *p < 2.0) {
        bail!("collapse needs p >= 2");
    }
    let levels = cfg.levels.clone().unwrap_or_else(default_levels);
    let rows: Vec<Vec<_>> = (0..cfg.seeds)
        .into_par_iter()
        .map(|i| {
            let b = BrownianPath::sample_stream(cfg.horizon, cfg.dt, cli.seed, i)?;
            Ok(collapse_gap(&cfg.p_list, &cfg.base, &b, &levels)?
                .into_iter()
                .map(|r| (i as u64, r))
                .collect())
        })
        .collect::<srptlab::Result<_>>()?;
    let flat: Vec<_> = rows.into_iter().flatten().collect();
    write_collapse_csv(&flat, create(&cli.out, "collapse.csv")?)?;
    let medians: Vec<f64> = cfg
        .p_list
        .iter()
        .map(|p| {
            let mut g: Vec<f64> = flat.iter().filter(|(_, r)| r.p == *p).map(|(_, r)| r.gap).collect();
            median(&mut g)
        })
        .collect();
    for (p, m) in cfg.p_list.iter().zip(&medians) {
        println!("p={p}: median gap {m:.6}");
    }
    Ok(medians.windows(2).all(|w| w[1] < w[0]))
}

fn converge(cli: &Cli) -> Result<bool> {
    let mut cfg: ExperimentConfig = match &cli.config {
        Some(p) => ExperimentConfig::from_json_file(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.config.is_none() || cfg.out_dir.is_none() {
        cfg.out_dir = Some(cli.out.clone());
    }
    cfg.master_seed = cli.seed;
    let report = run_convergence_study(&cfg, cli.jobs)?;
    for row in &report.rows {
        println!(
            "r={} t={} level={} ks_limit={:.4} pass={}",
            row.r,
            row.t,
            fmt_f64(row.level),
            row.ks_limit,
            row.pass
        );
    }
    Ok(report.passed())
}

fn verify(cli: &Cli, negative_control: bool) -> Result<bool> {
    let ledger = verify_suite(cli.seed, negative_control)?;
    ledger.write_files(&cli.out)?;
    for r in &ledger.rows {
        println!("{:<10} {:<40} {:>8} {:>6} {}", r.family, r.case, r.checks, r.violations, if r.pass { "pass" } else { "fail" });
    }
    Ok(ledger.passed())
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global()?;
    }
    match &cli.command {
        Command::Simulate => simulate(cli),
        Command::Couple => couple(cli),
        Command::Intertwine => intertwine(cli),
        Command::Limit => limit(cli),
        Command::Collapse => collapse(cli),
        Command::Converge => converge(cli),
        Command::Verify { negative_control } => verify(cli, *negative_control),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
