//! Prelimit-versus-limit convergence studies.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::stats::{ks_one_sample, ks_two_sample, reflected_bm_marginal_cdf};
use crate::dists::HeavyTrafficParams;
use crate::error::{Error, Result};
use crate::format::{fmt_f64, json_level};
use crate::limitfield::{BrownianPath, LimitInitialProfile, LimitSpec, RandomField};
use crate::rng::derive_seed;
use crate::scalemeas::scaled_state;
use crate::srpt::{generate_initial, run_srpt, stream_for_seed, InitialConditionSpec};

/// Replication `i` at the `j`-th scale draws from family `STUDY_FAMILY_BASE + j`.
pub const STUDY_FAMILY_BASE: u32 = 16;

/// Summary of one `(r, t, level)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub r: f64,
    pub t: f64,
    #[serde(with = "json_level")]
    pub level: f64,
    pub replications: usize,
    /// Mean and standard deviation of `W_a^r(t)`.
    pub w_mean: f64,
    pub w_sd: f64,
    /// Mean of `Z_a^r(t)`, the scaled number of jobs of size at most `a`.
    pub z_mean: f64,
    pub q_mean: f64,
    pub w_inf_mean: f64,
    pub limit_w_mean: f64,
    /// Two-sample KS of `W_a^r(t)` against limit-field draws.
    pub ks_limit: f64,
    /// One-sample KS against the closed-form marginal when `ξ ≡ 0`.
    pub ks_oracle: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    /// `(r, ks_limit)` for one `(t, level)` cell, ordered by `r`.
    pub fn ks_series(&self, t: f64, level: f64) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|row| row.t == t && row.level == level)
            .map(|row| (row.r, row.ks_limit))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "r",
            "t",
            "level",
            "replications",
            "w_mean",
            "w_sd",
            "z_mean",
            "q_mean",
            "w_inf_mean",
            "limit_w_mean",
            "ks_limit",
            "ks_oracle",
            "pass",
        ])?;
        for row in &self.rows {
            w.write_record([
                fmt_f64(row.r),
                fmt_f64(row.t),
                fmt_f64(row.level),
                row.replications.to_string(),
                fmt_f64(row.w_mean),
                fmt_f64(row.w_sd),
                fmt_f64(row.z_mean),
                fmt_f64(row.q_mean),
                fmt_f64(row.w_inf_mean),
                fmt_f64(row.limit_w_mean),
                fmt_f64(row.ks_limit),
                row.ks_oracle.map(fmt_f64).unwrap_or_default(),
                row.pass.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<report csv>", e))?;
        Ok(())
    }

    /// Writes `report.csv` and `summary.json` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("report.csv");
        let f = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_csv(f)?;
        let json_path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))?;
        Ok(())
    }
}

/// Per-replication observations, indexed `[t][level]`.
struct Observation {
    wz: Vec<Vec<(f64, f64)>>,
    q: Vec<f64>,
    w_inf: Vec<f64>,
}

fn observe(cfg: &ExperimentConfig, ht: &HeavyTrafficParams, levels: &[f64], seed: u64) -> Result<Observation> {
    let r2 = ht.r * ht.r;
    let initial = generate_initial(&cfg.initial, ht.r, ht.c_r, seed)?;
    let stream = stream_for_seed(&cfg.arrivals, &cfg.service, ht.lambda_r, &initial, r2 * cfg.horizon, seed)?;
    let traj = run_srpt(&stream, f64::INFINITY, Some(seed));
    let mut replay = traj.replay();
    let mut times: Vec<(usize, f64)> = cfg.snapshot_times.iter().copied().enumerate().collect();
    times.sort_by(|a, b| a.1.total_cmp(&b.1));
    let n = cfg.snapshot_times.len();
    let mut obs = Observation {
        wz: vec![Vec::new(); n],
        q: vec![0.0; n],
        w_inf: vec![0.0; n],
    };
    for (i, t) in times {
        let snap = scaled_state(&replay.state_at(t * r2)?, ht.r, ht.c_r);
        obs.wz[i] = levels.iter().map(|a| snap.workload_and_mass(*a)).collect();
        obs.q[i] = snap.total_mass();
        obs.w_inf[i] = snap.workload_and_mass(f64::INFINITY).0;
    }
    Ok(obs)
}

fn limit_profile(initial: &InitialConditionSpec) -> LimitInitialProfile {
    match initial {
        InitialConditionSpec::Empty => LimitInitialProfile::Zero,
        InitialConditionSpec::Iid { q_star, size_law, .. } => LimitInitialProfile::Scaled {
            q_star: *q_star,
            size_law: size_law.clone(),
        },
    }
}

/// Limit draws `W_a(t)`, indexed `[t][level][draw]`.
fn limit_draws(cfg: &ExperimentConfig, spec: &LimitSpec, levels: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut field_levels: Vec<f64> = levels.iter().copied().filter(|a| *a > 0.0 && a.is_finite()).collect();
    if field_levels.is_empty() {
        field_levels.push(1.0);
    }
    let per_draw: Vec<Vec<Vec<f64>>> = (0..cfg.limit_draws)
        .into_par_iter()
        .map(|i| {
            let b = BrownianPath::sample_stream(cfg.horizon, cfg.dt, cfg.master_seed, i as u32)?;
            let field = RandomField::from_brownian(spec, &b, &field_levels)?;
            cfg.snapshot_times
                .iter()
                .map(|t| {
                    let k = field.time_index(*t)?;
                    Ok(levels
                        .iter()
                        .map(|a| {
                            if *a == 0.0 {
                                0.0
                            } else if a.is_infinite() {
                                field.w_inf(k)
                            } else {
                                let j = field_levels.iter().position(|l| l == a).expect("listed");
                                field.w(j, k)
                            }
                        })
                        .collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()
        })
        .collect::<Result<_>>()?;
    let (nt, nl) = (cfg.snapshot_times.len(), levels.len());
    let mut out = vec![vec![Vec::with_capacity(cfg.limit_draws); nl]; nt];
    for d in per_draw {
        for (ti, row) in d.into_iter().enumerate() {
            for (li, v) in row.into_iter().enumerate() {
                out[ti][li].push(v);
            }
        }
    }
    Ok(out)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Runs the study on a pool of `jobs` workers (all cores when `None`).
///
/// Output depends only on the config: replications are seeded individually
/// and collected in order.
pub fn run_convergence_study(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<ComparisonReport> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    let report = pool.install(|| study(cfg))?;
    if let Some(dir) = &cfg.out_dir {
        report.write_files(dir)?;
    }
    Ok(report)
}

fn study(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    let levels = cfg.report_levels();
    let lambda = 1.0 / cfg.service.mean();
    let sigma_a = cfg.arrivals.sigma_a_at_rate(lambda);
    let sigma = cfg.service.diffusion_variance(sigma_a).sqrt();
    let p = cfg.service.tail_index();
    let spec = LimitSpec {
        kappa: cfg.kappa,
        lambda,
        sigma,
        // only the drift of finite levels uses p
        p: p.unwrap_or(f64::INFINITY),
        xi: limit_profile(&cfg.initial),
    };
    let limit = limit_draws(cfg, &spec, &levels)?;
    let oracle = matches!(cfg.initial, InitialConditionSpec::Empty);

    let mut rows = Vec::new();
    for (ri, &r) in cfg.r_list.iter().enumerate() {
        let ht = HeavyTrafficParams::new(&cfg.service, r, cfg.kappa)?;
        let obs: Vec<Observation> = (0..cfg.replications)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(cfg.master_seed, STUDY_FAMILY_BASE + ri as u32, i as u32);
                observe(cfg, &ht, &levels, seed)
            })
            .collect::<Result<_>>()?;
        for (ti, &t) in cfg.snapshot_times.iter().enumerate() {
            let q: Vec<f64> = obs.iter().map(|o| o.q[ti]).collect();
            let w_inf: Vec<f64> = obs.iter().map(|o| o.w_inf[ti]).collect();
            for (li, &a) in levels.iter().enumerate() {
                let w: Vec<f64> = obs.iter().map(|o| o.wz[ti][li].0).collect();
                let z: Vec<f64> = obs.iter().map(|o| o.wz[ti][li].1).collect();
                let lim = &limit[ti][li];
                let ks_limit = ks_two_sample(&w, lim)?;
                let ks_oracle = if oracle && a > 0.0 && (a.is_infinite() || p.is_some()) {
                    let mu = spec.drift(a);
                    Some(ks_one_sample(&w, |x| {
                        reflected_bm_marginal_cdf(x.max(0.0), t, mu, sigma).unwrap_or(f64::NAN)
                    })?)
                } else {
                    None
                };
                let (w_mean, w_sd) = mean_sd(&w);
                rows.push(ComparisonRow {
                    r,
                    t,
                    level: a,
                    replications: cfg.replications,
                    w_mean,
                    w_sd,
                    z_mean: mean_sd(&z).0,
                    q_mean: mean_sd(&q).0,
                    w_inf_mean: mean_sd(&w_inf).0,
                    limit_w_mean: mean_sd(lim).0,
                    ks_limit,
                    ks_oracle,
                    pass: ks_limit <= cfg.ks_tolerance,
                });
            }
        }
    }
    Ok(ComparisonReport {
        config: cfg.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            r_list: vec![25.0],
            replications: 1,
            limit_draws: 50,
            levels: vec![0.0, 1.0],
            ..Default::default()
        }
    }

    #[test]
    fn degenerate_sweep_shape() {
        let rep = run_convergence_study(&small(), Some(1)).unwrap();
        assert_eq!(rep.rows.len(), 3);
        for row in &rep.rows {
            assert!((0.0..=1.0).contains(&row.ks_limit));
        }
        let zero = &rep.rows[0];
        assert_eq!(zero.level, 0.0);
        assert_eq!((zero.w_mean, zero.z_mean, zero.limit_w_mean, zero.ks_limit), (0.0, 0.0, 0.0, 0.0));
        assert!(zero.ks_oracle.is_none());
        assert!(rep.rows[2].ks_oracle.is_some());
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let mut cfg = small();
        cfg.replications = 8;
        let a = run_convergence_study(&cfg, Some(1)).unwrap();
        let b = run_convergence_study(&cfg, Some(4)).unwrap();
        assert_eq!(a, b);
        let mut s1 = Vec::new();
        a.write_csv(&mut s1).unwrap();
        let mut s2 = Vec::new();
        b.write_csv(&mut s2).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn files_are_written() {
        let dir = std::env::temp_dir().join(format!("srptlab-study-{}", std::process::id()));
        let mut cfg = small();
        cfg.out_dir = Some(dir.clone());
        let rep = run_convergence_study(&cfg, Some(2)).unwrap();
        let text = std::fs::read_to_string(dir.join("summary.json")).unwrap();
        let back: ComparisonReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rep);
        assert!(dir.join("report.csv").exists());
        std::fs::remove_dir_all(dir).unwrap();
    }
}
