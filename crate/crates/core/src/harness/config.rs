use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dists::{ArrivalSpec, ServiceDist};
use crate::error::{Error, Result};
use crate::srpt::InitialConditionSpec;

/// Everything a convergence study needs; every field has a default so a
/// config file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub service: ServiceDist,
    pub arrivals: ArrivalSpec,
    pub kappa: f64,
    pub initial: InitialConditionSpec,
    pub r_list: Vec<f64>,
    /// Scaled horizon `T`; raw runs last `r² T`.
    pub horizon: f64,
    pub replications: usize,
    pub snapshot_times: Vec<f64>,
    /// Finite levels, `0` allowed.
    pub levels: Vec<f64>,
    /// Also report the `∞` level.
    pub include_infinity: bool,
    pub master_seed: u64,
    pub limit_draws: usize,
    /// Time step of the limit field.
    pub dt: f64,
    pub ks_tolerance: f64,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            service: ServiceDist::pareto(1.0, 2.0).expect("valid default law"),
            arrivals: ArrivalSpec::poisson(),
            kappa: 0.0,
            initial: InitialConditionSpec::Empty,
            r_list: vec![25.0, 50.0, 100.0],
            horizon: 1.0,
            replications: 500,
            snapshot_times: vec![1.0],
            levels: vec![],
            include_infinity: true,
            master_seed: 0,
            limit_draws: 10_000,
            dt: 1e-3,
            ks_tolerance: 0.15,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.arrivals.validate()?;
        self.initial.validate()?;
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if self.r_list.is_empty() || self.r_list.windows(2).any(|w| !(w[1] > w[0])) || self.r_list[0] <= 1.0 {
            return bad("r_list must be nonempty, ascending and above 1");
        }
        if self.replications == 0 || self.limit_draws == 0 {
            return bad("replications and limit_draws must be at least 1");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) || !(self.dt > 0.0) {
            return bad("horizon and dt must be positive");
        }
        if self.snapshot_times.is_empty()
            || self.snapshot_times.iter().any(|t| !(*t > 0.0 && *t <= self.horizon))
        {
            return bad("snapshot times must lie in (0, horizon]");
        }
        if self.levels.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return bad("levels must be finite and nonnegative");
        }
        if self.levels.is_empty() && !self.include_infinity {
            return bad("no levels requested");
        }
        if !self.kappa.is_finite() {
            return bad("kappa must be finite");
        }
        Ok(())
    }

    /// Requested levels in report order, `∞` last.
    pub fn report_levels(&self) -> Vec<f64> {
        let mut v = self.levels.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        if self.include_infinity {
            v.push(f64::INFINITY);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_uses_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"r_list": [25], "replications": 3, "service": {"kind": "lomax", "lambda": 1.0, "p": 3.0}}"#)
                .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.replications, 3);
        assert_eq!(cfg.snapshot_times, vec![1.0]);
        assert_eq!(cfg.report_levels(), vec![f64::INFINITY]);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.r_list = vec![50.0, 25.0];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.snapshot_times = vec![2.0];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.replications = 0;
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"nope": 1}"#).is_err());
    }
}
