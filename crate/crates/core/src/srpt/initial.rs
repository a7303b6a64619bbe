use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::job::Job;
use crate::dists::ServiceDist;
use crate::error::{Error, Result};
use crate::rng::{stream_id, stream_rng};

/// Stream family reserved for initial-condition draws.
pub const INITIAL_STREAM_FAMILY: u32 = 1;

/// Law of the jobs present at time zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialConditionSpec {
    Empty,
    /// `q^r` i.i.d. jobs with raw sizes `c^r · v̆*`, where `c^r q^r / r → q*`.
    Iid {
        q_star: f64,
        /// Law of the scaled sizes `v̆*`.
        size_law: ServiceDist,
        /// Draw `q^r` from a Poisson law instead of taking the floor.
        #[serde(default)]
        poisson_count: bool,
        #[serde(default)]
        eta_star: Option<f64>,
        #[serde(default)]
        alpha_star: Option<f64>,
        #[serde(default)]
        a_star: Option<f64>,
    },
}

impl Default for InitialConditionSpec {
    fn default() -> Self {
        InitialConditionSpec::Empty
    }
}

impl InitialConditionSpec {
    pub fn iid(q_star: f64, size_law: ServiceDist) -> Self {
        InitialConditionSpec::Iid {
            q_star,
            size_law,
            poisson_count: false,
            eta_star: None,
            alpha_star: None,
            a_star: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let InitialConditionSpec::Iid { q_star, .. } = self {
            if !(*q_star >= 0.0 && q_star.is_finite()) {
                return Err(Error::Parameter(format!("q* must be nonnegative, got {q_star}")));
            }
        }
        Ok(())
    }

    /// Target scaled count `q^r` mean, `q* r / c^r`.
    pub fn mean_count(&self, r: f64, c_r: f64) -> f64 {
        match self {
            InitialConditionSpec::Empty => 0.0,
            InitialConditionSpec::Iid { q_star, .. } => q_star * r / c_r,
        }
    }

    /// Limit of the scaled initial workload below level `a`: `q* E[v̆*; v̆* ≤ a]`.
    pub fn limit_workload(&self, a: f64) -> f64 {
        match self {
            InitialConditionSpec::Empty => 0.0,
            InitialConditionSpec::Iid { q_star, size_law, .. } => {
                if a.is_infinite() {
                    q_star * size_law.mean()
                } else {
                    q_star * size_law.lower_partial_mean(a)
                }
            }
        }
    }
}

/// Draws the initial jobs of the r-th system; ids run from 1.
pub fn generate_initial(spec: &InitialConditionSpec, r: f64, c_r: f64, seed: u64) -> Result<Vec<Job>> {
    spec.validate()?;
    if !(c_r > 0.0) {
        return Err(Error::Parameter(format!("c_r must be positive, got {c_r}")));
    }
    let InitialConditionSpec::Iid {
        size_law,
        poisson_count,
        ..
    } = spec
    else {
        return Ok(Vec::new());
    };
    let mut rng = stream_rng(seed, stream_id(INITIAL_STREAM_FAMILY, 0));
    let mean = spec.mean_count(r, c_r);
    let count = if *poisson_count {
        if mean > 0.0 {
            let law = Poisson::new(mean).map_err(|e| Error::Parameter(format!("poisson count: {e}")))?;
            law.sample(&mut rng) as u64
        } else {
            0
        }
    } else {
        mean.floor() as u64
    };
    Ok((1..=count)
        .map(|id| Job::initial(id, c_r * size_law.sample(&mut rng)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_law() -> ServiceDist {
        ServiceDist::empirical(vec![1.0]).unwrap()
    }

    #[test]
    fn empty_spec_gives_no_jobs() {
        assert!(generate_initial(&InitialConditionSpec::Empty, 100.0, 12.0, 1)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn deterministic_count_example() {
        let c = 150f64.sqrt();
        let jobs = generate_initial(&InitialConditionSpec::iid(1.0, unit_law()), 100.0, c, 9).unwrap();
        assert_eq!(jobs.len(), 8);
        assert!(jobs.iter().all(|j| (j.initial_size - 12.2474487).abs() < 1e-6));
        assert_eq!(jobs.iter().map(|j| j.id).collect::<Vec<_>>(), (1..=8).collect::<Vec<_>>());
    }

    #[test]
    fn scaled_count_converges() {
        let d = ServiceDist::pareto(1.0, 2.0).unwrap();
        let spec = InitialConditionSpec::iid(1.0, unit_law());
        for r in [1e2, 1e3, 1e4] {
            let c = d.scale_parameter(r).unwrap();
            let n = generate_initial(&spec, r, c, 0).unwrap().len() as f64;
            assert!((c / r * n - 1.0).abs() <= c / r);
        }
    }

    #[test]
    fn poisson_count_has_right_mean() {
        let spec = InitialConditionSpec::Iid {
            q_star: 2.0,
            size_law: unit_law(),
            poisson_count: true,
            eta_star: None,
            alpha_star: None,
            a_star: None,
        };
        let n = 400;
        let total: usize = (0..n)
            .map(|s| generate_initial(&spec, 100.0, 10.0, s).unwrap().len())
            .sum();
        let mean = total as f64 / n as f64;
        // Poisson(20): sd of the mean is sqrt(20/400)
        assert!((mean - 20.0).abs() < 4.0 * (20.0f64 / 400.0).sqrt());
    }

    #[test]
    fn limit_workload_matches_truncated_mean() {
        let d = ServiceDist::pareto(1.0, 2.0).unwrap();
        let spec = InitialConditionSpec::iid(0.5, d.clone());
        assert_eq!(spec.limit_workload(0.5), 0.0);
        assert!((spec.limit_workload(f64::INFINITY) - 0.75).abs() < 1e-15);
        assert!((spec.limit_workload(2.0) - 0.5 * (1.5 - 0.375)).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let spec = InitialConditionSpec::iid(1.0, unit_law());
        let s = serde_json::to_string(&spec).unwrap();
        let back: InitialConditionSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
        let e: InitialConditionSpec = serde_json::from_str(r#"{"kind":"empty"}"#).unwrap();
        assert_eq!(e, InitialConditionSpec::Empty);
    }
}
