use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Initial,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub arrival_time: f64,
    pub initial_size: f64,
    pub origin: Origin,
}

impl Job {
    pub fn initial(id: u64, size: f64) -> Self {
        Self {
            id,
            arrival_time: 0.0,
            initial_size: size,
            origin: Origin::Initial,
        }
    }

    pub fn external(id: u64, arrival_time: f64, size: f64) -> Self {
        Self {
            id,
            arrival_time,
            initial_size: size,
            origin: Origin::External,
        }
    }
}

/// Remaining size paired with its job id, ordered by size then id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SizeKey {
    pub remaining: f64,
    pub id: u64,
}

impl Eq for SizeKey {}

impl PartialOrd for SizeKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SizeKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.remaining
            .total_cmp(&other.remaining)
            .then(self.id.cmp(&other.id))
    }
}

/// Remaining sizes of the jobs in system at one instant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueueState {
    pub time: f64,
    /// `(job id, remaining size)`, ascending by size with ties broken by id.
    pub jobs: Vec<(u64, f64)>,
}

impl QueueState {
    pub fn empty(time: f64) -> Self {
        Self {
            time,
            jobs: Vec::new(),
        }
    }

    /// Builds a state from bare sizes; ids are the positions in `sizes`.
    pub fn from_sizes(time: f64, sizes: &[f64]) -> Self {
        let jobs = sizes
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u64, *s))
            .collect();
        Self::from_jobs(time, jobs)
    }

    pub fn from_jobs(time: f64, mut jobs: Vec<(u64, f64)>) -> Self {
        jobs.retain(|(_, s)| *s > 0.0);
        jobs.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Self { time, jobs }
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn sizes(&self) -> impl Iterator<Item = f64> + '_ {
        self.jobs.iter().map(|(_, s)| *s)
    }

    pub fn workload(&self) -> f64 {
        self.sizes().sum()
    }

    /// Job in service under SRPT.
    pub fn in_service(&self) -> Option<(u64, f64)> {
        self.jobs.first().copied()
    }

    /// `V_0 = 0, V_j = sum of the j smallest sizes`.
    pub fn cumulative_sums(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.jobs.len() + 1);
        out.push(0.0);
        let mut acc = 0.0;
        for s in self.sizes() {
            acc += s;
            out.push(acc);
        }
        out
    }

    /// Number of jobs and their total work among sizes `<= threshold`.
    pub fn count_and_work_below(&self, threshold: f64) -> (usize, f64) {
        let n = self.jobs.partition_point(|(_, s)| *s <= threshold);
        (n, self.jobs[..n].iter().map(|(_, s)| s).sum())
    }
}
