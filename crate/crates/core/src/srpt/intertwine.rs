use rand::Rng;

use super::engine::{generate_external, run_srpt, ArrivalStream};
use super::job::{Job, QueueState};
use super::trajectory::Trajectory;
use crate::dists::{ArrivalSpec, ServiceDist};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Returns `(k, l)` when `s2` is intertwined in `s1`.
///
/// With ordered cumulative sums `V^i_j`, this asks that `s2` holds `k + l`
/// jobs, `s1` holds `k + l - 1` or `k + l`, the first `k` sums agree and
/// `V¹_{k+l'-1} < V²_{k+l'} < V¹_{k+l'}` for `1 <= l' <= l`, where a missing
/// `V¹_{k+l}` counts as infinite.
pub fn is_intertwined(s1: &QueueState, s2: &QueueState) -> Option<(usize, usize)> {
    intertwined_with_tolerance(s1, s2, 0.0)
}

/// As [`is_intertwined`], but cumulative sums within `tol` count as equal.
pub fn intertwined_with_tolerance(s1: &QueueState, s2: &QueueState, tol: f64) -> Option<(usize, usize)> {
    let v1 = s1.cumulative_sums();
    let v2 = s2.cumulative_sums();
    let (n1, n2) = (s1.len(), s2.len());
    if n2 == 0 {
        return None;
    }
    let mut k = 0;
    while k < n2 - 1 && k < n1 && (v1[k + 1] - v2[k + 1]).abs() <= tol {
        k += 1;
    }
    let l = n2 - k;
    if n1 + 1 != k + l && n1 != k + l {
        return None;
    }
    let upper = |j: usize| if j <= n1 { v1[j] } else { f64::INFINITY };
    (1..=l)
        .all(|lp| v1[k + lp - 1] < v2[k + lp] && v2[k + lp] < upper(k + lp))
        .then_some((k, l))
}

/// Which system is intertwined in the other, if either.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intertwining {
    /// `S_2` intertwined in `S_1`.
    SecondInFirst { k: usize, l: usize },
    /// `S_1` intertwined in `S_2`, after an odd number of asynchronous departures.
    FirstInSecond { k: usize, l: usize },
    /// Both systems hold the same state (e.g. both empty); they agree from then on.
    Coalesced,
}

/// Classifies a pair of states, dropping remaining sizes `<= tol`.
pub fn classify_pair(s1: &QueueState, s2: &QueueState, tol: f64) -> Option<Intertwining> {
    let s1 = QueueState::from_jobs(s1.time, s1.jobs.iter().copied().filter(|j| j.1 > tol).collect());
    let s2 = QueueState::from_jobs(s2.time, s2.jobs.iter().copied().filter(|j| j.1 > tol).collect());
    if let Some((k, l)) = intertwined_with_tolerance(&s1, &s2, tol) {
        return Some(Intertwining::SecondInFirst { k, l });
    }
    if let Some((k, l)) = intertwined_with_tolerance(&s2, &s1, tol) {
        return Some(Intertwining::FirstInSecond { k, l });
    }
    let same = s1.len() == s2.len()
        && s1
            .sizes()
            .zip(s2.sizes())
            .all(|(a, b)| (a - b).abs() <= tol);
    same.then_some(Intertwining::Coalesced)
}

/// Queue lengths of two coupled systems at every event time of either.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedQueueLengths {
    pub times: Vec<f64>,
    pub q1: Vec<usize>,
    pub q2: Vec<usize>,
    /// Intertwining status at each time; `None` marks a broken pair.
    pub status: Vec<Option<Intertwining>>,
}

impl PairedQueueLengths {
    /// Number of times where `Q1 <= Q2 <= Q1 + 1` fails.
    pub fn bound_violations(&self) -> usize {
        self.q1
            .iter()
            .zip(&self.q2)
            .filter(|(a, b)| !(**a <= **b && **b <= **a + 1))
            .count()
    }

    pub fn broken_intertwinings(&self) -> usize {
        self.status.iter().filter(|s| s.is_none()).count()
    }

    /// Number of times the intertwining order flips.
    pub fn swaps(&self) -> usize {
        let order = |s: &Option<Intertwining>| match s {
            Some(Intertwining::SecondInFirst { .. }) => Some(0),
            Some(Intertwining::FirstInSecond { .. }) => Some(1),
            _ => None,
        };
        self.status
            .windows(2)
            .filter(|w| matches!((order(&w[0]), order(&w[1])), (Some(a), Some(b)) if a != b))
            .count()
    }
}

/// Relative slack used when comparing states built by separate float histories.
const PAIR_REL_TOL: f64 = 1e-9;

/// Runs two SRPT systems on one arrival stream and records their queue lengths.
///
/// The pair must start with `S_2` intertwined in `S_1` and one extra job in
/// `S_2`; this is rejected before anything is simulated.
pub fn intertwined_pair_sim(
    arrivals: &ArrivalSpec,
    service: &ServiceDist,
    lambda_r: f64,
    init1: &[f64],
    init2: &[f64],
    horizon: f64,
    seed: u64,
) -> Result<PairedQueueLengths> {
    let s1 = QueueState::from_sizes(0.0, init1);
    let s2 = QueueState::from_sizes(0.0, init2);
    if s1.len() != init1.len() || s2.len() != init2.len() {
        return Err(Error::Precondition("initial sizes must be positive".into()));
    }
    if s2.len() != s1.len() + 1 || is_intertwined(&s1, &s2).is_none() {
        return Err(Error::Precondition(
            "second system must be intertwined in the first and hold one more job".into(),
        ));
    }
    let mut rng = stream_rng(seed, 0);
    let first_id = (init1.len().max(init2.len()) as u64) + 1;
    let external = generate_external(arrivals, service, lambda_r, first_id, horizon, &mut rng)?;
    let jobs = |sizes: &[f64]| -> Vec<Job> {
        sizes
            .iter()
            .enumerate()
            .map(|(i, s)| Job::initial(i as u64 + 1, *s))
            .collect()
    };
    let st1 = ArrivalStream::new(jobs(init1), external.clone(), horizon)?;
    let st2 = ArrivalStream::new(jobs(init2), external, horizon)?;
    let t1 = run_srpt(&st1, f64::INFINITY, Some(seed));
    let t2 = run_srpt(&st2, f64::INFINITY, Some(seed));
    pair_queue_lengths(&t1, &t2)
}

/// Compares two trajectories at the union of their event times.
///
/// Remaining sizes below a relative slack are treated as already served, so
/// that departures that coincide up to rounding count as synchronous.
pub fn pair_queue_lengths(t1: &Trajectory, t2: &Trajectory) -> Result<PairedQueueLengths> {
    let mut times: Vec<f64> = std::iter::once(0.0)
        .chain(t1.event_times())
        .chain(t2.event_times())
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let scale = t1
        .jobs()
        .iter()
        .chain(t2.jobs().iter())
        .map(|j| j.initial_size)
        .fold(1.0, f64::max);
    let tol = PAIR_REL_TOL * scale;
    let mut r1 = t1.replay();
    let mut r2 = t2.replay();
    let mut out = PairedQueueLengths {
        times: Vec::with_capacity(times.len()),
        q1: Vec::with_capacity(times.len()),
        q2: Vec::with_capacity(times.len()),
        status: Vec::with_capacity(times.len()),
    };
    for t in times {
        let a = r1.state_at(t)?;
        let b = r2.state_at(t)?;
        out.q1.push(a.sizes().filter(|s| *s > tol).count());
        out.q2.push(b.sizes().filter(|s| *s > tol).count());
        out.status.push(classify_pair(&a, &b, tol));
        out.times.push(t);
    }
    Ok(out)
}

/// Draws a pair of initial states with the second intertwined in the first
/// and holding one more job.
///
/// Half of the draws insert one extra job into a copy of the first state;
/// the rest place the second system's cumulative sums uniformly inside the
/// gaps of the first and keep the draw if the implied sizes come out sorted.
pub fn random_intertwined_start<R: Rng + ?Sized>(
    service: &ServiceDist,
    max_jobs: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let n1 = rng.random_range(0..=max_jobs);
    let mut s1: Vec<f64> = (0..n1).map(|_| service.sample(rng)).collect();
    s1.sort_by(f64::total_cmp);
    let v1: Vec<f64> = std::iter::once(0.0)
        .chain(s1.iter().scan(0.0, |acc, s| {
            *acc += s;
            Some(*acc)
        }))
        .collect();
    let k = rng.random_range(0..=n1);
    if rng.random::<bool>() {
        for _ in 0..1000 {
            let mut v2 = v1[..=k].to_vec();
            for j in k + 1..=n1 + 1 {
                let lo = v1[j - 1];
                let next = if j <= n1 {
                    lo + rng.random::<f64>() * (v1[j] - lo)
                } else {
                    lo + service.sample(rng)
                };
                v2.push(next);
            }
            let s2: Vec<f64> = v2.windows(2).map(|w| w[1] - w[0]).collect();
            let sorted = s2.windows(2).all(|w| w[0] <= w[1]);
            let positive = s2.iter().all(|s| *s > 0.0);
            let candidate1 = QueueState::from_sizes(0.0, &s1);
            let candidate2 = QueueState::from_sizes(0.0, &s2);
            if sorted && positive && is_intertwined(&candidate1, &candidate2).is_some() {
                return (s1, s2);
            }
        }
    }
    // insert an extra job between the k-th and (k+1)-th smallest
    let lo = if k == 0 { 0.0 } else { s1[k - 1] };
    let hi = if k < n1 { s1[k] } else { lo + service.sample(rng) };
    let mut x = lo + rng.random::<f64>() * (hi - lo);
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    let mut s2 = s1.clone();
    s2.insert(k, x);
    (s1, s2)
}
