use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;

use super::job::{Job, Origin, SizeKey};
use super::trajectory::{Event, EventKind, Trajectory};
use crate::dists::{ArrivalSpec, ServiceDist};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Pre-generated jobs shared by every run that must see the same randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalStream {
    pub initial: Vec<Job>,
    /// External arrivals, ascending in time, all within the horizon.
    pub external: Vec<Job>,
    pub horizon: f64,
}

impl ArrivalStream {
    pub fn new(initial: Vec<Job>, external: Vec<Job>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::Parameter(format!("horizon must be positive, got {horizon}")));
        }
        if initial.iter().chain(&external).any(|j| !(j.initial_size > 0.0)) {
            return Err(Error::Parameter("job sizes must be positive".into()));
        }
        if external.windows(2).any(|w| w[1].arrival_time < w[0].arrival_time) {
            return Err(Error::Parameter("external jobs must be ordered by arrival time".into()));
        }
        if external.iter().any(|j| j.arrival_time < 0.0 || j.arrival_time > horizon) {
            return Err(Error::Parameter("external arrivals must fall inside [0, horizon]".into()));
        }
        let mut ids: Vec<u64> = initial.iter().chain(&external).map(|j| j.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter("job ids must be unique".into()));
        }
        Ok(Self {
            initial,
            external,
            horizon,
        })
    }

    /// Draws `(gap, size)` pairs from one stream until the horizon is passed.
    ///
    /// The gap law is rescaled to mean `1/lambda_r`; `lambda_r = 0` means no
    /// external arrivals. External ids continue after the largest initial id.
    pub fn generate<R: Rng + ?Sized>(
        arrivals: &ArrivalSpec,
        service: &ServiceDist,
        lambda_r: f64,
        initial: Vec<Job>,
        horizon: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let first_id = initial.iter().map(|j| j.id + 1).max().unwrap_or(1);
        let external = generate_external(arrivals, service, lambda_r, first_id, horizon, rng)?;
        Self::new(initial, external, horizon)
    }
}

/// External jobs on `[0, horizon]` with ids counting up from `first_id`.
///
/// Each job consumes one gap draw followed by one size draw.
pub fn generate_external<R: Rng + ?Sized>(
    arrivals: &ArrivalSpec,
    service: &ServiceDist,
    lambda_r: f64,
    first_id: u64,
    horizon: f64,
    rng: &mut R,
) -> Result<Vec<Job>> {
    arrivals.validate()?;
    if !(lambda_r >= 0.0 && lambda_r.is_finite()) {
        return Err(Error::Parameter(format!("arrival rate must be nonnegative, got {lambda_r}")));
    }
    let mut external = Vec::new();
    if lambda_r > 0.0 {
        let scale = arrivals.time_scale(lambda_r);
        let mut next_id = first_id;
        let first = arrivals.initial_delay.unwrap_or(arrivals.inter_arrival);
        let mut t = scale * first.sample(rng);
        while t <= horizon {
            let size = service.sample(rng);
            external.push(Job::external(next_id, t, size));
            next_id += 1;
            t += scale * arrivals.inter_arrival.sample(rng);
        }
    }
    Ok(external)
}

#[derive(Debug, Clone, Copy)]
struct Active {
    id: u64,
    remaining: f64,
    start: f64,
}

struct Engine {
    events: Vec<Event>,
    waiting: BinaryHeap<Reverse<SizeKey>>,
    current: Option<Active>,
    work: f64,
    now: f64,
}

impl Engine {
    fn queue_len(&self) -> usize {
        self.waiting.len() + self.current.is_some() as usize
    }

    fn log(&mut self, time: f64, kind: EventKind, job_id: Option<u64>, size_delta: f64) {
        let queue_len = self.queue_len();
        if queue_len == 0 {
            self.work = 0.0;
        }
        self.events.push(Event {
            time,
            kind,
            job_id,
            size_delta,
            queue_len,
            workload: self.work,
        });
    }

    fn elapse(&mut self, t: f64) {
        if self.current.is_some() {
            self.work -= t - self.now;
        }
        self.now = t;
    }

    fn start_next(&mut self, t: f64) {
        self.current = self.waiting.pop().map(|Reverse(k)| Active {
            id: k.id,
            remaining: k.remaining,
            start: t,
        });
    }

    fn complete(&mut self, t: f64) {
        self.elapse(t);
        let done = self.current.take().expect("completion requires a job in service");
        self.start_next(t);
        self.log(t, EventKind::Completion, Some(done.id), -done.remaining);
        if self.current.is_none() {
            self.log(t, EventKind::IdleStart, None, 0.0);
        }
    }

    fn arrive(&mut self, job: &Job) {
        let t = job.arrival_time;
        if let Some(cur) = self.current {
            // rounding can leave the job in service with nothing left at t
            if cur.remaining - (t - cur.start) <= 0.0 {
                self.complete(t);
            }
        }
        self.elapse(t);
        self.work += job.initial_size;
        let incoming = SizeKey {
            remaining: job.initial_size,
            id: job.id,
        };
        match self.current {
            None => {
                self.current = Some(Active {
                    id: job.id,
                    remaining: job.initial_size,
                    start: t,
                });
                self.log(t, EventKind::Arrival, Some(job.id), job.initial_size);
            }
            Some(cur) => {
                let served = t - cur.start;
                let in_service = SizeKey {
                    remaining: cur.remaining - served,
                    id: cur.id,
                };
                if incoming < in_service {
                    self.waiting.push(Reverse(in_service));
                    self.current = Some(Active {
                        id: job.id,
                        remaining: job.initial_size,
                        start: t,
                    });
                    self.log(t, EventKind::Arrival, Some(job.id), job.initial_size);
                    self.log(t, EventKind::Preemption, Some(cur.id), -served);
                } else {
                    self.waiting.push(Reverse(incoming));
                    self.log(t, EventKind::Arrival, Some(job.id), job.initial_size);
                }
            }
        }
    }
}

/// Runs SRPT on the jobs of `stream` whose size is at most `threshold`.
///
/// Completions precede arrivals at equal times; equal sizes are served in id
/// order. Jobs still present at the horizon stay in the final state.
pub fn run_srpt(stream: &ArrivalStream, threshold: f64, seed: Option<u64>) -> Trajectory {
    let horizon = stream.horizon;
    let mut engine = Engine {
        events: Vec::new(),
        waiting: BinaryHeap::new(),
        current: None,
        work: 0.0,
        now: 0.0,
    };

    let mut initial: Vec<&Job> = stream
        .initial
        .iter()
        .filter(|j| j.initial_size <= threshold)
        .collect();
    initial.sort_by_key(|j| j.id);
    for j in initial {
        engine.waiting.push(Reverse(SizeKey {
            remaining: j.initial_size,
            id: j.id,
        }));
        engine.work += j.initial_size;
        engine.log(0.0, EventKind::Initial, Some(j.id), j.initial_size);
    }
    engine.start_next(0.0);

    let mut arrivals = stream
        .external
        .iter()
        .filter(|j| j.initial_size <= threshold && j.arrival_time <= horizon)
        .peekable();
    loop {
        let completion = engine.current.map(|c| c.start + c.remaining);
        let next_arrival = arrivals.peek().map(|j| j.arrival_time);
        match (completion, next_arrival) {
            (Some(ct), na) if ct <= horizon && na.is_none_or(|a| ct <= a) => engine.complete(ct),
            (_, Some(_)) => {
                let job = arrivals.next().expect("peeked");
                engine.arrive(job);
            }
            _ => break,
        }
    }

    Trajectory::from_events(horizon, threshold, seed, engine.events)
        .expect("engine emits a well-formed log")
}

/// Simulates the full SRPT system fed by a freshly drawn arrival stream.
pub fn simulate_srpt(
    arrivals: &ArrivalSpec,
    service: &ServiceDist,
    lambda_r: f64,
    initial: &[Job],
    horizon: f64,
    seed: u64,
) -> Result<Trajectory> {
    let stream = stream_for_seed(arrivals, service, lambda_r, initial, horizon, seed)?;
    Ok(run_srpt(&stream, f64::INFINITY, Some(seed)))
}

/// The arrival stream [`simulate_srpt`] would consume for `seed`.
pub fn stream_for_seed(
    arrivals: &ArrivalSpec,
    service: &ServiceDist,
    lambda_r: f64,
    initial: &[Job],
    horizon: f64,
    seed: u64,
) -> Result<ArrivalStream> {
    if initial.iter().any(|j| j.origin != Origin::Initial) {
        return Err(Error::Parameter("initial job list contains external jobs".into()));
    }
    let mut rng = stream_rng(seed, 0);
    ArrivalStream::generate(arrivals, service, lambda_r, initial.to_vec(), horizon, &mut rng)
}

/// Runs one truncated system per threshold on a single shared stream.
///
/// Thresholds are raw sizes (`a · c^r`); `inf` reproduces the full run.
pub fn coupled_truncated_runs(stream: &ArrivalStream, thresholds: &[f64], seed: Option<u64>) -> Result<Vec<Trajectory>> {
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Parameter("thresholds must be sorted ascending".into()));
    }
    if thresholds.iter().any(|t| t.is_nan() || *t < 0.0) {
        return Err(Error::Parameter("thresholds must be nonnegative".into()));
    }
    Ok(thresholds
        .iter()
        .map(|&y| run_srpt(stream, y, seed))
        .collect())
}
