use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::job::{Job, QueueState, SizeKey};
use crate::error::{Error, Result};
use crate::format::{fmt_f64, parse_f64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Job present at time zero.
    Initial,
    Arrival,
    /// The job in service is displaced by a strictly smaller arrival.
    Preemption,
    Completion,
    IdleStart,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Initial => "initial",
            EventKind::Arrival => "arrival",
            EventKind::Preemption => "preemption",
            EventKind::Completion => "completion",
            EventKind::IdleStart => "idle_start",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "initial" => EventKind::Initial,
            "arrival" => EventKind::Arrival,
            "preemption" => EventKind::Preemption,
            "completion" => EventKind::Completion,
            "idle_start" => EventKind::IdleStart,
            other => return Err(Error::Format(format!("unknown event kind {other:?}"))),
        })
    }
}

/// One entry of the event log.
///
/// `size_delta` is `+size` for initial jobs and arrivals, and minus the
/// service received during the interrupted or finished stint for preemptions
/// and completions. `queue_len` and `workload` describe the system just after
/// the event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub job_id: Option<u64>,
    pub size_delta: f64,
    pub queue_len: usize,
    pub workload: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrajectoryStats {
    pub initial_jobs: usize,
    pub arrivals: usize,
    pub completions: usize,
    pub preemptions: usize,
    pub max_queue_len: usize,
    /// Service recorded at completions and preemptions, so work done on the
    /// job in service after the last event is not included.
    pub work_served: f64,
}

/// Event log of one SRPT run on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub horizon: f64,
    /// Admission threshold on initial sizes; `inf` for the full system.
    pub threshold: f64,
    pub seed: Option<u64>,
    events: Vec<Event>,
    stats: TrajectoryStats,
}

impl Trajectory {
    pub fn from_events(horizon: f64, threshold: f64, seed: Option<u64>, events: Vec<Event>) -> Result<Self> {
        let mut stats = TrajectoryStats::default();
        let mut prev = 0.0;
        for e in &events {
            if !(e.time >= prev) || e.time > horizon {
                return Err(Error::Format(format!(
                    "event times must be nondecreasing within the horizon (at t = {})",
                    e.time
                )));
            }
            prev = e.time;
            stats.max_queue_len = stats.max_queue_len.max(e.queue_len);
            match e.kind {
                EventKind::Initial => stats.initial_jobs += 1,
                EventKind::Arrival => stats.arrivals += 1,
                EventKind::Completion => {
                    stats.completions += 1;
                    stats.work_served -= e.size_delta;
                }
                EventKind::Preemption => {
                    stats.preemptions += 1;
                    stats.work_served -= e.size_delta;
                }
                EventKind::IdleStart => {}
            }
        }
        Ok(Self {
            horizon,
            threshold,
            seed,
            events,
            stats,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn stats(&self) -> &TrajectoryStats {
        &self.stats
    }

    /// Admitted jobs in log order (initial jobs first).
    pub fn jobs(&self) -> Vec<Job> {
        self.events
            .iter()
            .filter_map(|e| match (e.kind, e.job_id) {
                (EventKind::Initial, Some(id)) => Some(Job::initial(id, e.size_delta)),
                (EventKind::Arrival, Some(id)) => Some(Job::external(id, e.time, e.size_delta)),
                _ => None,
            })
            .collect()
    }

    pub fn event_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().map(|e| e.time)
    }

    pub fn replay(&self) -> Replay<'_> {
        Replay::new(&self.events)
    }

    /// Remaining sizes at `t+`, reconstructed by replaying the log.
    pub fn state_at(&self, t: f64) -> Result<QueueState> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::OutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let mut replay = self.replay();
        replay.advance(t)?;
        Ok(replay.state(t))
    }

    /// Queue length at `t+`.
    pub fn queue_len_at(&self, t: f64) -> usize {
        let idx = self.events.partition_point(|e| e.time <= t);
        if idx == 0 {
            0
        } else {
            self.events[idx - 1].queue_len
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        writeln!(
            out,
            "# srptlab-trajectory v1 horizon={} threshold={} seed={}",
            fmt_f64(self.horizon),
            fmt_f64(self.threshold),
            seed
        )
        .map_err(|e| Error::io("<trajectory csv>", e))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "kind", "job_id", "size_delta", "queue_len", "workload"])?;
        for e in &self.events {
            w.write_record([
                fmt_f64(e.time),
                e.kind.as_str().to_string(),
                e.job_id.map(|i| i.to_string()).unwrap_or_default(),
                fmt_f64(e.size_delta),
                e.queue_len.to_string(),
                fmt_f64(e.workload),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self> {
        let mut header = String::new();
        input
            .read_line(&mut header)
            .map_err(|e| Error::io("<trajectory csv>", e))?;
        let header = header.trim();
        let rest = header
            .strip_prefix("# srptlab-trajectory v1")
            .ok_or_else(|| Error::Format(format!("missing trajectory header, got {header:?}")))?;
        let mut horizon = None;
        let mut threshold = None;
        let mut seed = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("horizon", v)) => horizon = Some(parse_f64(v)?),
                Some(("threshold", v)) => threshold = Some(parse_f64(v)?),
                Some(("seed", "none")) => seed = None,
                Some(("seed", v)) => {
                    seed = Some(
                        v.parse::<u64>()
                            .map_err(|e| Error::Format(format!("bad seed {v:?}: {e}")))?,
                    )
                }
                _ => return Err(Error::Format(format!("unexpected header field {field:?}"))),
            }
        }
        let horizon = horizon.ok_or_else(|| Error::Format("header lacks horizon".into()))?;
        let threshold = threshold.ok_or_else(|| Error::Format("header lacks threshold".into()))?;

        let mut reader = csv::Reader::from_reader(input);
        let mut events = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            if rec.len() != 6 {
                return Err(Error::Format(format!("expected 6 columns, got {}", rec.len())));
            }
            let job_id = if rec[2].is_empty() {
                None
            } else {
                Some(
                    rec[2]
                        .parse::<u64>()
                        .map_err(|e| Error::Format(format!("bad job id {:?}: {e}", &rec[2])))?,
                )
            };
            events.push(Event {
                time: parse_f64(&rec[0])?,
                kind: EventKind::parse(&rec[1])?,
                job_id,
                size_delta: parse_f64(&rec[3])?,
                queue_len: rec[4]
                    .parse::<usize>()
                    .map_err(|e| Error::Format(format!("bad queue length {:?}: {e}", &rec[4])))?,
                workload: parse_f64(&rec[5])?,
            });
        }
        Self::from_events(horizon, threshold, seed, events)
    }
}

#[derive(Debug, Clone, Copy)]
struct Stint {
    id: u64,
    remaining: f64,
    start: f64,
}

/// Incremental reconstruction of queue states from an event log.
///
/// Times passed to [`Replay::advance`] must be nondecreasing, which makes a
/// sweep over many snapshot times linear in the log length.
#[derive(Debug, Clone)]
pub struct Replay<'a> {
    events: &'a [Event],
    next: usize,
    waiting: BTreeSet<SizeKey>,
    service: Option<Stint>,
}

impl<'a> Replay<'a> {
    pub fn new(events: &'a [Event]) -> Self {
        Self {
            events,
            next: 0,
            waiting: BTreeSet::new(),
            service: None,
        }
    }

    fn start_next(&mut self, t: f64) {
        if self.service.is_none() {
            if let Some(k) = self.waiting.pop_first() {
                self.service = Some(Stint {
                    id: k.id,
                    remaining: k.remaining,
                    start: t,
                });
            }
        }
    }

    fn take_service(&mut self, e: &Event) -> Result<Stint> {
        match self.service.take() {
            Some(s) if Some(s.id) == e.job_id => Ok(s),
            other => Err(Error::Format(format!(
                "{} of job {:?} at t = {} but job in service is {:?}",
                e.kind.as_str(),
                e.job_id,
                e.time,
                other.map(|s| s.id)
            ))),
        }
    }

    /// Applies every event with time `<= t`.
    pub fn advance(&mut self, t: f64) -> Result<()> {
        while let Some(e) = self.events.get(self.next) {
            if e.time > t {
                break;
            }
            self.next += 1;
            let id = e
                .job_id
                .ok_or_else(|| Error::Format(format!("{} without job id", e.kind.as_str())));
            match e.kind {
                EventKind::Initial => {
                    self.waiting.insert(SizeKey {
                        remaining: e.size_delta,
                        id: id?,
                    });
                }
                EventKind::Arrival => {
                    let id = id?;
                    self.start_next(e.time);
                    if self.service.is_some() {
                        self.waiting.insert(SizeKey {
                            remaining: e.size_delta,
                            id,
                        });
                    } else {
                        self.service = Some(Stint {
                            id,
                            remaining: e.size_delta,
                            start: e.time,
                        });
                    }
                }
                EventKind::Preemption => {
                    let s = self.take_service(e)?;
                    self.waiting.insert(SizeKey {
                        remaining: s.remaining + e.size_delta,
                        id: s.id,
                    });
                    self.start_next(e.time);
                }
                EventKind::Completion => {
                    self.take_service(e)?;
                    self.start_next(e.time);
                }
                EventKind::IdleStart => {}
            }
            let more_initial = matches!(
                self.events.get(self.next),
                Some(n) if n.kind == EventKind::Initial
            );
            if !more_initial {
                self.start_next(e.time);
            }
        }
        Ok(())
    }

    pub fn queue_len(&self) -> usize {
        self.waiting.len() + self.service.is_some() as usize
    }

    /// State at `t`, assuming [`Replay::advance`] was called with `t`.
    pub fn state(&self, t: f64) -> QueueState {
        let mut jobs: Vec<(u64, f64)> = Vec::with_capacity(self.queue_len());
        if let Some(s) = self.service {
            let rem = s.remaining - (t - s.start);
            if rem > 0.0 {
                jobs.push((s.id, rem));
            }
        }
        jobs.extend(self.waiting.iter().map(|k| (k.id, k.remaining)));
        QueueState::from_jobs(t, jobs)
    }

    pub fn state_at(&mut self, t: f64) -> Result<QueueState> {
        self.advance(t)?;
        Ok(self.state(t))
    }
}
