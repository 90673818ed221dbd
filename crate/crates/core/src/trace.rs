//! Scheduler event trace and an independent replay checker.
//!
//! The replay does not share code with the scheduler: it rebuilds occupancy
//! and run-queue membership from the logged events alone, which makes it
//! usable as an oracle for the dispatch invariant and for CPU accounting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::sched::{CpuStat, ThreadId};
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    /// Thread became runnable. Detail: its policy.
    Wake,
    /// Thread placed on a core. Detail: its policy.
    Run,
    /// Thread left the CPU or the run queue. Detail: `preempt`, `block` or `sleep`.
    Stop,
    /// Policy changed. Detail: the new policy.
    Policy,
    /// A dispatch pass finished; the state must satisfy the priority rule here.
    Dispatch,
}

impl TraceEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceEvent::Wake => "wake",
            TraceEvent::Run => "run",
            TraceEvent::Stop => "stop",
            TraceEvent::Policy => "policy",
            TraceEvent::Dispatch => "dispatch",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub event: TraceEvent,
    pub thread: Option<ThreadId>,
    pub core: Option<usize>,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, time: SimTime, event: TraceEvent, thread: Option<ThreadId>, core: Option<usize>, detail: &str) {
        self.records.push(TraceRecord {
            time,
            event,
            thread,
            core,
            detail: detail.to_owned(),
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_us,event,thread_id,core_id,detail\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.time.as_micros(),
                r.event.as_str(),
                r.thread.map(|t| t.0.to_string()).unwrap_or_default(),
                r.core.map(|c| c.to_string()).unwrap_or_default(),
                r.detail
            );
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Where {
    Off,
    Queued,
    OnCore(usize),
}

/// Outcome of replaying a trace.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplayReport {
    pub dispatch_instants: u64,
    /// Dispatch instants at which an IDLE thread held a core while a
    /// NORMAL thread was queued.
    pub priority_violations: u64,
    /// Structural problems: double occupancy, running a thread that was not
    /// queued, time going backwards.
    pub malformed: Vec<String>,
    /// Per-class busy time reconstructed from the trace up to its end time.
    pub cpu: CpuStat,
}

/// Replays `trace` on `cores` cores, accounting CPU time up to `end`.
pub fn replay(trace: &Trace, cores: usize, end: SimTime) -> ReplayReport {
    let mut rep = ReplayReport::default();
    let mut occupant: Vec<Option<usize>> = vec![None; cores];
    let mut policy: BTreeMap<usize, bool> = BTreeMap::new(); // true = IDLE
    let mut place: BTreeMap<usize, Where> = BTreeMap::new();
    let mut last = SimTime::ZERO;

    let account = |occupant: &[Option<usize>], policy: &BTreeMap<usize, bool>, dt: u64, cpu: &mut CpuStat| {
        for occ in occupant {
            match occ {
                None => cpu.idle += dt,
                Some(t) if policy.get(t).copied().unwrap_or(false) => cpu.nice += dt,
                Some(_) => cpu.user += dt,
            }
        }
    };

    for r in &trace.records {
        if r.time < last {
            rep.malformed.push(format!("time goes backwards at {}", r.time));
            continue;
        }
        account(&occupant, &policy, r.time - last, &mut rep.cpu);
        last = r.time;
        let tid = r.thread.map(|t| t.0);
        match r.event {
            TraceEvent::Wake => {
                let t = tid.unwrap_or_default();
                policy.insert(t, r.detail == "IDLE");
                place.insert(t, Where::Queued);
            }
            TraceEvent::Policy => {
                policy.insert(tid.unwrap_or_default(), r.detail == "IDLE");
            }
            TraceEvent::Run => {
                let (t, c) = (tid.unwrap_or_default(), r.core.unwrap_or(usize::MAX));
                if c >= cores {
                    rep.malformed.push(format!("run on bad core at {}", r.time));
                    continue;
                }
                if place.get(&t) != Some(&Where::Queued) {
                    rep.malformed.push(format!("thread {t} ran without being queued at {}", r.time));
                }
                if occupant[c].is_some() {
                    rep.malformed.push(format!("core {c} double-booked at {}", r.time));
                }
                occupant[c] = Some(t);
                place.insert(t, Where::OnCore(c));
            }
            TraceEvent::Stop => {
                let t = tid.unwrap_or_default();
                if let Some(Where::OnCore(c)) = place.get(&t).copied() {
                    occupant[c] = None;
                }
                let next = if r.detail == "preempt" { Where::Queued } else { Where::Off };
                place.insert(t, next);
            }
            TraceEvent::Dispatch => {
                rep.dispatch_instants += 1;
                let normal_queued = place
                    .iter()
                    .any(|(t, w)| *w == Where::Queued && !policy.get(t).copied().unwrap_or(false));
                let idle_running = occupant
                    .iter()
                    .flatten()
                    .any(|t| policy.get(t).copied().unwrap_or(false));
                if normal_queued && idle_running {
                    rep.priority_violations += 1;
                }
            }
        }
    }
    if end >= last {
        account(&occupant, &policy, end - last, &mut rep.cpu);
    }
    rep
}
