//! Event-driven model of `N` identical cores shared by threads under two
//! scheduling classes.
//!
//! NORMAL threads time-share the machine by smallest virtual runtime with a
//! fixed quantum. IDLE threads only ever run on cores that no runnable NORMAL
//! thread wants. The scheduler does not own a clock or an event queue: the
//! caller drives it with timestamps and asks for a [`Scheduler::dispatch`] at
//! every instant where the runnable set or the core occupancy may have changed.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::SimTime;
use crate::trace::{Trace, TraceEvent};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThreadId(pub usize);

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SchedPolicy {
    Normal,
    Idle,
}

impl SchedPolicy {
    fn class(self) -> u8 {
        match self {
            SchedPolicy::Normal => 0,
            SchedPolicy::Idle => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SchedPolicy::Normal => "NORMAL",
            SchedPolicy::Idle => "IDLE",
        }
    }
}

impl fmt::Display for SchedPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThreadKind {
    Mutator,
    GcWorker,
    Director,
    Reconciler,
}

impl ThreadKind {
    pub fn is_gc(self) -> bool {
        matches!(self, ThreadKind::GcWorker | ThreadKind::Director)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ThreadState {
    Runnable,
    Running,
    Blocked,
    Sleeping,
}

/// When an IDLE occupant yields its core to a NORMAL thread that became
/// runnable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdlePreemption {
    /// At the instant the NORMAL thread becomes runnable.
    #[default]
    Immediate,
    /// Only when the IDLE occupant's quantum expires.
    QuantumBoundary,
}

#[derive(Clone, Debug)]
pub struct SimThread {
    pub id: ThreadId,
    pub kind: ThreadKind,
    pub policy: SchedPolicy,
    pub state: ThreadState,
    /// Accumulated CPU micros, adjusted upward on wakeup so that long
    /// sleepers do not monopolise the machine.
    pub vruntime: u64,
    /// CPU micros left in the current burst; `None` runs until stopped.
    pub burst: Option<u64>,
    /// Total CPU micros consumed.
    pub cpu_time: u64,
    core: Option<usize>,
    epoch: u64,
}

impl SimThread {
    pub fn core(&self) -> Option<usize> {
        self.core
    }

    /// Bumped every time the thread starts, stops, or changes its burst, so
    /// that completion events computed earlier can be recognised as stale.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn key(&self) -> (u8, u64, usize) {
        (self.policy.class(), self.vruntime, self.id.0)
    }
}

#[derive(Clone, Debug)]
pub struct CoreState {
    pub id: usize,
    pub occupant: Option<ThreadId>,
    pub quantum_end: SimTime,
    accounted_until: SimTime,
}

/// Cumulative per-class CPU time, the simulator's `/proc/stat`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpuStat {
    pub user: u64,
    pub nice: u64,
    pub system: u64,
    pub idle: u64,
}

impl CpuStat {
    pub fn sum(&self) -> u64 {
        self.user + self.nice + self.system + self.idle
    }

    pub fn busy(&self) -> u64 {
        self.user + self.nice + self.system
    }
}

/// A dispatch candidate as seen by [`assign`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub id: ThreadId,
    pub policy: SchedPolicy,
    pub vruntime: u64,
    /// Core the thread currently occupies, if any.
    pub core: Option<usize>,
}

impl Candidate {
    fn key(&self) -> (u8, u64, usize) {
        (self.policy.class(), self.vruntime, self.id.0)
    }
}

/// The dispatch rule. Given the cores open for (re)assignment and every
/// thread that may occupy them, returns `(core, thread)` pairs.
///
/// NORMAL threads are placed first by `(vruntime, id)`; IDLE threads only
/// get cores left over once every NORMAL candidate has one. A selected
/// thread that already sits on one of the open cores keeps it; the rest fill
/// the remaining cores in index order.
pub fn assign(open_cores: &[usize], candidates: &[Candidate]) -> Vec<(usize, ThreadId)> {
    let mut ranked: Vec<&Candidate> = candidates.iter().collect();
    ranked.sort_by_key(|c| c.key());
    ranked.truncate(open_cores.len());

    let mut out = Vec::with_capacity(ranked.len());
    let mut taken = vec![false; open_cores.len()];
    let mut pending = Vec::new();
    for cand in ranked {
        match cand.core.and_then(|c| open_cores.iter().position(|&o| o == c)) {
            Some(slot) if !taken[slot] => {
                taken[slot] = true;
                out.push((open_cores[slot], cand.id));
            }
            _ => pending.push(cand.id),
        }
    }
    let mut free: Vec<usize> = open_cores
        .iter()
        .zip(&taken)
        .filter(|(_, t)| !**t)
        .map(|(c, _)| *c)
        .collect();
    free.sort_unstable();
    out.extend(free.into_iter().zip(pending));
    out
}

/// Threads whose running status changed during a dispatch.
#[derive(Clone, Debug, Default)]
pub struct DispatchOutcome {
    pub started: Vec<ThreadId>,
    pub preempted: Vec<ThreadId>,
}

impl DispatchOutcome {
    pub fn is_empty(&self) -> bool {
        self.started.is_empty() && self.preempted.is_empty()
    }
}

pub struct Scheduler {
    cores: Vec<CoreState>,
    threads: Vec<SimThread>,
    quantum: u64,
    preemption: IdlePreemption,
    /// Runnable threads not currently on a core, ordered by dispatch key.
    waiting: BTreeSet<(u8, u64, usize)>,
    /// Per-class vruntime floor used to place waking threads.
    min_vruntime: [u64; 2],
    stat: CpuStat,
    dispatches: u64,
    priority_violations: u64,
    pub(crate) trace: Option<Trace>,
}

impl Scheduler {
    pub fn new(cores: usize, quantum_us: u64, preemption: IdlePreemption) -> Scheduler {
        assert!(cores > 0, "need at least one core");
        assert!(quantum_us > 0, "quantum must be positive");
        Scheduler {
            cores: (0..cores)
                .map(|id| CoreState {
                    id,
                    occupant: None,
                    quantum_end: SimTime::ZERO,
                    accounted_until: SimTime::ZERO,
                })
                .collect(),
            threads: Vec::new(),
            quantum: quantum_us,
            preemption,
            waiting: BTreeSet::new(),
            min_vruntime: [0; 2],
            stat: CpuStat::default(),
            dispatches: 0,
            priority_violations: 0,
            trace: None,
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Trace::default());
    }

    pub fn take_trace(&mut self) -> Option<Trace> {
        self.trace.take()
    }

    pub fn add_thread(&mut self, kind: ThreadKind, policy: SchedPolicy) -> ThreadId {
        let id = ThreadId(self.threads.len());
        self.threads.push(SimThread {
            id,
            kind,
            policy,
            state: ThreadState::Sleeping,
            vruntime: 0,
            burst: None,
            cpu_time: 0,
            core: None,
            epoch: 0,
        });
        id
    }

    pub fn cores(&self) -> &[CoreState] {
        &self.cores
    }

    pub fn threads(&self) -> &[SimThread] {
        &self.threads
    }

    pub fn thread(&self, id: ThreadId) -> Result<&SimThread> {
        self.threads.get(id.0).ok_or(Error::UnknownThread(id))
    }

    pub fn quantum(&self) -> u64 {
        self.quantum
    }

    pub fn dispatch_count(&self) -> u64 {
        self.dispatches
    }

    pub fn priority_violations(&self) -> u64 {
        self.priority_violations
    }

    /// CPU micros consumed by `id`, including the part of a burst in progress.
    pub fn cpu_time(&self, id: ThreadId, now: SimTime) -> u64 {
        let t = &self.threads[id.0];
        match t.core {
            Some(c) => t.cpu_time + (now - self.cores[c].accounted_until),
            None => t.cpu_time,
        }
    }

    /// Remaining burst of a thread, accounting for time run since the last
    /// flush.
    pub fn remaining_burst(&self, id: ThreadId, now: SimTime) -> Option<u64> {
        let t = &self.threads[id.0];
        let ran = t.core.map_or(0, |c| now - self.cores[c].accounted_until);
        t.burst.map(|b| b.saturating_sub(ran))
    }

    /// Cumulative counters as of `now`.
    pub fn read_cpu_stat(&self, now: SimTime) -> CpuStat {
        let mut stat = self.stat;
        for core in &self.cores {
            let dt = now - core.accounted_until;
            match core.occupant {
                None => stat.idle += dt,
                Some(t) => match self.threads[t.0].policy {
                    SchedPolicy::Normal => stat.user += dt,
                    SchedPolicy::Idle => stat.nice += dt,
                },
            }
        }
        stat
    }

    fn flush_core(&mut self, core: usize, now: SimTime) {
        let c = &mut self.cores[core];
        let dt = now - c.accounted_until;
        c.accounted_until = now;
        if dt == 0 {
            return;
        }
        match c.occupant {
            None => self.stat.idle += dt,
            Some(tid) => {
                let t = &mut self.threads[tid.0];
                t.vruntime += dt;
                t.cpu_time += dt;
                if let Some(b) = t.burst.as_mut() {
                    *b = b.saturating_sub(dt);
                }
                match t.policy {
                    SchedPolicy::Normal => self.stat.user += dt,
                    SchedPolicy::Idle => self.stat.nice += dt,
                }
            }
        }
    }

    fn flush_all(&mut self, now: SimTime) {
        for c in 0..self.cores.len() {
            self.flush_core(c, now);
        }
    }

    fn record(&mut self, now: SimTime, event: TraceEvent, thread: Option<ThreadId>, core: Option<usize>, detail: &str) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(now, event, thread, core, detail);
        }
    }

    /// Makes a sleeping or blocked thread runnable with a new burst.
    pub fn wake(&mut self, id: ThreadId, burst: Option<u64>, now: SimTime) -> Result<()> {
        let floor = {
            let t = self.threads.get(id.0).ok_or(Error::UnknownThread(id))?;
            if matches!(t.state, ThreadState::Runnable | ThreadState::Running) {
                return Err(Error::Invariant(format!("wake of thread {id} which is already {:?}", t.state)));
            }
            self.min_vruntime[t.policy.class() as usize]
        };
        let t = &mut self.threads[id.0];
        t.vruntime = t.vruntime.max(floor);
        t.burst = burst;
        t.state = ThreadState::Runnable;
        t.epoch += 1;
        self.waiting.insert(t.key());
        let detail = t.policy.as_str();
        self.record(now, TraceEvent::Wake, Some(id), None, detail);
        Ok(())
    }

    /// Takes a thread off the CPU and out of the run queue.
    pub fn block(&mut self, id: ThreadId, state: ThreadState, now: SimTime) -> Result<()> {
        debug_assert!(matches!(state, ThreadState::Blocked | ThreadState::Sleeping));
        let t = self.threads.get(id.0).ok_or(Error::UnknownThread(id))?;
        match t.state {
            ThreadState::Running => {
                let core = t.core.expect("running thread has a core");
                self.flush_core(core, now);
                self.cores[core].occupant = None;
                self.threads[id.0].core = None;
                let detail = if state == ThreadState::Blocked { "block" } else { "sleep" };
                self.record(now, TraceEvent::Stop, Some(id), Some(core), detail);
            }
            ThreadState::Runnable => {
                let key = t.key();
                self.waiting.remove(&key);
                let detail = if state == ThreadState::Blocked { "block" } else { "sleep" };
                self.record(now, TraceEvent::Stop, Some(id), None, detail);
            }
            ThreadState::Blocked | ThreadState::Sleeping => {}
        }
        let t = &mut self.threads[id.0];
        t.state = state;
        t.epoch += 1;
        Ok(())
    }

    /// Replaces the burst of a thread in any state.
    pub fn set_burst(&mut self, id: ThreadId, burst: Option<u64>, now: SimTime) -> Result<()> {
        let core = self.thread(id)?.core;
        if let Some(c) = core {
            self.flush_core(c, now);
        }
        let t = &mut self.threads[id.0];
        t.burst = burst;
        t.epoch += 1;
        Ok(())
    }

    /// Changes a thread's scheduling class. The caller must dispatch at `now`
    /// afterwards for the change to affect core ownership.
    pub fn set_policy(&mut self, id: ThreadId, policy: SchedPolicy, now: SimTime) -> Result<()> {
        let t = self.threads.get(id.0).ok_or(Error::UnknownThread(id))?;
        if t.policy == policy {
            return Ok(());
        }
        let state = t.state;
        let key = t.key();
        if let Some(c) = t.core {
            self.flush_core(c, now);
        }
        if state == ThreadState::Runnable {
            self.waiting.remove(&key);
        }
        let floor = self.min_vruntime[policy.class() as usize];
        let t = &mut self.threads[id.0];
        t.policy = policy;
        t.vruntime = t.vruntime.max(floor);
        if state == ThreadState::Runnable {
            let key = t.key();
            self.waiting.insert(key);
        }
        self.record(now, TraceEvent::Policy, Some(id), None, policy.as_str());
        Ok(())
    }

    fn has_normal_waiter(&self) -> bool {
        self.waiting.first().is_some_and(|k| k.0 == SchedPolicy::Normal.class())
    }

    /// Reassigns every core that is open at `now`: free cores, cores whose
    /// quantum has expired, and (when a NORMAL thread waits and preemption is
    /// immediate) cores held by IDLE threads.
    pub fn dispatch(&mut self, now: SimTime) -> DispatchOutcome {
        self.flush_all(now);
        self.dispatches += 1;
        let normal_waiting = self.has_normal_waiter();

        let mut open = Vec::new();
        let mut candidates = Vec::new();
        for core in &self.cores {
            let is_open = match core.occupant {
                None => true,
                Some(t) => {
                    core.quantum_end <= now
                        || (normal_waiting
                            && self.preemption == IdlePreemption::Immediate
                            && self.threads[t.0].policy == SchedPolicy::Idle)
                }
            };
            if is_open {
                open.push(core.id);
                if let Some(t) = core.occupant {
                    let t = &self.threads[t.0];
                    candidates.push(Candidate {
                        id: t.id,
                        policy: t.policy,
                        vruntime: t.vruntime,
                        core: t.core,
                    });
                }
            }
        }

        let mut outcome = DispatchOutcome::default();
        if !open.is_empty() {
            for &(_, vr, id) in self.waiting.iter().take(open.len()) {
                let t = &self.threads[id];
                candidates.push(Candidate {
                    id: t.id,
                    policy: t.policy,
                    vruntime: vr,
                    core: None,
                });
            }
            let placement = assign(&open, &candidates);

            // Preempt open-core occupants that lost their core.
            for &core in &open {
                let Some(occ) = self.cores[core].occupant else { continue };
                if placement.iter().any(|&(c, t)| c == core && t == occ) {
                    continue;
                }
                self.cores[core].occupant = None;
                let t = &mut self.threads[occ.0];
                t.core = None;
                t.state = ThreadState::Runnable;
                t.epoch += 1;
                let key = t.key();
                self.waiting.insert(key);
                outcome.preempted.push(occ);
                self.record(now, TraceEvent::Stop, Some(occ), Some(core), "preempt");
            }
            for (core, tid) in placement {
                if self.cores[core].occupant == Some(tid) {
                    // Kept its core; a fresh quantum only if the old one ran out.
                    if self.cores[core].quantum_end <= now {
                        self.cores[core].quantum_end = now + self.quantum;
                    }
                    continue;
                }
                let key = self.threads[tid.0].key();
                self.waiting.remove(&key);
                let c = &mut self.cores[core];
                c.occupant = Some(tid);
                c.quantum_end = now + self.quantum;
                let t = &mut self.threads[tid.0];
                t.core = Some(core);
                t.state = ThreadState::Running;
                t.epoch += 1;
                outcome.started.push(tid);
                let detail = t.policy.as_str();
                self.record(now, TraceEvent::Run, Some(tid), Some(core), detail);
            }
        }

        self.advance_min_vruntime();
        if self.has_priority_violation() {
            self.priority_violations += 1;
        }
        self.record(now, TraceEvent::Dispatch, None, None, "");
        outcome
    }

    fn advance_min_vruntime(&mut self) {
        for class in [SchedPolicy::Normal, SchedPolicy::Idle] {
            let c = class.class();
            let running = self
                .cores
                .iter()
                .filter_map(|core| core.occupant)
                .map(|t| &self.threads[t.0])
                .filter(|t| t.policy == class)
                .map(|t| t.vruntime)
                .min();
            let queued = self.waiting.range((c, 0, 0)..(c + 1, 0, 0)).next().map(|k| k.1);
            if let Some(m) = running.into_iter().chain(queued).min() {
                let floor = &mut self.min_vruntime[c as usize];
                *floor = (*floor).max(m);
            }
        }
    }

    /// True when some core runs an IDLE thread while a NORMAL thread waits.
    pub fn has_priority_violation(&self) -> bool {
        self.has_normal_waiter()
            && self
                .cores
                .iter()
                .filter_map(|c| c.occupant)
                .any(|t| self.threads[t.0].policy == SchedPolicy::Idle)
    }

    /// Earliest future instant at which an expiring quantum could hand a core
    /// to a waiting thread. `None` when nothing waits.
    pub fn next_quantum_check(&self, now: SimTime) -> Option<SimTime> {
        let first = self.waiting.first()?;
        let only_idle_waiting = first.0 == SchedPolicy::Idle.class();
        self.cores
            .iter()
            .filter(|c| match c.occupant {
                None => false,
                // An IDLE waiter can only ever displace another IDLE thread.
                Some(t) => !only_idle_waiting || self.threads[t.0].policy == SchedPolicy::Idle,
            })
            .map(|c| c.quantum_end)
            .filter(|&q| q > now)
            .min()
    }

    pub fn waiting_len(&self) -> usize {
        self.waiting.len()
    }
}
