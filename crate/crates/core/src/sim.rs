//! The integrated event loop: request serving, the collector and the
//! priority policy all driven over one [`Scheduler`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::gc::{CycleSample, Decision, DirectorState, GcCycle, Heap, Phase};
use crate::policy::{high_monk_decision, CpuUsageEstimator, CriticalityTable, HighMonk};
use crate::sched::{CpuStat, IdlePreemption, SchedPolicy, Scheduler, ThreadId, ThreadKind, ThreadState};
use crate::time::SimTime;
use crate::trace::Trace;
use crate::workload::{generate_arrivals, RequestRecord};

const WORK_EPS: f64 = 1e-6;

/// Independent random streams, so that changing one model aspect does not
/// perturb the others.
const STREAM_ARRIVALS: u64 = 1;
const STREAM_SERVICE: u64 = 2;
const STREAM_GC: u64 = 3;
const STREAM_POLICY: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum PolicyReason {
    Lock,
    Safepoint,
    Fallback,
    Reconcile,
}

impl PolicyReason {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyReason::Lock => "lock",
            PolicyReason::Safepoint => "safepoint",
            PolicyReason::Fallback => "fallback",
            PolicyReason::Reconcile => "reconcile",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolicyLogEntry {
    pub time: SimTime,
    pub thread: ThreadId,
    pub policy: SchedPolicy,
    pub counter: u32,
    pub reason: PolicyReason,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CycleLog {
    pub id: u64,
    pub start: SimTime,
    pub end: SimTime,
    pub workers: usize,
    pub pressing: bool,
    pub reclaimed_bytes: u64,
    pub stalls: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RequestOutcome {
    pub arrival: SimTime,
    pub start: Option<SimTime>,
    pub completion: Option<SimTime>,
    pub stalled_us: u64,
}

impl RequestOutcome {
    pub fn record(&self) -> Option<RequestRecord> {
        Some(RequestRecord {
            arrival: self.arrival,
            start: self.start?,
            completion: self.completion?,
            stalled_us: self.stalled_us,
        })
    }
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub horizon: SimTime,
    /// Start of the measurement window.
    pub measure_from: SimTime,
    pub requests: Vec<RequestOutcome>,
    pub cycles: Vec<CycleLog>,
    pub policy_log: Vec<PolicyLogEntry>,
    pub memory: Vec<(SimTime, u64)>,
    /// Allocation attempts that found the heap full.
    pub stalls: u64,
    pub cpu_at_measure: CpuStat,
    pub cpu_at_end: CpuStat,
    pub gc_cpu_us: u64,
    pub reconcile_checks: u64,
    pub reconcile_corrections: u64,
    pub fallback_entries: u64,
    pub fallback_exits: u64,
    pub dispatches: u64,
    pub priority_violations: u64,
    pub trace: Option<Trace>,
    /// Counter values of every GC thread at the horizon.
    pub final_counters: Vec<u32>,
    /// Policy of every GC thread at the horizon.
    pub final_policies: Vec<SchedPolicy>,
}

impl RunResult {
    /// Busy percentage over the measurement window.
    pub fn cpu_load(&self) -> f64 {
        crate::policy::cpu_usage_from_stat(&self.cpu_at_measure, &self.cpu_at_end).unwrap_or(0.0)
    }

    /// Stalls that began inside the measurement window.
    pub fn window_stalls(&self) -> u64 {
        self.requests
            .iter()
            .filter(|r| r.arrival >= self.measure_from && r.stalled_us > 0)
            .count() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Event {
    Horizon,
    Measure,
    Arrival(usize),
    BurstDone { tid: ThreadId, epoch: u64 },
    QuantumCheck,
    DirectorTick,
    ReconcileTick,
    CycleProgress { epoch: u64 },
    SafepointEnd,
    /// Flip a GC thread's policy behind the counters' back.
    InjectMismatch(usize),
    PolicyApply { tid: ThreadId, policy: SchedPolicy, reason: PolicyReason },
}

#[derive(Clone, Copy, Debug)]
struct Queued {
    time: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // Min-heap on (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MutPhase {
    Idle,
    Serving,
    AwaitLock,
    Stalled,
}

#[derive(Clone, Debug)]
struct Mutator {
    tid: ThreadId,
    phase: MutPhase,
    request: Option<usize>,
    paused: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Pause {
    Start,
    End,
}

#[derive(Clone, Debug)]
struct ActiveCycle {
    plan: GcCycle,
    concurrent: bool,
    pause: Option<Pause>,
    next_lock: usize,
    holder: Option<ThreadId>,
    /// Time up to which `plan.remaining_work` is settled.
    settled: SimTime,
    contributors: usize,
    progress_at: Option<SimTime>,
    progress_epoch: u64,
}

#[derive(Clone, Debug)]
struct Req {
    arrival: SimTime,
    service: u64,
    start: Option<SimTime>,
    completion: Option<SimTime>,
    stall_since: Option<SimTime>,
    stalled_us: u64,
}

/// Options that do not affect simulated behaviour.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub trace: bool,
    /// Override of the scenario horizon.
    pub horizon: Option<SimTime>,
    /// Start of the measurement window; defaults to zero.
    pub measure_from: Option<SimTime>,
    /// No arrivals at or after this instant.
    pub arrivals_until: Option<SimTime>,
    /// Flip the policy of GC thread `index` at the given instant without
    /// touching its counter.
    pub inject_mismatch: Option<(SimTime, usize)>,
}

pub struct Simulation<'a> {
    cfg: &'a ScenarioConfig,
    seed: u64,
    now: SimTime,
    horizon: SimTime,
    measure_from: SimTime,
    queue: BinaryHeap<Queued>,
    seq: u64,
    sched: Scheduler,
    heap: Heap,
    director: DirectorState,
    estimator: CpuUsageEstimator,
    table: CriticalityTable,
    high_monk: Option<HighMonk>,
    mutators: Vec<Mutator>,
    idle_mutators: BTreeSet<usize>,
    backlog: VecDeque<usize>,
    workers: Vec<ThreadId>,
    /// Threads whose policy follows the criticality table.
    gc_threads: Vec<ThreadId>,
    mutator_of: Vec<Option<usize>>,
    requests: Vec<Req>,
    cycle: Option<ActiveCycle>,
    next_cycle_id: u64,
    stw: bool,
    stall_queue: VecDeque<usize>,
    lock_waiters: VecDeque<usize>,
    orphan_stalls: u64,
    stalls: u64,
    quantum_checks: BTreeSet<SimTime>,
    rng_gc: ChaCha8Rng,
    rng_policy: ChaCha8Rng,
    /// Latest pending apply time per issuing source.
    policy_issuers: BTreeMap<(PolicyReason, Option<ThreadId>), SimTime>,
    cycles: Vec<CycleLog>,
    policy_log: Vec<PolicyLogEntry>,
    memory: Vec<(SimTime, u64)>,
    cpu_at_measure: CpuStat,
    reconcile_checks: u64,
    reconcile_corrections: u64,
    hooks_enabled: bool,
    /// A stalled allocation wants a director decision once the current
    /// event is fully handled.
    decide_pending: bool,
}

/// Runs one seed of a scenario.
pub fn run(cfg: &ScenarioConfig, seed: u64, opts: &RunOptions) -> Result<RunResult> {
    Simulation::new(cfg, seed, opts)?.run()
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &'a ScenarioConfig, seed: u64, opts: &RunOptions) -> Result<Simulation<'a>> {
        cfg.validate()?;
        let horizon = opts.horizon.unwrap_or(SimTime(cfg.horizon_us));
        let measure_from = opts.measure_from.unwrap_or(SimTime::ZERO).min(horizon);
        let mut sched = Scheduler::new(cfg.cores, cfg.quantum_us, cfg.idle_preemption);
        if opts.trace {
            sched.enable_trace();
        }
        let resting = cfg.policy.resting_policy();
        let pool = cfg.pool_size();
        let mutators: Vec<Mutator> = (0..pool)
            .map(|_| Mutator {
                tid: sched.add_thread(ThreadKind::Mutator, SchedPolicy::Normal),
                phase: MutPhase::Idle,
                request: None,
                paused: false,
            })
            .collect();
        let mut director = DirectorState::new(cfg.gc.director.clone(), cfg.cores);
        let workers: Vec<ThreadId> = (0..director.max_workers)
            .map(|_| sched.add_thread(ThreadKind::GcWorker, resting))
            .collect();
        let director_tid = sched.add_thread(ThreadKind::Director, resting);
        sched.add_thread(ThreadKind::Reconciler, SchedPolicy::Normal);
        let mut gc_threads = workers.clone();
        gc_threads.push(director_tid);
        let table = CriticalityTable::new(&gc_threads)?;
        let high_monk = match cfg.policy.variant.headroom {
            Some(n) => Some(HighMonk::new(
                cfg.cores,
                n,
                cfg.policy.fallback_mode,
                cfg.policy.whole_core_threshold,
            )?),
            None => None,
        };
        let heap = Heap::new(cfg.gc.heap_capacity, cfg.gc.live_fraction)?;
        if director.config.bootstrap_work <= 0.0 {
            let live = heap.live_bytes(heap.capacity) as f64;
            director.config.bootstrap_work = live * cfg.gc.cycle.work_per_live_byte + cfg.gc.cycle.work_overhead;
        }

        let mut rng_arrivals = stream(seed, STREAM_ARRIVALS);
        let mut rng_service = stream(seed, STREAM_SERVICE);
        let cutoff = opts.arrivals_until.unwrap_or(horizon).min(horizon);
        let arrivals = generate_arrivals(&cfg.workload.arrivals, cutoff, &mut rng_arrivals)?;
        let requests: Vec<Req> = arrivals
            .iter()
            .map(|&arrival| Req {
                arrival,
                service: cfg.workload.request.sample_service(&mut rng_service),
                start: None,
                completion: None,
                stall_since: None,
                stalled_us: 0,
            })
            .collect();

        let mut mutator_of = vec![None; sched.threads().len()];
        for (i, m) in mutators.iter().enumerate() {
            mutator_of[m.tid.0] = Some(i);
        }
        let mut sim = Simulation {
            cfg,
            seed,
            now: SimTime::ZERO,
            horizon,
            measure_from,
            queue: BinaryHeap::new(),
            seq: 0,
            sched,
            heap,
            director,
            estimator: CpuUsageEstimator::new(cfg.policy.decay_alpha),
            table,
            high_monk,
            idle_mutators: (0..mutators.len()).collect(),
            mutators,
            backlog: VecDeque::new(),
            workers,
            gc_threads,
            mutator_of,
            requests,
            cycle: None,
            next_cycle_id: 0,
            stw: false,
            stall_queue: VecDeque::new(),
            lock_waiters: VecDeque::new(),
            orphan_stalls: 0,
            stalls: 0,
            quantum_checks: BTreeSet::new(),
            rng_gc: stream(seed, STREAM_GC),
            rng_policy: stream(seed, STREAM_POLICY),
            policy_issuers: BTreeMap::new(),
            cycles: Vec::new(),
            policy_log: Vec::new(),
            memory: Vec::new(),
            cpu_at_measure: CpuStat::default(),
            reconcile_checks: 0,
            reconcile_corrections: 0,
            hooks_enabled: cfg.policy.variant.monk,
            decide_pending: false,
        };
        sim.push(horizon, Event::Horizon);
        sim.push(measure_from, Event::Measure);
        for (i, r) in arrivals.iter().enumerate() {
            sim.push(*r, Event::Arrival(i));
        }
        sim.push(SimTime::ZERO, Event::DirectorTick);
        if sim.hooks_enabled {
            // Half an interval out of phase with the director, which ticks on
            // round multiples and would otherwise always be caught mid-change.
            let first = cfg.policy.reconcile_interval_us + cfg.policy.reconcile_interval_us / 2;
            sim.push(SimTime(first), Event::ReconcileTick);
        }
        if let Some((t, i)) = opts.inject_mismatch {
            sim.push(t, Event::InjectMismatch(i));
        }
        Ok(sim)
    }

    fn push(&mut self, time: SimTime, event: Event) {
        self.seq += 1;
        self.queue.push(Queued {
            time,
            seq: self.seq,
            event,
        });
    }

    pub fn run(mut self) -> Result<RunResult> {
        while let Some(q) = self.queue.pop() {
            debug_assert!(q.time >= self.now);
            self.now = q.time;
            self.settle_pool();
            match q.event {
                Event::Horizon => break,
                Event::Measure => self.cpu_at_measure = self.sched.read_cpu_stat(self.now),
                Event::Arrival(i) => {
                    self.backlog.push_back(i);
                    self.feed_mutators()?;
                }
                Event::BurstDone { tid, epoch } => self.on_burst_done(tid, epoch)?,
                Event::QuantumCheck => {
                    self.quantum_checks.remove(&self.now);
                }
                Event::DirectorTick => {
                    self.memory.push((self.now, self.heap.used));
                    self.push(self.now + self.cfg.gc.director.interval_us, Event::DirectorTick);
                    self.director_decide()?;
                }
                Event::InjectMismatch(i) => {
                    let tid = self.gc_threads[i % self.gc_threads.len()];
                    let flipped = match self.sched.thread(tid)?.policy {
                        SchedPolicy::Normal => SchedPolicy::Idle,
                        SchedPolicy::Idle => SchedPolicy::Normal,
                    };
                    self.sched.set_policy(tid, flipped, self.now)?;
                }
                Event::ReconcileTick => {
                    self.reconcile()?;
                    let next = self.now + self.cfg.policy.reconcile_interval_us;
                    self.push(next, Event::ReconcileTick);
                }
                Event::CycleProgress { epoch } => {
                    if self.cycle.as_ref().is_some_and(|c| c.progress_epoch == epoch) {
                        if let Some(c) = self.cycle.as_mut() {
                            c.progress_at = None;
                        }
                        self.advance_cycle()?;
                    }
                }
                Event::SafepointEnd => self.end_pause()?,
                Event::PolicyApply { tid, policy, reason } => self.apply_policy(tid, policy, reason)?,
            }
            self.reschedule()?;
        }
        self.finish()
    }

    fn finish(mut self) -> Result<RunResult> {
        let now = self.horizon;
        self.now = now;
        let cpu_at_end = self.sched.read_cpu_stat(now);
        let gc_cpu_us = self
            .gc_threads
            .iter()
            .map(|&t| self.sched.cpu_time(t, now))
            .sum();
        let mut final_counters = Vec::new();
        let mut final_policies = Vec::new();
        for &t in &self.gc_threads {
            final_counters.push(self.table.count(t)?);
            final_policies.push(self.sched.thread(t)?.policy);
        }
        let requests = self
            .requests
            .iter()
            .map(|r| RequestOutcome {
                arrival: r.arrival,
                start: r.start,
                completion: r.completion,
                stalled_us: r.stalled_us + r.stall_since.map_or(0, |s| now - s),
            })
            .collect();
        let (fallback_entries, fallback_exits) = self.high_monk.as_ref().map_or((0, 0), |h| (h.entries, h.exits));
        Ok(RunResult {
            seed: self.seed,
            horizon: self.horizon,
            measure_from: self.measure_from,
            requests,
            cycles: self.cycles,
            policy_log: self.policy_log,
            memory: self.memory,
            stalls: self.stalls,
            cpu_at_measure: self.cpu_at_measure,
            cpu_at_end,
            gc_cpu_us,
            reconcile_checks: self.reconcile_checks,
            reconcile_corrections: self.reconcile_corrections,
            fallback_entries,
            fallback_exits,
            dispatches: self.sched.dispatch_count(),
            priority_violations: self.sched.priority_violations(),
            trace: self.sched.take_trace(),
            final_counters,
            final_policies,
        })
    }

    /// Dispatches and schedules the follow-up events implied by the new
    /// core assignment.
    fn reschedule(&mut self) -> Result<()> {
        if std::mem::take(&mut self.decide_pending) {
            self.director_decide()?;
        }
        let now = self.now;
        let out = self.sched.dispatch(now);
        if self.cfg.idle_preemption == IdlePreemption::Immediate && self.sched.has_priority_violation() {
            return Err(Error::Invariant(format!("IDLE thread on a core while NORMAL waits at {now}")));
        }
        for tid in out.started {
            self.schedule_burst(tid);
        }
        if let Some(t) = self.sched.next_quantum_check(now) {
            if self.quantum_checks.insert(t) {
                self.push(t, Event::QuantumCheck);
            }
        }
        self.schedule_progress();
        Ok(())
    }

    fn schedule_burst(&mut self, tid: ThreadId) {
        let t = &self.sched.threads()[tid.0];
        if t.state != ThreadState::Running {
            return;
        }
        if let Some(rem) = self.sched.remaining_burst(tid, self.now) {
            let epoch = t.epoch();
            self.push(self.now + rem, Event::BurstDone { tid, epoch });
        }
    }

    fn set_burst_running(&mut self, tid: ThreadId, burst: Option<u64>) -> Result<()> {
        self.sched.set_burst(tid, burst, self.now)?;
        self.schedule_burst(tid);
        Ok(())
    }

    // ---- request serving ----

    fn feed_mutators(&mut self) -> Result<()> {
        if self.stw {
            return Ok(());
        }
        while !self.backlog.is_empty() {
            let Some(&m) = self.idle_mutators.iter().next() else { break };
            self.idle_mutators.remove(&m);
            let req = self.backlog.pop_front().expect("nonempty");
            self.begin_request(m, req)?;
        }
        Ok(())
    }

    fn begin_request(&mut self, m: usize, req: usize) -> Result<()> {
        self.requests[req].start = Some(self.now);
        self.mutators[m].request = Some(req);
        self.try_allocate(m)
    }

    /// Allocation at request start. On success the mutator gets its service
    /// burst; otherwise it blocks on the GC lock or on a full heap.
    fn try_allocate(&mut self, m: usize) -> Result<()> {
        let tid = self.mutators[m].tid;
        let req = self.mutators[m].request.expect("mutator has a request");
        if self.cycle.as_ref().is_some_and(|c| c.holder.is_some()) {
            self.mutators[m].phase = MutPhase::AwaitLock;
            self.lock_waiters.push_back(m);
            return self.park(tid);
        }
        let bytes = self.cfg.workload.request.alloc_bytes;
        // Without a collector the heap is unbounded.
        if !self.cfg.gc.enabled || self.heap.try_allocate(bytes)? {
            self.director.tracker.record(self.now, bytes);
            let r = &mut self.requests[req];
            if let Some(since) = r.stall_since.take() {
                r.stalled_us += self.now - since;
            }
            let service = r.service;
            self.mutators[m].phase = MutPhase::Serving;
            return match self.sched.thread(tid)?.state {
                ThreadState::Running | ThreadState::Runnable => self.set_burst_running(tid, Some(service)),
                _ => self.sched.wake(tid, Some(service), self.now),
            };
        }
        self.mutators[m].phase = MutPhase::Stalled;
        if self.requests[req].stall_since.is_none() {
            self.requests[req].stall_since = Some(self.now);
            self.stalls += 1;
            match self.cycle.as_mut() {
                Some(c) => c.plan.stalls += 1,
                None => self.orphan_stalls += 1,
            }
        }
        self.stall_queue.push_back(m);
        self.decide_pending = true;
        self.park(tid)
    }

    fn park(&mut self, tid: ThreadId) -> Result<()> {
        match self.sched.thread(tid)?.state {
            ThreadState::Running | ThreadState::Runnable => self.sched.block(tid, ThreadState::Blocked, self.now),
            _ => Ok(()),
        }
    }

    fn on_burst_done(&mut self, tid: ThreadId, epoch: u64) -> Result<()> {
        let t = self.sched.thread(tid)?;
        if t.epoch() != epoch || t.state != ThreadState::Running {
            return Ok(());
        }
        if self.sched.remaining_burst(tid, self.now) != Some(0) {
            return Ok(());
        }
        if let Some(m) = self.mutator_of[tid.0] {
            return self.complete_request(m);
        }
        if self.cycle.as_ref().and_then(|c| c.holder) == Some(tid) {
            return self.release_lock(tid);
        }
        Err(Error::Invariant(format!("unexpected burst completion on thread {tid}")))
    }

    fn complete_request(&mut self, m: usize) -> Result<()> {
        let req = self.mutators[m].request.take().expect("serving mutator has a request");
        self.requests[req].completion = Some(self.now);
        let tid = self.mutators[m].tid;
        if !self.stw {
            if let Some(next) = self.backlog.pop_front() {
                return self.begin_request(m, next);
            }
        }
        self.mutators[m].phase = MutPhase::Idle;
        self.idle_mutators.insert(m);
        self.sched.block(tid, ThreadState::Sleeping, self.now)
    }

    // ---- collector ----

    fn director_decide(&mut self) -> Result<()> {
        if self.cycle.is_some() {
            return Ok(());
        }
        let usage = self.estimator.update(self.sched.read_cpu_stat(self.now));
        if !self.cfg.gc.enabled {
            return Ok(());
        }
        let decision = if self.stall_queue.is_empty() {
            self.director.decide(&self.heap, self.now)
        } else {
            self.director.occupancy = Some(self.heap.used);
            self.director.decide_with_ttoom(0.0)
        };
        let Decision::Start { workers, pressing } = decision else {
            return Ok(());
        };
        if let Some(hm) = self.high_monk.as_mut() {
            let reqs = high_monk_decision(hm, usage, pressing, &mut self.table, &self.workers)?;
            for (tid, p) in reqs {
                self.request_policy(tid, p, PolicyReason::Fallback);
            }
        }
        let id = self.next_cycle_id;
        self.next_cycle_id += 1;
        let mut plan = GcCycle::plan(id, workers, pressing, self.now, &self.heap, &self.cfg.gc.cycle, &mut self.rng_gc);
        plan.stalls = std::mem::take(&mut self.orphan_stalls);
        self.cycle = Some(ActiveCycle {
            plan,
            concurrent: false,
            pause: None,
            next_lock: 0,
            holder: None,
            settled: self.now,
            contributors: 0,
            progress_at: None,
            progress_epoch: 0,
        });
        self.begin_pause(Pause::Start)
    }

    fn begin_pause(&mut self, kind: Pause) -> Result<()> {
        self.stw = true;
        for m in 0..self.mutators.len() {
            let tid = self.mutators[m].tid;
            if self.mutators[m].phase == MutPhase::Serving {
                self.sched.block(tid, ThreadState::Blocked, self.now)?;
                self.mutators[m].paused = true;
            }
        }
        if self.cfg.policy.variant.safepoint_hooks {
            for i in 0..self.gc_threads.len() {
                let t = self.gc_threads[i];
                if let Some(p) = self.table.increment(t)? {
                    self.request_policy(t, p, PolicyReason::Safepoint);
                }
            }
        }
        let c = self.cycle.as_mut().expect("pause belongs to a cycle");
        c.pause = Some(kind);
        let idx = if kind == Pause::Start { 0 } else { 1 };
        let dur = c.plan.safepoint_schedule[idx].1;
        if kind == Pause::End {
            c.plan.safepoint_schedule[idx].0 = Some(self.now - c.plan.start);
        }
        self.push(self.now + dur, Event::SafepointEnd);
        Ok(())
    }

    fn end_pause(&mut self) -> Result<()> {
        let kind = self.cycle.as_ref().and_then(|c| c.pause).expect("pause in progress");
        if self.cfg.policy.variant.safepoint_hooks {
            for i in 0..self.gc_threads.len() {
                let t = self.gc_threads[i];
                if let Some(p) = self.table.decrement(t).map_err(|e| Error::Invariant(e.to_string()))? {
                    self.request_policy(t, p, PolicyReason::Safepoint);
                }
            }
        }
        self.stw = false;
        for m in 0..self.mutators.len() {
            if std::mem::take(&mut self.mutators[m].paused) {
                let tid = self.mutators[m].tid;
                let rem = self.sched.thread(tid)?.burst;
                self.sched.wake(tid, rem, self.now)?;
            }
        }
        match kind {
            Pause::Start => {
                let c = self.cycle.as_mut().expect("cycle");
                c.pause = None;
                c.concurrent = true;
                c.settled = self.now;
                c.plan.phase = Phase::Marking;
                let n = c.plan.workers;
                for i in 0..n {
                    let w = self.workers[i];
                    self.sched.wake(w, None, self.now)?;
                }
                self.feed_mutators()?;
            }
            Pause::End => {
                let c = self.cycle.take().expect("cycle");
                let reclaimed = self.heap.reclaim(c.plan.used_at_start);
                let duration = self.now - c.plan.start;
                self.director.record_cycle(CycleSample {
                    workers: c.plan.workers,
                    duration_us: duration,
                    work: c.plan.total_work,
                    used_at_start: c.plan.used_at_start,
                });
                self.cycles.push(CycleLog {
                    id: c.plan.id,
                    start: c.plan.start,
                    end: self.now,
                    workers: c.plan.workers,
                    pressing: c.plan.pressing,
                    reclaimed_bytes: reclaimed,
                    stalls: c.plan.stalls,
                });
                self.memory.push((self.now, self.heap.used));
                self.wake_stalled()?;
                self.feed_mutators()?;
                self.director_decide()?;
            }
        }
        Ok(())
    }

    fn wake_stalled(&mut self) -> Result<()> {
        let bytes = self.cfg.workload.request.alloc_bytes;
        while let Some(&m) = self.stall_queue.front() {
            if self.heap.free() < bytes {
                break;
            }
            self.stall_queue.pop_front();
            self.try_allocate(m)?;
        }
        Ok(())
    }

    /// Brings `remaining_work` up to date with the CPU the contributing
    /// workers received since the last settlement.
    fn settle_pool(&mut self) {
        let now = self.now;
        if let Some(c) = self.cycle.as_mut() {
            if c.concurrent {
                let dt = now - c.settled;
                c.plan.remaining_work = (c.plan.remaining_work - (c.contributors as u64 * dt) as f64).max(0.0);
                if c.plan.remaining_work * 2.0 < c.plan.total_work {
                    c.plan.phase = Phase::Relocating;
                }
            }
            c.settled = now;
        }
    }

    fn count_contributors(&self) -> usize {
        let Some(c) = self.cycle.as_ref() else { return 0 };
        self.workers[..c.plan.workers]
            .iter()
            .filter(|&&w| Some(w) != c.holder && self.sched.threads()[w.0].state == ThreadState::Running)
            .count()
    }

    fn schedule_progress(&mut self) {
        let contributors = self.count_contributors();
        let now = self.now;
        let Some(c) = self.cycle.as_mut() else { return };
        c.contributors = contributors;
        if !c.concurrent {
            return;
        }
        let done = c.plan.done_work();
        let mut target = c.plan.total_work;
        if c.holder.is_none() {
            if let Some(&(offset, _)) = c.plan.lock_schedule.get(c.next_lock) {
                target = target.min(offset);
            }
        }
        // Work that runs out under a held lock finishes on release instead.
        let at = if target - done <= WORK_EPS {
            c.holder.is_none().then_some(now)
        } else if contributors == 0 {
            None
        } else {
            Some(now + ((target - done) / contributors as f64).ceil() as u64)
        };
        if at != c.progress_at {
            c.progress_at = at;
            c.progress_epoch += 1;
            if let Some(t) = at {
                let epoch = c.progress_epoch;
                self.push(t, Event::CycleProgress { epoch });
            }
        }
    }

    fn advance_cycle(&mut self) -> Result<()> {
        let c = self.cycle.as_ref().expect("cycle");
        if !c.concurrent || c.holder.is_some() {
            return Ok(());
        }
        let done = c.plan.done_work();
        if let Some(&(offset, hold)) = c.plan.lock_schedule.get(c.next_lock) {
            if done + WORK_EPS >= offset {
                return self.acquire_lock(hold);
            }
        }
        if c.plan.remaining_work <= WORK_EPS {
            let c = self.cycle.as_mut().expect("cycle");
            c.concurrent = false;
            c.plan.remaining_work = 0.0;
            c.plan.phase = Phase::Done;
            let n = c.plan.workers;
            for i in 0..n {
                let w = self.workers[i];
                self.sched.block(w, ThreadState::Sleeping, self.now)?;
            }
            return self.begin_pause(Pause::End);
        }
        Ok(())
    }

    fn acquire_lock(&mut self, hold: u64) -> Result<()> {
        let c = self.cycle.as_ref().expect("cycle");
        let n = c.plan.workers;
        let start = c.next_lock % n;
        // Round-robin over the cycle's workers, preferring one that is on a core.
        let order: Vec<ThreadId> = (0..n).map(|i| self.workers[(start + i) % n]).collect();
        let holder = order
            .iter()
            .copied()
            .find(|w| self.sched.threads()[w.0].state == ThreadState::Running)
            .unwrap_or(order[0]);
        let c = self.cycle.as_mut().expect("cycle");
        c.next_lock += 1;
        c.holder = Some(holder);
        self.set_burst_running(holder, Some(hold))?;
        if self.cfg.policy.variant.lock_hooks {
            if let Some(p) = self.table.increment(holder)? {
                self.request_policy(holder, p, PolicyReason::Lock);
            }
        }
        Ok(())
    }

    fn release_lock(&mut self, holder: ThreadId) -> Result<()> {
        if self.cfg.policy.variant.lock_hooks {
            if let Some(p) = self.table.decrement(holder).map_err(|e| Error::Invariant(e.to_string()))? {
                self.request_policy(holder, p, PolicyReason::Lock);
            }
        }
        self.cycle.as_mut().expect("cycle").holder = None;
        self.set_burst_running(holder, None)?;
        let waiters = std::mem::take(&mut self.lock_waiters);
        for m in waiters {
            self.try_allocate(m)?;
        }
        self.advance_cycle()
    }

    // ---- policy ----

    /// Each issuer makes its system calls one after another, so its own
    /// requests land in order. Requests from different issuers (the worker
    /// itself for locks, the safepoint coordinator, the director) may
    /// overtake one another; the reconciler repairs the result.
    fn request_policy(&mut self, tid: ThreadId, policy: SchedPolicy, reason: PolicyReason) {
        let (lo, hi) = self.cfg.policy.apply_latency_us;
        let delay = self.rng_policy.gen_range(lo..=hi);
        let issuer = (reason, (reason == PolicyReason::Lock).then_some(tid));
        let prev = self.policy_issuers.get(&issuer).copied().unwrap_or(SimTime::ZERO);
        let at = (self.now + delay).max(prev);
        self.policy_issuers.insert(issuer, at);
        self.push(at, Event::PolicyApply { tid, policy, reason });
    }

    fn apply_policy(&mut self, tid: ThreadId, policy: SchedPolicy, reason: PolicyReason) -> Result<()> {
        self.sched.set_policy(tid, policy, self.now)?;
        self.policy_log.push(PolicyLogEntry {
            time: self.now,
            thread: tid,
            policy,
            counter: self.table.count(tid)?,
            reason,
        });
        Ok(())
    }

    fn reconcile(&mut self) -> Result<()> {
        self.reconcile_checks += 1;
        let current: Vec<(ThreadId, SchedPolicy)> = self
            .gc_threads
            .iter()
            .map(|&t| (t, self.sched.threads()[t.0].policy))
            .collect();
        for (tid, p) in self.table.reconcile(&current)? {
            self.reconcile_corrections += 1;
            self.apply_policy(tid, p, PolicyReason::Reconcile)?;
        }
        Ok(())
    }

    pub fn gc_threads(&self) -> &[ThreadId] {
        &self.gc_threads
    }
}
