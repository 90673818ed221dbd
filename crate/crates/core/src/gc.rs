//! Heap, allocation-rate tracking and the collector's start heuristics.
//!
//! Cycle execution itself (workers consuming work, pauses, lock holds) is
//! driven by the event loop in [`crate::sim`]; this module holds the pieces
//! that are pure functions of recorded history.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::SimTime;

/// Upper bound on concurrent GC workers for a machine with `cores` cores.
pub fn max_workers(cores: usize) -> usize {
    assert!(cores >= 1);
    cores.div_ceil(4)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heap {
    pub capacity: u64,
    pub used: u64,
    pub live_fraction: f64,
}

impl Heap {
    pub fn new(capacity: u64, live_fraction: f64) -> Result<Heap> {
        if capacity == 0 {
            return Err(Error::config("gc.heap_capacity", "must be positive"));
        }
        if !(0.0..=1.0).contains(&live_fraction) {
            return Err(Error::config("gc.live_fraction", "must lie in [0, 1]"));
        }
        Ok(Heap {
            capacity,
            used: 0,
            live_fraction,
        })
    }

    pub fn free(&self) -> u64 {
        self.capacity - self.used
    }

    /// Takes `bytes` if they fit. A request larger than the whole heap can
    /// never succeed and is a configuration error.
    pub fn try_allocate(&mut self, bytes: u64) -> Result<bool> {
        if bytes > self.capacity {
            return Err(Error::config(
                "workload.alloc_bytes",
                format!("{bytes} bytes exceeds heap capacity {}", self.capacity),
            ));
        }
        if self.used + bytes <= self.capacity {
            self.used += bytes;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Bytes that survive a collection that began with `used_at_start` bytes.
    pub fn live_bytes(&self, used_at_start: u64) -> u64 {
        ((used_at_start as f64) * self.live_fraction).round() as u64
    }

    /// Frees the garbage present when the cycle began. Allocation made while
    /// the cycle ran is untouched. Returns the reclaimed byte count.
    pub fn reclaim(&mut self, used_at_start: u64) -> u64 {
        let garbage = used_at_start - self.live_bytes(used_at_start);
        debug_assert!(garbage <= self.used);
        self.used -= garbage;
        garbage
    }
}

/// Recent allocation samples, bucketed into fixed subintervals for the
/// rate predictor.
#[derive(Clone, Debug)]
pub struct AllocationTracker {
    samples: VecDeque<(SimTime, u64)>,
    window: u64,
    bin: u64,
}

impl AllocationTracker {
    pub fn new(window_us: u64, bin_us: u64) -> AllocationTracker {
        assert!(bin_us > 0 && window_us >= bin_us);
        AllocationTracker {
            samples: VecDeque::new(),
            window: window_us,
            bin: bin_us,
        }
    }

    pub fn record(&mut self, now: SimTime, bytes: u64) {
        debug_assert!(self.samples.back().is_none_or(|&(t, _)| t <= now));
        self.samples.push_back((now, bytes));
        self.evict(now);
    }

    fn evict(&mut self, now: SimTime) {
        while let Some(&(t, _)) = self.samples.front() {
            if now.0.saturating_sub(t.0) >= self.window {
                self.samples.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Bytes per second in each subinterval ending at `now`, most recent
    /// last. Only whole subintervals since time zero are used.
    pub fn bin_rates(&self, now: SimTime) -> Vec<f64> {
        let nbins = (self.window.min(now.0) / self.bin).max(1) as usize;
        let mut bins = vec![0u64; nbins];
        for &(t, bytes) in self.samples.iter().rev() {
            // Bin 0 covers (now - bin, now].
            let age = now.0 - t.0;
            let idx = if age == 0 { 0 } else { ((age - 1) / self.bin) as usize };
            if idx >= nbins {
                break;
            }
            bins[nbins - 1 - idx] += bytes;
        }
        let secs = self.bin as f64 / 1e6;
        bins.into_iter().map(|b| b as f64 / secs).collect()
    }

    /// Mean subinterval rate plus `k` population standard deviations, or
    /// `bootstrap` when nothing was allocated inside the window.
    pub fn predict_rate(&self, now: SimTime, k: f64, bootstrap: f64) -> f64 {
        if self.samples.iter().all(|&(t, _)| now.0 - t.0 >= self.window) {
            return bootstrap;
        }
        let rates = self.bin_rates(now);
        let n = rates.len() as f64;
        let mean = rates.iter().sum::<f64>() / n;
        let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        mean + k * var.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleSample {
    pub workers: usize,
    pub duration_us: u64,
    pub work: f64,
    /// Heap occupancy when the cycle began; zero when unknown.
    pub used_at_start: u64,
}

/// Director tuning constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectorConfig {
    /// Decision cadence while no cycle runs.
    pub interval_us: u64,
    pub window_us: u64,
    pub bin_us: u64,
    /// Standard deviations added to the allocation rate and to the time per
    /// unit of cycle work.
    pub k_conservative: f64,
    /// Extra fraction of predicted duration required to fit before OOM
    /// when picking a worker count.
    pub margin: f64,
    /// No cycle starts while one worker would finish this fraction of its
    /// predicted duration ahead of OOM.
    pub start_headroom: f64,
    /// Weight of the newest cycle in the decayed history means.
    pub history_decay: f64,
    pub history_len: usize,
    pub bootstrap_alloc_rate: f64,
    /// Work of the first cycle; zero or less means "a full heap's worth".
    pub bootstrap_work: f64,
    /// Work units per microsecond per worker assumed before any cycle ran.
    pub bootstrap_throughput: f64,
    /// Scale the historical work per cycle by current heap occupancy over
    /// occupancy at the sampled cycles' start. Cycle work grows with the
    /// live set, so a cycle started on a fuller heap costs more.
    pub scale_work_by_occupancy: bool,
}

impl Default for DirectorConfig {
    fn default() -> Self {
        DirectorConfig {
            interval_us: 100_000,
            window_us: 1_000_000,
            bin_us: 100_000,
            k_conservative: 1.0,
            margin: 1.0,
            start_headroom: 2.0,
            history_decay: 0.3,
            history_len: 10,
            bootstrap_alloc_rate: 0.0,
            bootstrap_work: 0.0,
            bootstrap_throughput: 1.0,
            scale_work_by_occupancy: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    NoStart,
    Start { workers: usize, pressing: bool },
}

#[derive(Clone, Debug)]
pub struct DirectorState {
    pub config: DirectorConfig,
    pub max_workers: usize,
    pub history: VecDeque<CycleSample>,
    pub tracker: AllocationTracker,
    /// Heap occupancy the next prediction is made for.
    pub occupancy: Option<u64>,
}

impl DirectorState {
    pub fn new(config: DirectorConfig, cores: usize) -> DirectorState {
        let tracker = AllocationTracker::new(config.window_us, config.bin_us);
        DirectorState {
            max_workers: max_workers(cores),
            history: VecDeque::new(),
            tracker,
            occupancy: None,
            config,
        }
    }

    pub fn record_cycle(&mut self, sample: CycleSample) {
        self.history.push_back(sample);
        while self.history.len() > self.config.history_len {
            self.history.pop_front();
        }
    }

    /// Exponentially decayed mean, newest sample weighted `decay`.
    fn decayed_mean(&self, f: impl Fn(&CycleSample) -> f64) -> Option<f64> {
        let mut it = self.history.iter();
        let mut avg = f(it.next()?);
        for s in it {
            avg = self.config.history_decay * f(s) + (1.0 - self.config.history_decay) * avg;
        }
        Some(avg)
    }

    pub fn predicted_work(&self) -> f64 {
        if let (true, Some(used)) = (self.config.scale_work_by_occupancy, self.occupancy) {
            if !self.history.is_empty() && self.history.iter().all(|s| s.used_at_start > 0) {
                let per_byte = self.decayed_mean(|s| s.work / s.used_at_start as f64).expect("nonempty");
                return per_byte * used as f64;
            }
        }
        self.decayed_mean(|s| s.work).unwrap_or(self.config.bootstrap_work)
    }

    /// Decayed mean and standard deviation of worker-microseconds per work
    /// unit, the variance updated against the new mean.
    fn time_per_work_stats(&self) -> Option<(f64, f64)> {
        let a = self.config.history_decay;
        let tpw = |s: &CycleSample| s.workers as f64 * s.duration_us.max(1) as f64 / s.work.max(f64::MIN_POSITIVE);
        let mut it = self.history.iter().filter(|s| s.work > 0.0);
        let mut avg = tpw(it.next()?);
        let mut var = 0.0;
        for s in it {
            let x = tpw(s);
            avg = a * x + (1.0 - a) * avg;
            var = a * (x - avg) * (x - avg) + (1.0 - a) * var;
        }
        Some((avg, var.sqrt()))
    }

    /// Work units per microsecond per worker, taken conservatively as the
    /// inverse of the decayed time per work unit plus `k_conservative`
    /// deviations.
    pub fn predicted_throughput(&self) -> f64 {
        match self.time_per_work_stats() {
            Some((avg, sd)) => 1.0 / (avg + self.config.k_conservative * sd),
            None => self.config.bootstrap_throughput,
        }
    }

    /// Predicted wall-clock duration in microseconds of a cycle run by `workers`.
    pub fn predict_cycle_duration(&self, workers: usize) -> f64 {
        debug_assert!(workers >= 1);
        self.predicted_work() / (workers as f64 * self.predicted_throughput())
    }

    pub fn predict_alloc_rate(&self, now: SimTime) -> f64 {
        self.tracker
            .predict_rate(now, self.config.k_conservative, self.config.bootstrap_alloc_rate)
    }

    /// Microseconds until the heap fills at the predicted allocation rate.
    pub fn time_to_oom(&self, heap: &Heap, now: SimTime) -> f64 {
        let free = heap.free() as f64;
        if free == 0.0 {
            return 0.0;
        }
        let rate = self.predict_alloc_rate(now);
        if rate <= 0.0 {
            f64::INFINITY
        } else {
            free / rate * 1e6
        }
    }

    pub fn decide(&mut self, heap: &Heap, now: SimTime) -> Decision {
        self.occupancy = Some(heap.used);
        self.decide_with_ttoom(self.time_to_oom(heap, now))
    }

    /// Start rule for a given time-to-OOM in microseconds.
    pub fn decide_with_ttoom(&self, ttoom: f64) -> Decision {
        let one = self.predict_cycle_duration(1);
        if ttoom > 0.0 && one * (1.0 + self.config.start_headroom) <= ttoom {
            return Decision::NoStart;
        }
        for w in 1..=self.max_workers {
            if self.predict_cycle_duration(w) * (1.0 + self.config.margin) <= ttoom {
                return Decision::Start {
                    workers: w,
                    pressing: w == self.max_workers,
                };
            }
        }
        Decision::Start {
            workers: self.max_workers,
            pressing: true,
        }
    }
}

/// Per-cycle pause and lock layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CycleModel {
    /// Work units per live byte.
    pub work_per_live_byte: f64,
    /// Constant work units added to every cycle.
    pub work_overhead: f64,
    /// Stop-the-world pause at cycle start and end.
    pub pause_us: u64,
    pub locks_per_cycle_mean: f64,
    /// CPU time the holder spends inside the shared lock.
    pub lock_hold_us: u64,
}

impl Default for CycleModel {
    fn default() -> Self {
        CycleModel {
            work_per_live_byte: 5e-4,
            work_overhead: 2_000.0,
            pause_us: 500,
            locks_per_cycle_mean: 5.0,
            lock_hold_us: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Marking,
    Relocating,
    Done,
}

#[derive(Clone, Debug)]
pub struct GcCycle {
    pub id: u64,
    pub workers: usize,
    pub pressing: bool,
    pub start: SimTime,
    pub used_at_start: u64,
    pub total_work: f64,
    pub remaining_work: f64,
    pub phase: Phase,
    /// Offsets from cycle start and durations of the stop-the-world pauses.
    /// The end pause offset is only known once the work is done, so it is
    /// recorded as `None` until then.
    pub safepoint_schedule: Vec<(Option<u64>, u64)>,
    /// Work-progress points (units of completed work) at which a worker
    /// takes the shared lock, with hold durations. Sorted.
    pub lock_schedule: Vec<(f64, u64)>,
    pub stalls: u64,
}

impl GcCycle {
    pub fn plan(id: u64, workers: usize, pressing: bool, now: SimTime, heap: &Heap, model: &CycleModel, rng: &mut impl Rng) -> GcCycle {
        let live = heap.live_bytes(heap.used) as f64;
        let total_work = (live * model.work_per_live_byte + model.work_overhead).max(1.0);
        let locks = if model.locks_per_cycle_mean > 0.0 {
            Poisson::new(model.locks_per_cycle_mean).map(|p| p.sample(rng) as usize).unwrap_or(0)
        } else {
            0
        };
        let mut lock_schedule: Vec<(f64, u64)> = (0..locks)
            .map(|_| (rng.gen::<f64>() * total_work, model.lock_hold_us))
            .collect();
        lock_schedule.sort_by(|a, b| a.0.total_cmp(&b.0));
        GcCycle {
            id,
            workers,
            pressing,
            start: now,
            used_at_start: heap.used,
            total_work,
            remaining_work: total_work,
            phase: Phase::Idle,
            safepoint_schedule: vec![(Some(0), model.pause_us), (None, model.pause_us)],
            lock_schedule,
            stalls: 0,
        }
    }

    pub fn done_work(&self) -> f64 {
        self.total_work - self.remaining_work
    }
}
