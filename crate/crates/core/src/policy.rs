//! GC thread priority management: criticality counters, hook bookkeeping,
//! CPU utilization estimation and the high-load fallback.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sched::{CpuStat, SchedPolicy, ThreadId};

pub const MAX_THREADS: usize = 100;

/// Which hooks a configuration enables.
///
/// Names follow the pattern `VANILLA` or `[H]MONK[_L][_S][_C<n>]`, where `H`
/// (fallback) requires a `_C<n>` headroom suffix with `n` in `0..=4`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PolicyVariant {
    /// GC threads default to IDLE.
    pub monk: bool,
    pub lock_hooks: bool,
    pub safepoint_hooks: bool,
    /// Fallback headroom in cores.
    pub headroom: Option<usize>,
}

impl PolicyVariant {
    pub const VANILLA: PolicyVariant = PolicyVariant {
        monk: false,
        lock_hooks: false,
        safepoint_hooks: false,
        headroom: None,
    };
    pub const MONK: PolicyVariant = PolicyVariant {
        monk: true,
        lock_hooks: false,
        safepoint_hooks: false,
        headroom: None,
    };

    pub fn hmonk(n: usize) -> PolicyVariant {
        PolicyVariant {
            headroom: Some(n),
            ..PolicyVariant::MONK
        }
    }

    pub fn with_safepoints(self) -> PolicyVariant {
        PolicyVariant {
            safepoint_hooks: true,
            ..self
        }
    }

    pub fn with_locks(self) -> PolicyVariant {
        PolicyVariant {
            lock_hooks: true,
            ..self
        }
    }
}

impl fmt::Display for PolicyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.monk {
            return f.write_str("VANILLA");
        }
        if self.headroom.is_some() {
            f.write_str("H")?;
        }
        f.write_str("MONK")?;
        if self.lock_hooks {
            f.write_str("_L")?;
        }
        if self.safepoint_hooks {
            f.write_str("_S")?;
        }
        if let Some(n) = self.headroom {
            write!(f, "_C{n}")?;
        }
        Ok(())
    }
}

impl FromStr for PolicyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("policy.variant", format!("unrecognised variant `{s}`"));
        if s == "VANILLA" {
            return Ok(PolicyVariant::VANILLA);
        }
        let (high, rest) = match s.strip_prefix('H') {
            Some(r) => (true, r),
            None => (false, s),
        };
        let mut parts = rest.split('_');
        if parts.next() != Some("MONK") {
            return Err(bad());
        }
        let mut v = PolicyVariant::MONK;
        for p in parts {
            match p {
                "L" if !v.lock_hooks && !v.safepoint_hooks && v.headroom.is_none() => v.lock_hooks = true,
                "S" if !v.safepoint_hooks && v.headroom.is_none() => v.safepoint_hooks = true,
                c if c.starts_with('C') && high && v.headroom.is_none() => {
                    let n: usize = c[1..].parse().map_err(|_| bad())?;
                    if n > 4 {
                        return Err(Error::config("policy.variant", format!("headroom {n} outside 0..=4")));
                    }
                    v.headroom = Some(n);
                }
                _ => return Err(bad()),
            }
        }
        if high != v.headroom.is_some() {
            return Err(bad());
        }
        Ok(v)
    }
}

impl Serialize for PolicyVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PolicyVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(|e: Error| serde::de::Error::custom(e))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackMode {
    /// Promote on one start decision, demote unconditionally on the next.
    #[default]
    EveryOtherCycle,
    /// Stay promoted until the trigger no longer holds at a start decision.
    WhileCritical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub variant: PolicyVariant,
    pub reconcile_interval_us: u64,
    pub fallback_mode: FallbackMode,
    pub decay_alpha: f64,
    /// Count available cores in whole cores: the fallback fires once fewer
    /// than `headroom + 1` cores' worth of capacity is idle. Without it a
    /// zero-core headroom can never trigger.
    pub whole_core_threshold: bool,
    /// Delay between a hook requesting a policy change and the change taking
    /// effect, drawn uniformly from this inclusive range.
    pub apply_latency_us: (u64, u64),
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            variant: PolicyVariant::VANILLA,
            reconcile_interval_us: 10_000,
            fallback_mode: FallbackMode::EveryOtherCycle,
            decay_alpha: 0.5,
            whole_core_threshold: true,
            apply_latency_us: (1, 20),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self, cores: usize) -> Result<()> {
        if self.reconcile_interval_us == 0 {
            return Err(Error::config("policy.reconcile_interval_us", "must be positive"));
        }
        if !(self.decay_alpha > 0.0 && self.decay_alpha <= 1.0) {
            return Err(Error::config("policy.decay_alpha", "must lie in (0, 1]"));
        }
        if self.apply_latency_us.0 > self.apply_latency_us.1 {
            return Err(Error::config("policy.apply_latency_us", "lower bound exceeds upper bound"));
        }
        if let Some(n) = self.variant.headroom {
            threshold_from_headroom(cores, n).map_err(|_| {
                Error::config("policy.variant", format!("headroom {n} must be below core count {cores}"))
            })?;
        }
        Ok(())
    }

    /// Policy GC threads hold when no counter is raised.
    pub fn resting_policy(&self) -> SchedPolicy {
        if self.variant.monk {
            SchedPolicy::Idle
        } else {
            SchedPolicy::Normal
        }
    }
}

/// Per-thread nesting counters. A thread is critical while its count is
/// positive.
#[derive(Clone, Debug)]
pub struct CriticalityTable {
    counts: [u32; MAX_THREADS],
    owner: [Option<ThreadId>; MAX_THREADS],
}

impl CriticalityTable {
    /// Registers the GC threads. Fails if two of them map to the same slot.
    pub fn new(gc_threads: &[ThreadId]) -> Result<CriticalityTable> {
        let mut owner = [None; MAX_THREADS];
        for &t in gc_threads {
            let i = Self::index_of(t);
            match owner[i] {
                Some(first) if first != t => {
                    return Err(Error::IndexCollision {
                        index: i,
                        first,
                        second: t,
                    })
                }
                _ => owner[i] = Some(t),
            }
        }
        Ok(CriticalityTable {
            counts: [0; MAX_THREADS],
            owner,
        })
    }

    pub fn index_of(t: ThreadId) -> usize {
        t.0 % MAX_THREADS
    }

    fn slot(&self, t: ThreadId) -> Result<usize> {
        let i = Self::index_of(t);
        if self.owner[i] == Some(t) {
            Ok(i)
        } else {
            Err(Error::NotGcThread(t))
        }
    }

    pub fn count(&self, t: ThreadId) -> Result<u32> {
        Ok(self.counts[self.slot(t)?])
    }

    /// Raises the counter. Returns the policy to request when the thread
    /// just became critical.
    pub fn increment(&mut self, t: ThreadId) -> Result<Option<SchedPolicy>> {
        let i = self.slot(t)?;
        let was_zero = self.counts[i] == 0;
        self.counts[i] += 1;
        Ok(was_zero.then_some(SchedPolicy::Normal))
    }

    /// Lowers the counter. Returns the policy to request when the thread
    /// just stopped being critical.
    pub fn decrement(&mut self, t: ThreadId) -> Result<Option<SchedPolicy>> {
        let i = self.slot(t)?;
        if self.counts[i] == 0 {
            return Err(Error::CounterUnderflow(t));
        }
        self.counts[i] -= 1;
        Ok((self.counts[i] == 0).then_some(SchedPolicy::Idle))
    }

    pub fn expected_policy(&self, t: ThreadId) -> Result<SchedPolicy> {
        Ok(if self.count(t)? > 0 {
            SchedPolicy::Normal
        } else {
            SchedPolicy::Idle
        })
    }

    pub fn all_zero(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    /// Corrections needed so that each thread's policy matches its counter.
    pub fn reconcile(&self, current: &[(ThreadId, SchedPolicy)]) -> Result<Vec<(ThreadId, SchedPolicy)>> {
        let mut out = Vec::new();
        for &(t, p) in current {
            let want = self.expected_policy(t)?;
            if p != want {
                out.push((t, want));
            }
        }
        Ok(out)
    }
}

/// Busy percentage over the interval between two counter snapshots.
/// `None` when no time elapsed.
pub fn cpu_usage_from_stat(prev: &CpuStat, cur: &CpuStat) -> Option<f64> {
    let cpu_sum = cur.user + cur.nice + cur.system + cur.idle;
    let prev_sum = prev.user + prev.nice + prev.system + prev.idle;
    let cpu_delta = cpu_sum - prev_sum;
    if cpu_delta == 0 {
        return None;
    }
    let idle_delta = cur.idle - prev.idle;
    let cpu_used = cpu_delta - idle_delta;
    Some(100.0 * cpu_used as f64 / cpu_delta as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CpuUsageEstimator {
    pub last: CpuStat,
    pub smoothed: f64,
    pub alpha: f64,
}

impl CpuUsageEstimator {
    pub fn new(alpha: f64) -> CpuUsageEstimator {
        CpuUsageEstimator {
            last: CpuStat::default(),
            smoothed: 0.0,
            alpha,
        }
    }

    pub fn decayed(&mut self, sample: f64) -> f64 {
        self.smoothed = self.alpha * sample + (1.0 - self.alpha) * self.smoothed;
        self.smoothed
    }

    /// Folds the interval since the previous snapshot into the average.
    pub fn update(&mut self, cur: CpuStat) -> f64 {
        if let Some(sample) = cpu_usage_from_stat(&self.last, &cur) {
            self.decayed(sample);
        }
        self.last = cur;
        self.smoothed
    }
}

/// Utilization above which only `n` of `cores` cores remain free.
pub fn threshold_from_headroom(cores: usize, n: usize) -> Result<f64> {
    if n >= cores {
        return Err(Error::config(
            "policy.variant",
            format!("headroom {n} must be below core count {cores}"),
        ));
    }
    Ok(100.0 * (cores - n) as f64 / cores as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FallbackAction {
    None,
    /// Raise every GC worker's counter.
    Enter,
    /// Lower every GC worker's counter.
    Exit,
}

/// The fallback state machine, consulted whenever the director decides to
/// start a cycle.
#[derive(Clone, Debug)]
pub struct HighMonk {
    pub mode: FallbackMode,
    pub threshold: f64,
    /// Value `usage` has to exceed.
    pub trigger: f64,
    pub inside: bool,
    pub entries: u64,
    pub exits: u64,
}

impl HighMonk {
    pub fn new(cores: usize, headroom: usize, mode: FallbackMode, whole_core: bool) -> Result<HighMonk> {
        let threshold = threshold_from_headroom(cores, headroom)?;
        let trigger = if whole_core {
            threshold - 100.0 / cores as f64
        } else {
            threshold
        };
        Ok(HighMonk {
            mode,
            threshold,
            trigger,
            inside: false,
            entries: 0,
            exits: 0,
        })
    }

    pub fn decide(&mut self, usage: f64, pressing: bool) -> FallbackAction {
        let critical = usage > self.trigger && pressing;
        let action = match (self.mode, self.inside) {
            (FallbackMode::EveryOtherCycle, true) => FallbackAction::Exit,
            (FallbackMode::WhileCritical, true) if !critical => FallbackAction::Exit,
            (_, false) if critical => FallbackAction::Enter,
            _ => FallbackAction::None,
        };
        match action {
            FallbackAction::Enter => {
                self.inside = true;
                self.entries += 1;
            }
            FallbackAction::Exit => {
                self.inside = false;
                self.exits += 1;
            }
            FallbackAction::None => {}
        }
        action
    }
}

/// Applies a fallback decision to the counters of `workers`, returning the
/// policy changes to request.
pub fn high_monk_decision(
    hm: &mut HighMonk,
    usage: f64,
    pressing: bool,
    table: &mut CriticalityTable,
    workers: &[ThreadId],
) -> Result<Vec<(ThreadId, SchedPolicy)>> {
    let mut out = Vec::new();
    match hm.decide(usage, pressing) {
        FallbackAction::Enter => {
            for &w in workers {
                if let Some(p) = table.increment(w)? {
                    out.push((w, p));
                }
            }
        }
        FallbackAction::Exit => {
            for &w in workers {
                if let Some(p) = table.decrement(w)? {
                    out.push((w, p));
                }
            }
        }
        FallbackAction::None => {}
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<ThreadId> {
        (0..n).map(ThreadId).collect()
    }

    #[test]
    fn variant_names_round_trip() {
        for name in ["VANILLA", "MONK", "MONK_S", "MONK_L", "MONK_L_S", "HMONK_C0", "HMONK_S_C4", "HMONK_L_S_C2"] {
            let v: PolicyVariant = name.parse().unwrap();
            assert_eq!(v.to_string(), name);
        }
        for bad in ["", "monk", "HMONK", "MONK_C1", "HMONK_C5", "MONK_S_L", "VANILLA_S", "MONK_X"] {
            assert!(bad.parse::<PolicyVariant>().is_err(), "{bad}");
        }
    }

    #[test]
    fn first_increment_promotes_and_last_decrement_demotes() {
        let t = ThreadId(3);
        let mut tab = CriticalityTable::new(&[t]).unwrap();
        assert_eq!(tab.increment(t).unwrap(), Some(SchedPolicy::Normal));
        assert_eq!(tab.increment(t).unwrap(), None);
        assert_eq!(tab.increment(t).unwrap(), None);
        assert_eq!(tab.increment(t).unwrap(), None);
        assert_eq!(tab.count(t).unwrap(), 4);
        for _ in 0..3 {
            assert_eq!(tab.decrement(t).unwrap(), None);
        }
        assert_eq!(tab.decrement(t).unwrap(), Some(SchedPolicy::Idle));
        assert_eq!(tab.decrement(t), Err(Error::CounterUnderflow(t)));
    }

    #[test]
    fn non_gc_threads_are_rejected() {
        let mut tab = CriticalityTable::new(&ids(2)).unwrap();
        assert_eq!(tab.increment(ThreadId(5)), Err(Error::NotGcThread(ThreadId(5))));
    }

    #[test]
    fn slot_collision_is_detected() {
        let err = CriticalityTable::new(&[ThreadId(1), ThreadId(101)]).unwrap_err();
        assert!(matches!(err, Error::IndexCollision { index: 1, .. }));
    }

    #[test]
    fn two_overlapping_regions_every_interleaving() {
        // Events: a+, a-, b+, b- with each region's begin before its end.
        let orders = [
            "AaBb", "ABab", "ABba", "BbAa", "BAba", "BAab",
        ];
        for order in orders {
            let t = ThreadId(0);
            let mut tab = CriticalityTable::new(&[t]).unwrap();
            let mut policy = SchedPolicy::Idle;
            for ch in order.chars() {
                let req = if ch.is_uppercase() {
                    tab.increment(t).unwrap()
                } else {
                    tab.decrement(t).unwrap()
                };
                if let Some(p) = req {
                    policy = p;
                }
                assert_eq!(policy == SchedPolicy::Normal, tab.count(t).unwrap() > 0, "{order}");
            }
            assert_eq!(tab.count(t).unwrap(), 0);
            assert_eq!(policy, SchedPolicy::Idle);
        }
    }

    #[test]
    fn reconcile_finds_mismatches() {
        let t = ids(3);
        let mut tab = CriticalityTable::new(&t).unwrap();
        let cur = [(t[0], SchedPolicy::Idle), (t[1], SchedPolicy::Idle), (t[2], SchedPolicy::Idle)];
        assert!(tab.reconcile(&cur).unwrap().is_empty());
        tab.increment(t[1]).unwrap();
        let cur = [(t[0], SchedPolicy::Normal), (t[1], SchedPolicy::Idle), (t[2], SchedPolicy::Idle)];
        assert_eq!(
            tab.reconcile(&cur).unwrap(),
            vec![(t[0], SchedPolicy::Idle), (t[1], SchedPolicy::Normal)]
        );
    }

    #[test]
    fn usage_formula() {
        let z = CpuStat::default();
        let idle = CpuStat { idle: 1000, ..z };
        assert_eq!(cpu_usage_from_stat(&z, &idle), Some(0.0));
        let busy = CpuStat { user: 600, nice: 400, ..z };
        assert_eq!(cpu_usage_from_stat(&z, &busy), Some(100.0));
        let half = CpuStat { user: 100_000, idle: 100_000, ..z };
        assert_eq!(cpu_usage_from_stat(&z, &half), Some(50.0));
        assert_eq!(cpu_usage_from_stat(&half, &half), None);
    }

    #[test]
    fn decaying_average() {
        let mut e = CpuUsageEstimator::new(0.5);
        assert_eq!(e.decayed(100.0), 50.0);
        assert_eq!(e.decayed(100.0), 75.0);
        let mut e = CpuUsageEstimator::new(1.0);
        assert_eq!(e.decayed(37.0), 37.0);
        let mut e = CpuUsageEstimator::new(0.3);
        e.smoothed = 42.0;
        for _ in 0..10 {
            assert_eq!(e.decayed(42.0), 42.0);
        }
    }

    #[test]
    fn thresholds() {
        assert_eq!(threshold_from_headroom(10, 1).unwrap(), 90.0);
        assert_eq!(threshold_from_headroom(8, 0).unwrap(), 100.0);
        assert_eq!(threshold_from_headroom(32, 4).unwrap(), 87.5);
        assert!(threshold_from_headroom(4, 4).is_err());
    }

    #[test]
    fn every_other_cycle_alternates() {
        let mut hm = HighMonk::new(10, 1, FallbackMode::EveryOtherCycle, false).unwrap();
        assert_eq!(hm.decide(95.0, false), FallbackAction::None);
        assert_eq!(hm.decide(95.0, true), FallbackAction::Enter);
        assert_eq!(hm.decide(99.0, true), FallbackAction::Exit);
        assert_eq!(hm.decide(50.0, true), FallbackAction::None);
    }

    #[test]
    fn while_critical_holds_until_condition_clears() {
        let mut hm = HighMonk::new(10, 1, FallbackMode::WhileCritical, false).unwrap();
        assert_eq!(hm.decide(95.0, true), FallbackAction::Enter);
        assert_eq!(hm.decide(95.0, true), FallbackAction::None);
        assert_eq!(hm.decide(95.0, false), FallbackAction::Exit);
    }

    #[test]
    fn whole_core_trigger() {
        let hm = HighMonk::new(8, 0, FallbackMode::EveryOtherCycle, true).unwrap();
        assert_eq!(hm.threshold, 100.0);
        assert_eq!(hm.trigger, 87.5);
    }

    #[test]
    fn fallback_promotes_all_workers() {
        let w = ids(8);
        let mut tab = CriticalityTable::new(&w).unwrap();
        let mut hm = HighMonk::new(10, 1, FallbackMode::EveryOtherCycle, false).unwrap();
        let req = high_monk_decision(&mut hm, 95.0, true, &mut tab, &w).unwrap();
        assert_eq!(req.len(), 8);
        assert!(req.iter().all(|&(_, p)| p == SchedPolicy::Normal));
        assert!(hm.inside);
        let req = high_monk_decision(&mut hm, 95.0, true, &mut tab, &w).unwrap();
        assert!(req.iter().all(|&(_, p)| p == SchedPolicy::Idle));
        assert!(tab.all_zero());
    }
}
