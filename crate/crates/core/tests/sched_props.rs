use monk_core::sched::{IdlePreemption, SchedPolicy, Scheduler, ThreadId, ThreadKind, ThreadState};
use monk_core::time::SimTime;
use monk_core::trace::replay;
use proptest::prelude::*;

#[derive(Clone, Debug)]
enum Op {
    Wake(usize),
    Block(usize),
    Flip(usize),
    Advance(u64),
}

fn op(threads: usize) -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0..threads).prop_map(Op::Wake),
        2 => (0..threads).prop_map(Op::Block),
        1 => (0..threads).prop_map(Op::Flip),
        3 => (1u64..3_000).prop_map(Op::Advance),
    ]
}

fn scenario() -> impl Strategy<Value = (usize, Vec<bool>, Vec<Op>)> {
    (1usize..6, 1usize..12).prop_flat_map(|(cores, threads)| {
        (
            Just(cores),
            prop::collection::vec(any::<bool>(), threads),
            prop::collection::vec(op(threads), 1..200),
        )
    })
}

fn policy(idle: bool) -> SchedPolicy {
    if idle {
        SchedPolicy::Idle
    } else {
        SchedPolicy::Normal
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dispatch_invariants_hold_under_random_operations((cores, idle, ops) in scenario()) {
        let mut s = Scheduler::new(cores, 1_000, IdlePreemption::Immediate);
        s.enable_trace();
        let ids: Vec<ThreadId> = idle.iter().map(|&i| s.add_thread(ThreadKind::Mutator, policy(i))).collect();
        let mut now = SimTime::ZERO;
        for o in ops {
            match o {
                Op::Wake(i) => {
                    let st = s.threads()[ids[i].0].state;
                    if matches!(st, ThreadState::Blocked | ThreadState::Sleeping) {
                        s.wake(ids[i], None, now).unwrap();
                    }
                }
                Op::Block(i) => s.block(ids[i], ThreadState::Blocked, now).unwrap(),
                Op::Flip(i) => {
                    let p = s.threads()[ids[i].0].policy;
                    s.set_policy(ids[i], policy(p == SchedPolicy::Normal), now).unwrap();
                }
                Op::Advance(dt) => now = now + dt,
            }
            s.dispatch(now);

            prop_assert!(!s.has_priority_violation());
            // Work conservation: nobody waits while a core is free.
            let free = s.cores().iter().filter(|c| c.occupant.is_none()).count();
            prop_assert!(free == 0 || s.waiting_len() == 0);
            // Every running thread is on exactly one core.
            let mut seen = std::collections::BTreeSet::new();
            for c in s.cores() {
                if let Some(t) = c.occupant {
                    prop_assert!(seen.insert(t));
                    prop_assert_eq!(s.threads()[t.0].state, ThreadState::Running);
                    prop_assert_eq!(s.threads()[t.0].core(), Some(c.id));
                }
            }
            // CPU time is conserved.
            let stat = s.read_cpu_stat(now);
            prop_assert_eq!(stat.sum(), cores as u64 * now.0);
            let per_thread: u64 = ids.iter().map(|&t| s.cpu_time(t, now)).sum();
            prop_assert_eq!(per_thread, stat.busy());
        }
        prop_assert_eq!(s.priority_violations(), 0);

        let trace = s.take_trace().unwrap();
        let rep = replay(&trace, cores, now);
        prop_assert!(rep.malformed.is_empty(), "{:?}", rep.malformed);
        prop_assert_eq!(rep.priority_violations, 0);
        prop_assert_eq!(rep.cpu, s.read_cpu_stat(now));
    }

    #[test]
    fn equal_threads_share_a_core_fairly(n in 2usize..6, quanta in 20u64..200) {
        let q = 1_000;
        let mut s = Scheduler::new(1, q, IdlePreemption::Immediate);
        let ids: Vec<ThreadId> = (0..n).map(|_| s.add_thread(ThreadKind::Mutator, SchedPolicy::Normal)).collect();
        for &t in &ids {
            s.wake(t, None, SimTime::ZERO).unwrap();
        }
        let mut now = SimTime::ZERO;
        s.dispatch(now);
        for _ in 0..quanta {
            now = now + q;
            s.dispatch(now);
        }
        let times: Vec<u64> = ids.iter().map(|&t| s.cpu_time(t, now)).collect();
        let (lo, hi) = (*times.iter().min().unwrap(), *times.iter().max().unwrap());
        prop_assert!(hi - lo <= q, "{times:?}");
    }

    #[test]
    fn idle_threads_only_get_leftover_capacity(cores in 1usize..5, normals in 1usize..8, idles in 1usize..4, steps in 10u64..100) {
        let mut s = Scheduler::new(cores, 1_000, IdlePreemption::Immediate);
        let n: Vec<ThreadId> = (0..normals).map(|_| s.add_thread(ThreadKind::Mutator, SchedPolicy::Normal)).collect();
        let i: Vec<ThreadId> = (0..idles).map(|_| s.add_thread(ThreadKind::GcWorker, SchedPolicy::Idle)).collect();
        for &t in n.iter().chain(&i) {
            s.wake(t, None, SimTime::ZERO).unwrap();
        }
        let mut now = SimTime::ZERO;
        s.dispatch(now);
        for _ in 0..steps {
            now = now + 1_000;
            s.dispatch(now);
        }
        let idle_time: u64 = i.iter().map(|&t| s.cpu_time(t, now)).sum();
        let spare = cores.saturating_sub(normals) as u64;
        prop_assert_eq!(idle_time, spare.min(idles as u64) * now.0);
    }
}
