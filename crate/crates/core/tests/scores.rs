use monk_core::metrics::{aggregate_critical, critical_jops, max_jops, scores, CurveStep, ResponseCurve};
use proptest::prelude::*;

const SLAS: [u64; 5] = [10, 25, 50, 75, 100];

fn step(rate: f64, served: f64, max_ms: f64) -> CurveStep {
    CurveStep {
        injection_rate: rate,
        achieved_throughput: rate * served,
        max_latency_us: (max_ms * 1000.0) as u64,
        p99_latency_us: (max_ms * 900.0) as u64,
        mean_latency_us: max_ms * 300.0,
        cpu_load: 0.0,
        stalls: 0,
    }
}

/// Random curve: equal rate increments, latency loosely rising, throughput
/// sometimes falling short.
fn curve() -> impl Strategy<Value = ResponseCurve> {
    (1usize..40, 10.0f64..5000.0)
        .prop_flat_map(|(n, pm)| {
            (
                Just(pm),
                prop::collection::vec((0.9f64..=1.0, 0.5f64..300.0, prop::bool::weighted(0.8)), n),
            )
        })
        .prop_map(|(pm, raw)| {
            let n = raw.len();
            let steps = raw
                .iter()
                .enumerate()
                .map(|(i, &(served, lat, full))| step(pm * (i + 1) as f64 / n as f64, if full { 1.0 } else { served }, lat))
                .collect();
            ResponseCurve {
                steps,
                preliminary_max: pm,
            }
        })
}

/// Straight-line scans written independently of the library.
fn scan_max(c: &ResponseCurve) -> f64 {
    let mut best = 0.0;
    for s in &c.steps {
        if s.achieved_throughput < 0.99 * s.injection_rate {
            break;
        }
        best = s.injection_rate;
    }
    best
}

fn scan_critical(c: &ResponseCurve, sla_ms: u64) -> f64 {
    let mut best = 0.0;
    for s in &c.steps {
        if s.max_latency_us <= sla_ms * 1000 && s.injection_rate > best {
            best = s.injection_rate;
        }
    }
    best
}

#[test]
fn hand_built_curve() {
    let c = ResponseCurve {
        steps: vec![
            step(100.0, 1.0, 5.0),
            step(200.0, 1.0, 12.0),
            step(300.0, 1.0, 30.0),
            step(400.0, 0.95, 8.0),
            step(500.0, 1.0, 200.0),
        ],
        preliminary_max: 500.0,
    };
    assert_eq!(max_jops(&c, 0.99), 300.0);
    assert_eq!(critical_jops(&c, 10_000), 400.0);
    let s = scores(&c, &SLAS, 0.99);
    assert_eq!(s.max_jops, 300.0);
    assert_eq!(s.critical_per_sla, vec![(10, 300.0), (25, 300.0), (50, 300.0), (75, 300.0), (100, 300.0)]);
    assert!((s.critical_aggregate - 300.0).abs() < 1e-9);
}

proptest! {
    #[test]
    fn scores_match_the_scan_oracle(c in curve()) {
        let s = scores(&c, &SLAS, 0.99);
        prop_assert_eq!(s.max_jops, scan_max(&c));
        for &(sla, v) in &s.critical_per_sla {
            prop_assert_eq!(v, scan_critical(&c, sla).min(scan_max(&c)));
        }
    }

    #[test]
    fn scoring_invariants(c in curve()) {
        let s = scores(&c, &SLAS, 0.99);
        let v: Vec<f64> = s.critical_per_sla.iter().map(|p| p.1).collect();
        prop_assert!(v.windows(2).all(|w| w[0] <= w[1]), "{v:?}");
        prop_assert!(v.iter().all(|&x| x <= s.max_jops));
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(0.0, f64::max);
        prop_assert!(s.critical_aggregate >= lo * (1.0 - 1e-12) && s.critical_aggregate <= hi * (1.0 + 1e-12));
    }

    #[test]
    fn geomean_matches_log_domain(v in prop::collection::vec(0.0f64..1e5, 1..10)) {
        let g = aggregate_critical(&v);
        if v.iter().any(|&x| x == 0.0) {
            prop_assert_eq!(g, 0.0);
        } else {
            let want = v.iter().map(|x| x.log2()).sum::<f64>() / v.len() as f64;
            prop_assert!((g.log2() - want).abs() < 1e-9);
        }
    }
}
