use monk_core::fit::{fit_piecewise, polyfit, sse};
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn recovers_a_cubic_exactly() {
    let truth = [0.5, -3.0, 2.0, 7.0];
    let pts: Vec<(f64, f64)> = (0..20)
        .map(|i| {
            let x = i as f64 * 0.37 - 3.0;
            (x, truth.iter().fold(0.0, |acc, c| acc * x + c))
        })
        .collect();
    let (c, e) = polyfit(&pts, 3).unwrap();
    for (got, want) in c.iter().zip(truth) {
        assert!(rel(*got, want) < 1e-9, "{c:?}");
    }
    assert!(e < 1e-18, "{e}");
}

#[test]
fn two_segment_slope_ratio_of_fourteen() {
    // Continuous at 80 %: slope 1 below, 14 above.
    let pts: Vec<(f64, f64)> = (0..=100)
        .map(|i| {
            let x = i as f64;
            (x, if x < 80.0 { x + 5.0 } else { 85.0 + 14.0 * (x - 80.0) })
        })
        .collect();
    let f = fit_piecewise(&pts, &[80.0], 1).unwrap();
    assert_eq!(f.leading_ratios.len(), 1);
    assert!((f.leading_ratios[0] - 14.0).abs() < 1e-6, "{:?}", f.leading_ratios);
    assert!(f.segments.iter().all(|s| s.sse < 1e-12));
}

#[test]
fn last_segment_includes_its_upper_edge() {
    let pts: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64 * 10.0, i as f64)).collect();
    let f = fit_piecewise(&pts, &[50.0], 1).unwrap();
    assert_eq!(f.segments[0].points + f.segments[1].points, pts.len());
    assert_eq!(f.segments[0].points, 5);
}

proptest! {
    #[test]
    fn exact_quadratics_are_recovered(
        a in -5.0f64..5.0, b in -50.0f64..50.0, c in -100.0f64..100.0,
        xs in prop::collection::btree_set(-100i32..100, 5..40),
    ) {
        let pts: Vec<(f64, f64)> = xs.iter().map(|&x| { let x = x as f64 / 4.0; (x, (a * x + b) * x + c) }).collect();
        let (coef, e) = polyfit(&pts, 2).unwrap();
        let scale = pts.iter().map(|p| p.1.abs()).fold(1.0, f64::max);
        prop_assert!(e <= 1e-16 * scale * scale * pts.len() as f64, "sse {e}");
        for (got, want) in coef.iter().zip([a, b, c]) {
            prop_assert!((got - want).abs() <= 1e-7 * scale, "{coef:?} vs {:?}", [a, b, c]);
        }
    }

    #[test]
    fn least_squares_beats_any_perturbation(
        pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 6..30),
        dc in prop::collection::vec(-0.5f64..0.5, 3),
    ) {
        let distinct: std::collections::BTreeSet<i64> = pts.iter().map(|p| (p.0 * 1e6) as i64).collect();
        prop_assume!(distinct.len() >= 3);
        let (coef, e) = polyfit(&pts, 2).unwrap();
        prop_assert!((sse(&pts, &coef) - e).abs() <= 1e-8 * e.max(1.0));
        let moved: Vec<f64> = coef.iter().zip(&dc).map(|(c, d)| c + d).collect();
        prop_assert!(sse(&pts, &moved) >= e * (1.0 - 1e-9));
    }
}
