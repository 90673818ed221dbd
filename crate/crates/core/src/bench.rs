//! Warm-up capacity search and response-curve construction. Every probe and
//! every curve step is an independent simulation with its own settle and
//! measurement windows.

use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::metrics::{CurveStep, ResponseCurve};
use crate::sim::{run, RunOptions, RunResult};
use crate::time::SimTime;

/// Scenario with its arrival process rescaled to `rate` requests per second.
pub fn at_rate(cfg: &ScenarioConfig, rate: f64) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.workload.arrivals = cfg.workload.arrivals.with_mean_rate(rate);
    c
}

/// One settle-plus-window simulation at `rate`.
pub fn run_window(cfg: &ScenarioConfig, rate: f64, seed: u64) -> Result<RunResult> {
    let b = &cfg.bench;
    let opts = RunOptions {
        horizon: Some(SimTime(b.settle_us + b.window_us)),
        measure_from: Some(SimTime(b.settle_us)),
        ..RunOptions::default()
    };
    run(&at_rate(cfg, rate), seed, &opts)
}

pub fn run_step(cfg: &ScenarioConfig, rate: f64, seed: u64) -> Result<CurveStep> {
    Ok(CurveStep::from_run(rate, &run_window(cfg, rate, seed)?))
}

/// Mutator-side capacity in requests per second, ignoring GC.
pub fn nominal_capacity(cfg: &ScenarioConfig) -> f64 {
    cfg.cores.min(cfg.pool_size()) as f64 * 1e6 / cfg.workload.request.service_us as f64
}

/// Largest rate sustained at `bench.sustain_fraction`, found by bisection to
/// a relative precision of `bench.warmup_tolerance`.
pub fn warmup(cfg: &ScenarioConfig, seed: u64) -> Result<f64> {
    let frac = cfg.bench.sustain_fraction;
    let tol = cfg.bench.warmup_tolerance;
    let cap = nominal_capacity(cfg);
    let sustains = |rate: f64| -> Result<bool> { Ok(run_step(cfg, rate, seed)?.sustains(frac)) };

    let mut lo = cap * tol;
    if !sustains(lo)? {
        return Err(Error::config(
            "workload",
            format!("the scenario saturates below {lo:.3} req/s"),
        ));
    }
    let mut hi = cap * 1.1;
    if sustains(hi)? {
        return Ok(hi);
    }
    while hi - lo > tol * lo {
        let mid = 0.5 * (lo + hi);
        if sustains(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Injection rates of a curve: `steps` equal increments up to `preliminary_max`.
pub fn step_rates(preliminary_max: f64, steps: usize) -> Vec<f64> {
    (1..=steps).map(|i| preliminary_max * i as f64 / steps as f64).collect()
}

pub fn build_curve(cfg: &ScenarioConfig, preliminary_max: f64, seed: u64) -> Result<ResponseCurve> {
    if !(preliminary_max > 0.0) {
        return Err(Error::InvalidInput("preliminary maximum must be positive".into()));
    }
    let steps = step_rates(preliminary_max, cfg.bench.steps)
        .into_par_iter()
        .map(|r| run_step(cfg, r, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(ResponseCurve {
        steps,
        preliminary_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::ArrivalProcess;

    fn single_core() -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.cores = 1;
        c.gc.enabled = false;
        c.workload.request.service_us = 1000;
        c.workload.request.service_jitter = 0.0;
        c.workload.arrivals = ArrivalProcess::Deterministic { rate: 1.0 };
        c.bench.settle_us = 500_000;
        c.bench.window_us = 2_000_000;
        c
    }

    #[test]
    fn single_core_capacity() {
        let pm = warmup(&single_core(), 1).unwrap();
        assert!((pm - 1000.0).abs() <= 20.0, "{pm}");
    }

    #[test]
    fn step_rates_are_equal_increments() {
        assert_eq!(step_rates(100.0, 4), vec![25.0, 50.0, 75.0, 100.0]);
    }
}
