//! Orchestration: run artifacts, response curves across seeds, multi-config
//! comparison tables and load calibration.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::bench::{build_curve, nominal_capacity, run_window, warmup};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::metrics::{curve_csv, scores, scores_text, CurveStep, ResponseCurve, Scores};
use crate::sim::{run, RunOptions, RunResult};
use crate::stats;

/// A named output file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

fn artifact(cfg: &ScenarioConfig, seed: Option<u64>, name: &str, body: String) -> Artifact {
    Artifact {
        name: name.to_string(),
        contents: cfg.header(seed) + &body,
    }
}

pub fn gc_log_csv(r: &RunResult) -> String {
    let mut out = String::from("cycle_id,start_us,end_us,workers,pressing,reclaimed_bytes,stalls_during_cycle\n");
    for c in &r.cycles {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.id, c.start.0, c.end.0, c.workers, c.pressing, c.reclaimed_bytes, c.stalls
        );
    }
    out
}

pub fn policy_log_csv(r: &RunResult) -> String {
    let mut out = String::from("time_us,thread_id,policy,counter,reason\n");
    for e in &r.policy_log {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            e.time.0,
            e.thread.0,
            e.policy.as_str(),
            e.counter,
            e.reason.as_str()
        );
    }
    out
}

pub fn memory_csv(r: &RunResult) -> String {
    let mut out = String::from("time_us,used_bytes\n");
    for (t, used) in &r.memory {
        let _ = writeln!(out, "{},{}", t.0, used);
    }
    out
}

/// Unfinished requests leave `start_us` and `completion_us` empty.
pub fn requests_csv(r: &RunResult) -> String {
    let mut out = String::from("arrival_us,start_us,completion_us,stall_us\n");
    let opt = |t: Option<crate::SimTime>| t.map(|t| t.0.to_string()).unwrap_or_default();
    for q in &r.requests {
        let _ = writeln!(out, "{},{},{},{}", q.arrival.0, opt(q.start), opt(q.completion), q.stalled_us);
    }
    out
}

pub fn run_summary(cfg: &ScenarioConfig, r: &RunResult) -> String {
    format!(
        "stalls = {}\ncycles = {}\ncpu_load_pct = {:.3}\ngc_cpu_us = {}\nreconcile_checks = {}\nreconcile_corrections = {}\nfallback_entries = {}\nfallback_exits = {}\ndispatches = {}\npriority_violations = {}\n{}",
        r.stalls,
        r.cycles.len(),
        r.cpu_load(),
        r.gc_cpu_us,
        r.reconcile_checks,
        r.reconcile_corrections,
        r.fallback_entries,
        r.fallback_exits,
        r.dispatches,
        r.priority_violations,
        scores_text(&single_step_scores(cfg, r)),
    )
}

fn single_step_curve(cfg: &ScenarioConfig, r: &RunResult) -> ResponseCurve {
    let rate = cfg.workload.arrivals.mean_rate();
    ResponseCurve {
        steps: vec![CurveStep::from_run(rate, r)],
        preliminary_max: rate,
    }
}

fn single_step_scores(cfg: &ScenarioConfig, r: &RunResult) -> Scores {
    scores(&single_step_curve(cfg, r), &cfg.bench.slas_ms, cfg.bench.sustain_fraction)
}

/// One simulation at the configured rate over the full horizon, measured
/// after the bench settle window.
pub fn run_artifacts(cfg: &ScenarioConfig, seed: u64, trace: bool) -> Result<Vec<Artifact>> {
    let opts = RunOptions {
        trace,
        measure_from: Some(crate::SimTime(cfg.bench.settle_us.min(cfg.horizon_us))),
        ..RunOptions::default()
    };
    let r = run(cfg, seed, &opts)?;
    let s = Some(seed);
    let mut out = vec![
        artifact(cfg, s, "curve.csv", curve_csv(&single_step_curve(cfg, &r))),
        artifact(cfg, s, "gc_log.csv", gc_log_csv(&r)),
        artifact(cfg, s, "policy_log.csv", policy_log_csv(&r)),
        artifact(cfg, s, "memory.csv", memory_csv(&r)),
        artifact(cfg, s, "requests.csv", requests_csv(&r)),
        artifact(cfg, s, "summary.txt", run_summary(cfg, &r)),
    ];
    if let Some(t) = &r.trace {
        out.push(artifact(cfg, s, "trace.csv", t.to_csv()));
    }
    Ok(out)
}

/// Warm-up on the first seed, then one curve per seed on the shared grid.
pub fn curves(cfg: &ScenarioConfig, preliminary_max: Option<f64>, seeds: &[u64]) -> Result<(f64, Vec<ResponseCurve>)> {
    let pm = match preliminary_max {
        Some(p) => p,
        None => warmup(cfg, *seeds.first().ok_or(Error::InsufficientData { required: 1, available: 0 })?)?,
    };
    let curves = seeds
        .par_iter()
        .map(|&s| build_curve(cfg, pm, s))
        .collect::<Result<Vec<_>>>()?;
    Ok((pm, curves))
}

pub fn curve_artifacts(cfg: &ScenarioConfig, seed: u64, preliminary_max: Option<f64>) -> Result<Vec<Artifact>> {
    let (_, mut cs) = curves(cfg, preliminary_max, &[seed])?;
    let c = cs.pop().expect("one curve");
    let s = scores(&c, &cfg.bench.slas_ms, cfg.bench.sustain_fraction);
    let mut summary = format!("preliminary_max = {:.3}\n", c.preliminary_max);
    summary.push_str(&scores_text(&s));
    Ok(vec![
        artifact(cfg, Some(seed), "curve.csv", curve_csv(&c)),
        artifact(cfg, Some(seed), "scores.txt", summary),
    ])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Marker {
    Better,
    Worse,
    NotSignificant,
}

impl Marker {
    pub fn as_str(self) -> &'static str {
        match self {
            Marker::Better => "better",
            Marker::Worse => "worse",
            Marker::NotSignificant => "not-significant",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub config: String,
    pub metric: String,
    /// Candidate mean over baseline mean.
    pub normalized: f64,
    pub p: f64,
    /// Of the candidate's values.
    pub rsd_percent: f64,
    pub marker: Marker,
    pub removed_outliers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub preliminary_max: f64,
    pub seeds: Vec<u64>,
    pub mad_filter: bool,
    pub rows: Vec<ComparisonRow>,
}

/// Per-seed metric vectors for one configuration, in `metric_names` order.
pub fn metric_values(all: &[Scores]) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for s in all {
        let mut v = vec![s.max_jops];
        v.extend(s.critical_per_sla.iter().map(|&(_, r)| r));
        v.push(s.critical_aggregate);
        if cols.is_empty() {
            cols = vec![Vec::new(); v.len()];
        }
        for (c, x) in cols.iter_mut().zip(v) {
            c.push(x);
        }
    }
    cols
}

pub fn metric_names(slas_ms: &[u64]) -> Vec<String> {
    let mut v = vec!["max_jops".to_string()];
    v.extend(slas_ms.iter().map(|s| format!("critical_{s}ms")));
    v.push("critical_geomean".to_string());
    v
}

/// Compares every candidate against the baseline on curve scores from the
/// first `runs` seeds of the baseline. All configurations share the
/// baseline's warm-up grid. Higher is better for every metric.
pub fn compare(baseline: &ScenarioConfig, candidates: &[(String, ScenarioConfig)], runs: usize) -> Result<ComparisonTable> {
    if runs < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            available: runs,
        });
    }
    let mut seeds: Vec<u64> = baseline.seeds.iter().copied().take(runs).collect();
    let mut next = seeds.iter().copied().max().unwrap_or(0) + 1;
    while seeds.len() < runs {
        seeds.push(next);
        next += 1;
    }
    let (pm, base_curves) = curves(baseline, None, &seeds)?;
    let score_all = |cfg: &ScenarioConfig, cs: &[ResponseCurve]| -> Vec<Scores> {
        cs.iter()
            .map(|c| scores(c, &cfg.bench.slas_ms, cfg.bench.sustain_fraction))
            .collect()
    };
    let names = metric_names(&baseline.bench.slas_ms);
    let base_vals = metric_values(&score_all(baseline, &base_curves));
    let st = &baseline.stats;
    let mad = st.mad_filter.then_some((st.mad_k, st.mad_scale));

    let mut configs = vec![(baseline.policy.variant.to_string() + " (baseline)", base_vals.clone())];
    for (name, cfg) in candidates {
        if cfg.bench.slas_ms != baseline.bench.slas_ms {
            return Err(Error::config("bench.slas_ms", format!("candidate `{name}` uses different SLAs")));
        }
        let (_, cs) = curves(cfg, Some(pm), &seeds)?;
        configs.push((name.clone(), metric_values(&score_all(cfg, &cs))));
    }

    let mut rows = Vec::new();
    for (name, vals) in &configs {
        for (m, metric) in names.iter().enumerate() {
            let (b, c) = (&base_vals[m], &vals[m]);
            let rep = stats::compare(b, c, mad)?;
            let (bm, cm) = (stats::mean(b), stats::mean(c));
            let normalized = if bm != 0.0 {
                cm / bm
            } else if cm == 0.0 {
                1.0
            } else {
                f64::INFINITY
            };
            let marker = if rep.p < st.significance {
                if cm > bm {
                    Marker::Better
                } else {
                    Marker::Worse
                }
            } else {
                Marker::NotSignificant
            };
            rows.push(ComparisonRow {
                config: name.clone(),
                metric: metric.clone(),
                normalized,
                p: rep.p,
                rsd_percent: rep.rsd_percent,
                marker,
                removed_outliers: rep.n_removed_outliers,
            });
        }
    }
    Ok(ComparisonTable {
        preliminary_max: pm,
        seeds,
        mad_filter: st.mad_filter,
        rows,
    })
}

impl ComparisonTable {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# preliminary_max = {:.3}\n# seeds = {:?}\n# mad_filter = {}\n",
            self.preliminary_max, self.seeds, self.mad_filter
        );
        let w = self.rows.iter().map(|r| r.config.len()).max().unwrap_or(6).max(6);
        let _ = writeln!(
            out,
            "{:<w$}  {:<16}  {:>10}  {:>10}  {:>8}  {:<15}  {:>7}",
            "config", "metric", "normalized", "p", "rsd_pct", "marker", "removed"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<w$}  {:<16}  {:>10.4}  {:>10.4}  {:>8.3}  {:<15}  {:>7}",
                r.config,
                r.metric,
                r.normalized,
                r.p,
                r.rsd_percent,
                r.marker.as_str(),
                r.removed_outliers
            );
        }
        out
    }
}

/// Mean measured CPU load at `rate` over `seeds`.
pub fn mean_load(cfg: &ScenarioConfig, rate: f64, seeds: &[u64]) -> Result<f64> {
    if rate <= 0.0 {
        return Ok(0.0);
    }
    let loads = seeds
        .par_iter()
        .map(|&s| run_window(cfg, rate, s).map(|r| r.cpu_load()))
        .collect::<Result<Vec<_>>>()?;
    Ok(stats::mean(&loads))
}

const CALIBRATE_TOLERANCE: f64 = 2.0;
const CALIBRATE_ITERATIONS: usize = 40;

/// Injection rates whose mean CPU load over `seeds` lies within two points
/// of each target percentage.
pub fn calibrate(cfg: &ScenarioConfig, targets: &[f64], seeds: &[u64]) -> Result<Vec<f64>> {
    let cap = nominal_capacity(cfg) * 1.1;
    let max_load = mean_load(cfg, cap, seeds)?;
    let mut out = Vec::with_capacity(targets.len());
    for &target in targets {
        if !(0.0..=100.0).contains(&target) {
            return Err(Error::InvalidInput(format!("target load {target} outside 0..=100")));
        }
        if target == 0.0 {
            out.push(0.0);
            continue;
        }
        if target > max_load + CALIBRATE_TOLERANCE {
            return Err(Error::UnreachableTarget {
                target,
                max_observed: max_load,
            });
        }
        let (mut lo, mut hi) = (0.0, cap);
        let mut best: Option<(f64, f64)> = None;
        for _ in 0..CALIBRATE_ITERATIONS {
            let mid = 0.5 * (lo + hi);
            let load = mean_load(cfg, mid, seeds)?;
            let err = (load - target).abs();
            if best.map_or(true, |(_, e)| err < e) {
                best = Some((mid, err));
            }
            if err <= CALIBRATE_TOLERANCE / 4.0 {
                break;
            }
            if load < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        match best {
            Some((rate, err)) if err <= CALIBRATE_TOLERANCE => out.push(rate),
            _ => {
                return Err(Error::UnreachableTarget {
                    target,
                    max_observed: max_load,
                })
            }
        }
    }
    Ok(out)
}

pub fn calibration_text(targets: &[f64], rates: &[f64]) -> String {
    let mut out = String::from("target_pct,rate\n");
    for (t, r) in targets.iter().zip(rates) {
        let _ = writeln!(out, "{t},{r:.3}");
    }
    out
}
