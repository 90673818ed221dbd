//! Response-curve steps and the throughput/latency scores derived from them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::sim::RunResult;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveStep {
    /// Requests per second offered.
    pub injection_rate: f64,
    /// Requests per second served; never above `injection_rate`.
    pub achieved_throughput: f64,
    pub max_latency_us: u64,
    pub p99_latency_us: u64,
    pub mean_latency_us: f64,
    pub cpu_load: f64,
    pub stalls: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    /// Strictly increasing in `injection_rate`.
    pub steps: Vec<CurveStep>,
    pub preliminary_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub max_jops: f64,
    /// `(sla_ms, rate)` in increasing SLA order.
    pub critical_per_sla: Vec<(u64, f64)>,
    pub critical_aggregate: f64,
}

/// Latency and throughput over the measurement window of one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowSummary {
    pub arrived: usize,
    pub completed: usize,
    pub max_latency_us: u64,
    pub p99_latency_us: u64,
    pub mean_latency_us: f64,
}

impl WindowSummary {
    /// Requests arriving in the window are included whether or not they
    /// finished; an unfinished one contributes its age at the horizon, which
    /// is a lower bound on its latency.
    pub fn from_run(r: &RunResult) -> WindowSummary {
        let mut lat: Vec<u64> = Vec::new();
        let mut completed = 0;
        for q in r.requests.iter().filter(|q| q.arrival >= r.measure_from && q.arrival < r.horizon) {
            match q.completion {
                Some(c) => {
                    completed += 1;
                    lat.push(c - q.arrival);
                }
                None => lat.push(r.horizon - q.arrival),
            }
        }
        lat.sort_unstable();
        let n = lat.len();
        WindowSummary {
            arrived: n,
            completed,
            max_latency_us: lat.last().copied().unwrap_or(0),
            p99_latency_us: if n == 0 { 0 } else { lat[(n * 99).div_ceil(100) - 1] },
            mean_latency_us: if n == 0 { 0.0 } else { lat.iter().sum::<u64>() as f64 / n as f64 },
        }
    }
}

impl CurveStep {
    /// Builds a step from a run whose injection rate was `rate`. Achieved
    /// throughput is the offered rate scaled by the completed fraction of
    /// window arrivals.
    pub fn from_run(rate: f64, r: &RunResult) -> CurveStep {
        let s = WindowSummary::from_run(r);
        let frac = if s.arrived == 0 { 1.0 } else { s.completed as f64 / s.arrived as f64 };
        CurveStep {
            injection_rate: rate,
            achieved_throughput: rate * frac,
            max_latency_us: s.max_latency_us,
            p99_latency_us: s.p99_latency_us,
            mean_latency_us: s.mean_latency_us,
            cpu_load: r.cpu_load(),
            stalls: r.window_stalls(),
        }
    }

    pub fn sustains(&self, fraction: f64) -> bool {
        self.achieved_throughput >= fraction * self.injection_rate
    }
}

/// Largest injection rate whose step met `sla_us` on max latency; 0 if none.
pub fn critical_jops(curve: &ResponseCurve, sla_us: u64) -> f64 {
    curve
        .steps
        .iter()
        .filter(|s| s.max_latency_us <= sla_us)
        .map(|s| s.injection_rate)
        .fold(0.0, f64::max)
}

/// Geometric mean; 0 if any input is 0.
pub fn aggregate_critical(per_sla: &[f64]) -> f64 {
    if per_sla.is_empty() || per_sla.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    (per_sla.iter().map(|v| v.ln()).sum::<f64>() / per_sla.len() as f64).exp()
}

/// Rate of the last step sustained at `fraction` of its offered load before
/// the first step that is not; steps past saturation never count.
pub fn max_jops(curve: &ResponseCurve, fraction: f64) -> f64 {
    curve
        .steps
        .iter()
        .take_while(|s| s.sustains(fraction))
        .map(|s| s.injection_rate)
        .fold(0.0, f64::max)
}

/// Per-SLA critical rates are capped at max-JOPS: a step that met the
/// latency bound but shed load does not count towards either score.
pub fn scores(curve: &ResponseCurve, slas_ms: &[u64], fraction: f64) -> Scores {
    let max = max_jops(curve, fraction);
    let critical_per_sla: Vec<(u64, f64)> = slas_ms
        .iter()
        .map(|&sla| (sla, critical_jops(curve, sla * 1000).min(max)))
        .collect();
    let rates: Vec<f64> = critical_per_sla.iter().map(|&(_, r)| r).collect();
    Scores {
        max_jops: max,
        critical_aggregate: aggregate_critical(&rates),
        critical_per_sla,
    }
}

pub const CURVE_CSV_HEADER: &str = "rate,throughput,max_us,p99_us,mean_us,cpu_pct,stalls";

pub fn curve_csv(curve: &ResponseCurve) -> String {
    let mut out = String::from(CURVE_CSV_HEADER);
    out.push('\n');
    for s in &curve.steps {
        let _ = writeln!(
            out,
            "{:.3},{:.3},{},{},{:.1},{:.3},{}",
            s.injection_rate, s.achieved_throughput, s.max_latency_us, s.p99_latency_us, s.mean_latency_us, s.cpu_load, s.stalls
        );
    }
    out
}

pub fn scores_text(s: &Scores) -> String {
    let mut out = format!("max_jops = {:.3}\n", s.max_jops);
    for (sla, r) in &s.critical_per_sla {
        let _ = writeln!(out, "critical_jops_{sla}ms = {r:.3}");
    }
    let _ = writeln!(out, "critical_jops_geomean = {:.3}", s.critical_aggregate);
    out
}
