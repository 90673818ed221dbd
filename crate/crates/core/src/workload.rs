//! Open-loop request arrivals and per-request records.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::SimTime;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RequestSpec {
    /// Mean CPU microseconds per request.
    pub service_us: u64,
    /// Service time is uniform on `mean * (1 ± jitter)`.
    pub service_jitter: f64,
    pub alloc_bytes: u64,
}

impl Default for RequestSpec {
    fn default() -> Self {
        RequestSpec {
            service_us: 5_000,
            service_jitter: 0.5,
            alloc_bytes: 1 << 20,
        }
    }
}

impl RequestSpec {
    pub fn validate(&self) -> Result<()> {
        if self.service_us == 0 {
            return Err(Error::config("workload.request.service_us", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.service_jitter) {
            return Err(Error::config("workload.request.service_jitter", "must lie in [0, 1)"));
        }
        if self.alloc_bytes == 0 {
            return Err(Error::config("workload.request.alloc_bytes", "must be positive"));
        }
        Ok(())
    }

    pub fn sample_service(&self, rng: &mut impl Rng) -> u64 {
        if self.service_jitter == 0.0 {
            return self.service_us;
        }
        let f = 1.0 + self.service_jitter * rng.gen_range(-1.0..1.0);
        ((self.service_us as f64 * f).round() as u64).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ArrivalProcess {
    Deterministic {
        rate: f64,
    },
    Poisson {
        rate: f64,
    },
    /// Poisson at `burst_rate` for the first `duty` fraction of every
    /// period and at `base_rate` for the rest.
    OnOff {
        base_rate: f64,
        burst_rate: f64,
        period_us: u64,
        duty: f64,
    },
}

impl Default for ArrivalProcess {
    fn default() -> Self {
        ArrivalProcess::Poisson { rate: 1000.0 }
    }
}

const MAX_RATE: f64 = 1e6;

impl ArrivalProcess {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64, path: &str, allow_zero: bool| {
            if !r.is_finite() || r < 0.0 || (r == 0.0 && !allow_zero) {
                Err(Error::config(path, "rate must be positive"))
            } else if r > MAX_RATE {
                Err(Error::config(path, "rate exceeds one request per microsecond"))
            } else {
                Ok(())
            }
        };
        match *self {
            ArrivalProcess::Deterministic { rate } | ArrivalProcess::Poisson { rate } => {
                rate_ok(rate, "workload.arrivals.rate", false)
            }
            ArrivalProcess::OnOff {
                base_rate,
                burst_rate,
                period_us,
                duty,
            } => {
                rate_ok(base_rate, "workload.arrivals.base_rate", true)?;
                rate_ok(burst_rate, "workload.arrivals.burst_rate", false)?;
                if period_us == 0 {
                    return Err(Error::config("workload.arrivals.period_us", "must be positive"));
                }
                if !(duty > 0.0 && duty < 1.0) {
                    return Err(Error::config("workload.arrivals.duty", "must lie in (0, 1)"));
                }
                Ok(())
            }
        }
    }

    /// Long-run mean rate in requests per second.
    pub fn mean_rate(&self) -> f64 {
        match *self {
            ArrivalProcess::Deterministic { rate } | ArrivalProcess::Poisson { rate } => rate,
            ArrivalProcess::OnOff {
                base_rate,
                burst_rate,
                duty,
                ..
            } => duty * burst_rate + (1.0 - duty) * base_rate,
        }
    }

    /// Same shape, scaled so the mean rate becomes `rate`.
    pub fn with_mean_rate(&self, rate: f64) -> ArrivalProcess {
        match *self {
            ArrivalProcess::Deterministic { .. } => ArrivalProcess::Deterministic { rate },
            ArrivalProcess::Poisson { .. } => ArrivalProcess::Poisson { rate },
            ArrivalProcess::OnOff {
                base_rate,
                burst_rate,
                period_us,
                duty,
            } => {
                let f = rate / self.mean_rate();
                ArrivalProcess::OnOff {
                    base_rate: base_rate * f,
                    burst_rate: burst_rate * f,
                    period_us,
                    duty,
                }
            }
        }
    }
}

/// Strictly increasing arrival instants in `[0, horizon)`.
pub fn generate_arrivals(process: &ArrivalProcess, horizon: SimTime, rng: &mut impl Rng) -> Result<Vec<SimTime>> {
    process.validate()?;
    let end = horizon.0;
    let mut out = Vec::new();
    match *process {
        ArrivalProcess::Deterministic { rate } => {
            let gap = 1e6 / rate;
            let mut k = 0u64;
            loop {
                let t = (k as f64 * gap).floor() as u64;
                if t >= end {
                    break;
                }
                out.push(SimTime(t));
                k += 1;
            }
        }
        ArrivalProcess::Poisson { rate } => {
            poisson_segment(rate, 0.0, end as f64, rng, &mut out);
        }
        ArrivalProcess::OnOff {
            base_rate,
            burst_rate,
            period_us,
            duty,
        } => {
            let on = (period_us as f64 * duty).round();
            let mut start = 0u64;
            while start < end {
                let s = start as f64;
                let mid = (s + on).min(end as f64);
                let stop = ((start + period_us).min(end)) as f64;
                poisson_segment(burst_rate, s, mid, rng, &mut out);
                poisson_segment(base_rate, mid, stop, rng, &mut out);
                start += period_us;
            }
        }
    }
    Ok(out)
}

/// Appends Poisson arrivals on `[from, to)`, keeping timestamps strictly
/// increasing after truncation to whole microseconds.
fn poisson_segment(rate: f64, from: f64, to: f64, rng: &mut impl Rng, out: &mut Vec<SimTime>) {
    if rate <= 0.0 || from >= to {
        return;
    }
    let exp = Exp::new(rate / 1e6).expect("positive rate");
    let mut t = from;
    loop {
        t += exp.sample(rng);
        if t >= to {
            return;
        }
        let mut us = t.floor() as u64;
        if let Some(&SimTime(prev)) = out.last() {
            if us <= prev {
                us = prev + 1;
                t = us as f64;
            }
        }
        if us as f64 >= to {
            return;
        }
        out.push(SimTime(us));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub arrival: SimTime,
    pub start: SimTime,
    pub completion: SimTime,
    pub stalled_us: u64,
}

impl RequestRecord {
    pub fn latency(&self) -> u64 {
        self.completion - self.arrival
    }
}

pub fn records_csv(records: &[RequestRecord]) -> String {
    let mut out = String::from("arrival_us,start_us,completion_us,stall_us\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.arrival.0, r.start.0, r.completion.0, r.stalled_us);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn deterministic_spacing() {
        let a = generate_arrivals(&ArrivalProcess::Deterministic { rate: 1000.0 }, SimTime::from_secs(1), &mut rng()).unwrap();
        assert_eq!(a.len(), 1000);
        assert!(a.iter().enumerate().all(|(i, t)| t.0 == i as u64 * 1000));
    }

    #[test]
    fn poisson_count_within_three_sigma() {
        let a = generate_arrivals(&ArrivalProcess::Poisson { rate: 1000.0 }, SimTime::from_secs(100), &mut rng()).unwrap();
        let sigma = 100_000f64.sqrt();
        assert!((a.len() as f64 - 100_000.0).abs() < 3.0 * sigma, "{}", a.len());
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.last().unwrap().0 < 100_000_000);
    }

    #[test]
    fn on_off_arrivals_stay_in_bursts() {
        let p = ArrivalProcess::OnOff {
            base_rate: 0.0,
            burst_rate: 2000.0,
            period_us: 100_000,
            duty: 0.5,
        };
        let a = generate_arrivals(&p, SimTime::from_secs(1), &mut rng()).unwrap();
        assert!((a.len() as f64 - 1000.0).abs() < 4.0 * 1000f64.sqrt(), "{}", a.len());
        assert!(a.iter().all(|t| t.0 % 100_000 < 50_000));
        assert_eq!(p.mean_rate(), 1000.0);
    }

    #[test]
    fn bad_rates_are_config_errors() {
        for p in [
            ArrivalProcess::Poisson { rate: 0.0 },
            ArrivalProcess::Deterministic { rate: -1.0 },
            ArrivalProcess::OnOff {
                base_rate: 0.0,
                burst_rate: 10.0,
                period_us: 1000,
                duty: 1.0,
            },
        ] {
            assert!(matches!(
                generate_arrivals(&p, SimTime::from_secs(1), &mut rng()),
                Err(Error::Config { .. })
            ));
        }
    }

    #[test]
    fn service_samples_stay_in_band() {
        let spec = RequestSpec {
            service_us: 1000,
            service_jitter: 0.5,
            alloc_bytes: 1,
        };
        let mut r = rng();
        for _ in 0..1000 {
            let s = spec.sample_service(&mut r);
            assert!((500..=1500).contains(&s));
        }
    }
}
