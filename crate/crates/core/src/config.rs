//! Scenario configuration: a versioned TOML document with defaults for
//! every field, validated with field-path diagnostics.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gc::{CycleModel, DirectorConfig};
use crate::policy::PolicyConfig;
use crate::sched::IdlePreemption;
use crate::workload::{ArrivalProcess, RequestSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub cores: usize,
    pub quantum_us: u64,
    pub idle_preemption: IdlePreemption,
    /// Length of a single `run`.
    pub horizon_us: u64,
    pub seeds: Vec<u64>,
    pub workload: WorkloadConfig,
    pub gc: GcConfig,
    pub policy: PolicyConfig,
    pub bench: BenchConfig,
    pub stats: StatsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    /// Mutator threads; defaults to the core count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
    pub request: RequestSpec,
    pub arrivals: ArrivalProcess,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcConfig {
    pub enabled: bool,
    pub heap_capacity: u64,
    pub live_fraction: f64,
    pub cycle: CycleModel,
    pub director: DirectorConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub steps: usize,
    pub settle_us: u64,
    pub window_us: u64,
    /// Fraction of the injection rate a step must sustain to count towards
    /// max-JOPS and the warm-up capacity.
    pub sustain_fraction: f64,
    pub slas_ms: Vec<u64>,
    /// Relative precision of the warm-up capacity search.
    pub warmup_tolerance: f64,
    pub fit_breakpoints: Vec<f64>,
    pub fit_degree: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    pub significance: f64,
    pub mad_filter: bool,
    pub mad_k: f64,
    /// Multiplier applied to the raw MAD before comparison (1.4826 makes it
    /// a consistent estimator of the standard deviation for normal data).
    pub mad_scale: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            cores: 8,
            quantum_us: 1_000,
            idle_preemption: IdlePreemption::Immediate,
            horizon_us: 20_000_000,
            seeds: (1..=10).collect(),
            workload: WorkloadConfig::default(),
            gc: GcConfig::default(),
            policy: PolicyConfig::default(),
            bench: BenchConfig::default(),
            stats: StatsConfig::default(),
        }
    }
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            pool_size: None,
            request: RequestSpec::default(),
            arrivals: ArrivalProcess::Poisson { rate: 1_000.0 },
        }
    }
}

impl Default for GcConfig {
    fn default() -> Self {
        GcConfig {
            enabled: true,
            heap_capacity: 2 << 30,
            live_fraction: 0.3,
            cycle: CycleModel::default(),
            director: DirectorConfig::default(),
        }
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            steps: 50,
            settle_us: 2_000_000,
            window_us: 8_000_000,
            sustain_fraction: 0.99,
            slas_ms: vec![10, 25, 50, 75, 100],
            warmup_tolerance: 0.005,
            fit_breakpoints: vec![55.0, 80.0, 93.0],
            fit_degree: 2,
        }
    }
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            significance: 0.05,
            mad_filter: false,
            mad_k: 3.0,
            mad_scale: 1.0,
        }
    }
}

fn positive<T: PartialOrd + Default>(v: T, path: &str) -> Result<()> {
    if v > T::default() {
        Ok(())
    } else {
        Err(Error::config(path, "must be positive"))
    }
}

impl ScenarioConfig {
    pub fn pool_size(&self) -> usize {
        self.workload.pool_size.unwrap_or(self.cores)
    }

    /// Parses a TOML document. Errors name the offending field.
    pub fn from_toml(text: &str) -> Result<ScenarioConfig> {
        let de = toml::Deserializer::new(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.inner().message().to_owned();
            Error::config(if path == "." { String::from("<root>") } else { path }, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        positive(self.cores, "cores")?;
        positive(self.quantum_us, "quantum_us")?;
        positive(self.horizon_us, "horizon_us")?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        positive(self.pool_size(), "workload.pool_size")?;
        self.workload.request.validate()?;
        self.workload.arrivals.validate()?;

        let gc = &self.gc;
        positive(gc.heap_capacity, "gc.heap_capacity")?;
        if !(0.0..1.0).contains(&gc.live_fraction) {
            return Err(Error::config("gc.live_fraction", "must lie in [0, 1)"));
        }
        if self.workload.request.alloc_bytes > gc.heap_capacity {
            return Err(Error::config(
                "workload.request.alloc_bytes",
                "a single allocation must fit in the heap",
            ));
        }
        if gc.cycle.work_per_live_byte < 0.0 || gc.cycle.work_overhead < 0.0 {
            return Err(Error::config("gc.cycle", "work constants must be nonnegative"));
        }
        if gc.cycle.locks_per_cycle_mean < 0.0 {
            return Err(Error::config("gc.cycle.locks_per_cycle_mean", "must be nonnegative"));
        }
        positive(gc.cycle.lock_hold_us, "gc.cycle.lock_hold_us")?;
        let d = &gc.director;
        positive(d.interval_us, "gc.director.interval_us")?;
        positive(d.bin_us, "gc.director.bin_us")?;
        if d.window_us < d.bin_us {
            return Err(Error::config("gc.director.window_us", "must be at least one bin"));
        }
        if d.k_conservative < 0.0 || d.margin < 0.0 || d.start_headroom < 0.0 {
            return Err(Error::config("gc.director", "k_conservative, margin and start_headroom must be nonnegative"));
        }
        if !(d.history_decay > 0.0 && d.history_decay <= 1.0) {
            return Err(Error::config("gc.director.history_decay", "must lie in (0, 1]"));
        }
        positive(d.history_len, "gc.director.history_len")?;
        positive(d.bootstrap_throughput, "gc.director.bootstrap_throughput")?;

        self.policy.validate(self.cores)?;

        let b = &self.bench;
        positive(b.steps, "bench.steps")?;
        positive(b.window_us, "bench.window_us")?;
        if !(b.sustain_fraction > 0.0 && b.sustain_fraction <= 1.0) {
            return Err(Error::config("bench.sustain_fraction", "must lie in (0, 1]"));
        }
        if b.slas_ms.is_empty() || b.slas_ms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("bench.slas_ms", "must be nonempty and strictly increasing"));
        }
        if b.fit_breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("bench.fit_breakpoints", "must be strictly increasing"));
        }
        positive(b.warmup_tolerance, "bench.warmup_tolerance")?;

        let s = &self.stats;
        if !(s.significance > 0.0 && s.significance < 1.0) {
            return Err(Error::config("stats.significance", "must lie in (0, 1)"));
        }
        positive(s.mad_k, "stats.mad_k")?;
        positive(s.mad_scale, "stats.mad_scale")?;
        Ok(())
    }

    /// Hex SHA-256 of the fully defaulted configuration.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Comment block that opens every emitted file: the config hash, the
    /// seed and every effective setting.
    pub fn header(&self, seed: Option<u64>) -> String {
        let mut out = String::new();
        out.push_str(&format!("# config_hash = {}\n", self.hash()));
        if let Some(s) = seed {
            out.push_str(&format!("# seed = {s}\n"));
        }
        for line in self.to_toml().lines() {
            if line.is_empty() {
                out.push_str("#\n");
            } else {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
        }
        out
    }
}
