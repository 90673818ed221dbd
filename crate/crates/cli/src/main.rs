use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use monk_core::experiment::{self, Artifact};
use monk_core::fit::{fit_piecewise, report};
use monk_core::policy::{FallbackMode, PolicyVariant};
use monk_core::{Error, ScenarioConfig};

/// Discrete-event model of GC worker priority demotion under load.
#[derive(Parser)]
#[command(name = "monk-sim", version)]
struct Cli {
    /// Directory for emitted files.
    #[arg(long, global = true, env = "MONK_SIM_OUT", default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario TOML; defaults apply to every omitted field.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides `policy.variant`.
    #[arg(long)]
    variant: Option<PolicyVariant>,
    /// Overrides `policy.fallback_mode` (every-other-cycle or while-critical).
    #[arg(long, value_parser = parse_mode)]
    fallback_mode: Option<FallbackMode>,
    /// Rescales the arrival process to this mean rate (requests per second).
    #[arg(long)]
    rate: Option<f64>,
    /// Overrides `bench.steps`.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one seed over the configured horizon.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the scheduler trace.
        #[arg(long)]
        trace: bool,
    },
    /// Warm up, then build a response curve.
    Curve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Skip the warm-up search and use this capacity.
        #[arg(long)]
        preliminary_max: Option<f64>,
    },
    /// Score candidates against a baseline over several seeds.
    Compare {
        #[command(flatten)]
        baseline: ScenarioArgs,
        /// Candidate as NAME=CONFIG_PATH, or a bare variant name applied to
        /// the baseline scenario. Repeatable.
        #[arg(long = "candidate", required = true)]
        candidates: Vec<String>,
        /// Seeds per configuration; defaults to the baseline seed list.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Piecewise least-squares fit of max latency against CPU load.
    Fit {
        /// Curve CSV as written by `curve`.
        curve: PathBuf,
        /// Comma-separated load breakpoints in percent.
        #[arg(long, value_delimiter = ',', default_values_t = vec![55.0, 80.0, 93.0])]
        breakpoints: Vec<f64>,
        #[arg(long, default_value_t = 2)]
        degree: usize,
    },
    /// Find arrival rates that produce the given mean CPU loads.
    Calibrate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated target loads in percent.
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<f64>,
        /// Number of seeds averaged per probe, taken from the config.
        #[arg(long, default_value_t = 2)]
        seeds: usize,
    },
}

fn parse_mode(s: &str) -> Result<FallbackMode, String> {
    match s {
        "every-other-cycle" => Ok(FallbackMode::EveryOtherCycle),
        "while-critical" => Ok(FallbackMode::WhileCritical),
        _ => Err(format!("unknown fallback mode `{s}`")),
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ScenarioConfig> {
    match path {
        None => Ok(ScenarioConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(ScenarioConfig::from_toml(&text)?)
        }
    }
}

impl ScenarioArgs {
    fn load(&self) -> anyhow::Result<ScenarioConfig> {
        let mut c = load_config(self.config.as_deref())?;
        if let Some(v) = self.variant {
            c.policy.variant = v;
        }
        if let Some(m) = self.fallback_mode {
            c.policy.fallback_mode = m;
        }
        if let Some(r) = self.rate {
            c.workload.arrivals = c.workload.arrivals.with_mean_rate(r);
        }
        if let Some(s) = self.steps {
            c.bench.steps = s;
        }
        c.validate()?;
        Ok(c)
    }
}

fn write_all(dir: &Path, files: &[Artifact]) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for f in files {
        let p = dir.join(&f.name);
        fs::write(&p, &f.contents).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn print_named(files: &[Artifact], name: &str) {
    if let Some(f) = files.iter().find(|f| f.name == name) {
        for line in f.contents.lines().filter(|l| !l.starts_with('#')) {
            println!("{line}");
        }
    }
}

/// Reads `(cpu_pct, max latency in ms)` pairs from a curve CSV.
fn read_curve_points(path: &Path) -> anyhow::Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<&str> = lines.next().context("empty curve file")?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).with_context(|| format!("missing column `{name}`"));
    let (load, max) = (col("cpu_pct")?, col("max_us")?);
    let mut out = Vec::new();
    for (i, l) in lines.enumerate() {
        let f: Vec<&str> = l.split(',').collect();
        let get = |c: usize| -> anyhow::Result<f64> {
            f.get(c)
                .with_context(|| format!("row {}: too few fields", i + 1))?
                .parse::<f64>()
                .with_context(|| format!("row {}: bad number", i + 1))
        };
        out.push((get(load)?, get(max)? / 1000.0));
    }
    Ok(out)
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { scenario, seed, trace } => {
            let cfg = scenario.load()?;
            let files = experiment::run_artifacts(&cfg, seed, trace)?;
            write_all(&cli.out, &files)?;
            print_named(&files, "summary.txt");
        }
        Command::Curve {
            scenario,
            seed,
            preliminary_max,
        } => {
            let cfg = scenario.load()?;
            let files = experiment::curve_artifacts(&cfg, seed, preliminary_max)?;
            write_all(&cli.out, &files)?;
            print_named(&files, "scores.txt");
        }
        Command::Compare {
            baseline,
            candidates,
            runs,
        } => {
            let base = baseline.load()?;
            let mut cands = Vec::new();
            for spec in &candidates {
                let (name, cfg) = match spec.split_once('=') {
                    Some((name, path)) => {
                        let mut c = load_config(Some(Path::new(path)))?;
                        if let Some(s) = baseline.steps {
                            c.bench.steps = s;
                        }
                        (name.to_string(), c)
                    }
                    None => {
                        let mut c = base.clone();
                        c.policy.variant = spec.parse::<PolicyVariant>()?;
                        c.validate()?;
                        (spec.clone(), c)
                    }
                };
                cands.push((name, cfg));
            }
            let table = experiment::compare(&base, &cands, runs.unwrap_or(base.seeds.len()))?;
            let text = base.header(None) + &table.to_text();
            write_all(
                &cli.out,
                &[Artifact {
                    name: "comparison.txt".into(),
                    contents: text,
                }],
            )?;
            print!("{}", table.to_text());
        }
        Command::Fit {
            curve,
            breakpoints,
            degree,
        } => {
            let pts = read_curve_points(&curve)?;
            let f = fit_piecewise(&pts, &breakpoints, degree)?;
            let text = report(&f);
            write_all(
                &cli.out,
                &[Artifact {
                    name: "fit.txt".into(),
                    contents: format!("# source = {}\n# degree = {degree}\n# breakpoints = {breakpoints:?}\n{text}", curve.display()),
                }],
            )?;
            print!("{text}");
        }
        Command::Calibrate {
            scenario,
            targets,
            seeds,
        } => {
            let cfg = scenario.load()?;
            if seeds == 0 || seeds > cfg.seeds.len() {
                bail!("--seeds must lie in 1..={}", cfg.seeds.len());
            }
            let rates = experiment::calibrate(&cfg, &targets, &cfg.seeds[..seeds])?;
            let text = experiment::calibration_text(&targets, &rates);
            write_all(
                &cli.out,
                &[Artifact {
                    name: "calibration.csv".into(),
                    contents: cfg.header(None) + &text,
                }],
            )?;
            print!("{text}");
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. }) => 2,
        Some(Error::Invariant(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
