use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn monk_sim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_monk-sim"))
        .env("MONK_SIM_OUT", out)
        .args(args)
        .output()
        .expect("spawn monk-sim")
}

fn short_config(dir: &Path) -> String {
    let p = dir.join("short.toml");
    fs::write(
        &p,
        "cores = 4\nhorizon_us = 2000000\nseeds = [1, 2, 3]\n\n[workload.arrivals]\nkind = \"poisson\"\nrate = 400.0\n\n[bench]\nsteps = 6\nsettle_us = 300000\nwindow_us = 700000\n",
    )
    .unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let cfg = short_config(a.path());
    for d in [&a, &b] {
        let o = monk_sim(d.path(), &["run", "-c", &cfg, "--variant", "HMONK_L_S_C1", "--seed", "5", "--trace"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["curve.csv", "gc_log.csv", "policy_log.csv", "memory.csv", "requests.csv", "summary.txt", "trace.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    let head = fs::read_to_string(a.path().join("gc_log.csv")).unwrap();
    assert!(head.starts_with("# config_hash = "), "{head}");
    assert!(head.contains("# seed = 5"));
    assert!(head.contains("cycle_id,start_us,end_us,workers,pressing,reclaimed_bytes,stalls_during_cycle"));
}

#[test]
fn malformed_config_exits_with_code_two_and_names_the_field() {
    let d = TempDir::new().unwrap();
    let p = d.path().join("bad.toml");
    fs::write(&p, "cores = 4\n[gc]\nlive_fraction = 1.5\n").unwrap();
    let o = monk_sim(d.path(), &["run", "-c", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gc.live_fraction"), "{}", String::from_utf8_lossy(&o.stderr));

    fs::write(&p, "[workload.request]\nservice_us = \"slow\"\n").unwrap();
    let o = monk_sim(d.path(), &["run", "-c", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("workload.request.service_us"));
}

#[test]
fn unknown_variant_is_a_usage_error() {
    let d = TempDir::new().unwrap();
    let o = monk_sim(d.path(), &["run", "--variant", "TURBO"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_emits_one_row_per_config_and_metric() {
    let d = TempDir::new().unwrap();
    let cfg = short_config(d.path());
    let o = monk_sim(d.path(), &["compare", "-c", &cfg, "--candidate", "MONK", "--candidate", "HMONK_C0", "--runs", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(d.path().join("comparison.txt")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    // Three configurations times max-JOPS, five SLAs and the geomean.
    assert_eq!(rows.len(), 3 * 7, "{text}");
    assert!(rows[0].starts_with("VANILLA (baseline)"));
}

#[test]
fn curve_then_fit() {
    let d = TempDir::new().unwrap();
    let cfg = short_config(d.path());
    let o = monk_sim(d.path(), &["curve", "-c", &cfg, "--preliminary-max", "800", "--steps", "12"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = d.path().join("curve.csv");
    let body: Vec<String> = fs::read_to_string(&curve)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect();
    assert_eq!(body[0], "rate,throughput,max_us,p99_us,mean_us,cpu_pct,stalls");
    assert_eq!(body.len(), 13);

    let o = monk_sim(d.path(), &["fit", curve.to_str().unwrap(), "--breakpoints", "30", "--degree", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit = fs::read_to_string(d.path().join("fit.txt")).unwrap();
    assert!(fit.contains("leading coefficient ratio"), "{fit}");

    // Too many breakpoints leave a segment without enough points.
    let o = monk_sim(d.path(), &["fit", curve.to_str().unwrap(), "--breakpoints", "1,2,3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("segment"));
}

#[test]
fn self_comparison_is_neutral() {
    let d = TempDir::new().unwrap();
    let cfg = short_config(d.path());
    let o = monk_sim(d.path(), &["compare", "-c", &cfg, "--candidate", "VANILLA", "--runs", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(d.path().join("comparison.txt")).unwrap();
    for row in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        assert!(row.contains(" 1.0000 ") && row.contains("not-significant"), "{row}");
    }
}

#[test]
fn calibrated_rates_rise_with_the_target() {
    let d = TempDir::new().unwrap();
    let cfg = short_config(d.path());
    let o = monk_sim(d.path(), &["calibrate", "-c", &cfg, "--targets", "0,30,60", "--seeds", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(d.path().join("calibration.csv")).unwrap();
    let rates: Vec<f64> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rates.len(), 3);
    assert_eq!(rates[0], 0.0);
    assert!(rates[0] < rates[1] && rates[1] < rates[2], "{rates:?}");

    let o = monk_sim(d.path(), &["calibrate", "-c", &cfg, "--targets", "150"]);
    assert!(!o.status.success());
}
