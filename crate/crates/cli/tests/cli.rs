use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use erspec_cli::output::CsvTable;
use erspec_cli::{Manifest, RunConfig};

fn erspec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erspec"))
        .args(args)
        .env_remove("ERSPEC_OUTPUT_ROOT")
        .output()
        .expect("run erspec")
}

fn ok(args: &[&str]) -> Output {
    let o = erspec(args);
    assert!(
        o.status.success(),
        "erspec {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pulsed_config_round_trips_through_save() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "pulsed.toml",
        "protocol = \"scan-pulsed\"\nseed = 3\n\n[pulsed_scan.timing]\npulse_s = 4e-6\ndark_s = 5e-3\ncycles = 20000\n",
    );
    let cfg = RunConfig::load(&p).unwrap();
    assert_eq!(cfg.pulsed_scan.timing.pulse_s, 4e-6);
    assert_eq!(cfg.pulsed_scan.timing.dark_s, 5e-3);
    assert_eq!(cfg.pulsed_scan.timing.cycles, 20_000);
    let saved = dir.path().join("saved.toml");
    cfg.save(&saved).unwrap();
    assert_eq!(RunConfig::load(&saved).unwrap(), cfg);
}

#[test]
fn defaults_file_loads_back() {
    let o = ok(&["defaults"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(RunConfig::from_toml(&text, "defaults").unwrap(), RunConfig::default());
}

#[test]
fn out_of_range_fraction_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[cw_scan]\nresonant_fraction = 1.3\n");
    let out = dir.path().join("run");
    let o = erspec(&["scan-cw", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("resonant_fraction must be in [0,1]"));
    let m = Manifest::read(&out).unwrap();
    assert_eq!(m.exit_code, 1);
    assert_eq!(m.errors[0].kind, "validation");
    assert_eq!(m.errors[0].field.as_deref(), Some("cw_scan.resonant_fraction"));
}

#[test]
fn missing_input_and_bad_usage_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let missing = dir.path().join("nope.csv");
    let o = erspec(&["fit", "--kind", "spectrum", "--input", s(&missing), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(Manifest::read(&out).unwrap().errors[0].kind, "input");
    assert_eq!(erspec(&["scan-cw", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(erspec(&["--help"]).status.code(), Some(0));
}

#[test]
fn parse_errors_report_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "seed = 1\n[sweep]\nratios = [1.0, \"x\"]\n");
    let out = dir.path().join("run");
    let o = erspec(&["sweep-rates", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let m = Manifest::read(&out).unwrap();
    assert_eq!(m.errors[0].kind, "parse");
    assert_eq!(m.errors[0].line, Some(3));
}

#[test]
fn run_requires_a_protocol_and_respects_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "seed = 2\n");
    let o = erspec(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("a"))]);
    assert_eq!(o.status.code(), Some(1));
    let cfg = write(
        dir.path(),
        "d.toml",
        "protocol = \"sweep-rates\"\nseed = 2\n[sweep]\ngamma_e_hz = [1e3, 1e4]\nratios = [1.0]\nionisations = 200\n",
    );
    ok(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("b"))]);
    assert!(dir.path().join("b/tables/sweep.csv").exists());
    let o = erspec(&["scan-cw", "--config", s(&cfg), "--out", s(&dir.path().join("c"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn zero_power_trace_sits_at_the_high_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[simulate]\npower_uw = 0.0\nduration_s = 0.05\n[physics.trace]\nnoise_sigma = 0.0\n",
    );
    let out = dir.path().join("sim");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    let t = CsvTable::read(&out.join("trace.csv")).unwrap();
    let current = t.column("current").unwrap();
    assert_eq!(current.len(), 5000);
    assert!(current.iter().all(|&c| c == 1.0));
    assert!(Manifest::read(&out).unwrap().files.iter().any(|f| f.path == "trace.csv"));
}

fn payload_hashes(dir: &Path) -> Vec<(String, String)> {
    Manifest::read(dir)
        .unwrap()
        .files
        .into_iter()
        .map(|f| (f.path, f.sha256))
        .collect()
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "seed = 11\n[cw_scan]\npowers_uw = [0.3, 1.1]\nduration_s = 0.5\n[cw_scan.detuning]\npoints = 7\n",
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["scan-cw", "--config", s(&cfg), "--out", s(&a), "--threads", "1"]);
    ok(&["scan-cw", "--config", s(&cfg), "--out", s(&b), "--threads", "4"]);
    let (ha, hb) = (payload_hashes(&a), payload_hashes(&b));
    assert!(ha.len() > 4);
    assert_eq!(ha, hb);
    let c = dir.path().join("c");
    ok(&["scan-cw", "--config", s(&cfg), "--out", s(&c), "--seed", "12"]);
    assert_ne!(payload_hashes(&c), ha);
}

/// simulate | detect | fit on files equals point (0, 0) of an in-process CW scan.
#[test]
fn file_pipeline_matches_scan_point() {
    let dir = tempfile::tempdir().unwrap();
    let scan_cfg = write(
        dir.path(),
        "scan.toml",
        "seed = 21\n[cw_scan]\npowers_uw = [0.6]\nduration_s = 2.0\n[cw_scan.detuning]\npoints = 5\n",
    );
    let scan = dir.path().join("scan");
    ok(&["scan-cw", "--config", s(&scan_cfg), "--out", s(&scan)]);
    let points = CsvTable::read(&scan.join("tables/points.csv")).unwrap();
    let row = &points.rows[0];
    let col = |n: &str| points.columns.iter().position(|c| c == n).unwrap();
    let detuning = row[col("detuning_hz")];

    for format in ["csv", "binary"] {
        let sim_cfg = write(
            dir.path(),
            "sim.toml",
            &format!("seed = 21\n[simulate]\npower_uw = 0.6\nduration_s = 2.0\ndetuning_hz = {detuning:?}\n"),
        );
        let sim = dir.path().join(format!("sim-{format}"));
        let det = dir.path().join(format!("det-{format}"));
        let fit = dir.path().join(format!("fit-{format}"));
        ok(&["simulate", "--config", s(&sim_cfg), "--out", s(&sim), "--format", format]);
        let trace = sim.join(if format == "csv" { "trace.csv" } else { "trace.bin" });
        ok(&["detect", "--input", s(&trace), "--out", s(&det)]);
        ok(&["fit", "--input", s(&det), "--out", s(&fit)]);
        let rates = fs::read_to_string(fit.join("rates.csv")).unwrap();
        let mut lines = rates.lines().skip(1);
        let nu_i: Vec<&str> = lines.next().unwrap().split(',').collect();
        let nu_r: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(nu_i[1].parse::<f64>().unwrap(), row[col("nu_i_hz")], "{format}");
        assert_eq!(nu_i[2].parse::<f64>().unwrap(), row[col("nu_i_stderr_hz")], "{format}");
        assert_eq!(nu_r[1].parse::<f64>().unwrap(), row[col("nu_r_hz")], "{format}");
        assert_eq!(nu_r[3].parse::<f64>().unwrap(), row[col("n_resets")], "{format}");
    }
}

#[test]
fn verify_detects_modified_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[simulate]\nduration_s = 0.2\n");
    let out = dir.path().join("sim");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    ok(&["verify", "--input", s(&out)]);
    let events = out.join("events.csv");
    let mut text = fs::read_to_string(&events).unwrap();
    text = text.replacen("excite", "reset", 1);
    fs::write(&events, text).unwrap();
    let o = erspec(&["verify", "--input", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("MODIFIED events.csv"));
    fs::remove_file(out.join("trace.csv")).unwrap();
    let o = erspec(&["verify", "--input", s(&out)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("MODIFIED trace.csv"));
}

#[test]
fn fits_spectrum_and_switch_time_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = String::from("detuning_hz,nu_i_hz,stderr_hz\n");
    for k in -10..=10 {
        let d = k as f64 * 10e6;
        let v = 500.0 * 16e6f64.powi(2) / (d * d + 16e6f64.powi(2)) + 5.0;
        spec += &format!("{d},{v},{}\n", 0.01 * v);
    }
    let sp = write(dir.path(), "spectrum.csv", &spec);
    ok(&["fit", "--input", s(&sp), "--out", s(&dir.path().join("f"))]);
    let fit = fs::read_to_string(dir.path().join("f/fit.csv")).unwrap();
    let row: Vec<&str> = fit.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3], "ok");
    assert!((row[6].parse::<f64>().unwrap() / 32e6 - 1.0).abs() < 1e-8);

    let mut flat = String::from("detuning_hz,nu_i_hz,stderr_hz\n");
    for k in -10..=10 {
        flat += &format!("{},100,1\n", k as f64 * 1e6);
    }
    let fp = write(dir.path(), "flat.csv", &flat);
    let o = erspec(&["fit", "--input", s(&fp), "--out", s(&dir.path().join("g"))]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(Manifest::read(&dir.path().join("g")).unwrap().errors[0].kind, "fit");

    let mut times = String::from("switch_time_s\n");
    for k in 0..400 {
        times += &format!("{}\n", 1e-6 * (k as f64 * 0.37).sin() + k as f64 * 1e-9);
    }
    let tp = write(dir.path(), "times.csv", &times);
    ok(&["fit", "--input", s(&tp), "--out", s(&dir.path().join("e"))]);
    assert!(fs::read_to_string(dir.path().join("e/emg.csv")).unwrap().contains("tau,"));
}

#[test]
fn report_summarises_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[sweep]\ngamma_e_hz = [1e3, 3e3, 1e4]\nratios = [1.0]\nionisations = 300\n",
    );
    let run = dir.path().join("run");
    ok(&["sweep-rates", "--config", s(&cfg), "--out", s(&run)]);
    let o = ok(&["report", "--input", s(&run), "--out", s(&dir.path().join("rep"))]);
    let md = String::from_utf8(o.stdout).unwrap();
    assert!(md.contains("low_slope_ratio_1"), "{md}");
    assert!(md.contains("all hashes match"));
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "seed = 4\n[simulate]\nduration_s = 0.01\n");
    let o = Command::new(env!("CARGO_BIN_EXE_erspec"))
        .args(["simulate", "--config", s(&cfg)])
        .env("ERSPEC_OUTPUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("simulate-seed4/manifest.json").exists());
}
