use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use erspec_cli::commands::{self, FitKind, Run, TraceFormat};
use erspec_cli::{CliError, Manifest, Outputs, Protocol, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "erspec", version, about = "Simulate and analyse single-ion photoionisation spectroscopy")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration; omitted keys take their defaults (see `erspec defaults`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Directory under which `<command>-seed<seed>` is created when --out is not given.
    #[arg(long, global = true, env = "ERSPEC_OUTPUT_ROOT", default_value = "erspec-runs")]
    output_root: PathBuf,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Trace file format written by `simulate`.
    #[arg(long, global = true, value_enum, default_value_t = TraceFormat::Csv)]
    format: TraceFormat,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the protocol named by `protocol` in the configuration.
    Run,
    /// Simulate one drive: event log and current trace.
    Simulate,
    /// Detect switches in a trace; dwell lists and histograms.
    Detect {
        #[arg(long)]
        input: PathBuf,
    },
    /// Fit rates (detect output directory), a spectrum, or switch times (EMG).
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<FitKind>,
    },
    /// CW spectra at several powers with power regressions.
    ScanCw,
    /// Pulsed spectra at several powers.
    ScanPulsed,
    /// Two-pulse reset-rate measurement.
    ResetRate,
    /// Probe linewidth after a strong pulse for several delays.
    Persistence,
    /// Pulsed spectra at fixed power for several resonant fractions.
    Fraction,
    /// Ionisation rate against excitation rate for several decay splits.
    SweepRates,
    /// Markdown digest of a run directory.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
    /// Check the files of a run directory against its manifest.
    Verify {
        #[arg(long)]
        input: PathBuf,
    },
    /// Print (or write with --out) the default configuration.
    Defaults,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Detect { .. } => "detect",
            Command::Fit { .. } => "fit",
            Command::Report { .. } => "report",
            Command::Verify { .. } => "verify",
            Command::Defaults => "defaults",
            other => other.protocol().map_or("?", Protocol::name),
        }
    }

    fn protocol(&self) -> Option<Protocol> {
        Some(match self {
            Command::Simulate => Protocol::Simulate,
            Command::ScanCw => Protocol::ScanCw,
            Command::ScanPulsed => Protocol::ScanPulsed,
            Command::ResetRate => Protocol::ResetRate,
            Command::Persistence => Protocol::Persistence,
            Command::Fraction => Protocol::Fraction,
            Command::SweepRates => Protocol::SweepRates,
            _ => return None,
        })
    }
}

fn main() -> ExitCode {
    let defaults = commands::defaults_toml().unwrap_or_default();
    let matches = Cli::command()
        .after_long_help(format!("Default configuration:\n\n{defaults}"))
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m));
    // Usage errors are input errors (exit 1); help and version exit 0.
    let cli = match matches {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(1);
        }
    }
    match &cli.command {
        Command::Verify { input } => return verify(input),
        Command::Defaults if cli.out.is_none() => {
            print!("{defaults}");
            return ExitCode::SUCCESS;
        }
        _ => {}
    }
    execute(&cli)
}

fn verify(dir: &Path) -> ExitCode {
    let m = match Manifest::read(dir) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let bad = m.verify(dir);
    for p in &bad {
        println!("MODIFIED {p}");
    }
    if bad.is_empty() {
        println!("ok: {} files match", m.files.len());
        ExitCode::SUCCESS
    } else {
        let e = CliError::Tampered(bad.len());
        eprintln!("error: {e}");
        ExitCode::from(e.exit_code())
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::unreadable(path, e))?;
            RunConfig::from_toml(&text, &path.display().to_string())?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    if let (Some(want), Some(have)) = (cli.command.protocol(), cfg.protocol) {
        if want != have {
            return Err(CliError::invalid(
                "protocol",
                format!("configuration is for {}, not {}", have.name(), want.name()),
            ));
        }
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    if let Some(o) = &cli.out {
        return o.clone();
    }
    if let Some(o) = cfg.and_then(|c| c.output_dir.clone()) {
        return o;
    }
    let seed = cfg.map(|c| c.seed).or(cli.seed).unwrap_or(0);
    cli.output_root.join(format!("{}-seed{seed}", cli.command.name()))
}

fn execute(cli: &Cli) -> ExitCode {
    let started = chrono::Utc::now();
    let loaded = load_config(cli);
    let dir = out_dir(cli, loaded.as_ref().ok());
    let out = match Outputs::create(&dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let mut run = Run {
        config: loaded.as_ref().cloned().unwrap_or_default(),
        format: cli.format,
        out,
        warnings: Vec::new(),
        errors: Vec::new(),
    };
    let outcome = loaded.and_then(|_| dispatch(cli, &mut run));
    let Run {
        config,
        out,
        warnings,
        mut errors,
        ..
    } = run;
    if let Err(e) = outcome {
        errors.insert(0, e);
    }
    let exit_code = errors.iter().map(CliError::exit_code).max().unwrap_or(0);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    for e in &errors {
        eprintln!("error: {e}");
    }
    let manifest = Manifest {
        tool: "erspec".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cli.command.name().into(),
        status: if exit_code == 0 { "ok" } else { "failed" }.into(),
        exit_code,
        master_seed: config.seed,
        seed_scheme: erspec::seeds::SCHEME.into(),
        threads: rayon::current_num_threads(),
        started_at: started.to_rfc3339(),
        finished_at: chrono::Utc::now().to_rfc3339(),
        config: serde_json::to_value(&config).unwrap_or_default(),
        files: Vec::new(),
        warnings,
        errors: errors.iter().map(CliError::record).collect(),
    };
    match out.finish(manifest) {
        Ok(path) => eprintln!("wrote {}", path.display()),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    ExitCode::from(exit_code)
}

fn dispatch(cli: &Cli, run: &mut Run) -> Result<(), CliError> {
    match &cli.command {
        Command::Run => {
            let p = run
                .config
                .protocol
                .ok_or_else(|| CliError::invalid("protocol", "`erspec run` needs `protocol` in the configuration"))?;
            commands::protocol(run, p)
        }
        Command::Detect { input } => commands::detect(run, input),
        Command::Fit { input, kind } => commands::fit(run, input, *kind),
        Command::Report { input } => {
            let md = commands::report(run, input)?;
            print!("{md}");
            Ok(())
        }
        Command::Defaults => {
            let text = commands::defaults_toml()?;
            run.out.write("defaults.toml", text.as_bytes())
        }
        Command::Verify { .. } => unreachable!("handled before a run directory is created"),
        other => commands::protocol(run, other.protocol().expect("protocol command")),
    }
}
