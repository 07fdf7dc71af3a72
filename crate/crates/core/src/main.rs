use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use pulse_sim::audit::{audit_file, AuditError};
use pulse_sim::error::SimError;
use pulse_sim::metrics::SimReport;
use pulse_sim::scenario::parse::build_scenario;
use pulse_sim::scenario::presets::{file_name, preset};
use pulse_sim::scenario::report::{emit_report, summary_text, EVENTS_LOG};
use pulse_sim::scenario::{apply_override, parse_document, Override, Scenario, ValidationError};
use pulse_sim::sim;

#[derive(Parser)]
#[command(name = "pulse-sim", version, about = "Discrete-event model of a replicated log's publish path")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: out/<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write events.log for the auditor.
        #[arg(long)]
        trace: bool,
    },
    /// Print a shipped preset.
    Preset {
        name: String,
        /// Write <name>.scn into the current directory instead.
        #[arg(long)]
        emit_file: bool,
    },
    /// Run a scenario once per value of one key, in parallel.
    Sweep {
        scenario: PathBuf,
        /// `<key>=<v1,v2,...>`; key is `key`, `kind.key` or `kind.name.key`.
        #[arg(long)]
        vary: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Write one report directory per value under this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check a run's invariants from its events.log.
    Audit { log: PathBuf },
}

enum Failure {
    Validation(String),
    Invariant(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Invariant(e.to_string())
    }
}

fn validation(errs: &[ValidationError], path: &Path) -> Failure {
    let lines: Vec<String> = errs.iter().map(|e| format!("{}: {e}", path.display())).collect();
    Failure::Validation(lines.join("\n"))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn load(path: &Path, seed: Option<u64>) -> Result<(pulse_sim::scenario::Document, Scenario), Failure> {
    let text = read(path)?;
    let mut doc = parse_document(&text).map_err(|e| validation(&e, path))?;
    if let Some(s) = seed {
        let ov = Override::new("run.seed", &s.to_string()).map_err(Failure::Validation)?;
        apply_override(&mut doc, &ov).map_err(Failure::Validation)?;
    }
    let sc = build_scenario(&doc).map_err(|e| validation(&e, path))?;
    Ok((doc, sc))
}

fn run_to_dir(sc: &Scenario, out: &Path, trace: bool) -> Result<SimReport, Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::Validation(format!("{}: {e}", out.display())))?;
    let report = if trace {
        let path = out.join(EVENTS_LOG);
        let file = File::create(&path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        let r = sim::run_traced(sc, Some(&mut w))?;
        w.flush().map_err(|e| Failure::Invariant(format!("{}: {e}", path.display())))?;
        r
    } else {
        sim::run(sc)?
    };
    emit_report(&report, out).map_err(|e| Failure::Validation(format!("{}: {e}", out.display())))?;
    Ok(report)
}

fn cmd_run(path: &Path, seed: Option<u64>, out: Option<PathBuf>, trace: bool) -> Result<(), Failure> {
    let (_, sc) = load(path, seed)?;
    let out = out.unwrap_or_else(|| Path::new("out").join(&sc.name));
    let report = run_to_dir(&sc, &out, trace || sc.trace)?;
    print!("{}", summary_text(&report));
    println!("\nreport written to {}", out.display());
    Ok(())
}

fn cmd_preset(name: &str, emit_file: bool) -> Result<(), Failure> {
    let sc = preset(name).map_err(|e| Failure::Validation(e.to_string()))?;
    let text = sc.to_text();
    if emit_file {
        let path = file_name(name);
        fs::write(&path, text).map_err(|e| Failure::Validation(format!("{path}: {e}")))?;
        println!("wrote {path}");
    } else {
        print!("{text}");
    }
    Ok(())
}

fn cmd_sweep(path: &Path, vary: &str, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let (doc, _) = load(path, seed)?;
    let (key, values) = vary.split_once('=').ok_or_else(|| Failure::Validation(format!("--vary '{vary}': expected <key>=<v1,v2,...>")))?;
    let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Failure::Validation(format!("--vary '{vary}': no values")));
    }
    let mut scenarios = Vec::new();
    for v in &values {
        let mut d = doc.clone();
        let ov = Override::new(key, v).map_err(Failure::Validation)?;
        apply_override(&mut d, &ov).map_err(Failure::Validation)?;
        let sc = build_scenario(&d).map_err(|e| Failure::Validation(format!("{key}={v}: {}", e.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "))))?;
        scenarios.push((v.to_string(), sc));
    }
    let results: Vec<Result<SimReport, Failure>> = scenarios
        .par_iter()
        .map(|(v, sc)| match &out {
            Some(dir) => run_to_dir(sc, &dir.join(format!("{key}={v}")), sc.trace),
            None => sim::run(sc).map_err(Failure::from),
        })
        .collect();
    println!("{:<14} {:>10} {:>10} {:>10} {:>10} {:>10} {:>12}", key, "p50_ms", "p95_ms", "p99_ms", "p99.9_ms", "max_ms", "contention");
    for ((v, _), r) in scenarios.iter().zip(results) {
        let r = r?;
        let q = |x: f64| if r.publish.is_empty() { 0.0 } else { r.publish.quantile_ms(x) };
        let max = r.publish.max().map(|d| d.as_millis_f64()).unwrap_or(0.0);
        println!(
            "{:<14} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>12}",
            v,
            q(0.5),
            q(0.95),
            q(0.99),
            q(0.999),
            max,
            pulse_sim::time::format_duration(r.total_contention())
        );
    }
    Ok(())
}

fn cmd_audit(path: &Path) -> Result<(), Failure> {
    let report = audit_file(path).map_err(|e| match e {
        AuditError::Parse { .. } => Failure::Validation(format!("{}: {e}", path.display())),
        AuditError::Io(e) => Failure::Validation(format!("{}: {e}", path.display())),
    })?;
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Invariant("audit failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run { scenario, seed, out, trace } => cmd_run(&scenario, seed, out, trace),
        Command::Preset { name, emit_file } => cmd_preset(&name, emit_file),
        Command::Sweep { scenario, vary, seed, out } => cmd_sweep(&scenario, &vary, seed, out),
        Command::Audit { log } => cmd_audit(&log),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Invariant(msg)) => {
            eprintln!("invariant violated: {msg}");
            ExitCode::from(2)
        }
    }
}
