use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use dpmsim::engine::EngineError;
use dpmsim::pmic::ModeKind;
use dpmsim::scenario::units::parse_duration;
use dpmsim::sweep::SweepError;
use dpmsim::{compare_dpm, emit_report, parse_scenario, run, run_oracle, sweep_lux, CompareError, ParsedScenario, ReportFormat};

#[derive(Debug, Parser)]
#[command(name = "dpmsim", version, about = "Simulate a hardware-orchestrated power-managed harvesting node")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Text,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
            Format::Text => ReportFormat::Text,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and emit its report.
    Run {
        file: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Write the per-event trace stream here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compare a hardware-gated scenario against its software-sleep twin.
    Compare {
        hw: PathBuf,
        sw: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Find the breakeven illuminance by bisection.
    Sweep {
        file: PathBuf,
        #[arg(long)]
        lo: f64,
        #[arg(long)]
        hi: f64,
    },
    /// Parse and validate a scenario file.
    Validate { file: PathBuf },
    /// Run the fixed-timestep reference integrator next to the event engine.
    Oracle {
        file: PathBuf,
        #[arg(long, default_value = "1ms")]
        timestep: String,
    },
}

/// Exit code 1: the input was rejected. Exit code 2: the simulation itself failed.
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Scenario(_) => Failure::Invalid(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn load(path: &Path) -> Result<ParsedScenario, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(invalid)?;
    let parsed = parse_scenario(&text).with_context(|| format!("in {}", path.display())).map_err(invalid)?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    Ok(parsed)
}

fn write_or_print(path: Option<&Path>, body: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())).map_err(runtime),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { file, out, format, trace } => {
            let parsed = load(&file)?;
            let mut report = run(&parsed.scenario)?;
            report.notes = parsed.notes.iter().cloned().chain(parsed.warnings.iter().map(|w| format!("warning: {w}"))).collect();
            write_or_print(out.as_deref(), &emit_report(&report, format.into()))?;
            if let Some(path) = trace {
                fs::write(&path, report.trace_lines()).with_context(|| format!("writing {}", path.display())).map_err(runtime)?;
            }
            Ok(())
        }
        Command::Compare { hw, sw, json } => {
            let a = run(&load(&hw)?.scenario)?;
            let b = run(&load(&sw)?.scenario)?;
            let cmp = compare_dpm(&a, &b).map_err(|e| match e {
                CompareError::Mismatched(_) | CompareError::ZeroIdle => invalid(e),
                CompareError::Energy(_) => runtime(e),
            })?;
            if json {
                let body = serde_json::to_string_pretty(&cmp).map_err(runtime)?;
                println!("{body}");
            } else {
                print!("{}", cmp.to_text());
            }
            Ok(())
        }
        Command::Sweep { file, lo, hi } => {
            let parsed = load(&file)?;
            let result = sweep_lux(&parsed.scenario, lo, hi).map_err(|e| match e {
                SweepError::Engine(inner) => Failure::from(inner),
                SweepError::NoCycle(_) => runtime(e),
                other => invalid(other),
            })?;
            for p in &result.probes {
                println!("probe {:>12.6} lux  net {:>12.6} mJ", p.lux, p.net.as_milli_joules());
            }
            println!(
                "breakeven {} lux (net per cycle {:.6} mJ)",
                result.breakeven.value(),
                result.net_at_breakeven.as_milli_joules()
            );
            Ok(())
        }
        Command::Validate { file } => {
            let parsed = load(&file)?;
            for n in &parsed.notes {
                println!("note: {n}");
            }
            println!("ok: {}", parsed.scenario.meta.name);
            Ok(())
        }
        Command::Oracle { file, timestep } => {
            let dt = parse_duration(&timestep).map_err(|e| invalid(anyhow!("--timestep: {e}")))?;
            let parsed = load(&file)?;
            let engine = run(&parsed.scenario)?;
            let oracle = run_oracle(&parsed.scenario, dt)?;
            let kinds = |t: &[dpmsim::engine::ModeTransition]| t.iter().map(|m| m.to).collect::<Vec<ModeKind>>();
            let same = kinds(&engine.transitions) == kinds(&oracle.transitions)
                && engine.transitions.iter().zip(&oracle.transitions).all(|(a, b)| a.from == b.from);
            let e_engine = engine.ledger.e_store_final;
            let rel = (e_engine - oracle.e_store_final).abs().value() / e_engine.value().abs().max(f64::MIN_POSITIVE);
            println!("timestep {}  oracle steps {}", dt, oracle.steps);
            println!("transitions: engine {}  oracle {}  sequences {}", engine.transitions.len(), oracle.transitions.len(), if same { "match" } else { "DIFFER" });
            for (i, (a, b)) in engine.transitions.iter().zip(&oracle.transitions).enumerate() {
                println!("  {i:>4} {} -> {}  engine {}  oracle {}", a.from, a.to, a.time, b.time);
            }
            println!("final stored energy: engine {} nJ  oracle {} nJ  relative difference {:.3e}", e_engine.value(), oracle.e_store_final.value(), rel);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
