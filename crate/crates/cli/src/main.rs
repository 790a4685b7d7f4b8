//! `konnektor` command-line runner.
//!
//! Exit codes are a stable contract: 0 success, 1 property or scenario
//! failure, 2 usage or config error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use konnektor_core::identity::{generate_keypair, Keypair};
use konnektor_core::sim::{run_simulation, SimConfig};
use konnektor_core::suite::run_suite;
use konnektor_core::trace::{verify_trace, TraceError};

const OK: u8 = 0;
const FAILED: u8 = 1;
const USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "konnektor",
    version,
    about = "Run and check konnektor network simulations"
)]
struct Cli {
    /// Print extra detail to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation from a TOML config.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(short, long)]
        seed: Option<u64>,
        /// Directory for trace.jsonl and report.json.
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the built-in scenario battery over a seed sweep.
    Suite {
        /// Base config; its protocol and network settings apply to every scenario.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
    },
    /// Print a keypair for scenario authoring.
    Keygen {
        /// 32-byte seed as hex; random when omitted.
        #[arg(long)]
        seed: Option<String>,
    },
    /// Re-check a trace file offline.
    VerifyTrace { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { OK });
        }
    };
    let code = match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, &out, cli.verbose),
        Command::Suite {
            config,
            seeds,
            first_seed,
        } => cmd_suite(config.as_deref(), first_seed, seeds, cli.verbose),
        Command::Keygen { seed } => cmd_keygen(seed.as_deref()),
        Command::VerifyTrace { path } => cmd_verify_trace(&path),
    };
    ExitCode::from(code)
}

fn load(path: &Path) -> Result<SimConfig, u8> {
    SimConfig::load(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        USAGE
    })
}

fn cmd_run(config: &Path, seed: Option<u64>, out: &Path, verbose: u8) -> u8 {
    let mut cfg = match load(config) {
        Ok(cfg) => cfg,
        Err(code) => return code,
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    for warning in cfg.protocol.lint() {
        eprintln!("warning: {warning}");
    }
    let report = match run_simulation(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return USAGE;
        }
    };
    if let Err(e) = report.write_outputs(out) {
        eprintln!("error: writing {}: {e}", out.display());
        return USAGE;
    }
    if verbose > 0 {
        eprintln!("{}", report.summary_json());
    }
    println!("{}", report.trace_hash);
    if let Err(e) = verify_trace(&report.trace) {
        eprintln!("trace check failed: {e}");
        return FAILED;
    }
    if !report.messages.conserved() {
        eprintln!("message counters do not balance: {:?}", report.messages);
        return FAILED;
    }
    if report.uniqueness_verdict {
        OK
    } else {
        eprintln!("uniqueness violated");
        FAILED
    }
}

fn cmd_suite(config: Option<&Path>, first: u64, count: u64, verbose: u8) -> u8 {
    let base = match config {
        Some(path) => match load(path) {
            Ok(cfg) => cfg,
            Err(code) => return code,
        },
        None => SimConfig::default(),
    };
    if count == 0 {
        eprintln!("error: --seeds must be at least 1");
        return USAGE;
    }
    let seeds: Vec<u64> = (first..first + count).collect();
    let report = run_suite(&base, &seeds);
    for warning in &report.lint {
        println!("warning: {warning}");
    }
    print!("{}", report.matrix());
    for failure in report.failures() {
        if let Err(why) = &failure.result {
            println!("FAIL {} seed {}: {why}", failure.scenario, failure.seed);
        }
    }
    if verbose > 0 {
        for o in &report.outcomes {
            eprintln!("{} {} {}", o.scenario, o.seed, o.trace_hash);
        }
    }
    if report.passed() {
        println!("all {} runs passed", report.outcomes.len());
        OK
    } else {
        FAILED
    }
}

fn cmd_keygen(seed: Option<&str>) -> u8 {
    let keypair = match seed {
        None => Keypair::random(),
        Some(text) => {
            let parsed = hex::decode(text.trim())
                .map_err(|e| e.to_string())
                .and_then(|bytes| generate_keypair(&bytes).map_err(|e| e.to_string()));
            match parsed {
                Ok(k) => k,
                Err(e) => {
                    eprintln!("error: --seed: {e}");
                    return USAGE;
                }
            }
        }
    };
    println!("address {}", keypair.address().to_hex());
    println!("secret  {}", hex::encode(keypair.secret_bytes()));
    OK
}

fn cmd_verify_trace(path: &Path) -> u8 {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return USAGE;
        }
    };
    let lines: Vec<&str> = text.lines().collect();
    match verify_trace(&lines) {
        Ok(summary) => {
            println!(
                "ok: {} records, {} transitions, {} challenges, uniqueness {}",
                summary.records,
                summary.transitions,
                summary.challenges,
                summary.uniqueness_verdict
            );
            OK
        }
        Err(TraceError::Malformed { line, message }) => {
            eprintln!("malformed trace at line {line}: {message}");
            USAGE
        }
        Err(TraceError::Violation { line, message }) => {
            eprintln!("violation at line {line}: {message}");
            if let Some(record) = lines.get(line.saturating_sub(1)) {
                eprintln!("  {record}");
            }
            FAILED
        }
    }
}
