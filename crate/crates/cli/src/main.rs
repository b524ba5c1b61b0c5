use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use repchain_cli::analyze::{analyze, AnalyzeArgs, Exposed, Sweep};
use repchain_cli::report::{missing_artifacts, report};
use repchain_cli::simulate::{simulate, Outcome, SimulateArgs};

#[derive(Parser)]
#[command(name = "repchain", version, about = "Sharded reputation blockchain: simulator and security analyzer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its report, CSVs, trace and state blocks.
    Simulate {
        /// Scenario file, JSON or TOML. Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// `key=value`, repeatable. Values are read as JSON where possible.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// `key=v1,v2,...`: one run per value plus scaling.csv. Sweeping k
        /// keeps the shard size fixed.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Exact epoch failure probability.
    #[command(alias = "analyze-security")]
    Analyze {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        g: u64,
        /// Exposed malicious count `a`, or an inclusive range `lo..hi` for CSV.
        #[arg(long)]
        exposed: Option<Exposed>,
        /// Use the camouflage bound exactly as printed instead of the
        /// capacity-corrected one.
        #[arg(long)]
        paper_literal: bool,
        /// Cross-check against exhaustive enumeration.
        #[arg(long)]
        brute_force: bool,
        /// CSV over `exposed=lo..hi` (`hi` may be `g`); bare `--sweep` covers 0..=g.
        #[arg(long, num_args = 0..=1, default_missing_value = "exposed=0..g")]
        sweep: Option<Sweep>,
    },
    /// Tables from a finished run directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Simulate {
            config,
            seed,
            overrides,
            sweep,
            out,
        } => {
            let args = SimulateArgs {
                config,
                seed,
                overrides,
                sweep,
                out,
            };
            match simulate(&args) {
                Ok(Outcome::Clean) => {
                    println!("wrote {}", args.out.display());
                    ExitCode::SUCCESS
                }
                Ok(Outcome::Violated(v)) => {
                    for line in v {
                        eprintln!("violation: {line}");
                    }
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
        Cmd::Analyze {
            n,
            k,
            g,
            exposed,
            paper_literal,
            brute_force,
            sweep,
        } => {
            let args = AnalyzeArgs {
                n,
                k,
                g,
                exposed,
                paper_literal,
                brute_force,
                sweep,
            };
            match analyze(&args) {
                Ok(out) => {
                    print!("{out}");
                    if out.contains("[MISMATCH]") {
                        ExitCode::from(2)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Cmd::Report { dir } => {
            let missing = missing_artifacts(&dir);
            if !missing.is_empty() {
                eprintln!("missing artifacts in {}:", dir.display());
                for p in missing {
                    eprintln!("  {}", p.display());
                }
                return ExitCode::FAILURE;
            }
            match report(&dir) {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
