//! `twohab`: runs the verification suites and writes CSV/JSON artifacts.
//!
//! Exit codes: 0 when every requested criterion passes, 1 when one fails,
//! 2 on a usage or configuration error, 3 when a solver breaks down.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use twohab_core::suites::{self, RunConfig, Suite};
use twohab_core::Error;

#[derive(Parser)]
#[command(
    name = "twohab",
    version,
    about = "Two-habitat diffusion operator verification runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run suites from a JSON configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Suite to run; repeatable. Overrides the `suites` list in the config.
        #[arg(long = "suite", value_parser = parse_suite)]
        suites: Vec<Suite>,
        /// Worker threads for the parallel lambda maps (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory; overrides the config and the TWOHAB_OUTPUT_DIR variable.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Sample the complex-number inequalities and print one CSV row each.
    VerifyPropositions {
        #[arg(long, default_value_t = suites::PROPERTY_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write to this file instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    Suite::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Suite::ALL.iter().map(|x| x.name()).collect();
        format!("unknown suite `{s}`; expected one of {}", names.join(", "))
    })
}

fn usage(e: &Error) -> bool {
    matches!(e, Error::Config { .. } | Error::Json(_) | Error::Domain(_))
}

fn fail(e: Error) -> ExitCode {
    if usage(&e) {
        eprintln!("usage error: {e}");
        ExitCode::from(2)
    } else {
        eprintln!("error: {e}");
        ExitCode::from(3)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            suites: requested,
            jobs,
            output_dir,
        } => {
            if let Some(n) = jobs {
                if n == 0 {
                    eprintln!("usage error: --jobs must be at least 1");
                    return ExitCode::from(2);
                }
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: {e}");
                    return ExitCode::from(3);
                }
            }
            let cfg = match RunConfig::from_path(&config) {
                Ok(c) => c,
                Err(Error::Io(e)) => {
                    eprintln!("usage error: cannot read {}: {e}", config.display());
                    return ExitCode::from(2);
                }
                Err(e) => return fail(e),
            };
            let chosen = if requested.is_empty() {
                cfg.suites.clone()
            } else {
                requested
            };
            match suites::run(&cfg, &chosen, output_dir.as_deref()) {
                Ok(report) => {
                    for o in &report.outcomes {
                        println!("{}", o.line());
                    }
                    println!("artifacts written to {}", report.output_dir.display());
                    if report.all_pass() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::VerifyPropositions {
            samples,
            seed,
            output,
        } => {
            if samples == 0 {
                eprintln!("usage error: --samples must be at least 1");
                return ExitCode::from(2);
            }
            let table = suites::property_table(samples, seed);
            let clean = table.lines().skip(1).all(|l| l.split(',').nth(2) == Some("0"));
            match output {
                Some(p) => {
                    if let Err(e) = std::fs::write(&p, &table) {
                        eprintln!("error: cannot write {}: {e}", p.display());
                        return ExitCode::from(3);
                    }
                }
                None => print!("{table}"),
            }
            if clean {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
