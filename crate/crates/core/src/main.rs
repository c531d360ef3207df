use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gpmpc::harness::{
    compare, gp_selftest, run_episode, write_comparison_csv, write_episode, HarnessError, ScenarioConfig,
};

const EXIT_SOLVER: u8 = 2;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "gpmpc", version, about = "Closed-loop GP-MPC quadcopter simulation")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed (first seed for `compare`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single episode.
    Run { config: PathBuf },
    /// Paired-seed comparison of two scenarios.
    Compare {
        config_a: PathBuf,
        config_b: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Kalman-filter GP against dense GP regression, and gradient check.
    GpSelftest {
        #[arg(long, default_value_t = 20)]
        batches: usize,
    },
}

fn load(path: &Path) -> Result<ScenarioConfig, ExitCode> {
    ScenarioConfig::load(path).map_err(|e| {
        eprintln!("{e}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn label(path: &Path) -> String {
    path.file_stem().map_or("?".into(), |s| s.to_string_lossy().into_owned())
}

fn fail(e: HarnessError) -> ExitCode {
    eprintln!("{e}");
    match e {
        HarnessError::Config(_) => ExitCode::from(EXIT_CONFIG),
        HarnessError::Smpc(_) => ExitCode::from(EXIT_SOLVER),
        _ => ExitCode::FAILURE,
    }
}

fn run(cli: Cli) -> Result<ExitCode, ExitCode> {
    match cli.command {
        Command::Run { config } => {
            let mut cfg = load(&config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let ep = run_episode(&cfg).map_err(fail)?;
            write_episode(&ep, &cfg, &cli.out).map_err(fail)?;
            print!("{}", std::fs::read_to_string(cli.out.join("summary.txt")).unwrap_or_default());
            if let Some(a) = &ep.abort {
                eprintln!("aborted: {a}");
            }
            Ok(ExitCode::from(ep.exit_code() as u8))
        }
        Command::Compare {
            config_a,
            config_b,
            seeds,
        } => {
            let a = load(&config_a)?;
            let b = load(&config_b)?;
            let (la, mut lb) = (label(&config_a), label(&config_b));
            if la == lb {
                lb.push_str("-b");
            }
            let first = cli.seed.unwrap_or(a.seed);
            let seeds: Vec<u64> = (first..first + seeds).collect();
            let cmp = compare((&la, &a), (&lb, &b), &seeds).map_err(fail)?;
            std::fs::create_dir_all(&cli.out).map_err(|e| fail(e.into()))?;
            write_comparison_csv(&cmp, &cli.out.join("comparison.csv")).map_err(fail)?;
            let summary = cmp.summary();
            std::fs::write(cli.out.join("summary.txt"), &summary).map_err(|e| fail(e.into()))?;
            print!("{summary}");
            Ok(ExitCode::SUCCESS)
        }
        Command::GpSelftest { batches } => {
            let report = gp_selftest(batches, cli.seed.unwrap_or(0)).map_err(fail)?;
            println!("{report}");
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn main() -> ExitCode {
    match Cli::try_parse() {
        Ok(cli) => run(cli).unwrap_or_else(|code| code),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
