use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use dcs_core::acceptance::{run_criteria, ALL_CRITERIA};
use dcs_core::analysis::{rate_accounting, RateBudget};
use dcs_core::harness::{run_to_dir, ExperimentConfig};

/// Distributed compressed sensing experiments with side information.
#[derive(Parser)]
#[command(name = "dcs-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's output_path).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Write wall_time as 0 so repeated runs give identical CSVs.
        #[arg(long)]
        deterministic_csv: bool,
    },
    /// Print the bit budget of a side-information scheme.
    Rate {
        /// Number of nodes, side-information node included.
        #[arg(long = "J", value_name = "J")]
        nodes: u64,
        /// Measurements per non-side-information node.
        #[arg(long)]
        m: u64,
        /// Bits per measurement.
        #[arg(long = "R", value_name = "R")]
        bits: u64,
        /// Side-information measurements.
        #[arg(long)]
        m1: u64,
        /// Side-information bits per measurement.
        #[arg(long = "R1", value_name = "R1")]
        bits1: u64,
    },
    /// Run the built-in acceptance suite.
    Verify {
        /// Criterion numbers to run (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

const EXIT_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;

fn run(
    config: PathBuf,
    out: Option<PathBuf>,
    threads: Option<usize>,
    deterministic: bool,
) -> anyhow::Result<()> {
    let mut cfg =
        ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
    cfg.apply_env()?;
    cfg.validate()?;
    let out_dir = out.unwrap_or_else(|| cfg.output_path.clone());

    for (m, r) in cfg.rate_reports()? {
        println!(
            "m={m}: total_bits={} m'={:.4} delta_m={:.4}",
            r.total_bits, r.m_prime, r.delta_m
        );
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        pool = pool.num_threads(t);
    }
    let pool = pool.build()?;
    let outputs = pool.install(|| run_to_dir(&cfg, &out_dir, deterministic))?;
    println!(
        "{} rows -> {}\nplot script -> {}",
        outputs.rows.len(),
        outputs.csv.display(),
        outputs.plot_script.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            threads,
            deterministic_csv,
        } => match run(config, out, threads, deterministic_csv) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_INVALID)
            }
        },
        Command::Rate {
            nodes,
            m,
            bits,
            m1,
            bits1,
        } => match rate_accounting(&RateBudget {
            nodes,
            m,
            bits,
            m1,
            bits1,
        }) {
            Ok(r) => {
                println!("total_bits {}", r.total_bits);
                println!("m_prime {}", r.m_prime);
                println!("delta_m {}", r.delta_m);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_INVALID)
            }
        },
        Command::Verify { only } => {
            let ids = if only.is_empty() {
                ALL_CRITERIA.to_vec()
            } else {
                only
            };
            let reports = run_criteria(&ids, |r| println!("{r}"));
            if reports.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILED)
            }
        }
    }
}
