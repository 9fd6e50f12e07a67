//! `kernmdp` command line: runs experiment configs, precomputes oracle
//! values, re-aggregates result directories for plotting, and exposes the
//! invariant selftest. Exit code is 0 only when every requested cell (or
//! check) succeeded.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kernmdp::error::Result;
use kernmdp::harness::{
    aggregate_cell_csvs, apply_seed_override, oracle_snapshot, run_experiment, run_selftest,
    ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "kernmdp", version, about = "Regret benchmark for kernelized episodic MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every (agent, seed) cell of a JSON experiment config.
    Run {
        /// Experiment description (JSON file).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads across seeds; overrides the config's `jobs`.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Precompute the oracle (optimal values, uniform-policy value,
    /// Lipschitz constant) for each seed of a config.
    Oracle {
        /// Experiment description (JSON file).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate a directory of per-cell CSVs into `report.json` plus a
    /// plot-ready long-format `long.csv`.
    Report {
        /// Directory holding `{label}-seed{N}.csv` files.
        #[arg(long)]
        dir: PathBuf,
        /// Where to write the aggregates (default: `--dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite at smoke scale, one line per check.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out, jobs } => run_cmd(&config, out, jobs),
        Command::Oracle { config, out } => oracle_cmd(&config, out),
        Command::Report { dir, out } => report_cmd(&dir, out),
        Command::Selftest => {
            let stdout = std::io::stdout();
            run_selftest(&mut stdout.lock())
        }
    }
}

fn load_config(path: &Path, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json_file(path)?;
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    if apply_seed_override(&mut cfg)? {
        println!("KERNMDP_SEED override active: seeds {:?}", cfg.seeds);
    }
    Ok(cfg)
}

fn run_cmd(config: &Path, out: Option<PathBuf>, jobs: Option<usize>) -> Result<bool> {
    let mut cfg = load_config(config, out)?;
    if let Some(jobs) = jobs {
        cfg.jobs = jobs;
    }
    let outcome = run_experiment(&cfg)?;
    for report in &outcome.reports {
        println!(
            "cell {} seed {}: cum_regret {:.4} over {} episodes, coverage R {:.2} P {:.2}",
            report.label,
            report.seed,
            report.final_cumulative(),
            report.episode_count(),
            report.covered_fraction_r,
            report.covered_fraction_p,
        );
    }
    for failure in &outcome.failures {
        eprintln!("cell {} seed {}: FAILED: {}", failure.label, failure.seed, failure.error);
    }
    println!(
        "wrote {} cell outputs and summary.json under {}",
        outcome.reports.len(),
        cfg.output_dir.display()
    );
    Ok(outcome.all_succeeded())
}

fn oracle_cmd(config: &Path, out: Option<PathBuf>) -> Result<bool> {
    let cfg = load_config(config, out)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    for &seed in &cfg.seeds {
        let snap = oracle_snapshot(&cfg, seed)?;
        let path = cfg.output_dir.join(format!("oracle-seed{seed}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&snap)?)?;
        println!(
            "oracle seed {seed}: v_star {:.6}, v_uniform {:.6}, lipschitz {:.4} -> {}",
            snap.v_star,
            snap.v_uniform,
            snap.lipschitz_l,
            path.display()
        );
    }
    Ok(true)
}

fn report_cmd(dir: &Path, out: Option<PathBuf>) -> Result<bool> {
    let out_dir = out.unwrap_or_else(|| dir.to_path_buf());
    std::fs::create_dir_all(&out_dir)?;
    let (summary, long) = aggregate_cell_csvs(dir)?;
    let json_path = out_dir.join("report.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&summary)?)?;
    let long_path = out_dir.join("long.csv");
    std::fs::write(&long_path, long)?;
    println!(
        "aggregated {} agent(s) x {} seed(s) -> {} and {}",
        summary.agents.len(),
        summary.seeds.len(),
        json_path.display(),
        long_path.display()
    );
    Ok(true)
}
