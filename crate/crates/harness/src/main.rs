use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use hrms_harness::{run_single, run_suite, truth, verify, write_report, ExperimentConfig, RunId};

#[derive(Parser)]
#[command(name = "hrms", version, about = "Run and audit repeat/multi-point sampling sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the sweep described by the config file.
    Run {
        #[command(flatten)]
        common: Common,
        /// Re-run only this run (e.g. `EI_rs3_ms3_rep02`), rewriting its record files.
        #[arg(long)]
        only: Option<String>,
    },
    /// Build (or rebuild) the fidelity reference and write `truth_grid.csv`.
    Truth {
        #[command(flatten)]
        common: Common,
    },
    /// Recompute the tables and manifest from stored run records.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Check accounting, table and manifest consistency of a finished sweep.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the evaluation budget.
    #[arg(long)]
    budget: Option<usize>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(b) = self.budget {
            cfg.stop.max_function_evals = Some(b);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { common, only: Some(key) } => {
            let cfg = common.load()?;
            let id = RunId::parse(&key).with_context(|| format!("bad run key `{key}`"))?;
            let rec = run_single(&cfg, &id)?;
            println!(
                "{key}: {} iterations, {} evaluations, {}",
                rec.totals.iterations,
                rec.totals.function_evaluations,
                rec.termination.label()
            );
        }
        Command::Run { common, only: None } => {
            let cfg = common.load()?;
            let outcome = run_suite(&cfg)?;
            let failures = outcome.rows.iter().filter(|r| r.termination == "covariance_failure").count();
            println!(
                "{} runs written to {} ({failures} covariance failures)",
                outcome.runs.len(),
                outcome.out_dir.display()
            );
        }
        Command::Truth { common } => {
            let cfg = common.load()?;
            let t = truth::prepare(&cfg, &cfg.output_dir, true)?;
            let path = truth::write_grid(&cfg, &t, &cfg.output_dir)?;
            println!("{} reference written to {}", t.label(), path.display());
        }
        Command::Report { common } => {
            let cfg = common.load()?;
            let rows = write_report(&cfg)?;
            println!("tables rebuilt from {} runs in {}", rows.len(), cfg.output_dir.display());
        }
        Command::Verify { common } => {
            let cfg = common.load()?;
            let report = verify(&cfg)?;
            println!(
                "checked {} runs, {} tables, {} hashed files",
                report.runs_checked, report.tables_checked, report.files_hashed
            );
            if !report.passed() {
                for p in &report.problems {
                    eprintln!("FAIL {p}");
                }
                bail!("{} problems found", report.problems.len());
            }
            println!("verify: ok");
        }
    }
    Ok(ExitCode::SUCCESS)
}
