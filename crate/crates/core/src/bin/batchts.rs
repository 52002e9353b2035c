use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use batchts::argmaxprob::ProbMethod;
use batchts::batching::{fixed_endpoints, growth_diagnostic, ScheduleSpec};
use batchts::harness::{
    compare_runs, diagnose, load_result, parse_arms, run_experiment, run_replicate,
    ExperimentConfig, HarnessError, Overrides,
};

#[derive(Parser)]
#[command(
    name = "batchts",
    version,
    about = "Batched Thompson sampling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its result directory.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Compare result directories against the first one.
    Compare {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// Also write the comparison as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print ratio diagnostics for a result directory.
    Diagnose {
        result: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Check a config's batch schedule for subexponential growth.
    ValidateSchedule {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    replicates: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// per-step, constant:N, polynomial:P, geometric:R, explicit:a,b,... or ipase
    #[arg(long)]
    schedule: Option<ScheduleSpec>,
    /// Comma-separated bern:P and gauss:MEAN[:VAR] items.
    #[arg(long)]
    arms: Option<String>,
    /// auto, closed-form, quadrature[:TOL] or monte-carlo[:N]
    #[arg(long)]
    prob_method: Option<ProbMethod>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

impl OverrideArgs {
    fn into_overrides(self) -> Result<Overrides, HarnessError> {
        let arms = self
            .arms
            .as_deref()
            .map(parse_arms)
            .transpose()
            .map_err(HarnessError::Config)?;
        Ok(Overrides {
            horizon: self.horizon,
            replicates: self.replicates,
            master_seed: self.seed,
            schedule: self.schedule,
            arms,
            prob_method: self.prob_method,
            output: self.out,
            workers: self.workers,
        })
    }
}

fn load_config(path: &Path, overrides: OverrideArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply(overrides.into_overrides()?);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, overrides } => {
            let mut cfg = load_config(&config, overrides)?;
            if cfg.output.is_none() {
                cfg.output = Some(PathBuf::from("results").join(&cfg.hash()[..12]));
            }
            let result = run_experiment(&cfg)?;
            let s = &result.summary;
            println!(
                "wrote {}",
                cfg.output.as_ref().expect("set above").display()
            );
            println!(
                "T = {}, {} replicates: mean regret {:.4}, mean pseudo-regret {:.4}, mean batches {:.2}",
                s.horizon, result.metadata.replicates, s.mean_random_regret, s.mean_pseudo_regret, s.mean_batches
            );
        }
        Command::Compare { results, csv } => {
            let loaded = results
                .iter()
                .map(|p| load_result(p))
                .collect::<Result<Vec<_>, _>>()?;
            let cmp = compare_runs(&loaded)?;
            print!("{cmp}");
            if let Some(path) = csv {
                std::fs::write(&path, cmp.to_csv()?).map_err(|e| HarnessError::io(&path, e))?;
            }
        }
        Command::Diagnose { result, json } => {
            let report = diagnose(&load_result(&result)?);
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                );
            } else {
                print!("{report}");
            }
        }
        Command::ValidateSchedule { config, overrides } => {
            let cfg = load_config(&config, overrides)?;
            let env = cfg.validate()?;
            let (batches, verdict, sup) = if cfg.schedule.is_fixed() {
                let mut endpoints = vec![0];
                endpoints.extend(
                    fixed_endpoints(&cfg.schedule, cfg.horizon)
                        .map_err(|e| HarnessError::Config(e.to_string()))?,
                );
                let g = growth_diagnostic(&endpoints);
                (endpoints.len() as u64 - 1, g.verdict, g.running_sup_tail)
            } else {
                let r = run_replicate(&cfg, &env, 0)?;
                (
                    r.final_state.batch_count,
                    r.growth.verdict,
                    r.growth.running_sup_tail,
                )
            };
            println!(
                "schedule {} over T = {}: {batches} batches",
                cfg.schedule, cfg.horizon
            );
            match sup {
                Some(s) => println!("largest tail exponent {s:.4}"),
                None => println!("largest tail exponent n/a"),
            }
            println!("verdict: {}", format!("{verdict:?}").to_lowercase());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
