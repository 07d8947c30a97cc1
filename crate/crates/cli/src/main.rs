use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hte_core::app::{self, AppError, Overrides};
use hte_core::inference::ClanMode;
use hte_core::learner::LearnerKind;

#[derive(Parser)]
#[command(name = "hte", version, about = "Heterogeneous treatment effects in randomized trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate BLP, GATES and CLAN over repeated splits and write reports.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        splits: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Comma-separated learners: en, rf.
        #[arg(long, value_delimiter = ',', value_parser = parse_learner)]
        ml: Option<Vec<LearnerKind>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        clan: Option<Toggle>,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write a synthetic trial and its ground truth.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the data and write covariate balance only.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_learner(s: &str) -> Result<LearnerKind, String> {
    LearnerKind::parse(s).ok_or_else(|| format!("unknown learner `{s}` (expected en or rf)"))
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Analyze { config, splits, alpha, ml, seed, out, clan, threads } => {
            let overrides = Overrides {
                splits,
                alpha,
                learners: ml,
                seed,
                out,
                clan: clan.map(|t| match t {
                    Toggle::On => ClanMode::On,
                    Toggle::Off => ClanMode::Off,
                }),
                threads,
            };
            let done = app::analyze(&config, &overrides)?;
            for o in &done.results.outcomes {
                for l in &o.analysis.learners {
                    println!(
                        "{}/{}: ATE {:.3} ({:.3}, {:.3}), {} of {} splits ok",
                        o.analysis.outcome,
                        l.learner,
                        l.ate.point,
                        l.ate.lower,
                        l.ate.upper,
                        l.splits_ok,
                        l.splits_ok + l.splits_failed
                    );
                }
            }
            println!("wrote {} files to {}", done.written.len(), done.output_dir.display());
        }
        Command::Simulate { config, out } => {
            let (data, truth) = app::simulate(&config, &out)?;
            println!("wrote {} and {}", data.display(), truth.display());
        }
        Command::Validate { config, out } => {
            let overrides = Overrides { out, ..Overrides::default() };
            let (report, written) = app::validate(&config, &overrides)?;
            for r in &report {
                println!(
                    "{}: {} rows ({} dropped), {} treated, propensity {:.3}",
                    r.outcome, r.n_obs, r.dropped_rows, r.n_treated, r.propensity
                );
            }
            for p in written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
