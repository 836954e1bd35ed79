//! Command-line front end for the reward learning and evaluation pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cnpr::pipeline::{run_pipeline, run_stage, ExperimentConfig, Stage};
use cnpr::Error;

#[derive(Parser)]
#[command(name = "cnpr", version, about = "Preference-based reward learning, offline policy training and outcome evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic cohort (or load a cohort file) into the run directory.
    Generate(Common),
    /// Train the preference reward model and write its checkpoint.
    LearnReward(Common),
    /// Score the learned and baseline rewards for every trajectory.
    ScoreBaselines(Common),
    /// Train one conservative Q-learning policy per reward formulation.
    TrainPolicy(Common),
    /// Compute outcome metrics for every trajectory.
    ComputeOutcomes(Common),
    /// Run regressions, correlations, heatmaps and feature importances.
    Evaluate(Common),
    /// Aggregate the tables of a run into report.md.
    Report(Common),
    /// Run every stage in order.
    Run(Common),
    /// Print the fully resolved configuration.
    ShowConfig(Common),
}

/// Flags override the config file; `CNPR_OUTPUT_DIR` and `CNPR_THREADS` sit in between.
#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// JSON-lines cohort file instead of the synthetic generator.
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// Number of synthetic trajectories.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reduced_features: bool,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    reward_epochs: Option<usize>,
    #[arg(long)]
    rl_epochs: Option<usize>,
    #[arg(long)]
    cql_alpha: Option<f64>,
    #[arg(long)]
    no_feature_importance: bool,
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_env()?;
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = Some(v);
        }
        if let Some(v) = &self.cohort {
            cfg.cohort.path = Some(v.clone());
        }
        if let Some(v) = self.n {
            cfg.cohort.synthetic.n_trajectories = v;
        }
        cfg.reduced_features |= self.reduced_features;
        if let Some(v) = self.train_frac {
            cfg.train_frac = v;
        }
        if let Some(v) = self.reward_epochs {
            cfg.reward.max_epochs = v;
        }
        if let Some(v) = self.rl_epochs {
            cfg.rl.epochs = v;
        }
        if let Some(v) = self.cql_alpha {
            cfg.rl.cql_alpha = v;
        }
        if self.no_feature_importance {
            cfg.evaluation.feature_importance = false;
        }
        cfg.resolve()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, stage) = match &cli.command {
        Command::Generate(c) => (c, Some(Stage::Generate)),
        Command::LearnReward(c) => (c, Some(Stage::LearnReward)),
        Command::ScoreBaselines(c) => (c, Some(Stage::ScoreBaselines)),
        Command::TrainPolicy(c) => (c, Some(Stage::TrainPolicy)),
        Command::ComputeOutcomes(c) => (c, Some(Stage::ComputeOutcomes)),
        Command::Evaluate(c) => (c, Some(Stage::Evaluate)),
        Command::Report(c) => (c, Some(Stage::Report)),
        Command::Run(c) | Command::ShowConfig(c) => (c, None),
    };
    let level = match common.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let cfg = match common.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Command::ShowConfig(_) = cli.command {
        return match cfg.to_toml_string() {
            Ok(t) => {
                print!("{t}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        };
    }
    let res = match stage {
        Some(s) => run_stage(&cfg, s),
        None => run_pipeline(&cfg).map(|r| {
            log::info!("run complete: {} files in {}", r.manifest.files.len(), r.output_dir.display());
        }),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
