use std::path::PathBuf;
use std::process::ExitCode;

use antispoof::pipeline::{cmd_eval, cmd_extract, cmd_fuse, cmd_score, cmd_synth, cmd_train, Context, PipelineError};
use clap::{Parser, Subcommand};

/// Replay spoofing countermeasures: corpus synthesis, features, models,
/// scoring, fusion and evaluation.
#[derive(Parser)]
#[command(name = "antispoof", version)]
struct Cli {
    /// Pipeline configuration (TOML). Built-in defaults are used without it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Report per-trial failures but still exit 0.
    #[arg(long, global = true)]
    keep_going: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic replay corpus.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract one feature type for every trial.
    Extract {
        #[arg(long)]
        feature: String,
        /// Protocol files (default: every corpus protocol).
        #[arg(long)]
        protocol: Vec<PathBuf>,
        #[arg(long)]
        audio_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the models of one system.
    Train {
        #[arg(long)]
        system: String,
        #[arg(long)]
        protocol: Option<PathBuf>,
    },
    /// Score a protocol with one system.
    Score {
        #[arg(long)]
        system: String,
        #[arg(long)]
        protocol: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fuse score files with logistic regression.
    Fuse {
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
        /// Labels for training the fusion.
        #[arg(long)]
        protocol: Option<PathBuf>,
        /// Apply this fusion model instead of training one.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out_model: Option<PathBuf>,
        #[arg(long)]
        out_scores: Option<PathBuf>,
    },
    /// Print the EER of a score file.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        protocol: Option<PathBuf>,
        /// Also write DET points (far frr threshold) here.
        #[arg(long)]
        det: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<String, PipelineError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    let mut ctx = Context::load(cli.config.as_deref(), cli.seed)?;
    ctx.keep_going = cli.keep_going;
    match cli.command {
        Command::Synth { out } => cmd_synth(&ctx, out.as_deref()),
        Command::Extract { feature, protocol, audio_dir, out } => {
            cmd_extract(&ctx, &feature, &protocol, audio_dir.as_deref(), out.as_deref())
        }
        Command::Train { system, protocol } => cmd_train(&ctx, &system, protocol.as_deref()),
        Command::Score { system, protocol, out } => cmd_score(&ctx, &system, protocol.as_deref(), out.as_deref()),
        Command::Fuse { scores, protocol, model, out_model, out_scores } => cmd_fuse(
            &ctx,
            &scores,
            protocol.as_deref(),
            model.as_deref(),
            out_model.as_deref(),
            out_scores.as_deref(),
        ),
        Command::Eval { scores, protocol, det } => cmd_eval(&ctx, &scores, protocol.as_deref(), det.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
