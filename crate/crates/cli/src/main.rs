mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fightnet::par;
use fightnet::train::Subject;

use commands::{load_config, Failure, Outcome};

/// Train and evaluate CNN + ConvLSTM violent-video classifiers.
#[derive(Parser)]
#[command(name = "fightnet", version)]
struct Cli {
    /// Spread per-clip work over threads. Off by default; results are
    /// identical either way.
    #[arg(long, global = true)]
    parallel: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run config with [model], [train], [pipeline] and [data] sections.
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. `--set train.learning_rate=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write a checkpoint directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint directory.
        #[arg(short, long)]
        out: PathBuf,
        /// Train on this fold's training split instead of every clip.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Evaluate a checkpoint and report per-clip predictions.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate this fold's test split instead of every clip.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Train and test on every fold and report mean ± std accuracy.
    Crossval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Print trainable-parameter counts per component.
    CountParams {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Build the model and count its tensors instead of using the
        /// closed form.
        #[arg(long)]
        measure: bool,
        #[arg(long)]
        json: bool,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Comma-separated subjects, e.g. `conv2d,convlstm:3,model`.
        /// Defaults to the full suite.
        #[arg(long, value_delimiter = ',')]
        subjects: Vec<Subject>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON report path.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Write a stratified fold plan for the configured manifest.
    MakeFolds {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Measure eval-mode forward throughput on random clips.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 4)]
        clips: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        json: bool,
    },
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Train { cfg, out, fold } => {
            let c = load_config(cfg.config.as_ref(), &cfg.overrides)?;
            commands::train(&c, &out, fold)
        }
        Command::Eval {
            cfg,
            checkpoint,
            fold,
            out,
            json,
        } => {
            let c = load_config(cfg.config.as_ref(), &cfg.overrides)?;
            commands::eval(&c, &checkpoint, fold, out.as_deref(), json)
        }
        Command::Crossval { cfg, out, json } => {
            let c = load_config(cfg.config.as_ref(), &cfg.overrides)?;
            commands::crossval(&c, out.as_deref(), json)
        }
        Command::CountParams { cfg, measure, json } => {
            let c = load_config(cfg.config.as_ref(), &cfg.overrides)?;
            commands::count(&c, measure, json)
        }
        Command::Gradcheck {
            subjects,
            trials,
            seed,
            out,
            json,
        } => commands::gradcheck(&subjects, trials, seed, out.as_deref(), json),
        Command::MakeFolds { cfg, out } => {
            let c = load_config(cfg.config.as_ref(), &cfg.overrides)?;
            commands::make_folds_cmd(&c, &out)
        }
        Command::Bench {
            cfg,
            clips,
            repeats,
            json,
        } => {
            let c = load_config(cfg.config.as_ref(), &cfg.overrides)?;
            commands::bench(&c, clips, repeats, cli.parallel, json)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    par::set_enabled(cli.parallel);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
