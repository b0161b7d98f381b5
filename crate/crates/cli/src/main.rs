use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use orient_cli::{commands, config, ExperimentConfig};

/// Full-range orientation losses: data, training, evaluation, loss
/// landscapes and gradient checks.
#[derive(Parser, Debug)]
#[command(name = "orient-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set scene.frames=10` or
    /// `--set methods='["sin_cos"]'`. Repeatable; applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory (default: `output_dir` from the config, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    show_config: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the synthetic dataset.
    Synth,
    /// Train every configured method and seed.
    Train,
    /// Evaluate trained runs, checkpoints or detection files.
    Eval,
    /// Export loss surfaces over the (sin, cos) plane.
    Landscape,
    /// Compare analytic gradients with finite differences.
    Gradcheck,
    /// Tabulate evaluation reports.
    Report,
}

fn run(cli: Cli) -> Result<String> {
    let cfg = config::load(cli.config.as_deref(), &cli.set)?;
    if cli.show_config {
        return Ok(serde_json::to_string_pretty(&cfg)?);
    }
    let out = cli
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    match cli.command {
        Command::Synth => commands::cmd_synth(&cfg, &out),
        Command::Train => commands::cmd_train(&cfg, &out),
        Command::Eval => commands::cmd_eval(&cfg, &out),
        Command::Landscape => commands::cmd_landscape(&cfg, &out),
        Command::Gradcheck => commands::cmd_gradcheck(&cfg, &out),
        Command::Report => commands::cmd_report(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let defaults = serde_json::to_string_pretty(&ExperimentConfig::default())
        .expect("default config serializes");
    let cmd = Cli::command().after_long_help(format!("Default configuration:\n{defaults}"));
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            if !summary.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
