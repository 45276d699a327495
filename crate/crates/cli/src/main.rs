use std::path::PathBuf;
use std::process::ExitCode;

use aps_cli::{execute, parse_config, CliError, Command, Overrides};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aps", version, about = "TMLE with adaptive prespecification for randomized trials")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Global seed; overrides APS_SEED and the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate effects on a trial CSV, overall and by subgroup.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Extra subgroup, e.g. "age < 30 & gender == 0".
        #[arg(long)]
        subgroup: Option<String>,
    },
    /// Run a simulation study over a grid of data-generating settings.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replicates: Option<u64>,
    },
    /// Treatment-blind Type-I error audit by permuting the treatment.
    Permute {
        #[command(flatten)]
        common: Common,
        /// Number of permutations (at least 100).
        #[arg(long)]
        b: Option<usize>,
        #[arg(long)]
        subgroup: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (command, common, overrides) = match cli.command {
        Cmd::Analyze { common, subgroup } => (
            Command::Analyze,
            common,
            Overrides {
                subgroup,
                ..Default::default()
            },
        ),
        Cmd::Simulate { common, replicates } => (
            Command::Simulate,
            common,
            Overrides {
                replicates,
                ..Default::default()
            },
        ),
        Cmd::Permute { common, b, subgroup } => (
            Command::Permute,
            common,
            Overrides {
                permutations: b,
                subgroup,
                ..Default::default()
            },
        ),
    };
    let overrides = Overrides {
        seed: common.seed,
        output_dir: common.out.clone(),
        ..overrides
    };
    if let Some(k) = common.workers {
        if k == 0 {
            return Err(CliError::config("--workers: must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::config(format!("--workers: {e}")))?;
    }
    let env_seed = std::env::var("APS_SEED").ok();
    let cfg = parse_config(command, &common.config, env_seed.as_deref(), &overrides)?;
    execute(&cfg)?;
    eprintln!("wrote {} report to {}", command.name(), cfg.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
