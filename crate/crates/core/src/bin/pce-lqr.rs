use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pce_lqr::cli::{self, Outcome, EXIT_FAILURE};
use pce_lqr::config::RunConfig;

/// Policy optimization of LQR gains for plants with a uniform parameter.
#[derive(Debug, Parser)]
#[command(name = "pce-lqr", version)]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML (or .json) run configuration; the illustrative preset when absent.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory, overriding the configuration.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed for the sampled initial states, overriding the configuration.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Minimize the surrogate cost by gradient descent.
    Optimize {
        #[command(flatten)]
        common: Common,
    },
    /// Check a gain against the true parametric plant.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Gain as JSON nested lists, or a report.json.
        #[arg(long, value_name = "PATH")]
        gain: PathBuf,
    },
    /// Surrogate cost error against the expansion order.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        gain: PathBuf,
        /// Orders such as "1..6" or "1,2,3,8"; the configured list when absent.
        #[arg(long, value_name = "LIST")]
        orders: Option<String>,
    },
    /// Rerun a published example and compare with its reported results.
    Reproduce {
        /// illustrative or mass-spring
        example: String,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig, Outcome> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| Outcome {
            code: EXIT_FAILURE,
            summary: format!("error: {e}"),
        })?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Optimize { common } => match load(&common) {
            Ok(cfg) => cli::cmd_optimize(&cfg),
            Err(o) => o,
        },
        Command::Validate { common, gain } => match load(&common) {
            Ok(cfg) => cli::cmd_validate(&cfg, &gain),
            Err(o) => o,
        },
        Command::Convergence {
            common,
            gain,
            orders,
        } => {
            let cfg = match load(&common) {
                Ok(cfg) => cfg,
                Err(o) => return o,
            };
            let orders = match orders {
                Some(text) => match cli::parse_orders(&text) {
                    Ok(v) => v,
                    Err(e) => {
                        return Outcome {
                            code: EXIT_FAILURE,
                            summary: format!("error: {e}"),
                        }
                    }
                },
                None => cfg.validation.orders.clone(),
            };
            cli::cmd_convergence(&cfg, &gain, &orders)
        }
        Command::Reproduce { example, out } => cli::cmd_reproduce(&example, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let level = if args.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = run(args.command);
    if outcome.summary.starts_with("error:") {
        eprintln!("{}", outcome.summary);
    } else if !args.quiet || outcome.code != 0 {
        println!("{}", outcome.summary);
    }
    ExitCode::from(outcome.code as u8)
}
