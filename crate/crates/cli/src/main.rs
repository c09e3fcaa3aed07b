use std::path::PathBuf;
use std::process::ExitCode;

use ask1_cli::config::{Overrides, RunConfig};
use ask1_cli::plot::{parse_table, render_svg};
use ask1_cli::run::{cmd_eval, cmd_train, eval_report, load_profile, EvalArgs};
use ask1_cli::{init_threads, CliError};
use ask1_core::eval::CommandProfile;
use ask1_core::sim::TerrainKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ask1", version, about = "Gait-conditioned quadruped locomotion training on a simplified simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// JSON run config; defaults are used for anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    num_envs: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["go1", "ask1"])]
    robot: Option<String>,
    #[arg(long)]
    terrain: Option<TerrainKind>,
}

impl RunFlags {
    fn config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            num_envs: self.num_envs,
            iterations: self.iterations,
            out: None,
            robot: self.robot.clone(),
            terrain: self.terrain,
        });
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write config.json, metrics.csv, checkpoints/ and summary.json.
    Train {
        #[command(flatten)]
        run: RunFlags,
        /// Suppress per-iteration progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Roll out a checkpoint with the mean action and write tracking, feet and reward tables and plots.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunFlags,
        /// CSV schedule with columns t,v_x,v_y,omega_z.
        #[arg(long, conflicts_with = "command")]
        profile: Option<PathBuf>,
        /// Constant command `v_x,v_y,omega_z` used when no profile is given.
        #[arg(long, default_value = "0.5,0,0")]
        command: String,
        /// Rollout length in seconds.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
    },
    /// Render a numeric CSV (first column is x) as an SVG line plot.
    Plot {
        csv: PathBuf,
        out: PathBuf,
        /// Comma-separated series to draw; all columns by default.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
    },
    /// Print the fully resolved config as JSON.
    Config {
        #[command(flatten)]
        run: RunFlags,
    },
}

fn parse_command(s: &str) -> Result<CommandProfile, CliError> {
    let parts: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| CliError::Config(format!("--command expects v_x,v_y,omega_z, got `{s}`")))?;
    match parts.as_slice() {
        [vx, vy, wz] => Ok(CommandProfile::constant([*vx, *vy, *wz])),
        _ => Err(CliError::Config(format!("--command expects three values, got `{s}`"))),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Train { run, quiet } => {
            let mut cfg = run.config()?;
            if let Some(out) = run.out {
                cfg.output_dir = out;
            }
            let dir = cmd_train(&cfg, quiet)?;
            eprintln!("run written to {}", dir.display());
        }
        Command::Eval { checkpoint, run, profile, command, duration } => {
            let cfg = run.config()?;
            let profile = match profile {
                Some(p) => load_profile(&p)?,
                None => parse_command(&command)?,
            };
            let out = run.out.unwrap_or_else(|| PathBuf::from("eval"));
            let steps = cmd_eval(&cfg, &EvalArgs { checkpoint, profile, duration_s: duration, out: out.clone() })?;
            println!("{}", eval_report(&steps));
            eprintln!("eval written to {}", out.display());
        }
        Command::Plot { csv, out, columns } => {
            let text = std::fs::read_to_string(&csv).map_err(|e| CliError::Config(format!("{}: {e}", csv.display())))?;
            let table = parse_table(&text).map_err(|e| CliError::Config(format!("{}: {e}", csv.display())))?;
            let title = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let svg = render_svg(&table, &columns, &title).map_err(CliError::Config)?;
            std::fs::write(&out, svg).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
        }
        Command::Config { run } => {
            let mut cfg = run.config()?;
            if let Some(out) = run.out {
                cfg.output_dir = out;
            }
            print!("{}", cfg.resolved()?.to_json());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
