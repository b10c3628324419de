use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use consensus_sim::{
    cmd_analyze, cmd_design, cmd_simulate, cmd_sweep, parse_grid, sweep_csv, CliError, Common,
    SimulateOptions, SweepOptions,
};

#[derive(Parser)]
#[command(name = "consensus-sim", version, about = "Design, simulate and analyze leader-following consensus networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file.
    #[arg(long)]
    config: PathBuf,
    /// Accept an observer gain at or below the computed bound.
    #[arg(long)]
    allow_unsafe_gains: bool,
    /// Override the integration step.
    #[arg(long)]
    dt: Option<f64>,
    /// Override the final time.
    #[arg(long = "t-end")]
    t_end: Option<f64>,
}

impl From<CommonArgs> for Common {
    fn from(a: CommonArgs) -> Self {
        Common {
            config: a.config,
            allow_unsafe_gains: a.allow_unsafe_gains,
            dt: a.dt,
            t_end: a.t_end,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the gain design and the checks behind it.
    Design {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the closed loop and write trajectory.csv, summary.txt and design.txt.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overwrite existing output files.
        #[arg(long)]
        force: bool,
        /// Append the raw state columns to the CSV.
        #[arg(long)]
        full_state: bool,
    },
    /// Summarize a previously written trajectory.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Trajectory CSV; defaults to <out>/trajectory.csv.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a grid of observer gains and write one row per point.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated mu values.
        #[arg(long)]
        mu: Option<String>,
        /// Comma-separated kappa values.
        #[arg(long)]
        kappa: Option<String>,
        /// Directory for sweep.csv; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite an existing sweep.csv.
        #[arg(long)]
        force: bool,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Design { common } => {
            let (report, ok) = cmd_design(&common.into())?;
            print!("{report}");
            Ok(ok)
        }
        Command::Simulate {
            common,
            out,
            force,
            full_state,
        } => {
            let summary = cmd_simulate(
                &common.into(),
                &SimulateOptions {
                    out: out.clone(),
                    force,
                    full_state,
                },
            )?;
            print!("{}", summary.to_text());
            eprintln!("wrote {}", out.display());
            Ok(true)
        }
        Command::Analyze {
            common,
            trajectory,
            out,
            report,
        } => {
            let path = trajectory.unwrap_or_else(|| out.join("trajectory.csv"));
            print!("{}", cmd_analyze(&common.into(), &path, report.as_deref())?);
            Ok(true)
        }
        Command::Sweep {
            common,
            mu,
            kappa,
            out,
            force,
        } => {
            let to_stdout = out.is_none();
            let grid = |v: Option<String>| -> Result<Vec<f64>, CliError> {
                v.map_or(Ok(Vec::new()), |v| parse_grid(&v).map_err(CliError::Validation))
            };
            let rows = cmd_sweep(
                &common.into(),
                &SweepOptions {
                    mu: grid(mu)?,
                    kappa: grid(kappa)?,
                    out,
                    force,
                },
            )?;
            if to_stdout {
                print!("{}", sweep_csv(&rows));
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
