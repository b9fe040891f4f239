//! Command-line driver: configuration, run orchestration and output files.

pub mod commands;
pub mod config;

use clap::{Parser, Subcommand};

pub use commands::Failure;

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code for rejected input: bad configuration, inadmissible data, failed checks.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code for runtime failures: I/O, solver breakdown, strict energy abort.
pub const EXIT_RUNTIME: i32 = 2;
/// Exit code for usage errors such as an unknown subcommand.
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "nsch",
    version,
    about = "Compressible Navier-Stokes / Cahn-Hilliard mixture solver",
    arg_required_else_help = true
)]
pub struct Cli {
    /// Print every configuration key with its default and exit.
    #[arg(long)]
    pub help_config: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write diagnostics, snapshots and a trajectory.
    Run {
        #[arg(long)]
        config: std::path::PathBuf,
        /// Override `output.directory`.
        #[arg(long)]
        out: Option<std::path::PathBuf>,
    },
    /// Run the scenario for every eps in `potential.schedule`.
    Sweep {
        #[arg(long)]
        config: std::path::PathBuf,
        #[arg(long)]
        out: Option<std::path::PathBuf>,
    },
    /// Evaluate weak-form residuals of a stored run under grid refinement.
    CheckWeakform {
        /// Output directory of a previous `run`.
        #[arg(long)]
        traj: std::path::PathBuf,
        /// Number of (h, dt) halvings beyond the stored resolution.
        #[arg(long, default_value_t = 1)]
        refinements: u32,
        /// Support of the time bump as a fraction of the final time.
        #[arg(long, default_value_t = 0.75)]
        support_fraction: f64,
    },
    /// Check the structural properties of the regularized potential.
    VerifyPotential {
        /// Mixing temperature of the logarithmic term.
        #[arg(long)]
        theta: f64,
        /// Critical temperature of the quadratic term; must exceed `theta`.
        #[arg(long)]
        theta0: f64,
        /// Regularization width near the pure phases.
        #[arg(long)]
        eps: f64,
    },
    /// Check the initial data of a configuration without running it.
    ValidateInitial {
        #[arg(long)]
        config: std::path::PathBuf,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run_cli<I, S>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    if cli.help_config {
        let _ = write!(out, "{}", config::help_text());
        return EXIT_OK;
    }
    let Some(cmd) = cli.command else {
        let _ = writeln!(err, "no subcommand given; see --help");
        return EXIT_USAGE;
    };
    let result = match cmd {
        Command::Run { config, out: dir } => commands::run(&config, dir.as_deref(), out),
        Command::Sweep { config, out: dir } => commands::sweep(&config, dir.as_deref(), out),
        Command::CheckWeakform {
            traj,
            refinements,
            support_fraction,
        } => commands::check_weakform(&traj, refinements, support_fraction, out),
        Command::VerifyPotential { theta, theta0, eps } => commands::verify_potential(theta, theta0, eps, out),
        Command::ValidateInitial { config } => commands::validate_initial(&config, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "{f}");
            f.exit_code()
        }
    }
}
