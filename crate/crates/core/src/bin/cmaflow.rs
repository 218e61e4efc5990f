use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cmaflow::run::{execute, Command, Invocation, ScenarioKind};

#[derive(Parser)]
#[command(name = "cmaflow", version, about = "Parabolic complex Monge-Ampère flows on flat tori")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Run configuration (`section.key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override a key; a bare key means `tol.<key>`. Repeatable.
    #[arg(long = "tol-override", global = true, value_name = "KEY=VAL")]
    tol_override: Vec<String>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve det(ω₀ + dd^c ρ) = e^c g and write ρ and c.
    EllipticSolve,
    /// Run the flow and write one field file per node plus mesh.csv.
    FlowRun,
    /// Run the estimate suite and write estimates.csv.
    Check {
        /// Use a trajectory written by flow-run instead of running the flow.
        #[arg(long)]
        traj: Option<PathBuf>,
    },
    /// Check that a subsolution stays below a supersolution.
    Compare {
        #[arg(long)]
        sub: PathBuf,
        #[arg(long = "super")]
        sup: PathBuf,
    },
    /// Packaged long-time experiments.
    Scenario {
        #[command(subcommand)]
        action: ScenarioCmd,
    },
    /// Quantitative stability bound between two stored trajectories.
    Stability {
        #[arg(long)]
        phi: PathBuf,
        #[arg(long)]
        psi: PathBuf,
        /// Configuration of `psi` when it differs from `--config`.
        #[arg(long)]
        psi_config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    Run {
        #[arg(value_enum)]
        kind: Kind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Cy,
    GeneralType,
    Stability,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let command = match cli.cmd {
        Cmd::EllipticSolve => Command::EllipticSolve,
        Cmd::FlowRun => Command::FlowRun,
        Cmd::Check { traj } => Command::Check { trajectory: traj },
        Cmd::Compare { sub, sup } => Command::Compare { sub, sup },
        Cmd::Scenario { action: ScenarioCmd::Run { kind } } => Command::Scenario(match kind {
            Kind::Cy => ScenarioKind::Cy,
            Kind::GeneralType => ScenarioKind::GeneralType,
            Kind::Stability => ScenarioKind::Stability,
        }),
        Cmd::Stability { phi, psi, psi_config } => Command::Stability { phi, psi, psi_config },
    };
    let inv = Invocation {
        command,
        config: cli.config,
        out: cli.out,
        overrides: cli.tol_override,
    };
    let (code, _) = execute(&inv);
    ExitCode::from(code as u8)
}
