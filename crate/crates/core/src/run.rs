//! Orchestration behind the command-line subcommands.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 solver failure (the manifest
//! records the failing node), 3 a verification check failed.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use crate::comparison::{compare, quantitative_stability_bound, StabilityBound};
use crate::config::{RunConfig, StabilityVariant};
use crate::elliptic::{solve_elliptic_ma, NewtonOptions, Normalization};
use crate::error::{Error, Result};
use crate::estimates::estimate_suite;
use crate::grid::ScalarField;
use crate::parabolic::{run_delta_sweep, run_flow, FlowConfig};
use crate::report::{emit_outputs, fmt17, read_trajectory, OutputDir, RunManifest, RunResult, RunStatus};
use crate::scenarios::{density_floor_case, initial_data_case, run_cy_flow, run_general_type_flow, run_stability_experiment};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    Cy,
    GeneralType,
    Stability,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Cy => "cy",
            ScenarioKind::GeneralType => "general-type",
            ScenarioKind::Stability => "stability",
        }
    }
}

#[derive(Clone, Debug)]
pub enum Command {
    EllipticSolve,
    FlowRun,
    /// Estimate suite on a stored trajectory, or on a fresh run.
    Check { trajectory: Option<PathBuf> },
    Compare { sub: PathBuf, sup: PathBuf },
    Scenario(ScenarioKind),
    /// Quantitative stability bound between two stored trajectories.
    Stability { phi: PathBuf, psi: PathBuf, psi_config: Option<PathBuf> },
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::EllipticSolve => "elliptic-solve".into(),
            Command::FlowRun => "flow-run".into(),
            Command::Check { .. } => "check".into(),
            Command::Compare { .. } => "compare".into(),
            Command::Scenario(k) => format!("scenario run {}", k.name()),
            Command::Stability { .. } => "stability".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: Command,
    /// `None` runs on the documented defaults.
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub overrides: Vec<String>,
}

fn load_config(path: &Option<PathBuf>, overrides: &[String]) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p, overrides),
        None => RunConfig::parse_with("", overrides, None),
    }
}

fn failed_checks<'a>(names: impl IntoIterator<Item = (&'a str, bool)>) -> RunStatus {
    let failed: Vec<String> = names.into_iter().filter(|(_, p)| !p).map(|(n, _)| n.to_string()).collect();
    if failed.is_empty() {
        RunStatus::Success
    } else {
        RunStatus::AcceptanceFailure { failed }
    }
}

fn bound_txt(b: &StabilityBound) -> String {
    let mut s = String::new();
    for (k, v) in [
        ("bound", b.bound),
        ("observed", b.observed),
        ("start_gap", b.start_gap),
        ("start_gap_l1", b.start_gap_l1),
        ("M", b.m),
        ("density_gap", b.density_gap),
        ("delta", b.delta),
        ("A", b.a_const),
        ("B", b.b_const),
        ("M0", b.m0),
        ("M1", b.m1),
        ("M2", b.m2),
        ("M3", b.m3),
        ("L", b.l),
    ] {
        let _ = writeln!(s, "{k} = {}", fmt17(v));
    }
    let _ = writeln!(s, "pass = {}", b.pass);
    s
}

fn body(cmd: &Command, rc: &RunConfig, cfg: &FlowConfig, out: &mut OutputDir) -> Result<RunStatus> {
    let grid = &cfg.grid;
    match cmd {
        Command::EllipticSolve => {
            let h = cfg.family.eval_field(grid, 0.0)?;
            let mu = cfg.effective_density()?;
            let opts = NewtonOptions {
                tol: rc.elliptic_tol,
                max_linear: rc.step_tol.max_linear,
                min_eig_floor: rc.step_tol.min_eig_floor,
                ..NewtonOptions::default()
            };
            let sol = solve_elliptic_ma(grid, &h, &mu.g, Normalization::MeanZero, opts)?;
            emit_outputs(
                &RunResult {
                    elliptic: Some(&sol),
                    ..Default::default()
                },
                out,
            )?;
            Ok(RunStatus::Success)
        }
        Command::FlowRun => {
            let traj = run_flow(cfg)?;
            emit_outputs(
                &RunResult {
                    trajectory: Some(&traj),
                    ..Default::default()
                },
                out,
            )?;
            if rc.deltas.len() >= 2 {
                let (_, spread) = run_delta_sweep(cfg, &rc.deltas)?;
                let mut s = String::from("delta_a,delta_b,spread\n");
                for (w, sp) in rc.deltas.windows(2).zip(&spread) {
                    let _ = writeln!(s, "{},{},{}", fmt17(w[0]), fmt17(w[1]), fmt17(*sp));
                }
                out.write("delta_sweep.csv", &s)?;
            }
            Ok(RunStatus::Success)
        }
        Command::Check { trajectory } => {
            let traj = match trajectory {
                Some(dir) => read_trajectory(dir, grid)?,
                None => run_flow(cfg)?,
            };
            let (_, rep) = estimate_suite(&traj, cfg, rc.estimates_tol)?;
            emit_outputs(
                &RunResult {
                    estimates: Some(&rep),
                    ..Default::default()
                },
                out,
            )?;
            Ok(failed_checks(rep.rows.iter().map(|r| (r.name.as_str(), r.pass))))
        }
        Command::Compare { sub, sup } => {
            let sub = read_trajectory(sub, grid)?;
            let sup = read_trajectory(sup, grid)?;
            let rep = compare(&sub, &sup, cfg, rc.compare_options(cfg, &sub))?;
            emit_outputs(
                &RunResult {
                    comparison: Some((&rep, &sub.times)),
                    ..Default::default()
                },
                out,
            )?;
            Ok(failed_checks([("ordering", rep.pass)]))
        }
        Command::Scenario(ScenarioKind::Stability) => {
            let case = match rc.variant {
                StabilityVariant::Floor => density_floor_case(cfg, &rc.floors),
                StabilityVariant::Initial => {
                    let bump = ScalarField::from_fn(grid, |x| rc.bump * (2.0 * std::f64::consts::PI * x[0]).cos());
                    initial_data_case(cfg, &rc.floors, &bump)
                }
            };
            let rep = run_stability_experiment(&case, rc.eps, rc.estimates_tol)?;
            emit_outputs(
                &RunResult {
                    stability: Some(&rep),
                    ..Default::default()
                },
                out,
            )?;
            Ok(failed_checks([
                ("monotone sup gaps", rep.monotone),
                ("bounds dominate", rep.bounds.iter().all(|b| b.pass)),
            ]))
        }
        Command::Scenario(kind) => {
            let res = if *kind == ScenarioKind::Cy {
                run_cy_flow(cfg, &rc.cy_options())?
            } else {
                run_general_type_flow(cfg, &rc.general_type_options())?
            };
            emit_outputs(
                &RunResult {
                    scenario: Some(&res),
                    ..Default::default()
                },
                out,
            )?;
            Ok(failed_checks(res.checks.iter().map(|c| (c.name.as_str(), c.pass))))
        }
        Command::Stability { phi, psi, psi_config } => {
            let cfg_psi = match psi_config {
                Some(p) => RunConfig::from_file(p, &[])?.build()?,
                None => cfg.clone(),
            };
            let a = read_trajectory(phi, grid)?;
            let b = read_trajectory(psi, &cfg_psi.grid)?;
            let bound = quantitative_stability_bound(&a, &b, cfg, &cfg_psi, rc.eps, rc.estimates_tol)?;
            out.write("stability_bound.txt", &bound_txt(&bound))?;
            Ok(failed_checks([("bound dominates", bound.pass)]))
        }
    }
}

/// Run one subcommand; returns the exit code and the manifest, if one was written.
pub fn execute(inv: &Invocation) -> (i32, Option<RunManifest>) {
    let start = Instant::now();
    let prepared = load_config(&inv.config, &inv.overrides).and_then(|rc| {
        let cfg = rc.build()?;
        cfg.validate()?;
        Ok((rc, cfg))
    });
    let (rc, cfg) = match prepared {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return (1, None);
        }
    };
    let mut out = match OutputDir::create(&inv.out) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return (1, None);
        }
    };
    let status = match body(&inv.command, &rc, &cfg, &mut out) {
        Ok(s) => s,
        Err(e @ (Error::ConfigKey { .. } | Error::ConfigParse { .. })) => {
            eprintln!("error: {e}");
            return (1, None);
        }
        Err(e) => {
            eprintln!("error: {e}");
            RunStatus::from_error(&e)
        }
    };
    let mut manifest = RunManifest::new(inv.command.name(), rc.emit(), rc.tolerances(&cfg));
    manifest.status = status;
    manifest.wall_clock = start.elapsed();
    match out.finish(manifest) {
        Ok(m) => (m.status.exit_code(), Some(m)),
        Err(e) => {
            eprintln!("error: {e}");
            (2, None)
        }
    }
}
