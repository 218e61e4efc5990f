//! Persistence: field files, CSV tables, and the checksummed run manifest.
//!
//! Every number is written with 17 significant digits (`{:.16e}`), so a value read back
//! is bit-identical to the one written.
//!
//! | file | columns |
//! |------|---------|
//! | `fields/<name>.csv` | `index,value` (row-major over `x₁, y₁, x₂, y₂`, last axis fastest) |
//! | `mesh.csv` | `k,t_k,newton_iters,residual` |
//! | `estimates.csv` | `name,constant,margin,pass,k_worst,point_worst` |
//! | `comparison.csv` | `k,t_k,min_margin` |
//! | `distance.csv` | `t,dist,bound` |
//! | `stability.csv` | `j,sup_gap,l1_gap,bound_forward,bound_backward,observed_forward,observed_backward` |
//! | `rates.txt`, `checks.csv` | fitted rates, named checks and reported values |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::comparison::OrderReport;
use crate::elliptic::EllipticSolution;
use crate::error::{Error, Result};
use crate::estimates::EstimateReport;
use crate::grid::{Grid, ScalarField};
use crate::parabolic::Trajectory;
use crate::scenarios::{ScenarioResult, StabilityReport};

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn field_csv(f: &ScalarField) -> String {
    let mut s = String::with_capacity(28 * f.len() + 12);
    s.push_str("index,value\n");
    for (i, v) in f.values.iter().enumerate() {
        let _ = writeln!(s, "{i},{}", fmt17(*v));
    }
    s
}

pub fn parse_field_csv(text: &str, grid: &Grid, origin: &str) -> Result<ScalarField> {
    let bad = |line: usize, msg: String| Error::InvalidArgument(format!("{origin}:{line}: {msg}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "index,value" => {}
        _ => return Err(bad(1, "expected header `index,value`".into())),
    }
    let mut values = vec![f64::NAN; grid.len()];
    let mut seen = 0usize;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| bad(i + 1, "expected `index,value`".into()))?;
        let idx: usize = a.trim().parse().map_err(|_| bad(i + 1, format!("bad index `{a}`")))?;
        let v: f64 = b.trim().parse().map_err(|_| bad(i + 1, format!("bad value `{b}`")))?;
        if idx >= values.len() {
            return Err(bad(i + 1, format!("index {idx} outside grid of {} points", grid.len())));
        }
        values[idx] = v;
        seen += 1;
    }
    if seen != grid.len() {
        return Err(Error::ShapeMismatch {
            expected: grid.len(),
            got: seen,
        });
    }
    let f = ScalarField::from_vec(grid, values)?;
    f.check_finite()?;
    Ok(f)
}

pub fn read_field(path: impl AsRef<Path>, grid: &Grid) -> Result<ScalarField> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_field_csv(&text, grid, &path.display().to_string())
}

pub fn mesh_csv(traj: &Trajectory) -> String {
    let mut s = String::from("k,t_k,newton_iters,residual\n");
    for (k, t) in traj.times.iter().enumerate() {
        let (it, res) = match traj.diagnostics.get(k) {
            Some(d) => (d.newton_iters, d.residual),
            None => (0, 0.0),
        };
        let _ = writeln!(s, "{k},{},{it},{}", fmt17(*t), fmt17(res));
    }
    s
}

fn node_file(k: usize) -> String {
    format!("fields/phi_{k:05}.csv")
}

/// Load a trajectory written by [`emit_outputs`]: `mesh.csv` plus one field file per node.
pub fn read_trajectory(dir: impl AsRef<Path>, grid: &Grid) -> Result<Trajectory> {
    let dir = dir.as_ref();
    let mesh_path = dir.join("mesh.csv");
    let text = fs::read_to_string(&mesh_path).map_err(|e| Error::io(&mesh_path, e))?;
    let mut times = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let t = line
            .split(',')
            .nth(1)
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::InvalidArgument(format!("{}:{}: malformed row", mesh_path.display(), i + 1)))?;
        times.push(t);
    }
    let phi = (0..times.len())
        .map(|k| read_field(dir.join(node_file(k)), grid))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::from_slices(times, phi)
}

pub fn estimates_csv(rep: &EstimateReport) -> String {
    let mut s = String::from("name,constant,margin,pass,k_worst,point_worst\n");
    for r in &rep.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.name.replace(',', ";"),
            fmt17(r.constant),
            fmt17(r.margin),
            r.pass,
            r.k_worst,
            r.point_worst
        );
    }
    s
}

pub fn comparison_csv(rep: &OrderReport, times: &[f64]) -> String {
    let mut s = String::from("k,t_k,min_margin\n");
    for (k, (t, m)) in times.iter().zip(&rep.per_node).enumerate() {
        let _ = writeln!(s, "{k},{},{}", fmt17(*t), fmt17(*m));
    }
    s
}

pub fn distance_csv(res: &ScenarioResult) -> String {
    let mut s = String::from("t,dist,bound\n");
    for r in &res.distance {
        let _ = writeln!(s, "{},{},{}", fmt17(r.t), fmt17(r.dist), fmt17(r.bound));
    }
    s
}

pub fn checks_csv(res: &ScenarioResult) -> String {
    let mut s = String::from("name,value,threshold,pass\n");
    for c in &res.checks {
        let _ = writeln!(s, "{},{},{},{}", c.name, fmt17(c.value), fmt17(c.threshold), c.pass);
    }
    s
}

pub fn rates_txt(res: &ScenarioResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario = {}", res.name);
    let _ = writeln!(s, "rate = {}", fmt17(res.rate));
    let _ = writeln!(s, "window = [{}, {}]", fmt17(res.window.0), fmt17(res.window.1));
    for c in &res.checks {
        let _ = writeln!(
            s,
            "check {} = {} (threshold {}) {}",
            c.name,
            fmt17(c.value),
            fmt17(c.threshold),
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    for (k, v) in &res.info {
        let _ = writeln!(s, "info {k} = {}", fmt17(*v));
    }
    s
}

pub fn stability_csv(rep: &StabilityReport) -> String {
    let mut s = String::from("j,sup_gap,l1_gap,bound_forward,bound_backward,observed_forward,observed_backward\n");
    for (i, j) in rep.js.iter().enumerate() {
        let f = &rep.bounds[2 * i];
        let b = &rep.bounds[2 * i + 1];
        let _ = writeln!(
            s,
            "{j},{},{},{},{},{},{}",
            fmt17(rep.sup_gaps[i]),
            fmt17(rep.l1_gaps[i]),
            fmt17(f.bound),
            fmt17(b.bound),
            fmt17(f.observed),
            fmt17(b.observed)
        );
    }
    s
}

pub fn stability_txt(rep: &StabilityReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "case = {}", rep.label);
    let _ = writeln!(s, "alpha = {}", fmt17(rep.alpha));
    let _ = writeln!(s, "b_fit = {}", fmt17(rep.b_fit));
    let _ = writeln!(s, "monotone = {}", rep.monotone);
    let _ = writeln!(s, "bounds_dominate = {}", rep.bounds.iter().all(|b| b.pass));
    let _ = writeln!(s, "pass = {}", rep.pass);
    s
}

/// Outcome recorded in the manifest; maps to the process exit code.
#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Success,
    SolverFailure { node: Option<usize>, message: String },
    AcceptanceFailure { failed: Vec<String> },
}

impl RunStatus {
    pub fn from_error(e: &Error) -> Self {
        RunStatus::SolverFailure {
            node: e.failing_node(),
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunStatus::Success => 0,
            RunStatus::SolverFailure { .. } => 2,
            RunStatus::AcceptanceFailure { .. } => 3,
        }
    }
}

/// What a run produced; absent parts write nothing.
#[derive(Default)]
pub struct RunResult<'a> {
    pub trajectory: Option<&'a Trajectory>,
    pub fields: Vec<(String, &'a ScalarField)>,
    pub elliptic: Option<&'a EllipticSolution>,
    pub estimates: Option<&'a EstimateReport>,
    pub comparison: Option<(&'a OrderReport, &'a [f64])>,
    pub scenario: Option<&'a ScenarioResult>,
    pub stability: Option<&'a StabilityReport>,
}

#[derive(Clone, Debug)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: String,
    /// All runs are deterministic; recorded for completeness.
    pub seeds: String,
    pub tolerances: Vec<(String, f64)>,
    /// `(path relative to the run directory, sha256 hex)`.
    pub outputs: Vec<(String, String)>,
    pub wall_clock: Duration,
    pub status: RunStatus,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config: impl Into<String>, tolerances: Vec<(String, f64)>) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.into(),
            seeds: "none".into(),
            tolerances,
            outputs: Vec::new(),
            wall_clock: Duration::ZERO,
            status: RunStatus::Success,
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "version = cmaflow {}", self.version);
        let _ = writeln!(s, "seeds = {}", self.seeds);
        let _ = writeln!(s, "wall_clock_s = {:.3}", self.wall_clock.as_secs_f64());
        match &self.status {
            RunStatus::Success => {
                let _ = writeln!(s, "status = success");
            }
            RunStatus::SolverFailure { node, message } => {
                let _ = writeln!(s, "status = solver-failure");
                match node {
                    Some(k) => {
                        let _ = writeln!(s, "failure_node = {k}");
                    }
                    None => {
                        let _ = writeln!(s, "failure_node = none");
                    }
                }
                let _ = writeln!(s, "failure = {message}");
            }
            RunStatus::AcceptanceFailure { failed } => {
                let _ = writeln!(s, "status = acceptance-failure");
                let _ = writeln!(s, "failed_checks = {}", failed.join("; "));
            }
        }
        let _ = writeln!(s, "exit_code = {}", self.status.exit_code());
        s.push_str("\n[tolerances]\n");
        for (k, v) in &self.tolerances {
            let _ = writeln!(s, "{k} = {}", fmt17(*v));
        }
        s.push_str("\n[outputs]\n");
        for (p, h) in &self.outputs {
            let _ = writeln!(s, "{h}  {p}");
        }
        s.push_str("\n[config]\n");
        s.push_str(&self.config);
        s
    }
}

/// A run directory that checksums everything written into it.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<(String, String)>,
}

impl OutputDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(OutputDir { root, files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        let digest = Sha256::digest(contents.as_bytes());
        let hex = digest.iter().fold(String::with_capacity(64), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        });
        self.files.push((rel.to_string(), hex));
        Ok(())
    }

    /// Write `manifest.txt` listing every file written so far.
    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest> {
        manifest.outputs = self.files;
        let path = self.root.join("manifest.txt");
        fs::write(&path, manifest.render()).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

/// Write every present part of `result` into `out`.
pub fn emit_outputs(result: &RunResult<'_>, out: &mut OutputDir) -> Result<()> {
    if let Some(traj) = result.trajectory {
        for (k, phi) in traj.phi.iter().enumerate() {
            out.write(&node_file(k), &field_csv(phi))?;
        }
        out.write("mesh.csv", &mesh_csv(traj))?;
    }
    for (name, f) in &result.fields {
        out.write(&format!("fields/{name}.csv"), &field_csv(f))?;
    }
    if let Some(sol) = result.elliptic {
        out.write("fields/rho.csv", &field_csv(&sol.rho))?;
        out.write(
            "elliptic.txt",
            &format!(
                "c = {}\nnewton_iterations = {}\nresidual = {}\nmin_eig = {}\n",
                fmt17(sol.c),
                sol.newton_iterations,
                fmt17(sol.residual),
                fmt17(sol.min_eig)
            ),
        )?;
    }
    if let Some(rep) = result.estimates {
        out.write("estimates.csv", &estimates_csv(rep))?;
    }
    if let Some((rep, times)) = result.comparison {
        out.write("comparison.csv", &comparison_csv(rep, times))?;
    }
    if let Some(res) = result.scenario {
        out.write("distance.csv", &distance_csv(res))?;
        out.write("rates.txt", &rates_txt(res))?;
        out.write("checks.csv", &checks_csv(res))?;
    }
    if let Some(rep) = result.stability {
        out.write("stability.csv", &stability_csv(rep))?;
        out.write("rates.txt", &stability_txt(rep))?;
    }
    Ok(())
}
