//! Implicit Euler for `det(H(t) + Hess φ) = e^{φ̇ + F(t, x, φ)} g`.
//!
//! Each step solves
//!
//! ```text
//! log det(H(t_k) + Hess φ_k) − (φ_k − φ_{k−1})/Δt_k − F(t_k, x, φ_k) − log g = 0
//! ```
//!
//! by damped Newton, warm-started from `φ_{k−1}`, on the graded mesh `t_k = T (k/K)^γ`.

use rayon::prelude::*;

use crate::data::{regularize_density, Density, Nonlinearity};
use crate::elliptic::linear_tol;
use crate::error::{Error, Result};
use crate::forms::KahlerFamily;
use crate::grid::{background_plus_hessian, Grid, Herm, HermitianField, ScalarField};
use crate::linsolve::{solve_operator, SolveOptions};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepTolerances {
    /// Target for the sup-norm of the per-step log-residual.
    pub newton_tol: f64,
    pub max_newton: usize,
    pub max_linear: usize,
    pub min_eig_floor: f64,
}

impl Default for StepTolerances {
    fn default() -> Self {
        StepTolerances {
            newton_tol: 1e-10,
            max_newton: 40,
            max_linear: 800,
            min_eig_floor: 1e-10,
        }
    }
}

/// Everything needed to run one flow.
#[derive(Clone, Debug)]
pub struct FlowConfig {
    pub grid: Grid,
    pub family: KahlerFamily,
    pub f: Nonlinearity,
    pub density: Density,
    pub phi0: ScalarField,
    pub horizon: f64,
    pub steps: usize,
    pub gamma_mesh: f64,
    pub tol: StepTolerances,
    /// Floor applied to `g` before solving; required when `g` has zeros.
    pub delta: Option<f64>,
    /// Explicit time nodes overriding the graded mesh (first entry is the start time).
    pub custom_mesh: Option<Vec<f64>>,
}

impl FlowConfig {
    pub fn new(
        grid: Grid,
        family: KahlerFamily,
        f: Nonlinearity,
        density: Density,
        phi0: ScalarField,
        horizon: f64,
        steps: usize,
    ) -> Self {
        FlowConfig {
            grid,
            family,
            f,
            density,
            phi0,
            horizon,
            steps,
            gamma_mesh: 2.0,
            tol: StepTolerances::default(),
            delta: None,
            custom_mesh: None,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma_mesh = gamma;
        self
    }

    pub fn with_tol(mut self, tol: StepTolerances) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn with_mesh(mut self, mesh: Vec<f64>) -> Self {
        self.custom_mesh = Some(mesh);
        self
    }

    /// Time nodes `t_0 < … < t_K`.
    pub fn mesh(&self) -> Vec<f64> {
        match &self.custom_mesh {
            Some(m) => m.clone(),
            None => graded_mesh(self.horizon, self.steps, self.gamma_mesh),
        }
    }

    /// The density actually used by the solver (`max(g, δ)` when a floor is set).
    pub fn effective_density(&self) -> Result<Density> {
        match self.delta {
            Some(d) => Ok(regularize_density(&self.grid, &self.density, d)?.0),
            None => Ok(self.density.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.check(&self.phi0)?;
        self.phi0.check_finite()?;
        self.grid.check(&self.density.g)?;
        if self.family.n() != self.grid.n() {
            return Err(Error::Precondition(format!(
                "family has dimension {} but the grid has {}",
                self.family.n(),
                self.grid.n()
            )));
        }
        let mesh = self.mesh();
        if mesh.len() < 2 || mesh.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("time mesh must be strictly increasing".into()));
        }
        if !(self.gamma_mesh >= 1.0) {
            return Err(Error::InvalidArgument(format!("mesh grading {} < 1", self.gamma_mesh)));
        }
        let end = *mesh.last().unwrap();
        if end > self.family.horizon * (1.0 + 1e-12) {
            return Err(Error::TimeOutOfRange {
                t: end,
                horizon: self.family.horizon,
            });
        }
        let h0 = self.family.eval(mesh[0])?;
        let s0 = background_plus_hessian(&self.grid, h0, &self.phi0);
        let (min_eig, point) = s0.min_eigenvalue();
        if min_eig < -1e-10 {
            return Err(Error::Precondition(format!(
                "initial potential is not psh: min eigenvalue {min_eig:e} at point {point}"
            )));
        }
        Ok(())
    }
}

/// `t_k = T (k/K)^γ`.
pub fn graded_mesh(horizon: f64, steps: usize, gamma: f64) -> Vec<f64> {
    (0..=steps)
        .map(|k| horizon * (k as f64 / steps as f64).powf(gamma))
        .collect()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StepDiagnostics {
    pub newton_iters: usize,
    pub linear_iters: usize,
    pub residual: f64,
    pub min_eig: f64,
}

/// One-sided or centered time difference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
    Central,
}

/// A discrete parabolic potential.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub phi: Vec<ScalarField>,
    /// `diagnostics[k]` belongs to node `k`; node 0 carries the initial data.
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn from_slices(times: Vec<f64>, phi: Vec<ScalarField>) -> Result<Self> {
        if times.len() != phi.len() || times.is_empty() {
            return Err(Error::InvalidArgument("times and slices differ in length".into()));
        }
        let diagnostics = vec![StepDiagnostics::default(); times.len()];
        Ok(Trajectory {
            times,
            phi,
            diagnostics,
        })
    }

    /// Number of steps `K` (nodes minus one).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn last(&self) -> &ScalarField {
        self.phi.last().unwrap()
    }

    /// Difference quotient on the non-uniform mesh.
    pub fn time_derivative(&self, k: usize, side: Side) -> Result<ScalarField> {
        let kk = self.steps();
        let bad = || Error::InvalidArgument(format!("{side:?} quotient undefined at node {k} of {kk}"));
        match side {
            Side::Plus => {
                if k >= kk {
                    return Err(bad());
                }
                let dt = self.times[k + 1] - self.times[k];
                Ok(self.phi[k + 1].zip_map(&self.phi[k], |a, b| (a - b) / dt))
            }
            Side::Minus => {
                if k == 0 || k > kk {
                    return Err(bad());
                }
                let dt = self.times[k] - self.times[k - 1];
                Ok(self.phi[k].zip_map(&self.phi[k - 1], |a, b| (a - b) / dt))
            }
            Side::Central => {
                if k == 0 || k >= kk {
                    return Err(bad());
                }
                let h1 = self.times[k] - self.times[k - 1];
                let h2 = self.times[k + 1] - self.times[k];
                let (wm, w0, wp) = (
                    -h2 / (h1 * (h1 + h2)),
                    (h2 - h1) / (h1 * h2),
                    h1 / (h2 * (h1 + h2)),
                );
                let values = (0..self.phi[k].len())
                    .map(|i| wm * self.phi[k - 1].values[i] + w0 * self.phi[k].values[i] + wp * self.phi[k + 1].values[i])
                    .collect();
                Ok(ScalarField { values })
            }
        }
    }

    /// Three-point second difference at an interior node.
    pub fn second_difference(&self, k: usize) -> Result<ScalarField> {
        if k == 0 || k >= self.steps() {
            return Err(Error::InvalidArgument(format!("second difference undefined at node {k}")));
        }
        let h1 = self.times[k] - self.times[k - 1];
        let h2 = self.times[k + 1] - self.times[k];
        let (wm, w0, wp) = (
            2.0 / (h1 * (h1 + h2)),
            -2.0 / (h1 * h2),
            2.0 / (h2 * (h1 + h2)),
        );
        let values = (0..self.phi[k].len())
            .map(|i| wm * self.phi[k - 1].values[i] + w0 * self.phi[k].values[i] + wp * self.phi[k + 1].values[i])
            .collect();
        Ok(ScalarField { values })
    }

    /// `sup |D⁻φ_k|` over nodes with `t_k ∈ [a, b]`, the discrete Lipschitz constant on `J`.
    pub fn lipschitz_on(&self, a: f64, b: f64) -> f64 {
        (1..self.times.len())
            .filter(|&k| self.times[k] >= a && self.times[k] <= b)
            .map(|k| self.time_derivative(k, Side::Minus).map(|d| d.sup_norm()).unwrap_or(0.0))
            .fold(0.0, f64::max)
    }

    /// Slice at time `t` by linear interpolation between nodes.
    pub fn interpolate(&self, t: f64) -> ScalarField {
        if t <= self.times[0] {
            return self.phi[0].clone();
        }
        let kk = self.steps();
        if t >= self.times[kk] {
            return self.phi[kk].clone();
        }
        let j = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[j]) / (self.times[j + 1] - self.times[j]);
        self.phi[j].zip_map(&self.phi[j + 1], |a, b| (1.0 - w) * a + w * b)
    }

    /// Node index closest to `t`.
    pub fn node_near(&self, t: f64) -> usize {
        (0..self.times.len())
            .min_by(|&a, &b| {
                (self.times[a] - t)
                    .abs()
                    .partial_cmp(&(self.times[b] - t).abs())
                    .unwrap()
            })
            .unwrap()
    }
}

fn sup_and_l2(v: &[f64]) -> (f64, f64) {
    let sup = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let l2 = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    (sup, l2)
}

/// Solve one implicit Euler step from `phi_prev` to `t_next = t_prev + dt`.
pub fn step_implicit(
    phi_prev: &ScalarField,
    t_next: f64,
    dt: f64,
    cfg: &FlowConfig,
) -> Result<(ScalarField, StepDiagnostics)> {
    let density = cfg.effective_density()?;
    step_with_density(phi_prev, t_next, dt, cfg, &density)
}

fn step_with_density(
    phi_prev: &ScalarField,
    t_next: f64,
    dt: f64,
    cfg: &FlowConfig,
    density: &Density,
) -> Result<(ScalarField, StepDiagnostics)> {
    let grid = &cfg.grid;
    let f = &cfg.f;
    let tol = cfg.tol;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
    }
    if f.lambda_f > 0.0 && dt >= 0.5 / f.lambda_f {
        return Err(Error::TimestepTooLarge {
            dt,
            lambda: f.lambda_f,
        });
    }
    if let Some(i) = density.g.values.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Precondition(format!(
            "density vanishes at point {i}; set a regularization floor"
        )));
    }
    let h = cfg.family.eval(t_next)?;
    let log_g: Vec<f64> = density.g.values.iter().map(|v| v.ln()).collect();
    let inv_dt = 1.0 / dt;

    let residual = |phi: &ScalarField, s: &HermitianField| -> Option<Vec<f64>> {
        let out: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let m = &s.values[i];
                let d = m.det();
                if m.min_eig() < tol.min_eig_floor || d <= 0.0 {
                    return f64::NAN;
                }
                let p = phi.values[i];
                d.ln() - (p - phi_prev.values[i]) * inv_dt - f.eval_unchecked(t_next, i, p) - log_g[i]
            })
            .collect();
        out.iter().all(|v| v.is_finite()).then_some(out)
    };

    // warm start, damped towards a constant if the new background makes it non-admissible
    let mut phi = phi_prev.clone();
    let mut s = background_plus_hessian(grid, h, &phi);
    let mut g = residual(&phi, &s);
    let mean = phi_prev.mean();
    let mut shrink = 1.0;
    while g.is_none() {
        shrink *= 0.5;
        if shrink < 1e-6 {
            return Err(Error::LostPositivity { step: 0 });
        }
        phi = phi_prev.map(|v| mean + shrink * (v - mean));
        s = background_plus_hessian(grid, h, &phi);
        g = residual(&phi, &s);
    }
    let mut g = g.unwrap();
    let (mut res_sup, mut res_l2) = sup_and_l2(&g);
    let mut diag = StepDiagnostics::default();
    'newton: while res_sup > tol.newton_tol {
        if diag.newton_iters >= tol.max_newton {
            return Err(Error::NewtonStalled {
                iterations: diag.newton_iters,
                residual: res_sup,
            });
        }
        diag.newton_iters += 1;
        let inv: Vec<Herm> = s.values.par_iter().map(|m| m.inverse()).collect();
        let c: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|i| inv_dt + f.dr_unchecked(t_next, i, phi.values[i]))
            .collect();
        if let Some(i) = c.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::TimestepTooLarge {
                dt,
                lambda: -(c[i] - inv_dt),
            });
        }
        let (delta, stats) = solve_operator(
            grid,
            &inv,
            &c,
            &g,
            SolveOptions {
                tol: linear_tol(res_sup),
                max_iter: tol.max_linear,
                ..SolveOptions::default()
            },
        )?;
        diag.linear_iters += stats.iterations;
        let mut alpha = 1.0;
        loop {
            let trial = ScalarField {
                values: phi.values.iter().zip(&delta).map(|(p, d)| p + alpha * d).collect(),
            };
            let s_trial = background_plus_hessian(grid, h, &trial);
            if let Some(g_trial) = residual(&trial, &s_trial) {
                let (ts, tl) = sup_and_l2(&g_trial);
                if tl <= (1.0 - 1e-4 * alpha) * res_l2 || ts <= tol.newton_tol {
                    phi = trial;
                    s = s_trial;
                    g = g_trial;
                    res_sup = ts;
                    res_l2 = tl;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                // stagnation at the roundoff floor, within the classification tolerance
                if res_sup <= 10.0 * tol.newton_tol {
                    break 'newton;
                }
                return Err(Error::LostPositivity {
                    step: diag.newton_iters,
                });
            }
        }
    }
    let _ = g;
    diag.residual = res_sup;
    diag.min_eig = s.min_eigenvalue().0;
    let worst = phi.sup_norm();
    if !f.in_box(t_next, worst) {
        return Err(Error::OutsideBox { t: t_next, r: worst });
    }
    Ok((phi, diag))
}

/// Run the flow over the whole mesh.
pub fn run_flow(cfg: &FlowConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let density = cfg.effective_density()?;
    let mesh = cfg.mesh();
    let h0 = cfg.family.eval(mesh[0])?;
    let mut traj = Trajectory {
        times: vec![mesh[0]],
        phi: vec![cfg.phi0.clone()],
        diagnostics: vec![StepDiagnostics {
            min_eig: background_plus_hessian(&cfg.grid, h0, &cfg.phi0).min_eigenvalue().0,
            ..StepDiagnostics::default()
        }],
    };
    for k in 1..mesh.len() {
        let dt = mesh[k] - mesh[k - 1];
        let (next, diag) = step_with_density(traj.last(), mesh[k], dt, cfg, &density)
            .map_err(|e| Error::FlowStep {
                node: k,
                source: Box::new(e),
            })?;
        traj.times.push(mesh[k]);
        traj.phi.push(next);
        traj.diagnostics.push(diag);
    }
    Ok(traj)
}

/// Run the flow once per floor `δ` and report `sup |φ_T^{δ_j} − φ_T^{δ_{j+1}}|` between
/// consecutive floors.
pub fn run_delta_sweep(cfg: &FlowConfig, deltas: &[f64]) -> Result<(Vec<Trajectory>, Vec<f64>)> {
    let runs = deltas
        .iter()
        .map(|&d| run_flow(&cfg.clone().with_delta(d)))
        .collect::<Result<Vec<_>>>()?;
    let spread = runs
        .windows(2)
        .map(|w| w[0].last().zip_map(w[1].last(), |a, b| a - b).sup_norm())
        .collect();
    Ok((runs, spread))
}
