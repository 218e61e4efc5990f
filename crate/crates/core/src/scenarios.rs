//! Packaged long-time experiments on the flat torus: the Ricci-flat flow, the
//! general-type normalized flow with its barrier sandwich, and the stability lab.

use rayon::prelude::*;

use crate::comparison::{class_tolerance, classify, quantitative_stability_bound, sample_trajectory, StabilityBound};
use crate::data::{make_klt_density, Density, Nonlinearity};
use crate::elliptic::{solve_elliptic_ma, solve_twisted_ma, NewtonOptions, Normalization};
use crate::error::{Error, Result};
use crate::estimates::energy;
use crate::forms::{FamilyKind, KahlerFamily};
use crate::grid::{background_plus_hessian, make_grid, Grid, Herm, HermitianField, ScalarField};
use crate::parabolic::{run_flow, FlowConfig, Side, Trajectory};

#[derive(Clone, Copy, Debug)]
pub struct DistanceRow {
    pub t: f64,
    pub dist: f64,
    pub bound: f64,
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioResult {
    pub name: String,
    pub trajectory: Trajectory,
    pub phi_ke: ScalarField,
    pub distance: Vec<DistanceRow>,
    /// Least-squares slope of `log d(t)` over the tail window.
    pub rate: f64,
    pub window: (f64, f64),
    pub checks: Vec<Check>,
    /// Reported values that are not pass/fail gates.
    pub info: Vec<(String, f64)>,
}

impl ScenarioResult {
    pub fn check(&self, prefix: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name.starts_with(prefix))
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Least-squares slope of `log y` against `t` over points with `t ∈ [a, b]` and `y > 0`.
pub fn log_slope(points: &[(f64, f64)], a: f64, b: f64) -> f64 {
    let sel: Vec<(f64, f64)> = points
        .iter()
        .filter(|(t, y)| *t >= a && *t <= b && *y > 0.0)
        .map(|&(t, y)| (t, y.ln()))
        .collect();
    linear_fit(&sel).0
}

/// `(slope, intercept)` of the least-squares line.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let m = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn sup_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.zip_map(b, |x, y| x - y).sup_norm()
}

fn default_window(t_end: f64) -> (f64, f64) {
    (2.0, 0.8 * t_end)
}

#[derive(Clone, Debug)]
pub struct CyOptions {
    pub restart_times: Vec<f64>,
    pub window: Option<(f64, f64)>,
    /// Monotonicity slack for the energy and the average.
    pub monotone_tol: f64,
}

impl Default for CyOptions {
    fn default() -> Self {
        CyOptions {
            restart_times: vec![1.0, 2.0, 4.0],
            window: None,
            monotone_tol: 1e-8,
        }
    }
}

/// `F ≡ 0`, `g ≡ 1` (or a supplied density), `θ₀ = I`.
pub fn cy_preset(n: usize, res: usize, steps: usize, horizon: f64, phi0: impl Fn(&[f64; 4]) -> f64 + Sync) -> Result<FlowConfig> {
    let grid = make_grid(n, res)?;
    let fam = KahlerFamily::constant(Herm::identity(n), horizon)?;
    let p0 = ScalarField::from_fn(&grid, phi0);
    Ok(FlowConfig::new(grid.clone(), fam, Nonlinearity::zero(horizon), Density::uniform(&grid), p0, horizon, steps))
}

fn density_with_unit_mass(cfg: &FlowConfig) -> Result<Density> {
    let mut d = cfg.effective_density()?;
    let mass = d.mass(&cfg.grid);
    d.g = d.g.scale(1.0 / mass);
    Ok(d)
}

/// Ricci-flat flow `(θ₀ + dd^c φ)ⁿ = e^{φ̇} g`.
///
/// The effective density is rescaled to unit mass, `φ_KE` is normalized by
/// `∫ φ_KE g = ∫ φ_T g`, and restarts reuse the remaining nodes of the original mesh.
pub fn run_cy_flow(cfg: &FlowConfig, opts: &CyOptions) -> Result<ScenarioResult> {
    let grid = &cfg.grid;
    let theta0 = match cfg.family.kind {
        FamilyKind::Constant(m) => m,
        _ => return Err(Error::Precondition("Ricci-flat flow needs a constant family".into())),
    };
    if (theta0.det() - 1.0).abs() > 1e-12 {
        return Err(Error::Precondition(format!("∫θ₀ⁿ = {} must be 1", theta0.det())));
    }
    let worst_f = (0..grid.len())
        .step_by(if cfg.f.spatially_constant { grid.len() } else { 1 })
        .flat_map(|i| [0.0, 0.5, 1.0].map(|s| cfg.f.eval_unchecked(s * cfg.horizon, i, 0.3 - s)))
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if worst_f != 0.0 {
        return Err(Error::Precondition("Ricci-flat flow needs F ≡ 0".into()));
    }
    let density = density_with_unit_mass(cfg)?;
    let mut run_cfg = cfg.clone();
    run_cfg.density = density.clone();
    run_cfg.delta = None;
    let traj = run_flow(&run_cfg)?;
    let t_end = *traj.times.last().unwrap();
    let kk = traj.steps();

    let averages: Vec<f64> = traj.phi.iter().map(|p| grid.integrate_product(p, &density.g)).collect();
    let avg_rise = averages.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let omega0 = HermitianField::constant(grid, theta0);
    let energies = traj.phi.iter().map(|p| energy(grid, p, &omega0)).collect::<Result<Vec<_>>>()?;
    let energy_drop = energies.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);

    let ke = solve_elliptic_ma(grid, &omega0, &density.g, Normalization::MeanZero, NewtonOptions::with_tol(1e-11))?;
    let shift = averages[kk] - grid.integrate_product(&ke.rho, &density.g);
    let phi_ke = ke.rho.add_scalar(shift);
    let d: Vec<f64> = traj.phi.iter().map(|p| sup_diff(p, &phi_ke)).collect();

    let window = opts.window.unwrap_or_else(|| default_window(t_end));
    let pts: Vec<(f64, f64)> = traj.times.iter().copied().zip(d.iter().copied()).collect();
    let rate = log_slope(&pts, window.0, window.1);
    let (_, icpt) = linear_fit(
        &pts.iter()
            .filter(|(t, y)| *t >= window.0 && *t <= window.1 && *y > 0.0)
            .map(|&(t, y)| (t, y.ln()))
            .collect::<Vec<_>>(),
    );
    let distance = traj
        .times
        .iter()
        .zip(&d)
        .map(|(&t, &dist)| DistanceRow {
            t,
            dist,
            bound: if rate.is_finite() { (icpt + rate * t).exp() } else { f64::NAN },
        })
        .collect();

    let late_speed = (1..=kk)
        .filter(|&k| traj.times[k] >= 1.0)
        .map(|k| traj.time_derivative(k, Side::Minus).map(|p| p.sup_norm()).unwrap_or(f64::NAN))
        .fold(0.0, f64::max);

    let step_tol = run_cfg.tol.newton_tol;
    let mut restart_err = 0.0f64;
    for &s in &opts.restart_times {
        if s >= t_end {
            continue;
        }
        let k = traj.node_near(s);
        let mut rc = run_cfg.clone();
        rc.phi0 = traj.phi[k].clone();
        rc.custom_mesh = Some(traj.times[k..].to_vec());
        let restarted = run_flow(&rc)?;
        for (j, p) in restarted.phi.iter().enumerate() {
            restart_err = restart_err.max(sup_diff(p, &traj.phi[k + j]));
        }
    }

    let checks = vec![
        Check::at_most("final distance", d[kk], 1e-4),
        Check::at_most("average rise", avg_rise.max(0.0), opts.monotone_tol),
        Check::at_most("energy drop", energy_drop.max(0.0), opts.monotone_tol),
        Check::at_most("restart error", restart_err, 10.0 * step_tol),
    ];
    let info = vec![
        ("late speed sup |D⁻φ|, t ≥ 1".to_string(), late_speed),
        ("elliptic constant".to_string(), ke.c),
        ("final average".to_string(), averages[kk]),
    ];
    Ok(ScenarioResult {
        name: "cy".into(),
        trajectory: traj,
        phi_ke,
        distance,
        rate,
        window,
        checks,
        info,
    })
}

/// Sweep the density floor of a Ricci-flat run; returns the results and the relative spread
/// `sup|φ_T^{δ_j} − φ_T^{δ_{j+1}}| / osc φ_T^{δ_{j+1}}` between consecutive floors.
pub fn cy_delta_sweep(cfg: &FlowConfig, deltas: &[f64], opts: &CyOptions) -> Result<(Vec<ScenarioResult>, Vec<f64>)> {
    let runs = deltas
        .iter()
        .map(|&d| run_cy_flow(&cfg.clone().with_delta(d), opts))
        .collect::<Result<Vec<_>>>()?;
    let spread = runs
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].trajectory.last(), w[1].trajectory.last());
            sup_diff(a, b) / (b.max() - b.min()).max(1e-300)
        })
        .collect();
    Ok((runs, spread))
}

/// `χ_t = e^{−t}χ₀ + (1 − e^{−t})χ` with `χ₀ = 2χ`, `F = r`, `φ₀ = 0`.
pub fn general_type_preset(n: usize, res: usize, steps: usize, horizon: f64, density: impl Fn(&[f64; 4]) -> f64 + Sync) -> Result<FlowConfig> {
    let grid = make_grid(n, res)?;
    let chi = Herm::identity(n);
    let fam = KahlerFamily::nkrf(chi * 2.0, chi, horizon)?;
    let g = Density::tabulated(&grid, ScalarField::from_fn(&grid, density), 2.0)?;
    let f = Nonlinearity::linear(1.0, 0.0, horizon);
    Ok(FlowConfig::new(grid.clone(), fam, f, g, ScalarField::zeros(&grid), horizon, steps))
}

#[derive(Clone, Debug)]
pub struct GeneralTypeOptions {
    pub window: (f64, f64),
    /// Slack for the barrier classifications and the sandwich.
    pub tol: f64,
}

impl Default for GeneralTypeOptions {
    fn default() -> Self {
        GeneralTypeOptions { window: (2.0, 8.0), tol: 1e-8 }
    }
}

/// `h(t) e^{−t} = n[(1 − e^{−t}) log(1 − e^{−t}) − t e^{−t}]`.
pub fn barrier_h_scaled(n: usize, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let q = -(-t).exp_m1();
    n as f64 * (q * q.ln() - t * (-t).exp())
}

/// `h(t) = n(e^t − 1) log(e^t − 1) − n t e^t`.
pub fn barrier_h(n: usize, t: f64) -> f64 {
    barrier_h_scaled(n, t) * t.exp()
}

/// Which version of the barriers to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BarrierForm {
    /// The closed-form barriers sampled on the mesh.
    Continuum,
    /// Implicit-Euler transcriptions: `e^{−t}` becomes `a_k = Π_{j≤k} (1 + Δt_j)^{−1}`,
    /// `te^{−t}` and `h(t)e^{−t}` solve the matching backward recursions, so the
    /// inequalities hold for `D⁻` node by node.
    Discrete,
}

/// Barrier data derived from a general-type run.
#[derive(Clone, Debug)]
pub struct Barriers {
    pub form: BarrierForm,
    /// `u = e^{−t}φ₀ + (1 − e^{−t})φ_KE + h(t)e^{−t}`.
    pub lower: Trajectory,
    /// `v = (1 + Be^{−t})φ_KE + Ce^{−t}`.
    pub upper_modified: Trajectory,
    /// `v + nBte^{−t}`, the resulting upper bound for the flow.
    pub upper: Trajectory,
    /// Node values of the factor `te^{−t}` (or its recursion).
    pub shift: Vec<f64>,
    pub b: f64,
    pub c: f64,
    /// Data of the comparison equation with family `(1 + Be^{−t})χ` and `F = r + nBe^{−t}`.
    pub modified: FlowConfig,
}

/// Piecewise-linear interpolant through `(times, values)`.
fn piecewise_linear(times: Vec<f64>, values: Vec<f64>) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
    move |t: f64| {
        if t <= times[0] {
            return values[0];
        }
        let last = times.len() - 1;
        if t >= times[last] {
            return values[last];
        }
        let j = times.partition_point(|&s| s <= t) - 1;
        let w = (t - times[j]) / (times[j + 1] - times[j]);
        (1.0 - w) * values[j] + w * values[j + 1]
    }
}

pub fn general_type_barriers(cfg: &FlowConfig, times: &[f64], phi_ke: &ScalarField, form: BarrierForm) -> Result<Barriers> {
    let grid = &cfg.grid;
    let n = grid.n();
    let nf = n as f64;
    let (chi0, chi) = match cfg.family.kind {
        FamilyKind::Nkrf { chi0, chi } => (chi0, chi),
        _ => return Err(Error::Precondition("general-type flow needs the normalized family".into())),
    };
    let omega0 = background_plus_hessian(grid, chi0, &cfg.phi0);
    let b = omega0
        .values
        .iter()
        .map(|w| w.relative_eigenvalues(&chi).1)
        .fold(chi0.relative_eigenvalues(&chi).1, f64::max)
        - 1.0;
    let b = b.max(0.0);
    let c = cfg
        .phi0
        .zip_map(phi_ke, |p, k| p - (1.0 + b) * k)
        .max()
        .max(0.0);
    let kk = times.len();
    let exact: Vec<f64> = times.iter().map(|&t| (-t).exp()).collect();
    // a ~ e^{−t}, s ~ t e^{−t}, eta ~ h(t) e^{−t}
    let (a, s, eta) = match form {
        BarrierForm::Continuum => (
            exact.clone(),
            times.iter().map(|&t| t * (-t).exp()).collect::<Vec<_>>(),
            times.iter().map(|&t| barrier_h_scaled(n, t)).collect::<Vec<_>>(),
        ),
        BarrierForm::Discrete => {
            let osc = cfg.phi0.zip_map(phi_ke, |p, k| (p - k).abs()).max();
            let mut a = vec![1.0; kk];
            let mut s = vec![0.0; kk];
            let mut eta = vec![0.0; kk];
            for k in 1..kk {
                let dt = times[k] - times[k - 1];
                a[k] = a[k - 1] / (1.0 + dt);
                s[k] = (s[k - 1] + dt * a[k]) / (1.0 + dt);
                // defect of e^{−t} under D⁻ + 1, absorbed into the lower barrier
                let defect = ((exact[k] - exact[k - 1]) / dt + exact[k]).abs() * osc;
                let target = nf * (-(-times[k]).exp_m1()).ln() - defect;
                eta[k] = (eta[k - 1] + dt * target) / (1.0 + dt);
            }
            (a, s, eta)
        }
    };
    let phi0 = cfg.phi0.clone();
    let node = |t: f64| times.iter().position(|&x| x == t).expect("mesh node");
    let lower = sample_trajectory(grid, times, |t, i| {
        let e = exact[node(t)];
        e * phi0.values[i] + (1.0 - e) * phi_ke.values[i] + eta[node(t)]
    });
    let upper_modified = sample_trajectory(grid, times, |t, i| {
        let e = a[node(t)];
        (1.0 + b * e) * phi_ke.values[i] + c * e
    });
    let upper = sample_trajectory(grid, times, |t, i| {
        let k = node(t);
        (1.0 + b * a[k]) * phi_ke.values[i] + c * a[k] + nf * b * s[k]
    });
    let horizon = cfg.family.horizon;
    let nb = nf * b;
    let mut modified = cfg.clone();
    let f_mod = match form {
        BarrierForm::Continuum => {
            modified.family = KahlerFamily::nkrf(chi * (1.0 + b), chi, horizon)?;
            Nonlinearity::custom(format!("r+{nb}*exp(-t)"), move |t, _, r| r + nb * (-t).exp(), |_, _, _| 1.0, 0.0, 1.0, 0.0, horizon, 1e3)
        }
        BarrierForm::Discrete => {
            let mats: Vec<Herm> = a.iter().map(|&e| chi * (1.0 + b * e)).collect();
            modified.family = KahlerFamily::tabulated(times, &mats)?;
            let interp = piecewise_linear(times.to_vec(), a.clone());
            Nonlinearity::custom(format!("r+{nb}*a(t)"), move |t, _, r| r + nb * interp(t), |_, _, _| 1.0, 0.0, 1.0, 0.0, horizon, 1e3)
        }
    };
    let mut f_mod = f_mod;
    f_mod.spatially_constant = true;
    modified.f = f_mod;
    Ok(Barriers {
        form,
        lower,
        upper_modified,
        upper,
        shift: s,
        b,
        c,
        modified,
    })
}

/// Classification margins and sandwich gaps of one barrier set.
#[derive(Clone, Copy, Debug)]
pub struct BarrierMargins {
    pub lower_sub: f64,
    pub upper_super: f64,
    pub shifted_sub: f64,
    pub below: f64,
    pub above: f64,
}

pub fn barrier_margins(traj: &Trajectory, cfg: &FlowConfig, bars: &Barriers, tol: f64) -> Result<BarrierMargins> {
    let grid = &cfg.grid;
    let lower_class = classify(&bars.lower, cfg, tol)?;
    let upper_class = classify(&bars.upper_modified, &bars.modified, tol)?;
    let w = Trajectory::from_slices(
        traj.times.clone(),
        traj.phi
            .iter()
            .zip(&bars.shift)
            .map(|(p, s)| p.add_scalar(-(grid.n() as f64) * bars.b * s))
            .collect(),
    )?;
    let w_class = classify(&w, &bars.modified, tol)?;
    let below = traj
        .phi
        .iter()
        .zip(&bars.lower.phi)
        .map(|(p, u)| p.zip_map(u, |a, b| a - b).min())
        .fold(f64::INFINITY, f64::min);
    let above = bars
        .upper
        .phi
        .iter()
        .zip(&traj.phi)
        .map(|(v, p)| v.zip_map(p, |a, b| a - b).min())
        .fold(f64::INFINITY, f64::min);
    Ok(BarrierMargins {
        lower_sub: lower_class.sub_margin,
        upper_super: upper_class.super_margin,
        shifted_sub: w_class.sub_margin,
        below,
        above,
    })
}

/// Normalized flow `(χ_t + dd^c φ)ⁿ = e^{φ̇ + φ} g` and its convergence to `φ_KE`.
pub fn run_general_type_flow(cfg: &FlowConfig, opts: &GeneralTypeOptions) -> Result<ScenarioResult> {
    let grid = &cfg.grid;
    let chi = match cfg.family.kind {
        FamilyKind::Nkrf { chi, .. } => chi,
        _ => return Err(Error::Precondition("general-type flow needs the normalized family".into())),
    };
    let probe = [(-0.7, 0.1), (0.4, 0.5), (1.3, 0.9)];
    for (r, s) in probe {
        let v = cfg.f.eval_unchecked(s * cfg.horizon, 0, r);
        if (v - r).abs() > 1e-14 {
            return Err(Error::Precondition("general-type flow needs F(t, x, r) = r".into()));
        }
    }
    let density = cfg.effective_density()?;
    let ke = solve_twisted_ma(grid, chi, &density.g, 1.0, NewtonOptions::with_tol(1e-11))?;
    let phi_ke = ke.rho;
    let traj = run_flow(cfg)?;
    let d: Vec<f64> = traj.phi.iter().map(|p| sup_diff(p, &phi_ke)).collect();
    let pts: Vec<(f64, f64)> = traj.times.iter().copied().zip(d.iter().copied()).collect();
    let rate = log_slope(&pts, opts.window.0, opts.window.1);
    let envelope = traj
        .times
        .iter()
        .zip(&d)
        .map(|(&t, &dd)| dd / ((t + 1.0) * (-t).exp()))
        .fold(0.0, f64::max);
    let distance = traj
        .times
        .iter()
        .zip(&d)
        .map(|(&t, &dist)| DistanceRow {
            t,
            dist,
            bound: envelope * (t + 1.0) * (-t).exp(),
        })
        .collect();

    let tol = opts.tol.max(class_tolerance(cfg));
    let bars = general_type_barriers(cfg, &traj.times, &phi_ke, BarrierForm::Discrete)?;
    let m = barrier_margins(&traj, cfg, &bars, tol)?;
    let cont = general_type_barriers(cfg, &traj.times, &phi_ke, BarrierForm::Continuum)?;
    let mc = barrier_margins(&traj, cfg, &cont, tol)?;
    let gate = |name: &str, value: f64| Check {
        name: name.into(),
        value,
        threshold: -tol,
        pass: value >= -tol,
    };
    let checks = vec![
        Check::at_most("rate slope", rate, -0.9),
        gate("lower barrier subsolution", m.lower_sub),
        gate("upper barrier supersolution", m.upper_super),
        gate("shifted flow subsolution", m.shifted_sub),
        gate("sandwich lower", m.below),
        gate("sandwich upper", m.above),
    ];
    let info = vec![
        ("B".to_string(), bars.b),
        ("C".to_string(), bars.c),
        ("envelope C'".to_string(), envelope),
        ("continuum lower subsolution margin".to_string(), mc.lower_sub),
        ("continuum upper supersolution margin".to_string(), mc.upper_super),
        ("continuum shifted subsolution margin".to_string(), mc.shifted_sub),
        ("continuum sandwich lower".to_string(), mc.below),
        ("continuum sandwich upper".to_string(), mc.above),
    ];
    Ok(ScenarioResult {
        name: "general-type".into(),
        trajectory: traj,
        phi_ke,
        distance,
        rate,
        window: opts.window,
        checks,
        info,
    })
}

/// One data sequence of the stability lab.
#[derive(Clone, Debug)]
pub struct StabilityCase {
    pub label: String,
    /// Index `j` of each configuration.
    pub js: Vec<u32>,
    pub configs: Vec<FlowConfig>,
    pub reference: FlowConfig,
    /// Local window `[T₀, T₁]` for sup gaps.
    pub window: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub label: String,
    pub js: Vec<u32>,
    pub sup_gaps: Vec<f64>,
    pub l1_gaps: Vec<f64>,
    /// Fitted `(α, B)` in `sup gap ≤ B · (L¹ gap)^α`.
    pub alpha: f64,
    pub b_fit: f64,
    pub monotone: bool,
    /// Quantitative bounds for `(φ_j, φ)` and `(φ, φ_j)`.
    pub bounds: Vec<StabilityBound>,
    pub pass: bool,
}

/// `g_j = max(g, 2^{−j})` for a klt `g`, reference `g` itself.
pub fn density_floor_case(base: &FlowConfig, js: &[u32]) -> StabilityCase {
    let t = base.horizon;
    let configs = js
        .iter()
        .map(|&j| base.clone().with_delta(2f64.powi(-(j as i32))))
        .collect();
    let mut reference = base.clone();
    reference.delta = None;
    StabilityCase {
        label: "density floor".into(),
        js: js.to_vec(),
        configs,
        reference,
        window: (t / 4.0, t),
    }
}

/// `φ₀_j = φ₀ + 2^{−j} · bump` with reference `φ₀`.
pub fn initial_data_case(base: &FlowConfig, js: &[u32], bump: &ScalarField) -> StabilityCase {
    let t = base.horizon;
    let configs = js
        .iter()
        .map(|&j| {
            let mut c = base.clone();
            let s = 2f64.powi(-(j as i32));
            c.phi0 = base.phi0.zip_map(bump, |a, b| a + s * b);
            c
        })
        .collect();
    StabilityCase {
        label: "initial data".into(),
        js: js.to_vec(),
        configs,
        reference: base.clone(),
        window: (t / 4.0, t),
    }
}

/// Stability preset: `n = 1`, klt density `dist(x, p)^{2a}`, `F = r`, constant family.
pub fn klt_stability_preset(res: usize, steps: usize, horizon: f64, exponent: f64) -> Result<FlowConfig> {
    let grid = make_grid(1, res)?;
    let g = make_klt_density(&grid, &[[0.5, 0.5, 0.0, 0.0]], &[exponent])?;
    let fam = KahlerFamily::constant(Herm::One(1.0), horizon)?;
    let phi0 = ScalarField::from_fn(&grid, |x| 0.05 * (2.0 * std::f64::consts::PI * x[0]).cos());
    Ok(FlowConfig::new(grid.clone(), fam, Nonlinearity::linear(1.0, 0.0, horizon), g, phi0, horizon, steps))
}

fn l1_space_time(grid: &Grid, a: &Trajectory, b: &Trajectory) -> f64 {
    let per: Vec<f64> = a.phi.iter().zip(&b.phi).map(|(p, q)| grid.integrate(&p.zip_map(q, |x, y| (x - y).abs()))).collect();
    a.times.windows(2).zip(per.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).sum()
}

/// Run every configuration of `case` and its reference, then compare.
pub fn run_stability_experiment(case: &StabilityCase, eps: f64, tol: f64) -> Result<StabilityReport> {
    let reference = run_flow(&case.reference)?;
    let runs: Vec<Trajectory> = case
        .configs
        .par_iter()
        .map(run_flow)
        .collect::<Result<Vec<_>>>()?;
    let grid = &case.reference.grid;
    let (t0, t1) = case.window;
    let mut sup_gaps = Vec::new();
    let mut l1_gaps = Vec::new();
    let mut bounds = Vec::new();
    for (traj, cfg) in runs.iter().zip(&case.configs) {
        let sup = traj
            .times
            .iter()
            .enumerate()
            .filter(|(_, &t)| t >= t0 && t <= t1)
            .map(|(k, _)| sup_diff(&traj.phi[k], &reference.phi[k]))
            .fold(0.0, f64::max);
        sup_gaps.push(sup);
        l1_gaps.push(l1_space_time(grid, traj, &reference));
        bounds.push(quantitative_stability_bound(traj, &reference, cfg, &case.reference, eps, tol)?);
        bounds.push(quantitative_stability_bound(&reference, traj, &case.reference, cfg, eps, tol)?);
    }
    let monotone = sup_gaps.windows(2).all(|w| w[1] <= w[0]);
    let pts: Vec<(f64, f64)> = sup_gaps
        .iter()
        .zip(&l1_gaps)
        .filter(|(s, l)| **s > 0.0 && **l > 0.0)
        .map(|(s, l)| (l.ln(), s.ln()))
        .collect();
    let (alpha, icpt) = linear_fit(&pts);
    let b_fit = sup_gaps
        .iter()
        .zip(&l1_gaps)
        .filter(|(_, l)| **l > 0.0)
        .map(|(s, l)| s / l.powf(alpha))
        .fold(icpt.exp(), f64::max);
    let pass = monotone && bounds.iter().all(|b| b.pass);
    Ok(StabilityReport {
        label: case.label.clone(),
        js: case.js.clone(),
        sup_gaps,
        l1_gaps,
        alpha,
        b_fit,
        monotone,
        bounds,
        pass,
    })
}
