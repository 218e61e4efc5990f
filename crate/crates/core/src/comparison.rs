//! Sub/supersolution classification by flow residuals, ordering checks, time
//! mollification of subsolutions and the quantitative stability bound.
//!
//! Classification uses the backward quotient `D⁻`, the one the implicit Euler scheme
//! solves exactly; the forward-quotient margins are recorded next to it.

use rayon::prelude::*;

use crate::data::{Density, Nonlinearity};
use crate::elliptic::{solve_elliptic_ma, NewtonOptions, Normalization};
use crate::error::{Error, Result};
use crate::estimates::fit_c2;
use crate::forms::KahlerFamily;
use crate::grid::{background_plus_hessian, complex_hessian, lp_norm, Grid, HermitianField, ScalarField};
use crate::parabolic::{FlowConfig, Side, Trajectory};

/// `R(k, x) = log det(H(t_k) + Hess u_k) − log g − D u_k − F(t_k, x, u_k)`.
#[derive(Clone, Debug)]
pub struct ResidualField {
    pub side: Side,
    /// Node index of each slice in `values`.
    pub nodes: Vec<usize>,
    pub values: Vec<ScalarField>,
    /// Points where `g = 0`; their residual is stored as `NaN`.
    pub masked: usize,
}

impl ResidualField {
    /// `(min R, node, point)` over unmasked entries.
    pub fn min(&self) -> (f64, usize, usize) {
        self.extreme(|a, b| a < b)
    }

    /// `(max R, node, point)` over unmasked entries.
    pub fn max(&self) -> (f64, usize, usize) {
        self.extreme(|a, b| a > b)
    }

    fn extreme(&self, better: impl Fn(f64, f64) -> bool) -> (f64, usize, usize) {
        let mut out: Option<(f64, usize, usize)> = None;
        for (slice, &k) in self.values.iter().zip(&self.nodes) {
            for (i, &v) in slice.values.iter().enumerate() {
                if v.is_nan() {
                    continue;
                }
                if out.is_none_or(|o| better(v, o.0)) {
                    out = Some((v, k, i));
                }
            }
        }
        out.unwrap_or((0.0, 0, 0))
    }

    /// Per-node minimum of `R`.
    pub fn node_min(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|s| s.values.iter().filter(|v| !v.is_nan()).fold(f64::INFINITY, |m, &v| m.min(v)))
            .collect()
    }
}

/// Residual of `traj` for the data in `cfg` with the chosen one-sided quotient.
pub fn residual(traj: &Trajectory, cfg: &FlowConfig, side: Side) -> Result<ResidualField> {
    let grid = &cfg.grid;
    let density = cfg.effective_density()?;
    let nodes: Vec<usize> = match side {
        Side::Minus => (1..traj.times.len()).collect(),
        Side::Plus => (0..traj.steps()).collect(),
        Side::Central => (1..traj.steps()).collect(),
    };
    let log_g: Vec<f64> = density.g.values.iter().map(|&v| if v > 0.0 { v.ln() } else { f64::NAN }).collect();
    let masked = log_g.iter().filter(|v| v.is_nan()).count();
    let values = nodes
        .iter()
        .map(|&k| {
            let t = traj.times[k];
            let h = cfg.family.eval(t)?;
            let s = background_plus_hessian(grid, h, &traj.phi[k]);
            let d = traj.time_derivative(k, side)?;
            let u = &traj.phi[k];
            let values = (0..grid.len())
                .into_par_iter()
                .map(|i| {
                    if log_g[i].is_nan() {
                        return f64::NAN;
                    }
                    let m = &s.values[i];
                    let det = m.det();
                    let ld = if m.min_eig() >= 0.0 && det > 0.0 { det.ln() } else { f64::NEG_INFINITY };
                    ld - log_g[i] - d.values[i] - cfg.f.eval_unchecked(t, i, u.values[i])
                })
                .collect();
            Ok(ScalarField { values })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualField {
        side,
        nodes,
        values,
        masked,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolutionKind {
    Solution,
    Subsolution,
    Supersolution,
    Neither,
}

#[derive(Clone, Copy, Debug)]
pub struct Classification {
    pub kind: SolutionKind,
    /// `min R` with `D⁻`; a subsolution has this `≥ −tol`.
    pub sub_margin: f64,
    /// `min (−R)` with `D⁻`; a supersolution has this `≥ −tol`.
    pub super_margin: f64,
    /// Same margins with `D⁺`.
    pub plus_sub_margin: f64,
    pub plus_super_margin: f64,
    pub masked: usize,
    pub tol: f64,
}

impl Classification {
    pub fn is_sub(&self) -> bool {
        matches!(self.kind, SolutionKind::Solution | SolutionKind::Subsolution)
    }

    pub fn is_super(&self) -> bool {
        matches!(self.kind, SolutionKind::Solution | SolutionKind::Supersolution)
    }
}

/// Default classification tolerance: ten times the per-step Newton tolerance.
pub fn class_tolerance(cfg: &FlowConfig) -> f64 {
    10.0 * cfg.tol.newton_tol
}

pub fn classify(traj: &Trajectory, cfg: &FlowConfig, tol: f64) -> Result<Classification> {
    let minus = residual(traj, cfg, Side::Minus)?;
    let plus = residual(traj, cfg, Side::Plus)?;
    let sub_margin = minus.min().0;
    let super_margin = -minus.max().0;
    let kind = match (sub_margin >= -tol, super_margin >= -tol) {
        (true, true) => SolutionKind::Solution,
        (true, false) => SolutionKind::Subsolution,
        (false, true) => SolutionKind::Supersolution,
        (false, false) => SolutionKind::Neither,
    };
    Ok(Classification {
        kind,
        sub_margin,
        super_margin,
        plus_sub_margin: plus.min().0,
        plus_super_margin: -plus.max().0,
        masked: minus.masked,
        tol,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct CompareOptions {
    pub tol_class: f64,
    pub tol_order: f64,
}

impl CompareOptions {
    /// `tol_class = 10·tol`, `tol_order = 10·(tol + max Δt²)`.
    pub fn for_run(cfg: &FlowConfig, traj: &Trajectory) -> Self {
        let max_dt = traj.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        CompareOptions {
            tol_class: class_tolerance(cfg),
            tol_order: 10.0 * (cfg.tol.newton_tol + max_dt * max_dt),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OrderReport {
    /// `min (super − sub)` over all nodes and points.
    pub min_gap: f64,
    pub k_worst: usize,
    pub point_worst: usize,
    pub per_node: Vec<f64>,
    pub sub_class: Classification,
    pub super_class: Classification,
    /// Fitted semi-concavity constant of the supersolution.
    pub super_semiconcavity: f64,
    pub pass: bool,
    pub tol_order: f64,
}

/// Check `sub ≤ super` on every node, after validating the preconditions.
pub fn compare(sub: &Trajectory, sup: &Trajectory, cfg: &FlowConfig, opts: CompareOptions) -> Result<OrderReport> {
    if sub.times.len() != sup.times.len() || sub.times.iter().zip(&sup.times).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::Precondition("trajectories live on different meshes".into()));
    }
    let sub_class = classify(sub, cfg, opts.tol_class)?;
    if !sub_class.is_sub() {
        return Err(Error::Precondition(format!(
            "first trajectory is not a subsolution: margin {:e}",
            sub_class.sub_margin
        )));
    }
    let super_class = classify(sup, cfg, opts.tol_class)?;
    if !super_class.is_super() {
        return Err(Error::Precondition(format!(
            "second trajectory is not a supersolution: margin {:e}",
            super_class.super_margin
        )));
    }
    let start = sup.phi[0].zip_map(&sub.phi[0], |a, b| a - b).min();
    if start < -opts.tol_class {
        return Err(Error::Precondition(format!("initial data not ordered: margin {start:e}")));
    }
    let semiconc = fit_c2(sup, 2).0;
    if !semiconc.is_finite() {
        return Err(Error::Precondition("supersolution fails the semi-concavity fit".into()));
    }
    let mut per_node = Vec::with_capacity(sub.times.len());
    let mut worst = (f64::INFINITY, 0, 0);
    for k in 0..sub.times.len() {
        let gap = sup.phi[k].zip_map(&sub.phi[k], |a, b| a - b);
        let i = gap.argmin();
        per_node.push(gap.values[i]);
        if gap.values[i] < worst.0 {
            worst = (gap.values[i], k, i);
        }
    }
    Ok(OrderReport {
        min_gap: worst.0,
        k_worst: worst.1,
        point_worst: worst.2,
        per_node,
        sub_class,
        super_class,
        super_semiconcavity: semiconc,
        pass: worst.0 >= -opts.tol_order,
        tol_order: opts.tol_order,
    })
}

/// Trajectory `u_k = u(t_k)` for a closed-form `u(t, i)` on the given mesh.
pub fn sample_trajectory(grid: &Grid, times: &[f64], u: impl Fn(f64, usize) -> f64 + Sync) -> Trajectory {
    let phi = times
        .iter()
        .map(|&t| ScalarField {
            values: (0..grid.len()).into_par_iter().map(|i| u(t, i)).collect(),
        })
        .collect();
    Trajectory::from_slices(times.to_vec(), phi).expect("matching lengths")
}

/// Data of the time regularization of a subsolution.
#[derive(Clone, Debug)]
pub struct MollifyParams {
    pub eps: f64,
    pub b: f64,
    /// `C` in `v_s = (α_s/s) u(ts) + (1 − α_s) ρ − C|s − 1| t`.
    pub c_shift: f64,
    /// `A₁` with `ω_t ≥ (1 − A₁|s − 1|) ω_{ts}`.
    pub a1: f64,
    /// `ρ` with `(ε₁θ + dd^c ρ)ⁿ = e^{c} g`, `sup ρ = 0`.
    pub rho: ScalarField,
}

impl MollifyParams {
    /// `A₁ = A·T` and `ρ` from the elliptic solver with `ε₁ = (5 + A₁)^{-1}`.
    pub fn for_run(cfg: &FlowConfig, eps: f64, b: f64) -> Result<Self> {
        let a1 = cfg.family.a * cfg.horizon;
        let eps1 = 1.0 / (5.0 + a1);
        let density = cfg.effective_density()?;
        let theta = HermitianField::constant(&cfg.grid, cfg.family.theta * eps1);
        let sol = solve_elliptic_ma(&cfg.grid, &theta, &density.g, Normalization::SupZero, NewtonOptions::default())?;
        Ok(MollifyParams {
            eps,
            b,
            c_shift: 0.0,
            a1,
            rho: sol.rho,
        })
    }
}

const MOLLIFIER_POINTS: usize = 64;

/// Midpoint weights for `χ(σ) ∝ exp(−1/(1 − σ²))` on `[−1, 1]`, normalized to unit mass.
fn mollifier_rule() -> Vec<(f64, f64)> {
    let m = MOLLIFIER_POINTS;
    let raw: Vec<(f64, f64)> = (0..m)
        .map(|j| {
            let s = -1.0 + (j as f64 + 0.5) * 2.0 / m as f64;
            (s, (-1.0 / (1.0 - s * s)).exp())
        })
        .collect();
    let total: f64 = raw.iter().map(|p| p.1).sum();
    raw.into_iter().map(|(s, w)| (s, w / total)).collect()
}

/// `u^ε(t) = ∫ v_s(t) χ_ε(s − 1) ds − Bε(t + 1)` on the nodes with `t_k (1 + ε) ≤ T`.
pub fn mollify_time(traj: &Trajectory, params: &MollifyParams) -> Result<Trajectory> {
    let eps = params.eps;
    let t_end = *traj.times.last().unwrap();
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidArgument(format!("mollification width {eps} outside (0, 0.5)")));
    }
    let times: Vec<f64> = traj.times.iter().copied().filter(|&t| t * (1.0 + eps) <= t_end * (1.0 + 1e-14)).collect();
    if times.len() < 3 {
        return Err(Error::InvalidArgument(format!("mollification width {eps} leaves fewer than 3 nodes")));
    }
    let rule: Vec<(f64, f64, f64)> = mollifier_rule()
        .into_iter()
        .map(|(sig, w)| {
            let s = 1.0 + eps * sig;
            let lam = (1.0 - s).abs() / s;
            let alpha = s * (1.0 - lam) * (1.0 - params.a1 * (s - 1.0).abs());
            (s, alpha, w)
        })
        .collect();
    if rule.iter().any(|r| !(r.1 > 0.0 && r.1 <= 1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!("mollification width {eps} too large for A1 = {}", params.a1)));
    }
    let phi = times
        .iter()
        .map(|&t| {
            let mut acc = vec![0.0; traj.phi[0].len()];
            for &(s, alpha, w) in &rule {
                let us = traj.interpolate(t * s);
                let shift = params.c_shift * (s - 1.0).abs() * t;
                for (i, a) in acc.iter_mut().enumerate() {
                    *a += w * (alpha / s * us.values[i] + (1.0 - alpha) * params.rho.values[i] - shift);
                }
            }
            let b = params.b * eps * (t + 1.0);
            ScalarField {
                values: acc.into_iter().map(|v| v - b).collect(),
            }
        })
        .collect();
    Trajectory::from_slices(times, phi)
}

/// Smallest `B ≥ 0` making `mollify_time` a discrete subsolution, from the residual at `B = 0`.
///
/// Raising `B` by `β` raises every `D⁻` residual by at least `βε` because `F` is
/// nondecreasing in `r` after the monotone reduction; the estimate assumes `λ_F = 0`.
pub fn required_b(traj: &Trajectory, cfg: &FlowConfig, params: &MollifyParams, tol: f64) -> Result<f64> {
    let mut p0 = params.clone();
    p0.b = 0.0;
    let u0 = mollify_time(traj, &p0)?;
    let r = residual(&u0, cfg, Side::Minus)?.min().0;
    Ok(((-r - tol).max(0.0) / params.eps) * (1.0 + 1e-9))
}

/// `sup_x (u^ε(0, x) − u(0, x))`.
pub fn initial_defect(mollified: &Trajectory, original: &Trajectory) -> f64 {
    mollified.phi[0].zip_map(&original.phi[0], |a, b| a - b).max()
}

/// Outcome of the quantitative stability estimate on `[ε, T] × X`.
#[derive(Clone, Debug)]
pub struct StabilityBound {
    pub bound: f64,
    pub observed: f64,
    /// `max_X (φ_ε − ψ_ε)_+`.
    pub start_gap: f64,
    /// `‖(φ_ε − ψ_ε)_+‖_{L¹}`.
    pub start_gap_l1: f64,
    /// `sup (G − F)_+`.
    pub m: f64,
    /// `‖(g − f)_+‖_p`.
    pub density_gap: f64,
    pub delta: f64,
    pub a_const: f64,
    pub b_const: f64,
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub l: f64,
    pub pass: bool,
}

/// `sup (G − F)_+` over sampled `(t, x, r)` with `|r| ≤ r_bound`.
fn sup_positive_difference(g: &Nonlinearity, f: &Nonlinearity, len: usize, horizon: f64, r_bound: f64) -> f64 {
    let pts: Vec<usize> = if g.spatially_constant && f.spatially_constant { vec![0] } else { (0..len).collect() };
    pts.par_iter()
        .map(|&i| {
            let mut m = 0.0f64;
            for a in 0..33 {
                let t = horizon * a as f64 / 32.0;
                for b in 0..33 {
                    let r = -r_bound + 2.0 * r_bound * b as f64 / 32.0;
                    m = m.max(g.eval_unchecked(t, i, r) - f.eval_unchecked(t, i, r));
                }
            }
            m
        })
        .reduce(|| 0.0, f64::max)
}

/// Evaluate the stability estimate for a subsolution `φ` of `(F, f)` and a supersolution
/// `ψ` of `(G, g)` sharing the family and the mesh.
///
/// The bound is the intermediate form of the estimate with the start gap in sup norm,
/// `max(φ_ε − ψ_ε)_+ + T·M + A‖(g − f)_+‖_p^{1/n}`, whose constants are computed from
/// trajectory sup-norms.
pub fn quantitative_stability_bound(
    phi: &Trajectory,
    psi: &Trajectory,
    cfg_phi: &FlowConfig,
    cfg_psi: &FlowConfig,
    eps: f64,
    tol: f64,
) -> Result<StabilityBound> {
    let grid = &cfg_phi.grid;
    let n = grid.n() as f64;
    let horizon = *phi.times.last().unwrap();
    if !(eps > 0.0 && eps < horizon) {
        return Err(Error::InvalidArgument(format!("ε = {eps} outside (0, T)")));
    }
    if phi.times.len() != psi.times.len() {
        return Err(Error::Precondition("trajectories live on different meshes".into()));
    }
    let tol_class = class_tolerance(cfg_phi).max(class_tolerance(cfg_psi));
    let cp = classify(phi, cfg_phi, tol_class)?;
    if !cp.is_sub() {
        return Err(Error::Precondition(format!("φ is not a subsolution: margin {:e}", cp.sub_margin)));
    }
    let cs = classify(psi, cfg_psi, tol_class)?;
    if !cs.is_super() {
        return Err(Error::Precondition(format!("ψ is not a supersolution: margin {:e}", cs.super_margin)));
    }
    let f_dens: Density = cfg_phi.effective_density()?;
    let g_dens: Density = cfg_psi.effective_density()?;
    let fam: &KahlerFamily = &cfg_phi.family;
    let k_eps = phi.times.partition_point(|&t| t < eps).max(1);

    let m0 = phi.phi.iter().map(|p| p.max()).fold(f64::NEG_INFINITY, f64::max);
    let inf_phi = phi.phi.iter().map(|p| p.min()).fold(f64::INFINITY, f64::min);
    let sup_abs_phi = m0.abs().max(inf_phi.abs());
    let (mut m1_min, mut m1_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in k_eps.max(1)..phi.times.len() {
        let d = phi.time_derivative(k, Side::Minus)?;
        m1_min = m1_min.min(d.min());
        m1_max = m1_max.max(d.max());
    }
    let l = cfg_psi.f.kappa;
    let gfun = &cfg_psi.f;
    let m2 = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            (0..33)
                .map(|a| gfun.eval_unchecked(horizon * a as f64 / 32.0, i, m0))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    let m3 = m2 + (l * m0).max(m1_max);
    let b_const = l * inf_phi.abs() + 2.0 * n * 2f64.ln() - m1_min;
    let m = sup_positive_difference(&cfg_psi.f, &cfg_phi.f, grid.len(), horizon, sup_abs_phi.max(1.0));

    let diff = g_dens.g.zip_map(&f_dens.g, |a, b| (a - b).max(0.0));
    let p = f_dens.p.min(g_dens.p);
    let density_gap = lp_norm(grid, &diff, p)?;

    let start = phi.phi[k_eps].zip_map(&psi.phi[k_eps], |a, b| (a - b).max(0.0));
    let start_gap = start.max();
    let start_gap_l1 = grid.integrate(&start);

    let (delta, a_const) = if density_gap > 0.0 {
        // ρ with (θ + dd^c ρ)ⁿ = e^c (a + (g − f)_+/‖(g − f)_+‖_p), sup ρ = 0
        let l1 = grid.integrate(&diff);
        let a = (1.0 - l1 / density_gap).max(0.0);
        let rhs = diff.map(|v| a + v / density_gap);
        let theta = HermitianField::constant(grid, fam.theta);
        let sol = solve_elliptic_ma(grid, &theta, &rhs, Normalization::SupZero, NewtonOptions::default())?;
        let scale = ((m3 - sol.c) / n).exp();
        let a_const = scale * (2.0 * sup_abs_phi + sol.rho.sup_norm() + 2.0 * n * 2f64.ln() + 2.0 * b_const.abs() * horizon);
        (density_gap.powf(1.0 / n) * scale, a_const)
    } else {
        (0.0, 0.0)
    };
    let bound = if delta <= 0.5 {
        start_gap + horizon * m + a_const * density_gap.powf(1.0 / n)
    } else {
        // δ > 1/2: the estimate reduces to the trivial oscillation bound
        m0 - psi.phi.iter().map(|p| p.min()).fold(f64::INFINITY, f64::min)
    };
    let observed = (k_eps..phi.times.len())
        .map(|k| phi.phi[k].zip_map(&psi.phi[k], |a, b| a - b).max())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityBound {
        bound,
        observed,
        start_gap,
        start_gap_l1,
        m,
        density_gap,
        delta,
        a_const,
        b_const,
        m0,
        m1: m1_min,
        m2,
        m3,
        l,
        pass: observed <= bound + tol,
    })
}

/// `log det(αS₁ + (1−α)S₂) − (αf₁ + (1−α)f₂) − log μ` at each point; nonnegative whenever
/// `log det Sᵢ ≥ fᵢ + log μ`.
pub fn mixed_inequality_margin(
    s1: &HermitianField,
    f1: &ScalarField,
    s2: &HermitianField,
    f2: &ScalarField,
    log_mu: &ScalarField,
    alpha: f64,
) -> Result<ScalarField> {
    let len = s1.len();
    if s2.len() != len || f1.len() != len || f2.len() != len || log_mu.len() != len {
        return Err(Error::ShapeMismatch {
            expected: len,
            got: s2.len(),
        });
    }
    let values = (0..len)
        .into_par_iter()
        .map(|i| {
            let m = s1.values[i] * alpha + s2.values[i] * (1.0 - alpha);
            m.det().ln() - alpha * f1.values[i] - (1.0 - alpha) * f2.values[i] - log_mu.values[i]
        })
        .collect();
    Ok(ScalarField { values })
}

/// Both sides of `∫_{u<v ∩ D} (θ + dd^c v) ≤ ∫_{u<v ∩ D} (θ + dd^c u)` for a disc `D` whose
/// surrounding ring of width `ring` carries `u ≥ v` (`n = 1`).
pub fn domination_witness(
    grid: &Grid,
    u: &ScalarField,
    v: &ScalarField,
    center: [f64; 4],
    radius: f64,
    ring: f64,
) -> Result<(f64, f64)> {
    if grid.n() != 1 {
        return Err(Error::UnsupportedDimension(grid.n()));
    }
    if ring < 1.5 * grid.h() {
        return Err(Error::InvalidArgument("ring must be at least 1.5 cells wide".into()));
    }
    let hu = complex_hessian(grid, u)?;
    let hv = complex_hessian(grid, v)?;
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for i in 0..grid.len() {
        let d = grid.torus_distance(&grid.coords(i), &center);
        if d >= radius && d < radius + ring && u.values[i] < v.values[i] {
            return Err(Error::Precondition(format!("u < v on the boundary ring at point {i}")));
        }
        if d < radius && u.values[i] < v.values[i] {
            lhs += hv.values[i].trace();
            rhs += hu.values[i].trace();
        }
    }
    let w = grid.cell_volume();
    Ok((lhs * w, rhs * w))
}
