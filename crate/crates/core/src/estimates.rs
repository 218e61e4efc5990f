//! Explicit a priori constants and their verification along a trajectory.
//!
//! Every row of an [`EstimateReport`] records `margin = bound − quantity` at the worst
//! `(node, point)`, so a row passes when the margin is at least `−tol`.

use rayon::prelude::*;

use crate::data::Nonlinearity;
use crate::elliptic::{reference_potentials, NewtonOptions, ReferenceData};
use crate::error::{Error, Result};
use crate::forms::{FamilyKind, KahlerFamily};
use crate::grid::{background_plus_hessian, Grid, Herm, HermitianField, ScalarField};
use crate::parabolic::{FlowConfig, Side, Trajectory};

/// `(e^{λt} − 1)/λ`, continuous at `λ = 0`.
pub fn growth_factor(lambda: f64, t: f64) -> f64 {
    if lambda == 0.0 {
        t
    } else {
        (lambda * t).exp_m1() / lambda
    }
}

/// `C₀ = C (e^{λT} + (e^{λT} − 1)/λ)`.
pub fn c0_formula(c: f64, lambda_f: f64, horizon: f64) -> f64 {
    c * ((lambda_f * horizon).exp() + growth_factor(lambda_f, horizon))
}

const TIME_SAMPLES: usize = 65;
const R_SAMPLES: usize = 41;

fn sample_points(f: &Nonlinearity, len: usize) -> Vec<usize> {
    if f.spatially_constant {
        vec![0]
    } else {
        (0..len).collect()
    }
}

fn sample_times(horizon: f64) -> Vec<f64> {
    (0..TIME_SAMPLES)
        .map(|j| horizon * j as f64 / (TIME_SAMPLES - 1) as f64)
        .collect()
}

/// `sup F(t,x,r)` and `inf F(t,x,r)` over `[0,T] × X × {r}` for each sampled `r`.
fn f_extrema(f: &Nonlinearity, len: usize, horizon: f64, rs: &[f64]) -> (f64, f64, f64) {
    let pts = sample_points(f, len);
    let times = sample_times(horizon.min(f.t_max));
    let (sup, inf, sup_abs) = pts
        .par_iter()
        .map(|&i| {
            let mut acc = (f64::NEG_INFINITY, f64::INFINITY, 0.0f64);
            for &t in &times {
                for &r in rs {
                    let v = f.eval_unchecked(t, i, r);
                    acc.0 = acc.0.max(v);
                    acc.1 = acc.1.min(v);
                    acc.2 = acc.2.max(v.abs());
                }
            }
            acc
        })
        .reduce(
            || (f64::NEG_INFINITY, f64::INFINITY, 0.0),
            |a, b| (a.0.max(b.0), a.1.min(b.1), a.2.max(b.2)),
        );
    (sup, inf, sup_abs)
}

/// The constant `C` entering `C₀`.
pub fn c0_constant(refs: &ReferenceData, f: &Nonlinearity, phi0: &ScalarField, horizon: f64, lambda_f: f64) -> f64 {
    let (_, _, sup_abs_f0) = f_extrema(f, phi0.len(), horizon, &[0.0]);
    let rho = refs
        .rho1
        .values
        .iter()
        .zip(&refs.rho2.values)
        .map(|(a, b)| a.abs() + b.abs())
        .fold(0.0, f64::max);
    sup_abs_f0 + (lambda_f + 1.0) * rho + phi0.sup_norm() + (-refs.c1).max(refs.c2)
}

/// Uniform bound `|φ_t| ≤ C₀` on `[0, T]`.
pub fn compute_c0_bound(refs: &ReferenceData, f: &Nonlinearity, phi0: &ScalarField, horizon: f64, lambda_f: f64) -> f64 {
    c0_formula(c0_constant(refs, f, phi0, horizon, lambda_f), lambda_f, horizon)
}

/// Lower barrier `(1−t)e^{−At}φ₀ + tρ₁ + n(t log t − t) − C (e^{λt}−1)/λ` on `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Subbarrier {
    pub n: usize,
    pub a: f64,
    pub lambda_f: f64,
    pub c: f64,
    phi0: ScalarField,
    rho1: ScalarField,
}

impl Subbarrier {
    pub fn new(refs: &ReferenceData, fam: &KahlerFamily, f: &Nonlinearity, phi0: &ScalarField) -> Self {
        let n = fam.n();
        let (sup_f0, _, _) = f_extrema(f, phi0.len(), fam.horizon.min(1.0), &[0.0]);
        let lambda_f = f.lambda_f;
        let c = sup_f0 + (fam.a + lambda_f + 1.0) * (phi0.sup_norm() + refs.rho1.sup_norm() + n as f64) - refs.c1;
        Subbarrier {
            n,
            a: fam.a,
            lambda_f,
            c,
            phi0: phi0.clone(),
            rho1: refs.rho1.clone(),
        }
    }

    pub fn eval(&self, t: f64, i: usize) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange { t, horizon: 1.0 });
        }
        let tlog = if t == 0.0 { 0.0 } else { t * t.ln() };
        Ok((1.0 - t) * (-self.a * t).exp() * self.phi0.values[i] + t * self.rho1.values[i] + self.n as f64 * (tlog - t)
            - self.c * growth_factor(self.lambda_f, t))
    }

    pub fn field(&self, t: f64) -> Result<ScalarField> {
        let values = (0..self.phi0.len()).map(|i| self.eval(t, i)).collect::<Result<Vec<_>>>()?;
        Ok(ScalarField { values })
    }
}

/// Pointwise value of the subbarrier at `(t, x_i)`.
pub fn subbarrier(t: f64, i: usize, refs: &ReferenceData, fam: &KahlerFamily, f: &Nonlinearity, phi0: &ScalarField) -> Result<f64> {
    Subbarrier::new(refs, fam, f, phi0).eval(t, i)
}

/// `C = −μ(X) log(μ(X)/V₂) − μ(X) inf F` with the infimum over `X_T × [−C₀, C₀]`.
pub fn average_constant(mu_mass: f64, v2: f64, f: &Nonlinearity, len: usize, horizon: f64, c0: f64) -> f64 {
    let rs: Vec<f64> = (0..R_SAMPLES)
        .map(|j| -c0 + 2.0 * c0 * j as f64 / (R_SAMPLES - 1) as f64)
        .collect();
    let (_, inf_f, _) = f_extrema(f, len, horizon, &rs);
    -mu_mass * (mu_mass / v2).ln() - inf_f * mu_mass
}

#[derive(Clone, Debug)]
pub struct EstimateRow {
    pub name: String,
    /// Primary constant for the row.
    pub constant: f64,
    pub extra: Vec<(String, f64)>,
    pub margin: f64,
    pub pass: bool,
    pub k_worst: usize,
    pub point_worst: usize,
}

#[derive(Clone, Debug)]
pub struct EstimateReport {
    pub rows: Vec<EstimateRow>,
    pub c0: f64,
    /// Smallest `C₁` with `n log t_k − C₁ ≤ D⁻φ_k ≤ C₁/t_k`.
    pub c1: f64,
    /// Smallest `C₂` with `D²φ_k ≤ C₂/t_k²`.
    pub c2: f64,
    /// Smallest `C` with `D²φ_k ≤ C/t_k` (the sharper affine-regime form).
    pub c2_over_t: f64,
    /// `(a, b, ρ_J)` for dyadic `J = [a, b]`.
    pub rho_j: Vec<(f64, f64, f64)>,
    pub tol: f64,
}

impl EstimateReport {
    pub fn row(&self, prefix: &str) -> Option<&EstimateRow> {
        self.rows.iter().find(|r| r.name.starts_with(prefix))
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Worst `(margin, k, point)` over a set of nodes.
fn worst_over(
    nodes: impl IntoIterator<Item = usize>,
    margin_at: impl Fn(usize) -> Result<Vec<f64>>,
) -> Result<(f64, usize, usize)> {
    let mut worst = (f64::INFINITY, 0, 0);
    for k in nodes {
        let m = margin_at(k)?;
        for (i, v) in m.iter().enumerate() {
            if *v < worst.0 {
                worst = (*v, k, i);
            }
        }
    }
    Ok(worst)
}

fn row(name: &str, constant: f64, worst: (f64, usize, usize), tol: f64) -> EstimateRow {
    let margin = if worst.0.is_finite() { worst.0 } else { 0.0 };
    EstimateRow {
        name: name.to_string(),
        constant,
        extra: Vec::new(),
        margin,
        pass: margin >= -tol,
        k_worst: worst.1,
        point_worst: worst.2,
    }
}

/// Smallest `C₁ ≥ 0` with `n log t_k − C₁ ≤ D⁻φ_k ≤ C₁/t_k` on the mesh.
pub fn fit_c1(traj: &Trajectory, n: usize) -> (f64, usize, usize) {
    let mut best = (0.0, 0, 0);
    for k in 1..traj.times.len() {
        let t = traj.times[k];
        let d = traj.time_derivative(k, Side::Minus).expect("interior node");
        for (i, v) in d.values.iter().enumerate() {
            let need = (n as f64 * t.ln() - v).max(t * v);
            if need > best.0 {
                best = (need, k, i);
            }
        }
    }
    best
}

/// Smallest `C ≥ 0` with `D²φ_k ≤ C/t_k^p` at interior nodes.
pub fn fit_c2(traj: &Trajectory, power: i32) -> (f64, usize, usize) {
    let mut best = (0.0, 0, 0);
    for k in 1..traj.steps() {
        let t = traj.times[k];
        let d2 = traj.second_difference(k).expect("interior node");
        for (i, v) in d2.values.iter().enumerate() {
            let need = v * t.powi(power);
            if need > best.0 {
                best = (need, k, i);
            }
        }
    }
    best
}

/// `ρ_J(u) = ‖u̇‖_{L∞(J×X)} + ∫_J ∫_X |u|` on the dyadic intervals `[T/2^{j+1}, T/2^j]`.
pub fn seminorms(grid: &Grid, traj: &Trajectory, levels: usize) -> Vec<(f64, f64, f64)> {
    let t_end = *traj.times.last().unwrap();
    let t0 = traj.times[0];
    (0..levels)
        .map(|j| {
            let b = t0 + (t_end - t0) / 2f64.powi(j as i32);
            let a = t0 + (t_end - t0) / 2f64.powi(j as i32 + 1);
            let lip = traj.lipschitz_on(a, b);
            // trapezoid in time over nodes inside J, plus the two interpolated ends
            let mut ts = vec![a];
            ts.extend(traj.times.iter().copied().filter(|&t| t > a && t < b));
            ts.push(b);
            let l1: Vec<f64> = ts
                .iter()
                .map(|&t| grid.integrate(&traj.interpolate(t).map(f64::abs)))
                .collect();
            let integral: f64 = ts.windows(2).zip(l1.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).sum();
            (a, b, lip + integral)
        })
        .collect()
}

/// Check rows (i)–(vii) along a trajectory produced by `cfg`.
pub fn check_bounds(traj: &Trajectory, refs: &ReferenceData, cfg: &FlowConfig, tol: f64) -> Result<EstimateReport> {
    let grid = &cfg.grid;
    let fam = &cfg.family;
    let f = &cfg.f;
    let n = grid.n();
    let density = cfg.effective_density()?;
    let horizon = *traj.times.last().unwrap();
    let all = 0..traj.times.len();

    let c0 = compute_c0_bound(refs, f, &cfg.phi0, horizon, f.lambda_f);
    let mut rows = Vec::new();
    rows.push(row(
        "(i) C0 bound",
        c0,
        worst_over(all.clone(), |k| Ok(traj.phi[k].values.iter().map(|v| c0 - v.abs()).collect()))?,
        tol,
    ));

    let sb = Subbarrier::new(refs, fam, f, &cfg.phi0);
    let early: Vec<usize> = all.clone().filter(|&k| traj.times[k] <= 1.0).collect();
    let mut r2 = row(
        "(ii) subbarrier",
        sb.c,
        worst_over(early, |k| {
            let b = sb.field(traj.times[k])?;
            Ok(traj.phi[k].values.iter().zip(&b.values).map(|(p, q)| p - q).collect())
        })?,
        tol,
    );
    r2.extra.push(("A".into(), sb.a));
    rows.push(r2);

    let mu_mass = density.mass(grid);
    let v2 = fam.big_theta.det();
    let c3 = average_constant(mu_mass, v2, f, grid.len(), horizon, c0);
    let avg0 = grid.integrate_product(&cfg.phi0, &density.g);
    rows.push(row(
        "(iii) average",
        c3,
        worst_over(all.clone(), |k| {
            let avg = grid.integrate_product(&traj.phi[k], &density.g);
            Ok(vec![avg0 + c3 * (traj.times[k] - traj.times[0]) - avg])
        })?,
        tol,
    ));

    let c1 = fit_c1(traj, n);
    rows.push(row("(iv) Lipschitz fit", c1.0, (0.0, c1.1, c1.2), tol));
    let c2 = fit_c2(traj, 2);
    let c2t = fit_c2(traj, 1);
    let mut r5 = row("(v) semi-concavity fit", c2.0, (0.0, c2.1, c2.2), tol);
    r5.extra.push(("C/t".into(), c2t.0));
    rows.push(r5);

    let mass_bound = v2;
    rows.push(row(
        "(vi) mass bound",
        mass_bound,
        worst_over(all, |k| {
            let h = fam.eval(traj.times[k])?;
            let s = background_plus_hessian(grid, h, &traj.phi[k]);
            Ok(vec![mass_bound - grid.integrate(&s.det())])
        })?,
        tol,
    ));

    let levels = 4.min(traj.steps().max(1));
    let rho_j = seminorms(grid, traj, levels);
    let worst_rho = rho_j.iter().map(|r| r.2).fold(0.0, f64::max);
    let mut r7 = row("(vii) seminorms", worst_rho, (0.0, 0, 0), tol);
    r7.pass = rho_j.iter().all(|r| r.2.is_finite());
    rows.push(r7);

    Ok(EstimateReport {
        rows,
        c0,
        c1: c1.0,
        c2: c2.0,
        c2_over_t: c2t.0,
        rho_j,
        tol,
    })
}

/// Reference potentials for `cfg` followed by [`check_bounds`].
pub fn estimate_suite(traj: &Trajectory, cfg: &FlowConfig, tol: f64) -> Result<(ReferenceData, EstimateReport)> {
    let density = cfg.effective_density()?;
    let refs = reference_potentials(&cfg.grid, &cfg.family, &density, NewtonOptions::default())?;
    let report = check_bounds(traj, &refs, cfg, tol)?;
    Ok((refs, report))
}

/// Increments of `t ↦ φ_k − n(t_k log t_k − t_k) + C₁ t_k`; the minimum should be `≥ 0`.
pub fn monotone_zone_margin(traj: &Trajectory, n: usize, c1: f64) -> (f64, usize, usize) {
    let w = |t: f64| {
        let tl = if t == 0.0 { 0.0 } else { t * t.ln() };
        -(n as f64) * (tl - t) + c1 * t
    };
    let mut worst = (f64::INFINITY, 0, 0);
    for k in 1..traj.times.len() {
        let dw = w(traj.times[k]) - w(traj.times[k - 1]);
        for (i, (a, b)) in traj.phi[k].values.iter().zip(&traj.phi[k - 1].values).enumerate() {
            let inc = a - b + dw;
            if inc < worst.0 {
                worst = (inc, k, i);
            }
        }
    }
    worst
}

/// Pointwise mixed Monge–Ampère density.
///
/// For `n = 2` exactly two fields are required and the result is `D(A, B)`; for `n = 1`
/// the mixed determinant of a list reduces to its average.
pub fn mixed_ma(grid: &Grid, fields: &[HermitianField]) -> Result<ScalarField> {
    if fields.is_empty() {
        return Err(Error::InvalidArgument("no fields".into()));
    }
    for fld in fields {
        if fld.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                got: fld.len(),
            });
        }
    }
    match grid.n() {
        1 => {
            let m = fields.len() as f64;
            let values = (0..grid.len())
                .map(|i| fields.iter().map(|f| f.values[i].trace()).sum::<f64>() / m)
                .collect();
            Ok(ScalarField { values })
        }
        _ => {
            if fields.len() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "n = 2 mixed determinant takes 2 fields, got {}",
                    fields.len()
                )));
            }
            let values = fields[0]
                .values
                .par_iter()
                .zip(&fields[1].values)
                .map(|(a, b)| a.mixed(b))
                .collect();
            Ok(ScalarField { values })
        }
    }
}

/// `(η ∧ ω^{n−1}/ωⁿ)² − η² ∧ ω^{n−2}/ωⁿ`; nonnegative by the pointwise inequality.
pub fn mixed_square_margin(eta: &Herm, omega: &Herm) -> f64 {
    match (eta, omega) {
        (Herm::One(_), Herm::One(_)) => 0.0,
        _ => {
            let d = omega.det();
            let first = eta.mixed(omega) / d;
            first * first - eta.det() / d
        }
    }
}

/// `E(φ) = 1/(n+1) Σ_j ∫ φ (θ₀ + dd^c φ)^j ∧ θ₀^{n−j}`.
pub fn energy(grid: &Grid, phi: &ScalarField, omega0: &HermitianField) -> Result<f64> {
    grid.check(phi)?;
    if omega0.len() != grid.len() {
        return Err(Error::ShapeMismatch {
            expected: grid.len(),
            got: omega0.len(),
        });
    }
    let hess = crate::grid::complex_hessian(grid, phi)?;
    let n = grid.n();
    let density: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let w = omega0.values[i];
            let s = w + hess.values[i];
            match n {
                1 => w.det() + s.det(),
                _ => w.det() + s.mixed(&w) + s.det(),
            }
        })
        .collect();
    let integrand = ScalarField {
        values: phi.values.iter().zip(&density).map(|(p, d)| p * d).collect(),
    };
    Ok(grid.integrate(&integrand) / (n as f64 + 1.0))
}

/// Whether `fam` falls in the affine regime of the sharper second-derivative bound.
pub fn affine_regime(fam: &KahlerFamily) -> bool {
    matches!(fam.kind, FamilyKind::Affine { .. } | FamilyKind::Constant(_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Density;
    use crate::grid::make_grid;
    use crate::parabolic::run_flow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn c0_formula_examples() {
        assert!((c0_formula(2.0, 0.0, 1.0) - 4.0).abs() < 1e-15);
        let e = std::f64::consts::E;
        assert!((c0_formula(2.0, 1.0, 1.0) - 2.0 * (2.0 * e - 1.0)).abs() < 1e-12);
        assert!((c0_formula(2.0, 1.0, 1.0) - 8.873127).abs() < 1e-6);
        let a = c0_formula(1.3, 0.0, 2.0);
        let b = c0_formula(1.3, 1e-8, 2.0);
        assert!(((a - b) / a).abs() < 1e-6);
    }

    fn null_refs(grid: &Grid) -> ReferenceData {
        ReferenceData {
            rho1: ScalarField::zeros(grid),
            rho2: ScalarField::zeros(grid),
            c1: 0.0,
            c2: 0.0,
            v1: 1.0,
            v2: 1.0,
            residuals: (0.0, 0.0),
        }
    }

    #[test]
    fn null_data_gives_zero_c0() {
        let grid = make_grid(1, 8).unwrap();
        let refs = null_refs(&grid);
        let c0 = compute_c0_bound(&refs, &Nonlinearity::zero(1.0), &ScalarField::zeros(&grid), 1.0, 0.0);
        assert_eq!(c0, 0.0);
    }

    #[test]
    fn subbarrier_endpoints() {
        let grid = make_grid(1, 8).unwrap();
        let mut refs = null_refs(&grid);
        refs.rho1 = ScalarField::from_fn(&grid, |x| -0.1 * (1.0 + (2.0 * PI * x[0]).cos()));
        let phi0 = ScalarField::from_fn(&grid, |x| 0.05 * (2.0 * PI * x[1]).sin());
        let fam = KahlerFamily::constant(Herm::One(1.0), 1.0).unwrap().with_a(0.0);
        let f = Nonlinearity::zero(1.0);
        let sb = Subbarrier::new(&refs, &fam, &f, &phi0);
        for i in 0..grid.len() {
            assert_eq!(sb.eval(0.0, i).unwrap(), phi0.values[i]);
            let expected = refs.rho1.values[i] - 1.0 - sb.c;
            assert!((sb.eval(1.0, i).unwrap() - expected).abs() < 1e-14);
            // continuity at the t log t endpoint
            assert!((sb.eval(1e-12, i).unwrap() - phi0.values[i]).abs() < 1e-9);
        }
        assert!(sb.eval(1.5, 0).is_err());
    }

    #[test]
    fn null_subbarrier_is_below_stationary_flow() {
        let grid = make_grid(1, 8).unwrap();
        let refs = null_refs(&grid);
        let fam = KahlerFamily::constant(Herm::One(1.0), 1.0).unwrap().with_a(0.0);
        let sb = Subbarrier::new(&refs, &fam, &Nonlinearity::zero(1.0), &ScalarField::zeros(&grid));
        // C = (0 + 1)(0 + 0 + 1) − 0 = 1
        assert!((sb.c - 1.0).abs() < 1e-15);
        let v = sb.eval(0.5, 3).unwrap();
        assert!((v - (0.5 * 0.5f64.ln() - 0.5 - 0.5)).abs() < 1e-14);
        assert!(v <= 0.0);
    }

    #[test]
    fn stationary_null_flow_report() {
        let grid = make_grid(1, 8).unwrap();
        let fam = KahlerFamily::constant(Herm::One(1.0), 1.0).unwrap();
        let cfg = FlowConfig::new(grid.clone(), fam, Nonlinearity::zero(1.0), Density::uniform(&grid), ScalarField::zeros(&grid), 1.0, 16);
        let traj = run_flow(&cfg).unwrap();
        let (_, rep) = estimate_suite(&traj, &cfg, 1e-6).unwrap();
        assert!(rep.all_pass(), "{rep:?}");
        assert_eq!(rep.c1, 0.0);
        assert_eq!(rep.c2, 0.0);
        assert_eq!(rep.c0, 0.0);
    }

    #[test]
    fn constant_ode_flow_report() {
        let grid = make_grid(1, 8).unwrap();
        let fam = KahlerFamily::constant(Herm::One(1.0), 1.0).unwrap();
        let cfg = FlowConfig::new(grid.clone(), fam, Nonlinearity::linear(1.0, 0.0, 1.0), Density::uniform(&grid), ScalarField::constant(&grid, 1.0), 1.0, 32);
        let traj = run_flow(&cfg).unwrap();
        let (_, rep) = estimate_suite(&traj, &cfg, 1e-6).unwrap();
        assert!(rep.all_pass(), "{rep:?}");
        assert!(rep.c1 <= 1.0);
        assert!(monotone_zone_margin(&traj, 1, rep.c1).0 >= -1e-12);
    }

    #[test]
    fn mixed_ma_polarization() {
        let grid = make_grid(2, 8).unwrap();
        let a = Herm::Two {
            a: 1.3,
            d: 0.7,
            b: num_complex::Complex64::new(0.2, -0.1),
        };
        let f = HermitianField::constant(&grid, a);
        let m = mixed_ma(&grid, &[f.clone(), f]).unwrap();
        assert!((m.values[0] - a.det()).abs() < 1e-14);
        let g1 = make_grid(1, 8).unwrap();
        let m1 = mixed_ma(&g1, &[HermitianField::constant(&g1, Herm::One(2.0)), HermitianField::constant(&g1, Herm::One(4.0))]).unwrap();
        assert_eq!(m1.values[0], 3.0);
    }

    #[test]
    fn mixed_square_example() {
        let lhs_zero = Herm::diag2(2.0, 0.0);
        let m = mixed_square_margin(&lhs_zero, &Herm::identity(2));
        assert!((m - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mixed_square_matches_eigenvalue_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let eta = Herm::Two {
                a: rng.gen_range(-3.0..3.0),
                d: rng.gen_range(-3.0..3.0),
                b: num_complex::Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
            };
            let (oa, od): (f64, f64) = (rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0));
            let r = rng.gen_range(0.0..0.9f64) * (oa * od).sqrt();
            let omega = Herm::Two {
                a: oa,
                d: od,
                b: num_complex::Complex64::from_polar(r, rng.gen_range(0.0..6.3)),
            };
            let (l1, l2) = eta.relative_eigenvalues(&omega);
            let oracle = 0.25 * (l1 - l2).powi(2);
            let m = mixed_square_margin(&eta, &omega);
            assert!((m - oracle).abs() <= 1e-9 * (1.0 + oracle), "{m} {oracle}");
            assert!(m >= -1e-12);
        }
    }

    #[test]
    fn energy_of_constants_and_cosine() {
        let grid = make_grid(1, 16).unwrap();
        let w = HermitianField::constant(&grid, Herm::One(1.0));
        let e = energy(&grid, &ScalarField::constant(&grid, 0.3), &w).unwrap();
        assert!((e - 0.3).abs() < 1e-14);
        // E = ½∫φ(2 + ¼Δ_h φ); for φ = ε cos(2πx) this is −ε² q/16 with q the stencil symbol
        let eps = 0.05;
        let phi = ScalarField::from_fn(&grid, |x| eps * (2.0 * PI * x[0]).cos());
        let q = crate::grid::axis_symbol(&grid, 1);
        let e = energy(&grid, &phi, &w).unwrap();
        assert!((e + eps * eps * q / 16.0).abs() < 1e-14, "{e}");
    }

    #[test]
    fn energy_difference_is_bracketed_for_n1() {
        let grid = make_grid(1, 16).unwrap();
        let w = HermitianField::constant(&grid, Herm::One(1.0));
        let a = ScalarField::from_fn(&grid, |x| 0.03 * (2.0 * PI * x[0]).sin() + 0.01 * (2.0 * PI * x[1]).cos());
        let b = ScalarField::from_fn(&grid, |x| 0.02 * (2.0 * PI * (x[0] + x[1])).cos());
        let d = b.zip_map(&a, |p, q| p - q);
        let de = energy(&grid, &b, &w).unwrap() - energy(&grid, &a, &w).unwrap();
        let sa = background_plus_hessian(&grid, Herm::One(1.0), &a).det();
        let sb = background_plus_hessian(&grid, Herm::One(1.0), &b).det();
        let lo = grid.integrate_product(&d, &sb);
        let hi = grid.integrate_product(&d, &sa);
        assert!(de >= lo.min(hi) - 1e-14 && de <= lo.max(hi) + 1e-14);
    }
}
