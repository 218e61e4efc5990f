//! Damped Newton for `det(H + Hess_C ρ) = e^c μ` and for the twisted equation
//! `det(H + Hess_C φ) = e^{λφ} v`.
//!
//! For the untwisted equation the constant `c` is a Newton unknown next to `ρ`, with the
//! side condition `mean(ρ) = 0` during the iteration. It starts from mass matching,
//! `c = log(∫ det S / ∫ μ)`, and at convergence equals it. For `n = 1` the discrete mass
//! identity is exact and `c = log(∫ det H / ∫ μ)` throughout.

use rayon::prelude::*;

use crate::data::Density;
use crate::error::{Error, Result};
use crate::forms::KahlerFamily;
use crate::grid::{background_plus_hessian, hessian_unchecked, Grid, Herm, HermitianField, ScalarField};
use crate::linsolve::{apply_operator, gmres, solve_operator, SolveOptions, SpectralInverse};

/// Additive normalisation of the solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    SupZero,
    InfZero,
    MeanZero,
}

impl Normalization {
    pub fn apply(self, f: &mut ScalarField) {
        let shift = match self {
            Normalization::SupZero => f.max(),
            Normalization::InfZero => f.min(),
            Normalization::MeanZero => f.mean(),
        };
        f.values.iter_mut().for_each(|v| *v -= shift);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    /// Target for `sup |log det S − log(rhs)|`.
    pub tol: f64,
    pub max_newton: usize,
    pub max_linear: usize,
    /// Smallest eigenvalue of `S` the line search accepts.
    pub min_eig_floor: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-9,
            max_newton: 60,
            max_linear: 800,
            min_eig_floor: 1e-10,
        }
    }
}

impl NewtonOptions {
    pub fn with_tol(tol: f64) -> Self {
        NewtonOptions {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct EllipticSolution {
    pub rho: ScalarField,
    pub c: f64,
    pub newton_iterations: usize,
    /// Achieved sup-norm of the log-residual.
    pub residual: f64,
    pub min_eig: f64,
}

pub(crate) fn linear_tol(residual: f64) -> f64 {
    (1e-2 * residual).clamp(1e-14, 1e-6)
}

fn uniform_background(h: &HermitianField) -> Option<Herm> {
    let first = h.values[0];
    h.values.iter().all(|m| *m == first).then_some(first)
}

fn sup_and_l2(v: &[f64]) -> (f64, f64) {
    let sup = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let l2 = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    (sup, l2)
}

/// Solve `det(H + Hess ρ) = e^c μ`, normalising `ρ` afterwards.
pub fn solve_elliptic_ma(
    grid: &Grid,
    h: &HermitianField,
    mu: &ScalarField,
    normalization: Normalization,
    opts: NewtonOptions,
) -> Result<EllipticSolution> {
    solve_elliptic_ma_from(grid, h, mu, normalization, opts, &ScalarField::zeros(grid))
}

/// As [`solve_elliptic_ma`], starting Newton from `initial`.
pub fn solve_elliptic_ma_from(
    grid: &Grid,
    h: &HermitianField,
    mu: &ScalarField,
    normalization: Normalization,
    opts: NewtonOptions,
    initial: &ScalarField,
) -> Result<EllipticSolution> {
    grid.check(mu)?;
    grid.check(initial)?;
    mu.check_finite()?;
    if h.len() != grid.len() {
        return Err(Error::ShapeMismatch {
            expected: grid.len(),
            got: h.len(),
        });
    }
    let (min_h, point) = h.min_eigenvalue();
    if !(min_h > 0.0) {
        return Err(Error::IndefiniteBackground { min_eig: min_h, point });
    }
    if let Some(i) = mu.values.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "density must be positive for the log-residual, got {} at point {i}; regularize first",
            mu.values[i]
        )));
    }
    let background = uniform_background(h);
    let assemble = |rho: &ScalarField| -> HermitianField {
        match background {
            Some(m) => background_plus_hessian(grid, m, rho),
            None => {
                let hess = hessian_unchecked(grid, rho);
                HermitianField {
                    values: hess.values.iter().zip(&h.values).map(|(a, b)| *a + *b).collect(),
                }
            }
        }
    };
    let log_mu: Vec<f64> = mu.values.iter().map(|v| v.ln()).collect();
    let log_residual = |s: &HermitianField, c: f64| -> Option<Vec<f64>> {
        let out: Vec<f64> = s
            .values
            .par_iter()
            .zip(log_mu.par_iter())
            .map(|(m, lm)| {
                let d = m.det();
                if m.min_eig() < opts.min_eig_floor || d <= 0.0 {
                    f64::NAN
                } else {
                    d.ln() - lm - c
                }
            })
            .collect();
        out.iter().all(|v| v.is_finite()).then_some(out)
    };

    let mut rho = initial.clone();
    let mut s = assemble(&rho);
    let mut c = (grid.integrate(&s.det()) / grid.integrate(mu)).ln();
    let g0 = log_residual(&s, c).ok_or_else(|| {
        let (min_eig, point) = s.min_eigenvalue();
        Error::IndefiniteBackground { min_eig, point }
    })?;
    let (mut res_sup, mut res_l2) = sup_and_l2(&g0);
    let mut it = 0;
    while res_sup > opts.tol {
        if it >= opts.max_newton {
            return Err(Error::NewtonStalled {
                iterations: it,
                residual: res_sup,
            });
        }
        it += 1;
        let (delta, dc) = bordered_step(grid, &s, mu, c, linear_tol(res_sup), opts.max_linear)?;
        let mut alpha = 1.0;
        loop {
            let trial = ScalarField {
                values: rho.values.iter().zip(&delta).map(|(r, d)| r + alpha * d).collect(),
            };
            let c_trial = c + alpha * dc;
            let s_trial = assemble(&trial);
            if let Some(g_trial) = log_residual(&s_trial, c_trial) {
                let (ts, tl) = sup_and_l2(&g_trial);
                if tl <= (1.0 - 1e-4 * alpha) * res_l2 || ts <= opts.tol {
                    rho = trial;
                    c = c_trial;
                    s = s_trial;
                    res_sup = ts;
                    res_l2 = tl;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                return Err(Error::LostPositivity { step: it });
            }
        }
    }
    let min_eig = s.min_eigenvalue().0;
    normalization.apply(&mut rho);
    Ok(EllipticSolution {
        rho,
        c,
        newton_iterations: it,
        residual: res_sup,
        min_eig,
    })
}

/// One Newton correction `(δ, dc)` for `det S − e^c μ = 0` with `mean(δ) = 0`:
///
/// ```text
/// −tr(adj S · Hess δ) + e^c μ dc = det S − e^c μ
/// ```
///
/// The constant `c` is carried as an unknown, which removes the constant kernel.
fn bordered_step(
    grid: &Grid,
    s: &HermitianField,
    mu: &ScalarField,
    c: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64)> {
    let len = grid.len();
    let adj: Vec<Herm> = s.values.iter().map(|m| m.adjugate()).collect();
    let zero = vec![0.0; len];
    let w0: Vec<f64> = mu.values.iter().map(|m| c.exp() * m).collect();
    let w0_mean = w0.iter().sum::<f64>() / len as f64;
    let mut b: Vec<f64> = s.values.iter().zip(&w0).map(|(m, w)| m.det() - w).collect();
    b.push(0.0);
    let op = |v: &[f64]| -> Vec<f64> {
        let (field, dc) = v.split_at(len);
        let mut out = apply_operator(grid, &adj, &zero, field);
        out.iter_mut().zip(&w0).for_each(|(o, w)| *o += w * dc[0]);
        out.push(field.iter().sum::<f64>() / len as f64);
        out
    };
    let spectral = SpectralInverse::new(grid, HermitianField { values: adj.clone() }.mean(), 0.0);
    let pre = |v: &[f64]| -> Vec<f64> {
        let (field, last) = v.split_at(len);
        let dc = field.iter().sum::<f64>() / len as f64 / w0_mean;
        let shifted: Vec<f64> = field.iter().zip(&w0).map(|(f, w)| f - w * dc).collect();
        let mut out = spectral.apply(&shifted);
        out.iter_mut().for_each(|o| *o += last[0]);
        out.push(dc);
        out
    };
    let scale = 1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let true_residual = |x: &[f64]| -> f64 {
        op(x).iter().zip(&b).fold(0.0f64, |m, (a, bb)| m.max((a - bb).abs()))
    };
    let x0 = pre(&b);
    let (x, _) = gmres(
        &op,
        &pre,
        &|_| {},
        &b,
        x0,
        &true_residual,
        tol * scale,
        SolveOptions {
            tol,
            max_iter,
            ..SolveOptions::default()
        },
    )?;
    let dc = x[len];
    let mut delta = x;
    delta.truncate(len);
    Ok((delta, dc))
}

/// Solve `det(H + Hess φ) = e^{λφ} v` for `λ > 0` (no normalisation freedom).
pub fn solve_twisted_ma(
    grid: &Grid,
    h: Herm,
    v: &ScalarField,
    lambda: f64,
    opts: NewtonOptions,
) -> Result<EllipticSolution> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("twist {lambda} must be positive")));
    }
    grid.check(v)?;
    if let Some(i) = v.values.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument(format!("density vanishes at point {i}")));
    }
    if !(h.min_eig() > 0.0) {
        return Err(Error::IndefiniteBackground {
            min_eig: h.min_eig(),
            point: 0,
        });
    }
    let log_v: Vec<f64> = v.values.iter().map(|x| x.ln()).collect();
    let start = (h.det().ln() - log_v.iter().sum::<f64>() / log_v.len() as f64) / lambda;
    let mut phi = ScalarField::constant(grid, start);
    let residual = |phi: &ScalarField, s: &HermitianField| -> Option<Vec<f64>> {
        let out: Vec<f64> = s
            .values
            .par_iter()
            .zip(phi.values.par_iter())
            .zip(log_v.par_iter())
            .map(|((m, p), lv)| {
                let d = m.det();
                if m.min_eig() < opts.min_eig_floor || d <= 0.0 {
                    f64::NAN
                } else {
                    d.ln() - lambda * p - lv
                }
            })
            .collect();
        out.iter().all(|x| x.is_finite()).then_some(out)
    };
    let mut s = background_plus_hessian(grid, h, &phi);
    let mut g = residual(&phi, &s).expect("constant start is admissible");
    let (mut res_sup, mut res_l2) = sup_and_l2(&g);
    let mut it = 0;
    while res_sup > opts.tol {
        if it >= opts.max_newton {
            return Err(Error::NewtonStalled {
                iterations: it,
                residual: res_sup,
            });
        }
        it += 1;
        let inv: Vec<Herm> = s.values.iter().map(|m| m.inverse()).collect();
        let c = vec![lambda; grid.len()];
        let (delta, _) = solve_operator(
            grid,
            &inv,
            &c,
            &g,
            SolveOptions {
                tol: linear_tol(res_sup),
                max_iter: opts.max_linear,
                ..SolveOptions::default()
            },
        )?;
        let mut alpha = 1.0;
        loop {
            let trial = ScalarField {
                values: phi.values.iter().zip(&delta).map(|(p, d)| p + alpha * d).collect(),
            };
            let s_trial = background_plus_hessian(grid, h, &trial);
            if let Some(g_trial) = residual(&trial, &s_trial) {
                let (ts, tl) = sup_and_l2(&g_trial);
                if tl <= (1.0 - 1e-4 * alpha) * res_l2 || ts <= opts.tol {
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
                return Err(Error::LostPositivity { step: it });
            }
        }
    }
    Ok(EllipticSolution {
        min_eig: s.min_eigenvalue().0,
        rho: phi,
        c: 0.0,
        newton_iterations: it,
        residual: res_sup,
    })
}

/// The normalised potentials `ρ₁` (for `θ`) and `ρ₂` (for `Θ`).
#[derive(Clone, Debug)]
pub struct ReferenceData {
    pub rho1: ScalarField,
    pub rho2: ScalarField,
    pub c1: f64,
    pub c2: f64,
    pub v1: f64,
    pub v2: f64,
    /// Newton residuals of the two solves.
    pub residuals: (f64, f64),
}

pub fn reference_potentials(
    grid: &Grid,
    fam: &KahlerFamily,
    g: &Density,
    opts: NewtonOptions,
) -> Result<ReferenceData> {
    let theta = HermitianField::constant(grid, fam.theta);
    let big = HermitianField::constant(grid, fam.big_theta);
    let s1 = solve_elliptic_ma(grid, &theta, &g.g, Normalization::SupZero, opts)?;
    let s2 = solve_elliptic_ma(grid, &big, &g.g, Normalization::InfZero, opts)?;
    Ok(ReferenceData {
        rho1: s1.rho,
        rho2: s2.rho,
        c1: s1.c,
        c2: s2.c,
        v1: fam.theta.det(),
        v2: fam.big_theta.det(),
        residuals: (s1.residual, s2.residual),
    })
}
