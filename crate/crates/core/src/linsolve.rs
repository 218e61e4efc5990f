//! Linear solves for the Newton corrections.
//!
//! Every Newton step in this crate reduces to
//!
//! ```text
//! c(x) ψ − tr(A(x) · Hess_C ψ) = rhs
//! ```
//!
//! with `A` positive definite and `c ≥ 0`. The operator is applied matrix-free and solved
//! with restarted GMRES, right-preconditioned by the constant-coefficient operator built from
//! the averaged coefficients and inverted exactly in Fourier space. Rows are first scaled by
//! `n / tr A` when `c > 0` so that strongly varying coefficients (degenerate densities) stay
//! close to the averaged model.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{hessian_at, Grid, Herm, HermitianField, ScalarField};

/// Iterative solver budget.
#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    /// Relative sup-norm residual target, scaled by `1 + ‖rhs‖_sup`.
    pub tol: f64,
    /// Total number of Krylov iterations across restarts.
    pub max_iter: usize,
    /// Krylov subspace dimension between restarts.
    pub restart: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-12,
            max_iter: 600,
            restart: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SolveStats {
    pub iterations: usize,
    /// Achieved sup-norm residual (absolute).
    pub residual: f64,
}

/// `c ψ − tr(A Hess ψ)` at every point.
pub(crate) fn apply_operator(grid: &Grid, a: &[Herm], c: &[f64], psi: &[f64]) -> Vec<f64> {
    (0..grid.len())
        .into_par_iter()
        .map(|i| c[i] * psi[i] - a[i].trace_product(&hessian_at(grid, psi, i)))
        .collect()
}

/// Fourier inverse of a constant-coefficient operator `c̄ − tr(Ā Hess)`.
pub(crate) struct SpectralInverse {
    res: usize,
    dim: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    inv_symbol: Vec<Complex64>,
}

impl SpectralInverse {
    pub(crate) fn new(grid: &Grid, a_bar: Herm, c_bar: f64) -> Self {
        let res = grid.res();
        let dim = grid.real_dim();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(res);
        let inv = planner.plan_fft_inverse(res);
        let h = grid.h();
        let theta = |k: usize| 2.0 * PI * k as f64 / res as f64;
        // centered first difference symbol is i·sin(θ)/h
        let sn: Vec<f64> = (0..res).map(|k| theta(k).sin() / h).collect();
        let lap: Vec<f64> = (0..res).map(|k| (2.0 * theta(k).cos() - 2.0) / (h * h)).collect();
        let scale = c_bar.abs() + a_bar.trace().abs() * 8.0 / (h * h);
        let inv_symbol = (0..grid.len())
            .map(|i| {
                let k = grid.multi_index(i);
                let hess = match a_bar {
                    Herm::One(a) => Complex64::from(a * 0.25 * (lap[k[0]] + lap[k[1]])),
                    Herm::Two { a, d, b } => {
                        let m11 = 0.25 * (lap[k[0]] + lap[k[1]]);
                        let m22 = 0.25 * (lap[k[2]] + lap[k[3]]);
                        let p = -0.25 * (sn[k[0]] * sn[k[2]] + sn[k[1]] * sn[k[3]]);
                        let q = -0.25 * (sn[k[0]] * sn[k[3]] - sn[k[1]] * sn[k[2]]);
                        Complex64::from(a * m11 + d * m22 + 2.0 * (b.re * p + b.im * q))
                    }
                };
                let sym = Complex64::from(c_bar) - hess;
                if sym.norm() <= 1e-13 * scale {
                    Complex64::new(0.0, 0.0)
                } else {
                    1.0 / sym
                }
            })
            .collect();
        SpectralInverse {
            res,
            dim,
            fwd,
            inv,
            inv_symbol,
        }
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.res;
        let mut line = vec![Complex64::default(); n];
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                for chunk in buf.chunks_mut(n) {
                    plan.process(chunk);
                }
                continue;
            }
            let block = stride * n;
            for base in (0..buf.len()).step_by(block) {
                for off in 0..stride {
                    let start = base + off;
                    for (j, l) in line.iter_mut().enumerate() {
                        *l = buf[start + j * stride];
                    }
                    plan.process(&mut line);
                    for (j, l) in line.iter().enumerate() {
                        buf[start + j * stride] = *l;
                    }
                }
            }
        }
    }

    pub(crate) fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::from(v)).collect();
        self.transform(&mut buf, &self.fwd);
        buf.iter_mut()
            .zip(&self.inv_symbol)
            .for_each(|(b, s)| *b *= s);
        self.transform(&mut buf, &self.inv);
        let norm = 1.0 / buf.len() as f64;
        buf.iter().map(|v| v.re * norm).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Restarted right-preconditioned GMRES for `op(x) = b`.
///
/// Stops once `true_residual(x) ≤ target` (a sup-norm in the caller's unscaled system).
/// `project` is applied to every Krylov vector to stay inside an invariant subspace.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gmres(
    op: &dyn Fn(&[f64]) -> Vec<f64>,
    pre: &dyn Fn(&[f64]) -> Vec<f64>,
    project: &dyn Fn(&mut Vec<f64>),
    b: &[f64],
    mut x: Vec<f64>,
    true_residual: &dyn Fn(&[f64]) -> f64,
    target: f64,
    opts: SolveOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    let len = b.len();
    let mut iterations = 0;
    let mut achieved = true_residual(&x);
    let m = opts.restart.max(2);
    let mut inner_tol = target;
    let mut last_beta = f64::INFINITY;
    let mut stagnant = 0;

    while achieved > target && iterations < opts.max_iter {
        let ax = op(&x);
        let mut r0: Vec<f64> = b.iter().zip(&ax).map(|(bi, v)| bi - v).collect();
        project(&mut r0);
        let beta = norm2(&r0);
        if beta == 0.0 {
            break;
        }
        if beta >= 0.999 * last_beta {
            stagnant += 1;
            if stagnant >= 3 {
                break;
            }
        } else {
            stagnant = 0;
        }
        last_beta = beta;
        let mut basis: Vec<Vec<f64>> = vec![r0.iter().map(|v| v / beta).collect()];
        let mut hess = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut used = 0;
        let mut inner_converged = false;
        for j in 0..m {
            if iterations >= opts.max_iter {
                break;
            }
            iterations += 1;
            let z = pre(&basis[j]);
            let mut v = op(&z);
            project(&mut v);
            for (i, q) in basis.iter().enumerate() {
                let hij = dot(&v, q);
                hess[i][j] = hij;
                v.iter_mut().zip(q).for_each(|(vv, qq)| *vv -= hij * qq);
            }
            let hn = norm2(&v);
            hess[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = t;
            }
            let denom = hess[j][j].hypot(hess[j + 1][j]);
            if denom == 0.0 {
                used = j;
                break;
            }
            cs[j] = hess[j][j] / denom;
            sn[j] = hess[j + 1][j] / denom;
            hess[j][j] = denom;
            hess[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            if g[j + 1].abs() <= inner_tol || hn <= 1e-300 {
                inner_converged = true;
                break;
            }
            basis.push(v.iter().map(|vv| vv / hn).collect());
        }
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let s: f64 = (i + 1..used).map(|k| hess[i][k] * y[k]).sum();
            y[i] = (g[i] - s) / hess[i][i];
        }
        let mut update = vec![0.0; len];
        for (yi, q) in y.iter().zip(&basis) {
            update.iter_mut().zip(q).for_each(|(u, qq)| *u += yi * qq);
        }
        let dz = pre(&update);
        x.iter_mut().zip(&dz).for_each(|(xi, d)| *xi += d);
        achieved = true_residual(&x);
        if achieved > target && inner_converged {
            // the inner 2-norm criterion was too loose for the sup target
            inner_tol *= 0.1;
        }
        if used == 0 || inner_tol < 1e-6 * target {
            break;
        }
    }
    if achieved > target {
        return Err(Error::LinearSolveStalled {
            iterations,
            residual: achieved,
        });
    }
    Ok((
        x,
        SolveStats {
            iterations,
            residual: achieved,
        },
    ))
}

/// Solve `c ψ − tr(A Hess ψ) = rhs`.
///
/// `c` may vanish identically; the system is then singular with constant kernel and the
/// caller must supply a right-hand side in the range. The returned `ψ` is only determined
/// up to that kernel in this case.
pub fn solve_operator(
    grid: &Grid,
    a: &[Herm],
    c: &[f64],
    rhs: &[f64],
    opts: SolveOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    let len = grid.len();
    let target = opts.tol * (1.0 + sup(rhs));
    if sup(rhs) == 0.0 {
        return Ok((vec![0.0; len], SolveStats::default()));
    }
    let singular = c.iter().all(|&v| v == 0.0);
    let w: Vec<f64> = if singular {
        vec![1.0; len]
    } else {
        a.iter().map(|m| m.dim() as f64 / m.trace()).collect()
    };
    let a_s: Vec<Herm> = a.iter().zip(&w).map(|(&m, &wi)| m * wi).collect();
    let c_s: Vec<f64> = c.iter().zip(&w).map(|(ci, wi)| ci * wi).collect();
    let b: Vec<f64> = rhs.iter().zip(&w).map(|(r, wi)| r * wi).collect();

    let mean_a = HermitianField { values: a_s.clone() }.mean();
    let mean_c = c_s.iter().sum::<f64>() / len as f64;
    let pre = SpectralInverse::new(grid, mean_a, mean_c);

    let op = |v: &[f64]| apply_operator(grid, &a_s, &c_s, v);
    let true_residual = |x: &[f64]| -> f64 {
        let ax = apply_operator(grid, a, c, x);
        rhs.iter().zip(&ax).fold(0.0f64, |m, (r, v)| m.max((r - v).abs()))
    };
    let x0 = pre.apply(&b);
    gmres(&op, &|v| pre.apply(v), &|_| {}, &b, x0, &true_residual, target, opts)
}

/// Solve `(c − tr(S⁻¹ Hess)) ψ = rhs` for uniformly positive `S` and positive `c`.
///
/// Returns `ψ` with `‖residual‖_sup ≤ tol (1 + ‖rhs‖_sup)`.
pub fn linearized_solve(
    grid: &Grid,
    s: &HermitianField,
    c: &ScalarField,
    rhs: &ScalarField,
    tol: f64,
    max_iter: usize,
) -> Result<ScalarField> {
    grid.check(c)?;
    grid.check(rhs)?;
    rhs.check_finite()?;
    if s.len() != grid.len() {
        return Err(Error::ShapeMismatch {
            expected: grid.len(),
            got: s.len(),
        });
    }
    let (min_eig, point) = s.min_eigenvalue();
    if !(min_eig > 0.0) {
        return Err(Error::IndefiniteBackground { min_eig, point });
    }
    if let Some(i) = c.values.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "zeroth-order coefficient must be positive, got {} at point {i}",
            c.values[i]
        )));
    }
    let a: Vec<Herm> = s.values.par_iter().map(|m| m.inverse()).collect();
    let opts = SolveOptions {
        tol,
        max_iter,
        ..SolveOptions::default()
    };
    let (psi, _) = solve_operator(grid, &a, &c.values, &rhs.values, opts)?;
    Ok(ScalarField { values: psi })
}
