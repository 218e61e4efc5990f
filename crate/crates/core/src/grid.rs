//! Periodic lattice on `[0,1)^{2n}` standing in for the flat torus `C^n/(Z+iZ)^n`.
//!
//! Real axes are ordered `(x1, y1)` for `n = 1` and `(x1, y1, x2, y2)` for `n = 2`,
//! with `z_j = x_j + i y_j`. Points are stored row-major with the first axis slowest:
//! `index = sum_a i_a * N^(2n-1-a)`. Every axis wraps modulo `N`, and each point carries
//! the volume `h^{2n}` so the torus has unit mass.
//!
//! The complex Hessian `∂²/∂z_j∂z̄_k` is discretised with second-order centered
//! differences. Diagonal entries are `¼` of the compact 3-point Laplacian in `(x_j, y_j)`.
//! The off-diagonal entry of `n = 2` is
//! `¼ [(∂x1∂x2 + ∂y1∂y2) + i (∂x1∂y2 − ∂y1∂x2)]` with each mixed derivative taken on the
//! 4-point cross stencil. Every component is a symmetric operator.
//!
//! For `n = 1` the discrete mass identity `∫ det(H + Hess φ) dV = ∫ det H dV` is exact.
//! For `n = 2` it holds up to `∫ det(Hess φ) dV`, which is nonnegative and `O(h²)`.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// The periodic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    n: usize,
    res: usize,
    h: f64,
    len: usize,
}

/// Build a grid of complex dimension `n` with `res` points per real axis.
pub fn make_grid(n: usize, res: usize) -> Result<Grid> {
    Grid::new(n, res)
}

impl Grid {
    pub fn new(n: usize, res: usize) -> Result<Self> {
        if n != 1 && n != 2 {
            return Err(Error::UnsupportedDimension(n));
        }
        if res < 8 || !res.is_power_of_two() {
            return Err(Error::InvalidResolution(res));
        }
        Ok(Grid {
            n,
            res,
            h: 1.0 / res as f64,
            len: res.pow(2 * n as u32),
        })
    }

    /// Complex dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Points per real axis.
    pub fn res(&self) -> usize {
        self.res
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of real axes, `2n`.
    pub fn real_dim(&self) -> usize {
        2 * self.n
    }

    /// Total number of lattice points, `N^{2n}`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Volume carried by one lattice point.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.real_dim() as i32)
    }

    fn stride(&self, axis: usize) -> usize {
        self.res.pow((self.real_dim() - 1 - axis) as u32)
    }

    /// Integer coordinates of a point.
    pub fn multi_index(&self, idx: usize) -> [usize; 4] {
        let mut out = [0; 4];
        let mut rem = idx;
        for a in (0..self.real_dim()).rev() {
            out[a] = rem % self.res;
            rem /= self.res;
        }
        out
    }

    pub fn index_of(&self, mi: &[usize]) -> usize {
        mi.iter()
            .take(self.real_dim())
            .fold(0, |acc, &i| acc * self.res + (i % self.res))
    }

    /// Real coordinates in `[0,1)^{2n}`; unused trailing slots are zero.
    pub fn coords(&self, idx: usize) -> [f64; 4] {
        let mi = self.multi_index(idx);
        let mut x = [0.0; 4];
        for a in 0..self.real_dim() {
            x[a] = mi[a] as f64 * self.h;
        }
        x
    }

    /// Neighbour of `idx` shifted by `step` along `axis`, with wrap-around.
    #[inline]
    pub fn shift(&self, idx: usize, axis: usize, step: isize) -> usize {
        let stride = self.stride(axis);
        let coord = (idx / stride) % self.res;
        let target = (coord as isize + step).rem_euclid(self.res as isize) as usize;
        idx - coord * stride + target * stride
    }

    /// Flat-torus distance between two points of `[0,1)^{2n}`.
    pub fn torus_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        (0..self.real_dim())
            .map(|k| {
                let d = (a[k] - b[k]).rem_euclid(1.0);
                let d = d.min(1.0 - d);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `∫ f dV` with the unit-mass normalisation.
    pub fn integrate(&self, f: &ScalarField) -> f64 {
        f.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// `∫ f g dV`.
    pub fn integrate_product(&self, f: &ScalarField, g: &ScalarField) -> f64 {
        f.values
            .iter()
            .zip(&g.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.cell_volume()
    }

    pub fn check(&self, f: &ScalarField) -> Result<()> {
        if f.len() != self.len {
            return Err(Error::ShapeMismatch {
                expected: self.len,
                got: f.len(),
            });
        }
        Ok(())
    }
}

/// A real function sampled on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        ScalarField {
            values: vec![c; grid.len()],
        }
    }

    pub fn from_vec(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        let f = ScalarField { values };
        grid.check(&f)?;
        f.check_finite()?;
        Ok(f)
    }

    /// Sample `f(x)` at every lattice point (`x` has `2n` meaningful entries).
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64; 4]) -> f64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|i| f(&grid.coords(i)))
            .collect();
        ScalarField { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        ScalarField {
            values: self.values.par_iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        ScalarField {
            values: self
                .values
                .par_iter()
                .zip(other.values.par_iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn axpy(&mut self, a: f64, x: &ScalarField) {
        self.values
            .par_iter_mut()
            .zip(x.values.par_iter())
            .for_each(|(y, &xv)| *y += a * xv);
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Plain (unweighted) arithmetic mean, equal to `∫ f dV`.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn argmin(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
            .0
    }

    pub fn argmax(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    }
}

/// `(Σ|f_i|^p h^{2n})^{1/p}`.
pub fn lp_norm(grid: &Grid, f: &ScalarField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("L^p exponent {p} < 1")));
    }
    grid.check(f)?;
    if p.is_infinite() {
        return Ok(f.sup_norm());
    }
    let s: f64 = f.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * grid.cell_volume();
    Ok(s.powf(1.0 / p))
}

/// A Hermitian `n×n` matrix, `n ∈ {1, 2}`.
///
/// For `n = 2` the layout is `[[a, b], [b̄, d]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Herm {
    One(f64),
    Two { a: f64, d: f64, b: Complex64 },
}

impl Herm {
    pub fn zero(n: usize) -> Self {
        Self::scalar(n, 0.0)
    }

    pub fn identity(n: usize) -> Self {
        Self::scalar(n, 1.0)
    }

    /// `s · I`.
    pub fn scalar(n: usize, s: f64) -> Self {
        match n {
            1 => Herm::One(s),
            _ => Herm::Two {
                a: s,
                d: s,
                b: Complex64::new(0.0, 0.0),
            },
        }
    }

    pub fn diag2(a: f64, d: f64) -> Self {
        Herm::Two {
            a,
            d,
            b: Complex64::new(0.0, 0.0),
        }
    }

    /// Build from a flat list: `[a]` or `[a, d, re b, im b]`.
    pub fn from_entries(n: usize, e: &[f64]) -> Result<Self> {
        match (n, e.len()) {
            (1, 1) => Ok(Herm::One(e[0])),
            (2, 2) => Ok(Herm::diag2(e[0], e[1])),
            (2, 4) => Ok(Herm::Two {
                a: e[0],
                d: e[1],
                b: Complex64::new(e[2], e[3]),
            }),
            _ => Err(Error::InvalidArgument(format!(
                "{} matrix entries do not describe a {n}x{n} Hermitian matrix",
                e.len()
            ))),
        }
    }

    pub fn entries(&self) -> Vec<f64> {
        match *self {
            Herm::One(a) => vec![a],
            Herm::Two { a, d, b } => vec![a, d, b.re, b.im],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Herm::One(_) => 1,
            Herm::Two { .. } => 2,
        }
    }

    pub fn det(&self) -> f64 {
        match *self {
            Herm::One(a) => a,
            Herm::Two { a, d, b } => a * d - b.norm_sqr(),
        }
    }

    pub fn trace(&self) -> f64 {
        match *self {
            Herm::One(a) => a,
            Herm::Two { a, d, .. } => a + d,
        }
    }

    /// Eigenvalues in increasing order (the second equals the first for `n = 1`).
    pub fn eigenvalues(&self) -> (f64, f64) {
        match *self {
            Herm::One(a) => (a, a),
            Herm::Two { a, d, b } => {
                let m = 0.5 * (a + d);
                let r = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
                (m - r, m + r)
            }
        }
    }

    pub fn min_eig(&self) -> f64 {
        self.eigenvalues().0
    }

    pub fn max_eig(&self) -> f64 {
        self.eigenvalues().1
    }

    /// Transpose of the cofactor matrix, so that `A · adj(A) = det(A) I`.
    pub fn adjugate(&self) -> Self {
        match *self {
            Herm::One(_) => Herm::One(1.0),
            Herm::Two { a, d, b } => Herm::Two { a: d, d: a, b: -b },
        }
    }

    pub fn inverse(&self) -> Self {
        self.adjugate() * (1.0 / self.det())
    }

    /// Mixed discriminant `D(A, B)`; `D(A, A) = det A`.
    pub fn mixed(&self, other: &Herm) -> f64 {
        match (*self, *other) {
            (Herm::One(a), Herm::One(b)) => 0.5 * (a + b),
            (Herm::Two { a: a1, d: d1, b: b1 }, Herm::Two { a: a2, d: d2, b: b2 }) => {
                0.5 * (a1 * d2 + a2 * d1) - (b1 * b2.conj()).re
            }
            _ => panic!("mixed discriminant of matrices with different sizes"),
        }
    }

    /// Eigenvalues of the pencil `det(self - λ·reference) = 0`, i.e. of `ω^{-1/2} η ω^{-1/2}`.
    ///
    /// `reference` must be positive definite.
    pub fn relative_eigenvalues(&self, reference: &Herm) -> (f64, f64) {
        match (*self, *reference) {
            (Herm::One(a), Herm::One(w)) => (a / w, a / w),
            _ => {
                let dw = reference.det();
                let half_tr = self.mixed(reference) / dw;
                let det = self.det() / dw;
                let disc = (half_tr * half_tr - det).max(0.0).sqrt();
                (half_tr - disc, half_tr + disc)
            }
        }
    }

    /// `tr(self · other)`.
    pub fn trace_product(&self, other: &Herm) -> f64 {
        match (*self, *other) {
            (Herm::One(a), Herm::One(b)) => a * b,
            (Herm::Two { a: a1, d: d1, b: b1 }, Herm::Two { a: a2, d: d2, b: b2 }) => {
                a1 * a2 + d1 * d2 + 2.0 * (b1 * b2.conj()).re
            }
            _ => panic!("trace of matrices with different sizes"),
        }
    }
}

impl Add for Herm {
    type Output = Herm;
    fn add(self, o: Herm) -> Herm {
        match (self, o) {
            (Herm::One(a), Herm::One(b)) => Herm::One(a + b),
            (Herm::Two { a, d, b }, Herm::Two { a: a2, d: d2, b: b2 }) => Herm::Two {
                a: a + a2,
                d: d + d2,
                b: b + b2,
            },
            _ => panic!("sum of matrices with different sizes"),
        }
    }
}

impl Sub for Herm {
    type Output = Herm;
    fn sub(self, o: Herm) -> Herm {
        self + o * -1.0
    }
}

impl Mul<f64> for Herm {
    type Output = Herm;
    fn mul(self, s: f64) -> Herm {
        match self {
            Herm::One(a) => Herm::One(a * s),
            Herm::Two { a, d, b } => Herm::Two {
                a: a * s,
                d: d * s,
                b: b * s,
            },
        }
    }
}

/// One Hermitian matrix per lattice point.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianField {
    pub values: Vec<Herm>,
}

impl HermitianField {
    pub fn constant(grid: &Grid, m: Herm) -> Self {
        HermitianField {
            values: vec![m; grid.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `m + self` pointwise.
    pub fn add_constant(&self, m: Herm) -> Self {
        HermitianField {
            values: self.values.par_iter().map(|&v| v + m).collect(),
        }
    }

    pub fn det(&self) -> ScalarField {
        ScalarField {
            values: self.values.par_iter().map(|m| m.det()).collect(),
        }
    }

    pub fn min_eig(&self) -> ScalarField {
        ScalarField {
            values: self.values.par_iter().map(|m| m.min_eig()).collect(),
        }
    }

    /// Smallest eigenvalue over the field and where it occurs.
    pub fn min_eigenvalue(&self) -> (f64, usize) {
        self.values
            .iter()
            .enumerate()
            .map(|(i, m)| (m.min_eig(), i))
            .fold((f64::INFINITY, 0), |acc, x| if x.0 < acc.0 { x } else { acc })
    }

    /// Entry-wise mean.
    pub fn mean(&self) -> Herm {
        let n = self.values[0].dim();
        let sum = self
            .values
            .iter()
            .fold(Herm::zero(n), |acc, &m| acc + m);
        sum * (1.0 / self.values.len() as f64)
    }
}

/// Second-difference kernels used by the complex Hessian and the linearised operator.
#[inline]
pub(crate) fn second_diff(grid: &Grid, f: &[f64], i: usize, axis: usize) -> f64 {
    let h2 = grid.h * grid.h;
    (f[grid.shift(i, axis, 1)] - 2.0 * f[i] + f[grid.shift(i, axis, -1)]) / h2
}

/// Cross-stencil `∂_a ∂_b f` at `i` for distinct axes `a`, `b`.
#[inline]
pub(crate) fn mixed_diff(grid: &Grid, f: &[f64], i: usize, a: usize, b: usize) -> f64 {
    let ip = grid.shift(i, a, 1);
    let im = grid.shift(i, a, -1);
    let pp = f[grid.shift(ip, b, 1)];
    let pm = f[grid.shift(ip, b, -1)];
    let mp = f[grid.shift(im, b, 1)];
    let mm = f[grid.shift(im, b, -1)];
    (pp - pm - mp + mm) / (4.0 * grid.h * grid.h)
}

/// Pointwise complex Hessian of `f` at `i`.
#[inline]
pub(crate) fn hessian_at(grid: &Grid, f: &[f64], i: usize) -> Herm {
    match grid.n {
        1 => Herm::One(0.25 * (second_diff(grid, f, i, 0) + second_diff(grid, f, i, 1))),
        _ => {
            let a = 0.25 * (second_diff(grid, f, i, 0) + second_diff(grid, f, i, 1));
            let d = 0.25 * (second_diff(grid, f, i, 2) + second_diff(grid, f, i, 3));
            // axes: 0 = x1, 1 = y1, 2 = x2, 3 = y2
            let p = 0.25 * (mixed_diff(grid, f, i, 0, 2) + mixed_diff(grid, f, i, 1, 3));
            let q = 0.25 * (mixed_diff(grid, f, i, 0, 3) - mixed_diff(grid, f, i, 1, 2));
            Herm::Two {
                a,
                d,
                b: Complex64::new(p, q),
            }
        }
    }
}

/// Discrete `∂²φ/∂z_j∂z̄_k` at every lattice point.
pub fn complex_hessian(grid: &Grid, phi: &ScalarField) -> Result<HermitianField> {
    grid.check(phi)?;
    phi.check_finite()?;
    Ok(hessian_unchecked(grid, phi))
}

pub(crate) fn hessian_unchecked(grid: &Grid, phi: &ScalarField) -> HermitianField {
    let f = &phi.values;
    HermitianField {
        values: (0..grid.len())
            .into_par_iter()
            .map(|i| hessian_at(grid, f, i))
            .collect(),
    }
}

/// `H + Hess φ` for a constant background matrix `H`.
pub fn background_plus_hessian(grid: &Grid, background: Herm, phi: &ScalarField) -> HermitianField {
    let f = &phi.values;
    HermitianField {
        values: (0..grid.len())
            .into_par_iter()
            .map(|i| background + hessian_at(grid, f, i))
            .collect(),
    }
}

/// Symbol of `-D⁺D⁻` along one axis at integer frequency `k`.
pub fn axis_symbol(grid: &Grid, k: i64) -> f64 {
    let theta = 2.0 * std::f64::consts::PI * k as f64 / grid.res as f64;
    (2.0 - 2.0 * theta.cos()) / (grid.h * grid.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn grid_construction() {
        let g = make_grid(1, 8).unwrap();
        assert_eq!(g.len(), 64);
        assert_eq!(g.h(), 0.125);
        let g2 = make_grid(2, 16).unwrap();
        assert_eq!(g2.len(), 16usize.pow(4));
        assert!(matches!(make_grid(3, 8), Err(Error::UnsupportedDimension(3))));
        assert!(matches!(make_grid(1, 48), Err(Error::InvalidResolution(48))));
        assert!(matches!(make_grid(1, 4), Err(Error::InvalidResolution(4))));
    }

    #[test]
    fn total_volume_is_one() {
        for (n, r) in [(1, 8), (1, 32), (2, 8)] {
            let g = make_grid(n, r).unwrap();
            let one = ScalarField::constant(&g, 1.0);
            assert!((g.integrate(&one) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn index_round_trip_and_wrap() {
        let g = make_grid(2, 8).unwrap();
        for idx in [0, 7, 63, 511, 4095] {
            assert_eq!(g.index_of(&g.multi_index(idx)), idx);
        }
        let i = g.index_of(&[7, 0, 3, 0]);
        assert_eq!(g.shift(i, 0, 1), g.index_of(&[0, 0, 3, 0]));
        assert_eq!(g.shift(i, 1, -1), g.index_of(&[7, 7, 3, 0]));
        assert_eq!(g.shift(i, 3, 9), g.index_of(&[7, 0, 3, 1]));
    }

    #[test]
    fn hessian_of_constant_is_zero() {
        let g = make_grid(2, 8).unwrap();
        let c = ScalarField::constant(&g, 3.7);
        let hs = complex_hessian(&g, &c).unwrap();
        assert!(hs.values.iter().all(|m| m.entries().iter().all(|e| e.abs() < 1e-9)));
    }

    #[test]
    fn hessian_of_cosine_matches_stencil_symbol() {
        let g = make_grid(1, 32).unwrap();
        let phi = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).cos());
        let hs = complex_hessian(&g, &phi).unwrap();
        let h = g.h();
        let sinc = (PI * h).sin() / (PI * h);
        for (i, m) in hs.values.iter().enumerate() {
            let x = g.coords(i)[0];
            let expected = -PI * PI * (2.0 * PI * x).cos() * sinc * sinc;
            match m {
                Herm::One(v) => assert!((v - expected).abs() < 1e-9, "{v} vs {expected}"),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn off_diagonal_entry_matches_difference_symbol() {
        // φ = sin(2π x1) sin(2π y2): the only non-zero mixed partial is φ_{x1 y2},
        // so ∂z1∂z̄2 φ = (i/4) φ_{x1 y2}; the cross stencil replaces each first derivative
        // by the centered quotient, giving sin(2πh)/h in place of 2π.
        let g = make_grid(2, 16).unwrap();
        let phi = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[3]).sin());
        let hs = complex_hessian(&g, &phi).unwrap();
        let h = g.h();
        let k = (2.0 * PI * h).sin() / h;
        for (i, m) in hs.values.iter().enumerate() {
            let x = g.coords(i);
            let expected_im = 0.25 * k * k * (2.0 * PI * x[0]).cos() * (2.0 * PI * x[3]).cos();
            let Herm::Two { b, .. } = m else { unreachable!() };
            assert!(b.re.abs() < 1e-9);
            assert!((b.im - expected_im).abs() < 1e-9);
            let exact = 0.25 * (2.0 * PI).powi(2) * (2.0 * PI * x[0]).cos() * (2.0 * PI * x[3]).cos();
            assert!((b.im - exact).abs() < 0.1 * (2.0 * PI).powi(2) * (2.0 * PI * h).powi(2));
        }
    }

    #[test]
    fn lp_norm_examples() {
        let g = make_grid(1, 8).unwrap();
        let two = ScalarField::constant(&g, 2.0);
        for p in [1.0, 1.5, 2.0, 7.0] {
            assert!((lp_norm(&g, &two, p).unwrap() - 2.0).abs() < 1e-14);
        }
        let half = ScalarField::from_fn(&g, |x| if x[0] < 0.5 { 1.0 } else { 0.0 });
        assert!((lp_norm(&g, &half, 1.0).unwrap() - 0.5).abs() < 1e-14);
        let s = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        assert!((lp_norm(&g, &s, 2.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(lp_norm(&g, &s, 0.5).is_err());
    }

    #[test]
    fn mass_identity_exact_for_n1() {
        let g = make_grid(1, 16).unwrap();
        let phi = ScalarField::from_fn(&g, |x| 0.05 * (2.0 * PI * (x[0] + 3.0 * x[1])).sin() + 0.02 * (2.0 * PI * x[1]).cos());
        let s = background_plus_hessian(&g, Herm::One(1.3), &phi);
        assert!((g.integrate(&s.det()) - 1.3).abs() < 1e-13);
    }

    #[test]
    fn n2_mass_excess_is_nonnegative_and_second_order() {
        let bg = Herm::Two {
            a: 1.3,
            d: 0.8,
            b: Complex64::new(0.2, -0.1),
        };
        let phi_of = |x: &[f64; 4]| {
            0.01 * ((2.0 * PI * (x[0] + x[1] + x[2] - x[3])).sin() + (2.0 * PI * (x[1] - x[2])).cos())
        };
        let excess = |res: usize| {
            let g = make_grid(2, res).unwrap();
            let phi = ScalarField::from_fn(&g, phi_of);
            let s = background_plus_hessian(&g, bg, &phi);
            g.integrate(&s.det()) - bg.det()
        };
        let (e8, e16) = (excess(8), excess(16));
        assert!(e8 > 0.0 && e16 > 0.0);
        let ratio = e8 / e16;
        assert!(ratio > 3.0 && ratio < 5.0, "{ratio}");
    }

    #[test]
    fn herm_algebra() {
        let m = Herm::Two {
            a: 2.0,
            d: 3.0,
            b: Complex64::new(0.5, -0.25),
        };
        let inv = m.inverse();
        // m * inv = I  <=> tr(m inv) = 2 and det(m) det(inv) = 1
        assert!((m.trace_product(&inv) - 2.0).abs() < 1e-14);
        assert!((m.det() * inv.det() - 1.0).abs() < 1e-14);
        assert!((m.mixed(&m) - m.det()).abs() < 1e-14);
        let (l1, l2) = m.eigenvalues();
        assert!((l1 + l2 - m.trace()).abs() < 1e-14);
        assert!((l1 * l2 - m.det()).abs() < 1e-13);
        let (r1, r2) = m.relative_eigenvalues(&Herm::identity(2));
        assert!((r1 - l1).abs() < 1e-12 && (r2 - l2).abs() < 1e-12);
    }
}
