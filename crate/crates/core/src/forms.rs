//! Time-dependent background forms `ω_t`.
//!
//! All families here are constant in space, so `ω_t` is a single Hermitian matrix `H(t)`.
//! The structural constants are the bounds `θ ≤ H(t) ≤ Θ` and `A` with
//! `−A H ≤ Ḣ ≤ A H`, `Ḧ ≤ A H`.

use crate::error::{Error, Result};
use crate::grid::{Grid, Herm, HermitianField};

/// Natural cubic spline through `(t_i, y_i)`.
#[derive(Clone, Debug)]
pub struct CubicSpline {
    t: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let k = t.len();
        if k < 2 || y.len() != k {
            return Err(Error::InvalidArgument(
                "spline needs at least two nodes with matching values".into(),
            ));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("spline nodes must increase".into()));
        }
        // second derivatives, natural end conditions, Thomas algorithm
        let mut m = vec![0.0; k];
        if k > 2 {
            let inner = k - 2;
            let mut diag = vec![0.0; inner];
            let mut sup = vec![0.0; inner];
            let mut rhs = vec![0.0; inner];
            for i in 1..k - 1 {
                let h0 = t[i] - t[i - 1];
                let h1 = t[i + 1] - t[i];
                diag[i - 1] = 2.0 * (h0 + h1);
                sup[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for i in 1..inner {
                let sub = t[i + 1] - t[i];
                let w = sub / diag[i - 1];
                diag[i] -= w * sup[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[inner] = rhs[inner - 1] / diag[inner - 1];
            for i in (0..inner - 1).rev() {
                m[i + 1] = (rhs[i] - sup[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(CubicSpline { t, y, m })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.t.len();
        let i = match self.t.iter().position(|&ti| ti > x) {
            Some(0) => 0,
            Some(p) => p - 1,
            None => k - 2,
        }
        .min(k - 2);
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - x) / h;
        let b = (x - self.t[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Shape of `t ↦ H(t)`.
#[derive(Clone, Debug)]
pub enum FamilyKind {
    Constant(Herm),
    /// `ω₀ + t χ`.
    Affine { omega0: Herm, chi: Herm },
    /// `e^{−t} χ₀ + (1 − e^{−t}) χ`.
    Nkrf { chi0: Herm, chi: Herm },
    /// Entry-wise natural cubic interpolation of sampled matrices.
    Tabulated { n: usize, splines: Vec<CubicSpline> },
}

#[derive(Clone, Debug)]
pub struct KahlerFamily {
    pub kind: FamilyKind,
    pub theta: Herm,
    pub big_theta: Herm,
    pub a: f64,
    pub horizon: f64,
}

const DEFAULT_SAMPLES: usize = 401;

impl KahlerFamily {
    /// Wrap a shape, deriving `θ`, `Θ` and the smallest feasible `A` by sampling `[0, T]`.
    pub fn new(kind: FamilyKind, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive")));
        }
        let mut fam = KahlerFamily {
            kind,
            theta: Herm::One(0.0),
            big_theta: Herm::One(0.0),
            a: 0.0,
            horizon,
        };
        let n = fam.n();
        let samples = fam.uniform_samples(DEFAULT_SAMPLES);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &t in &samples {
            let (l, u) = fam.eval(t)?.eigenvalues();
            lo = lo.min(l);
            hi = hi.max(u);
        }
        if !(lo > 0.0) {
            return Err(Error::IndefiniteBackground { min_eig: lo, point: 0 });
        }
        fam.theta = Herm::scalar(n, lo);
        fam.big_theta = Herm::scalar(n, hi);
        fam.a = fam.smallest_feasible_a(&samples)?.max(1e-12);
        Ok(fam)
    }

    pub fn constant(m: Herm, horizon: f64) -> Result<Self> {
        Self::new(FamilyKind::Constant(m), horizon)
    }

    pub fn affine(omega0: Herm, chi: Herm, horizon: f64) -> Result<Self> {
        Self::new(FamilyKind::Affine { omega0, chi }, horizon)
    }

    pub fn nkrf(chi0: Herm, chi: Herm, horizon: f64) -> Result<Self> {
        Self::new(FamilyKind::Nkrf { chi0, chi }, horizon)
    }

    pub fn tabulated(times: &[f64], mats: &[Herm]) -> Result<Self> {
        if times.len() != mats.len() || mats.is_empty() {
            return Err(Error::InvalidArgument("tabulated family: times and matrices differ in length".into()));
        }
        let n = mats[0].dim();
        let width = if n == 2 { 4 } else { 1 };
        let splines = (0..width)
            .map(|e| {
                let y = mats.iter().map(|m| padded(m)[e]).collect();
                CubicSpline::new(times.to_vec(), y)
            })
            .collect::<Result<Vec<_>>>()?;
        if times[0] != 0.0 {
            return Err(Error::InvalidArgument("tabulated family must start at t = 0".into()));
        }
        Self::new(FamilyKind::Tabulated { n, splines }, *times.last().unwrap())
    }

    /// Replace the derived bounds.
    pub fn with_bounds(mut self, theta: Herm, big_theta: Herm) -> Self {
        self.theta = theta;
        self.big_theta = big_theta;
        self
    }

    pub fn with_a(mut self, a: f64) -> Self {
        self.a = a;
        self
    }

    pub fn n(&self) -> usize {
        match &self.kind {
            FamilyKind::Constant(m) => m.dim(),
            FamilyKind::Affine { omega0, .. } => omega0.dim(),
            FamilyKind::Nkrf { chi0, .. } => chi0.dim(),
            FamilyKind::Tabulated { n, .. } => *n,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, FamilyKind::Constant(_))
    }

    /// `H(t)` for `0 ≤ t ≤ T`.
    pub fn eval(&self, t: f64) -> Result<Herm> {
        let slack = 1e-12 * self.horizon.max(1.0);
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> Herm {
        match &self.kind {
            FamilyKind::Constant(m) => *m,
            FamilyKind::Affine { omega0, chi } => *omega0 + *chi * t,
            FamilyKind::Nkrf { chi0, chi } => {
                let e = (-t).exp();
                *chi0 * e + *chi * (1.0 - e)
            }
            FamilyKind::Tabulated { n, splines } => {
                let v: Vec<f64> = splines.iter().map(|s| s.eval(t)).collect();
                Herm::from_entries(*n, &v).expect("spline width matches dimension")
            }
        }
    }

    /// `H(t)` replicated over the grid.
    pub fn eval_field(&self, grid: &Grid, t: f64) -> Result<HermitianField> {
        Ok(HermitianField::constant(grid, self.eval(t)?))
    }

    fn uniform_samples(&self, count: usize) -> Vec<f64> {
        (0..count)
            .map(|i| self.horizon * i as f64 / (count - 1) as f64)
            .collect()
    }

    /// `Ḣ(t)` and `Ḧ(t)` by centered differences, one-sided at the ends of `[0, T]`.
    pub fn time_derivatives(&self, t: f64) -> Result<(Herm, Herm)> {
        self.eval(t)?;
        let dt = 1e-4 * self.horizon.min(1.0);
        let (t0, t1, t2) = if t - dt < 0.0 {
            (t, t + dt, t + 2.0 * dt)
        } else if t + dt > self.horizon {
            (t - 2.0 * dt, t - dt, t)
        } else {
            (t - dt, t, t + dt)
        };
        let (h0, h1, h2) = (
            self.eval_unchecked(t0),
            self.eval_unchecked(t1),
            self.eval_unchecked(t2),
        );
        let second = (h2 - h1 * 2.0 + h0) * (1.0 / (dt * dt));
        let first = if t1 == t {
            (h2 - h0) * (0.5 / dt)
        } else if t0 == t {
            (h1 * 4.0 - h0 * 3.0 - h2) * (0.5 / dt)
        } else {
            (h2 * 3.0 - h1 * 4.0 + h0) * (0.5 / dt)
        };
        Ok((first, second))
    }

    /// Smallest `A ≥ 0` with `−AH ≤ Ḣ ≤ AH` and `Ḧ ≤ AH` on the samples.
    pub fn smallest_feasible_a(&self, samples: &[f64]) -> Result<f64> {
        let mut a = 0.0f64;
        for &t in samples {
            let h = self.eval(t)?;
            let (d1, d2) = self.time_derivatives(t)?;
            let (l1, u1) = d1.relative_eigenvalues(&h);
            let (_, u2) = d2.relative_eigenvalues(&h);
            a = a.max(l1.abs()).max(u1.abs()).max(u2);
        }
        Ok(a)
    }
}

fn padded(m: &Herm) -> [f64; 4] {
    match *m {
        Herm::One(a) => [a, 0.0, 0.0, 0.0],
        Herm::Two { a, d, b } => [a, d, b.re, b.im],
    }
}

/// Worst margins of the structural hypotheses over a time sample.
///
/// Each margin is a minimum eigenvalue; negative values are violations.
#[derive(Clone, Debug)]
pub struct FamilyReport {
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub derivative_below: f64,
    pub derivative_above: f64,
    pub second_derivative: f64,
    pub theta_definite: bool,
}

impl FamilyReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.theta_definite
            && [
                self.lower_bound,
                self.upper_bound,
                self.derivative_below,
                self.derivative_above,
                self.second_derivative,
            ]
            .iter()
            .all(|&m| m >= -tol)
    }
}

/// Check `θ ≤ H ≤ Θ`, `AH ± Ḣ ⪰ 0` and `AH − Ḧ ⪰ 0` at each sampled time.
pub fn verify_family_assumptions(fam: &KahlerFamily, samples: &[f64]) -> Result<FamilyReport> {
    let mut rep = FamilyReport {
        lower_bound: f64::INFINITY,
        upper_bound: f64::INFINITY,
        derivative_below: f64::INFINITY,
        derivative_above: f64::INFINITY,
        second_derivative: f64::INFINITY,
        theta_definite: fam.theta.min_eig() > 0.0,
    };
    for &t in samples {
        let h = fam.eval(t)?;
        let (d1, d2) = fam.time_derivatives(t)?;
        let ah = h * fam.a;
        rep.lower_bound = rep.lower_bound.min((h - fam.theta).min_eig());
        rep.upper_bound = rep.upper_bound.min((fam.big_theta - h).min_eig());
        rep.derivative_below = rep.derivative_below.min((ah + d1).min_eig());
        rep.derivative_above = rep.derivative_above.min((ah - d1).min_eig());
        rep.second_derivative = rep.second_derivative.min((ah - d2).min_eig());
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn samples(t: f64) -> Vec<f64> {
        (0..=50).map(|i| t * i as f64 / 50.0).collect()
    }

    #[test]
    fn affine_endpoint_and_linearity() {
        let w0 = Herm::diag2(1.0, 2.0);
        let chi = Herm::Two {
            a: 0.5,
            d: 0.3,
            b: Complex64::new(0.1, 0.05),
        };
        let fam = KahlerFamily::affine(w0, chi, 2.0).unwrap();
        assert_eq!(fam.eval(0.0).unwrap(), w0);
        let h0 = fam.eval(0.0).unwrap();
        let h1 = fam.eval(1.0).unwrap();
        let ht = fam.eval(0.7).unwrap();
        let lhs = ht - h0;
        let rhs = (h1 - h0) * 0.7;
        for (a, b) in lhs.entries().iter().zip(rhs.entries()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(fam.eval(2.5).is_err());
    }

    #[test]
    fn nkrf_at_log_two_is_midpoint() {
        let fam = KahlerFamily::nkrf(Herm::One(3.0), Herm::One(1.0), 5.0).unwrap();
        match fam.eval(2f64.ln()).unwrap() {
            Herm::One(v) => assert!((v - 2.0).abs() < 1e-15),
            _ => unreachable!(),
        }
    }

    #[test]
    fn constant_family_margins() {
        let m = Herm::diag2(1.5, 0.5);
        let fam = KahlerFamily::constant(m, 1.0).unwrap().with_a(2.0);
        assert!(fam.is_constant());
        let rep = verify_family_assumptions(&fam, &samples(1.0)).unwrap();
        assert!((rep.derivative_below - 1.0).abs() < 1e-9);
        assert!((rep.derivative_above - 1.0).abs() < 1e-9);
        assert!((rep.second_derivative - 1.0).abs() < 1e-9);
        assert!(rep.passes(0.0));
    }

    #[test]
    fn affine_second_derivative_margin() {
        let fam = KahlerFamily::affine(Herm::One(1.0), Herm::One(0.5), 1.0)
            .unwrap()
            .with_a(1.0);
        let rep = verify_family_assumptions(&fam, &samples(1.0)).unwrap();
        // Ḧ = 0, so the margin is A·min H = 1
        assert!((rep.second_derivative - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nkrf_too_small_a_is_flagged() {
        let chi0 = Herm::One(2.0);
        let chi = Herm::One(1.0);
        let fam = KahlerFamily::nkrf(chi0, chi, 4.0).unwrap();
        let s = samples(4.0);
        // oracle: sup_t |χ−χ₀| e^{−t} / χ_t for scalars, attained at t = 0 (value ½)
        let oracle = s
            .iter()
            .map(|&t| (-t).exp() / (1.0 + (-t).exp()))
            .fold(0.0, f64::max);
        assert!((fam.a - oracle).abs() < 1e-6, "{} vs {oracle}", fam.a);
        let rep = verify_family_assumptions(&fam.clone().with_a(0.9 * oracle), &s).unwrap();
        assert!(rep.derivative_below < 0.0);
        let rep = verify_family_assumptions(&fam, &s).unwrap();
        assert!(rep.passes(1e-9));
    }

    #[test]
    fn spline_reproduces_cubic_free_data_and_nodes() {
        let t: Vec<f64> = (0..6).map(|i| i as f64 * 0.2).collect();
        let y: Vec<f64> = t.iter().map(|x| 1.0 + 2.0 * x).collect();
        let s = CubicSpline::new(t.clone(), y.clone()).unwrap();
        for (ti, yi) in t.iter().zip(&y) {
            assert!((s.eval(*ti) - yi).abs() < 1e-14);
        }
        assert!((s.eval(0.33) - 1.66).abs() < 1e-13);
    }

    #[test]
    fn tabulated_matches_affine_preset() {
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let mats: Vec<Herm> = times.iter().map(|&t| Herm::diag2(1.0 + t, 2.0 - t)).collect();
        let fam = KahlerFamily::tabulated(&times, &mats).unwrap();
        let h = fam.eval(0.45).unwrap();
        let e = h.entries();
        assert!((e[0] - 1.45).abs() < 1e-12 && (e[1] - 1.55).abs() < 1e-12);
    }
}
