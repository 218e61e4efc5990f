//! The nonlinearity `F(t, x, r)` and the density `g`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forms::CubicSpline;
use crate::grid::{lp_norm, Grid, ScalarField};

type Eval3 = Arc<dyn Fn(f64, usize, f64) -> f64 + Send + Sync>;
type Eval1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A smooth scalar function of time together with its first two derivatives.
#[derive(Clone)]
pub struct TimeFunction {
    f: Eval1,
    d1: Eval1,
    d2: Eval1,
}

impl TimeFunction {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        TimeFunction {
            f: Arc::new(f),
            d1: Arc::new(d1),
            d2: Arc::new(d2),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, |_| 0.0, |_| 0.0)
    }

    /// `Σ c_k t^k`.
    pub fn polynomial(coeffs: &[f64]) -> Self {
        let c0 = coeffs.to_vec();
        let c1: Vec<f64> = coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect();
        let c2: Vec<f64> = c1.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect();
        let horner = |c: Vec<f64>| move |t: f64| c.iter().rev().fold(0.0, |acc, a| acc * t + a);
        Self::new(horner(c0), horner(c1), horner(c2))
    }

    pub fn exp(rate: f64) -> Self {
        Self::new(
            move |s| (rate * s).exp(),
            move |s| rate * (rate * s).exp(),
            move |s| rate * rate * (rate * s).exp(),
        )
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.f)(t)
    }

    pub fn d1(&self, t: f64) -> f64 {
        (self.d1)(t)
    }

    pub fn d2(&self, t: f64) -> f64 {
        (self.d2)(t)
    }

    fn sup_over(&self, which: &Eval1, a: f64, b: f64) -> f64 {
        (0..=512)
            .map(|i| which(a + (b - a) * i as f64 / 512.0).abs())
            .fold(0.0, f64::max)
    }
}

/// `F(t, x, r)` with its certified constants on `[0, t_max] × X × [−r_max, r_max]`.
#[derive(Clone)]
pub struct Nonlinearity {
    value: Eval3,
    dr: Eval3,
    pub lambda_f: f64,
    pub kappa: f64,
    pub c_f: f64,
    pub t_max: f64,
    pub r_max: f64,
    pub spatially_constant: bool,
    pub label: String,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("label", &self.label)
            .field("lambda_f", &self.lambda_f)
            .field("kappa", &self.kappa)
            .field("c_f", &self.c_f)
            .field("t_max", &self.t_max)
            .field("r_max", &self.r_max)
            .finish()
    }
}

/// Sampled margins of the three structural conditions; negative values are violations.
#[derive(Clone, Copy, Debug)]
pub struct NonlinearityReport {
    pub monotone: f64,
    pub lipschitz: f64,
    pub semiconvex: f64,
}

impl NonlinearityReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.monotone >= -tol && self.lipschitz >= -tol && self.semiconvex >= -tol
    }
}

const DEFAULT_R_MAX: f64 = 1e3;

impl Nonlinearity {
    /// General constructor; `dr` must be `∂F/∂r`.
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        label: impl Into<String>,
        value: impl Fn(f64, usize, f64) -> f64 + Send + Sync + 'static,
        dr: impl Fn(f64, usize, f64) -> f64 + Send + Sync + 'static,
        lambda_f: f64,
        kappa: f64,
        c_f: f64,
        t_max: f64,
        r_max: f64,
    ) -> Self {
        Nonlinearity {
            value: Arc::new(value),
            dr: Arc::new(dr),
            lambda_f,
            kappa,
            c_f,
            t_max,
            r_max,
            spatially_constant: false,
            label: label.into(),
        }
    }

    pub fn zero(t_max: f64) -> Self {
        Self::linear(0.0, 0.0, t_max)
    }

    /// `F = slope · r + offset`.
    pub fn linear(slope: f64, offset: f64, t_max: f64) -> Self {
        let mut f = Self::custom(
            if slope == 0.0 && offset == 0.0 { "zero".to_string() } else { format!("{slope}*r+{offset}") },
            move |_, _, r| slope * r + offset,
            move |_, _, _| slope,
            (-slope).max(0.0),
            slope.abs(),
            0.0,
            t_max,
            DEFAULT_R_MAX,
        );
        f.spatially_constant = true;
        f
    }

    /// Spatially constant `F(t, r)` tabulated on a tensor grid, interpolated by natural
    /// cubic splines in `r` and then in `t`. Constants are estimated by sampling.
    pub fn tabulated(t_nodes: Vec<f64>, r_nodes: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != t_nodes.len() || values.iter().any(|row| row.len() != r_nodes.len()) {
            return Err(Error::InvalidArgument("tabulated F: table shape mismatch".into()));
        }
        let rows: Vec<CubicSpline> = values
            .into_iter()
            .map(|row| CubicSpline::new(r_nodes.clone(), row))
            .collect::<Result<_>>()?;
        CubicSpline::new(t_nodes.clone(), vec![0.0; t_nodes.len()])?;
        let rows = Arc::new(rows);
        let tn = Arc::new(t_nodes.clone());
        let eval = {
            let rows = rows.clone();
            let tn = tn.clone();
            move |t: f64, r: f64| {
                let col: Vec<f64> = rows.iter().map(|s| s.eval(r)).collect();
                CubicSpline::new(tn.to_vec(), col).map(|s| s.eval(t)).unwrap_or(f64::NAN)
            }
        };
        let eval = Arc::new(eval);
        let e2 = eval.clone();
        let r_span = r_nodes[r_nodes.len() - 1] - r_nodes[0];
        let hr = 1e-6 * r_span.max(1.0);
        let r_max = r_nodes[0].abs().min(r_nodes[r_nodes.len() - 1].abs());
        let mut f = Self::custom(
            "tabulated",
            move |t, _, r| eval(t, r),
            move |t, _, r| (e2(t, r + hr) - e2(t, r - hr)) / (2.0 * hr),
            0.0,
            0.0,
            0.0,
            *t_nodes.last().unwrap(),
            r_max,
        );
        f.spatially_constant = true;
        let (l, k, c) = f.estimate_constants(None);
        f.lambda_f = l;
        f.kappa = k;
        f.c_f = c;
        Ok(f)
    }

    #[inline]
    pub fn eval_unchecked(&self, t: f64, i: usize, r: f64) -> f64 {
        (self.value)(t, i, r)
    }

    #[inline]
    pub fn dr_unchecked(&self, t: f64, i: usize, r: f64) -> f64 {
        (self.dr)(t, i, r)
    }

    pub fn in_box(&self, t: f64, r: f64) -> bool {
        let slack = 1e-9 * self.t_max.max(1.0);
        t >= -slack && t <= self.t_max + slack && r.abs() <= self.r_max
    }

    /// `F(t, x_i, r)`, refusing points outside the certified box.
    pub fn eval(&self, t: f64, i: usize, r: f64) -> Result<f64> {
        if !self.in_box(t, r) {
            return Err(Error::OutsideBox { t, r });
        }
        Ok(self.eval_unchecked(t, i, r))
    }

    fn sample_box(&self) -> (Vec<f64>, Vec<f64>) {
        let r_lim = self.r_max.min(50.0);
        let ts = (0..=24).map(|k| self.t_max * k as f64 / 24.0).collect();
        let rs = (0..=24).map(|k| -r_lim + 2.0 * r_lim * k as f64 / 24.0).collect();
        (ts, rs)
    }

    fn sample_points(&self, grid_points: Option<&[usize]>) -> Vec<usize> {
        match grid_points {
            Some(p) if !self.spatially_constant => p.to_vec(),
            _ => vec![0],
        }
    }

    /// Smallest constants consistent with the sampled box: `(λ_F, κ, C_F)`.
    pub fn estimate_constants(&self, grid_points: Option<&[usize]>) -> (f64, f64, f64) {
        let (ts, rs) = self.sample_box();
        let mut lambda = 0.0f64;
        let mut kappa = 0.0f64;
        let mut cf = 0.0f64;
        for &i in &self.sample_points(grid_points) {
            for (a, &t) in ts.iter().enumerate() {
                for (b, &r) in rs.iter().enumerate() {
                    let f0 = self.eval_unchecked(t, i, r);
                    if b + 1 < rs.len() {
                        let f1 = self.eval_unchecked(t, i, rs[b + 1]);
                        let q = (f1 - f0) / (rs[b + 1] - r);
                        lambda = lambda.max(-q);
                        kappa = kappa.max(q.abs());
                    }
                    if a + 1 < ts.len() {
                        let f1 = self.eval_unchecked(ts[a + 1], i, r);
                        kappa = kappa.max((f1 - f0).abs() / (ts[a + 1] - t));
                    }
                    // midpoint convexity along each axis and the diagonal
                    for (dt, dr) in [(1usize, 0usize), (0, 1), (1, 1)] {
                        if a + 2 * dt < ts.len() && b + 2 * dr < rs.len() {
                            let (t2, r2) = (ts[a + 2 * dt], rs[b + 2 * dr]);
                            let (tm, rm) = (ts[a + dt], rs[b + dr]);
                            let defect = self.eval_unchecked(tm, i, rm)
                                - 0.5 * (f0 + self.eval_unchecked(t2, i, r2));
                            let spread = 0.25 * ((t2 - t).powi(2) + (r2 - r).powi(2));
                            if spread > 0.0 {
                                cf = cf.max(defect / spread);
                            }
                        }
                    }
                }
            }
        }
        (lambda, kappa, cf)
    }

    /// Sampled check of the three structural conditions with the stored constants.
    pub fn certify(&self, grid_points: Option<&[usize]>) -> NonlinearityReport {
        let (ts, rs) = self.sample_box();
        let mut rep = NonlinearityReport {
            monotone: f64::INFINITY,
            lipschitz: f64::INFINITY,
            semiconvex: f64::INFINITY,
        };
        let g = |t: f64, i: usize, r: f64| self.eval_unchecked(t, i, r) + self.c_f * (t * t + r * r);
        for &i in &self.sample_points(grid_points) {
            for (a, &t) in ts.iter().enumerate() {
                for (b, &r) in rs.iter().enumerate() {
                    let f0 = self.eval_unchecked(t, i, r);
                    if b + 1 < rs.len() {
                        let r1 = rs[b + 1];
                        let f1 = self.eval_unchecked(t, i, r1);
                        rep.monotone = rep.monotone.min((f1 + self.lambda_f * r1) - (f0 + self.lambda_f * r));
                        rep.lipschitz = rep.lipschitz.min(self.kappa * (r1 - r) - (f1 - f0).abs());
                    }
                    if a + 1 < ts.len() {
                        let t1 = ts[a + 1];
                        let f1 = self.eval_unchecked(t1, i, r);
                        rep.lipschitz = rep.lipschitz.min(self.kappa * (t1 - t) - (f1 - f0).abs());
                    }
                    for (dt, dr) in [(1usize, 0usize), (0, 1), (1, 1)] {
                        if a + 2 * dt < ts.len() && b + 2 * dr < rs.len() {
                            let (t2, r2) = (ts[a + 2 * dt], rs[b + 2 * dr]);
                            let (tm, rm) = (ts[a + dt], rs[b + dr]);
                            let m = 0.5 * (g(t, i, r) + g(t2, i, r2)) - g(tm, i, rm);
                            rep.semiconvex = rep.semiconvex.min(m);
                        }
                    }
                }
            }
        }
        rep
    }

    /// Sampled monotonicity margin of `r ↦ F(t, x, r)` alone (no `λ_F` correction).
    pub fn increasing_margin(&self, grid_points: Option<&[usize]>) -> f64 {
        let (ts, rs) = self.sample_box();
        let mut m = f64::INFINITY;
        for &i in &self.sample_points(grid_points) {
            for &t in &ts {
                for w in rs.windows(2) {
                    m = m.min(self.eval_unchecked(t, i, w[1]) - self.eval_unchecked(t, i, w[0]));
                }
            }
        }
        m
    }
}

/// `F̃(t, x, r) = F(t, x, r − C(t)) − C'(t)`, the equation satisfied by `φ + C(t)`.
pub fn transform_translate(f: &Nonlinearity, c: &TimeFunction) -> Nonlinearity {
    let sup_c = c.sup_over(&c.f, 0.0, f.t_max);
    let sup_c1 = c.sup_over(&c.d1, 0.0, f.t_max);
    let sup_c2 = c.sup_over(&c.d2, 0.0, f.t_max);
    let (fv, fr) = (f.value.clone(), f.dr.clone());
    let (c0, c1) = (c.clone(), c.clone());
    let cr = c.clone();
    let mut out = Nonlinearity {
        value: Arc::new(move |t, i, r| fv(t, i, r - c0.value(t)) - c1.d1(t)),
        dr: Arc::new(move |t, i, r| fr(t, i, r - cr.value(t))),
        lambda_f: f.lambda_f,
        kappa: f.kappa * (1.0 + sup_c1) + sup_c2,
        c_f: 0.0,
        t_max: f.t_max,
        r_max: (f.r_max - sup_c).max(0.0),
        spatially_constant: f.spatially_constant,
        label: format!("translate({})", f.label),
    };
    out.c_f = out.estimate_constants(None).2.max(0.0);
    out
}

/// Time change `t(s) = ∫₀ˢ dσ/γ(σ)` tabulated for fast evaluation.
#[derive(Clone, Debug)]
pub struct Reparametrization {
    pub s_max: f64,
    s_nodes: Vec<f64>,
    t_nodes: Vec<f64>,
}

const GAUSS_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GAUSS_W: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

impl Reparametrization {
    /// Tabulate `t(s)` on `[0, s_max]` where `t(s_max) = t_end` (or as far as γ stays positive).
    pub fn new(gamma: &TimeFunction, t_end: f64) -> Result<Self> {
        let ds = 1e-3 * t_end.max(1e-3);
        let mut s_nodes = vec![0.0];
        let mut t_nodes = vec![0.0];
        let mut s = 0.0;
        let mut t = 0.0;
        while t < t_end {
            let g_end = gamma.value(s + ds);
            if !(g_end > 0.0) || s_nodes.len() > 2_000_000 {
                return Err(Error::InvalidArgument(format!(
                    "scaling function stops being positive at s = {} before reaching t = {t_end}",
                    s + ds
                )));
            }
            let inc: f64 = GAUSS_X
                .iter()
                .zip(GAUSS_W)
                .map(|(x, w)| w * 0.5 * ds / gamma.value(s + 0.5 * ds * (1.0 + x)))
                .sum();
            if t + inc >= t_end {
                // final partial step by bisection on the cumulative integral
                let (mut lo, mut hi) = (0.0, ds);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    let part: f64 = GAUSS_X
                        .iter()
                        .zip(GAUSS_W)
                        .map(|(x, w)| w * 0.5 * mid / gamma.value(s + 0.5 * mid * (1.0 + x)))
                        .sum();
                    if t + part < t_end {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                s += 0.5 * (lo + hi);
                t = t_end;
            } else {
                s += ds;
                t += inc;
            }
            s_nodes.push(s);
            t_nodes.push(t);
        }
        Ok(Reparametrization {
            s_max: s,
            s_nodes,
            t_nodes,
        })
    }

    /// `t(s)` by piecewise-linear lookup of the tabulated integral, refined with one Gauss step.
    pub fn t_of_s(&self, s: f64, gamma: &TimeFunction) -> f64 {
        let s = s.clamp(0.0, self.s_max);
        let j = match self.s_nodes.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
            Ok(j) => return self.t_nodes[j],
            Err(j) => j - 1,
        };
        let ds = s - self.s_nodes[j];
        let inc: f64 = GAUSS_X
            .iter()
            .zip(GAUSS_W)
            .map(|(x, w)| w * 0.5 * ds / gamma.value(self.s_nodes[j] + 0.5 * ds * (1.0 + x)))
            .sum();
        self.t_nodes[j] + inc
    }
}

/// `F̃(s, x, R) = F(t(s), x, R/γ(s)) + n log γ(s) − (γ'(s)/γ(s)) R`, the equation satisfied
/// by `ψ(s, x) = γ(s) φ(t(s), x)` for the family `γ(s) ω_{t(s)}`.
pub fn transform_scale(f: &Nonlinearity, gamma: &TimeFunction, n: usize) -> Result<Nonlinearity> {
    let rep = Arc::new(Reparametrization::new(gamma, f.t_max)?);
    let s_max = rep.s_max;
    let (fv, fr) = (f.value.clone(), f.dr.clone());
    let (g1, g2) = (gamma.clone(), gamma.clone());
    let (rep1, rep2) = (rep.clone(), rep.clone());
    let nf = n as f64;
    let value = move |s: f64, i: usize, r: f64| {
        let g = g1.value(s);
        let t = rep1.t_of_s(s, &g1);
        fv(t, i, r / g) + nf * g.ln() - g1.d1(s) / g * r
    };
    let dr = move |s: f64, i: usize, r: f64| {
        let g = g2.value(s);
        let t = rep2.t_of_s(s, &g2);
        fr(t, i, r / g) / g - g2.d1(s) / g
    };
    let lambda = (0..=512)
        .map(|k| {
            let s = s_max * k as f64 / 512.0;
            let g = gamma.value(s);
            (f.lambda_f / g + gamma.d1(s) / g).max(0.0)
        })
        .fold(0.0, f64::max);
    let g_min = (0..=512)
        .map(|k| gamma.value(s_max * k as f64 / 512.0))
        .fold(f64::INFINITY, f64::min);
    let mut out = Nonlinearity {
        value: Arc::new(value),
        dr: Arc::new(dr),
        lambda_f: lambda,
        kappa: 0.0,
        c_f: 0.0,
        t_max: s_max,
        r_max: f.r_max * g_min,
        spatially_constant: f.spatially_constant,
        label: format!("scale({})", f.label),
    };
    let (_, k, c) = out.estimate_constants(None);
    out.kappa = k;
    out.c_f = c;
    Ok(out)
}

/// `γ(s) = 1 − λ s`; turns a quasi-increasing `F` into an increasing one on `s < 1/λ`.
pub fn monotonizing_scale(lambda: f64) -> TimeFunction {
    TimeFunction::polynomial(&[1.0, -lambda])
}

/// Reparametrized horizon `S` with `t(S) = T` for [`monotonizing_scale`].
pub fn monotonizing_horizon(lambda: f64, t_end: f64) -> f64 {
    if lambda == 0.0 {
        t_end
    } else {
        (1.0 - (-lambda * t_end).exp()) / lambda
    }
}

/// A density `g ≥ 0` with its integrability data.
#[derive(Clone, Debug)]
pub struct Density {
    pub g: ScalarField,
    pub p: f64,
    /// `(center, exponent)` pairs of the klt model; empty for smooth densities.
    pub centers: Vec<([f64; 4], f64)>,
    pub delta: f64,
}

impl Density {
    pub fn uniform(grid: &Grid) -> Self {
        Density {
            g: ScalarField::constant(grid, 1.0),
            p: 2.0,
            centers: Vec::new(),
            delta: 0.0,
        }
    }

    pub fn tabulated(grid: &Grid, g: ScalarField, p: f64) -> Result<Self> {
        grid.check(&g)?;
        g.check_finite()?;
        if let Some(i) = g.values.iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!("negative density at point {i}")));
        }
        if !(p > 1.0) {
            return Err(Error::InvalidArgument(format!("integrability exponent {p} must exceed 1")));
        }
        Ok(Density {
            g,
            p,
            centers: Vec::new(),
            delta: 0.0,
        })
    }

    pub fn mass(&self, grid: &Grid) -> f64 {
        grid.integrate(&self.g)
    }

    /// Supremum of `p` with `‖g‖_p < ∞` for the analytic klt model.
    pub fn critical_exponent(&self, n: usize) -> f64 {
        self.centers
            .iter()
            .filter(|(_, a)| *a < 0.0)
            .map(|(_, a)| n as f64 / a.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Number of points where `g` vanishes.
    pub fn zero_count(&self) -> usize {
        self.g.values.iter().filter(|&&v| v == 0.0).count()
    }

    pub fn is_positive(&self) -> bool {
        self.zero_count() == 0
    }

    pub fn lp_norm(&self, grid: &Grid) -> Result<f64> {
        lp_norm(grid, &self.g, self.p)
    }
}

/// `∫ r^{2a}` over the cube `[−h/2, h/2]^d` divided by its volume.
///
/// Uses the scaling identity `I(Q/2) = 2^{−(d+2a)} I(Q)`, so only the shell `Q ∖ Q/2`
/// needs quadrature; that shell stays away from the singularity.
pub fn cell_average_power(d: usize, h: f64, a: f64) -> f64 {
    let sub = h / 4.0;
    let per_axis = 4usize;
    let total = per_axis.pow(d as u32);
    let mut shell = 0.0;
    for cell in 0..total {
        let mut idx = [0usize; 4];
        let mut rem = cell;
        for ax in idx.iter_mut().take(d) {
            *ax = rem % per_axis;
            rem /= per_axis;
        }
        if idx[..d].iter().all(|&k| k == 1 || k == 2) {
            continue;
        }
        let lo: Vec<f64> = idx[..d].iter().map(|&k| -h / 2.0 + k as f64 * sub).collect();
        shell += gauss_cube(d, &lo, sub, a);
    }
    let full = shell / (1.0 - 2f64.powf(-(d as f64 + 2.0 * a)));
    full / h.powi(d as i32)
}

fn gauss_cube(d: usize, lo: &[f64], side: f64, a: f64) -> f64 {
    const X: [f64; 4] = [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ];
    const W: [f64; 4] = [
        0.347_854_845_137_453_9,
        0.652_145_154_862_546_1,
        0.652_145_154_862_546_1,
        0.347_854_845_137_453_9,
    ];
    let count = 4usize.pow(d as u32);
    let mut sum = 0.0;
    for q in 0..count {
        let mut rem = q;
        let mut r2 = 0.0;
        let mut w = 1.0;
        for l in lo.iter().take(d) {
            let k = rem % 4;
            rem /= 4;
            let x = l + 0.5 * side * (1.0 + X[k]);
            r2 += x * x;
            w *= W[k] * 0.5 * side;
        }
        sum += w * r2.powf(a);
    }
    sum
}

/// `g(x) = Π_k dist(x, p_k)^{2 a_k}` with centers snapped to lattice points and the center
/// cells replaced by their exact cell averages.
pub fn make_klt_density(grid: &Grid, centers: &[[f64; 4]], exponents: &[f64]) -> Result<Density> {
    if centers.len() != exponents.len() {
        return Err(Error::InvalidArgument(format!(
            "{} centers but {} exponents",
            centers.len(),
            exponents.len()
        )));
    }
    if let Some(&a) = exponents.iter().find(|&&a| !(a > -1.0)) {
        return Err(Error::NotKlt(a));
    }
    let d = grid.real_dim();
    let snapped: Vec<([f64; 4], usize, f64)> = centers
        .iter()
        .zip(exponents)
        .map(|(c, &a)| {
            let mi: Vec<usize> = (0..d)
                .map(|k| ((c[k].rem_euclid(1.0) * grid.res() as f64).round() as usize) % grid.res())
                .collect();
            let idx = grid.index_of(&mi);
            (grid.coords(idx), idx, a)
        })
        .collect();
    let averages: Vec<f64> = snapped
        .iter()
        .map(|&(_, _, a)| cell_average_power(d, grid.h(), a))
        .collect();
    let g = ScalarField::from_fn(grid, |x| {
        snapped
            .iter()
            .map(|(c, _, a)| {
                let r = grid.torus_distance(x, c);
                if r == 0.0 {
                    f64::NAN
                } else {
                    r.powf(2.0 * a)
                }
            })
            .product()
    });
    let mut g = g;
    for (k, (_, idx, _)) in snapped.iter().enumerate() {
        let x = grid.coords(*idx);
        let others: f64 = snapped
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, (c, _, a))| {
                let r = grid.torus_distance(&x, c);
                if r == 0.0 {
                    1.0
                } else {
                    r.powf(2.0 * a)
                }
            })
            .product();
        // coincident centers multiply their cell averages
        let own: f64 = snapped
            .iter()
            .enumerate()
            .filter(|(_, (_, j, _))| j == idx)
            .map(|(j, _)| averages[j])
            .product();
        g.values[*idx] = own * others;
    }
    let mut dens = Density {
        g,
        p: 2.0,
        centers: snapped.iter().map(|(c, _, a)| (*c, *a)).collect(),
        delta: 0.0,
    };
    let pc = dens.critical_exponent(grid.n());
    dens.p = if pc.is_finite() { (1.0 + pc) / 2.0 } else { 2.0 };
    Ok(dens)
}

/// `g_δ = max(g, δ)` together with `‖g_δ − g‖_p`.
pub fn regularize_density(grid: &Grid, g: &Density, delta: f64) -> Result<(Density, f64)> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("regularization floor {delta} must be positive")));
    }
    let lifted = g.g.map(|v| v.max(delta));
    let diff = lifted.zip_map(&g.g, |a, b| a - b);
    let dist = lp_norm(grid, &diff, g.p)?;
    Ok((
        Density {
            g: lifted,
            p: g.p,
            centers: g.centers.clone(),
            delta,
        },
        dist,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn linear_presets_and_certification() {
        let f0 = Nonlinearity::zero(1.0);
        assert_eq!(f0.eval(0.5, 3, 2.0).unwrap(), 0.0);
        let f = Nonlinearity::linear(1.0, 0.0, 1.0);
        assert_eq!(f.eval(0.2, 0, -3.0).unwrap(), -3.0);
        assert_eq!(f.lambda_f, 0.0);
        assert_eq!(f.kappa, 1.0);
        assert_eq!(f.c_f, 0.0);
        assert!(f.certify(None).passes(1e-12));
        assert!(matches!(f.eval(2.0, 0, 0.0), Err(Error::OutsideBox { .. })));
    }

    #[test]
    fn translation_examples() {
        let f = Nonlinearity::zero(2.0);
        let same = transform_translate(&f, &TimeFunction::constant(0.0));
        assert_eq!(same.eval_unchecked(0.3, 0, 1.7), 0.0);
        let g = transform_translate(&f, &TimeFunction::polynomial(&[0.0, 1.0]));
        assert!((g.eval_unchecked(0.3, 0, 1.7) + 1.0).abs() < 1e-15);
        let lin = Nonlinearity::linear(1.0, 0.0, 2.0);
        let h = transform_translate(&lin, &TimeFunction::polynomial(&[0.0, 0.0, 1.0]));
        for (t, r) in [(0.5, 1.0), (1.5, -2.0)] {
            assert!((h.eval_unchecked(t, 0, r) - (r - t * t - 2.0 * t)).abs() < 1e-14);
        }
        assert_eq!(h.lambda_f, lin.lambda_f);
    }

    #[test]
    fn translation_round_trip() {
        let f = Nonlinearity::custom(
            "quad",
            |t, _, r| t * r + 0.1 * r * r,
            |t, _, r| t + 0.2 * r,
            5.0,
            10.0,
            1.0,
            1.0,
            5.0,
        );
        let c = TimeFunction::polynomial(&[0.2, 0.5, -0.3]);
        let neg = TimeFunction::polynomial(&[-0.2, -0.5, 0.3]);
        let back = transform_translate(&transform_translate(&f, &c), &neg);
        for (t, r) in [(0.1, 0.5), (0.9, -1.0), (0.5, 0.0)] {
            assert!((back.eval_unchecked(t, 0, r) - f.eval_unchecked(t, 0, r)).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_examples() {
        let lin = Nonlinearity::linear(1.0, 0.0, 0.9);
        let id = transform_scale(&lin, &TimeFunction::constant(1.0), 1).unwrap();
        assert!((id.t_max - 0.9).abs() < 1e-12);
        assert!((id.eval_unchecked(0.4, 0, 1.3) - 1.3).abs() < 1e-12);

        let n = 2;
        let sc = transform_scale(&lin, &TimeFunction::exp(1.0), n).unwrap();
        // t(s) = 1 − e^{−s}, horizon where t = 0.9
        assert!((sc.t_max - 10f64.ln()).abs() < 1e-9);
        for (s, r) in [(0.3f64, 2.0), (1.1, -0.7)] {
            let expected = r * (-s).exp() + n as f64 * s - r;
            assert!((sc.eval_unchecked(s, 0, r) - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn monotonizing_scale_removes_quasi_monotonicity() {
        let lambda = 0.8;
        let f = Nonlinearity::custom(
            "decreasing",
            move |_, _, r| -lambda * r,
            move |_, _, _| -lambda,
            lambda,
            lambda,
            0.0,
            1.0,
            20.0,
        );
        assert!(f.increasing_margin(None) < 0.0);
        let g = transform_scale(&f, &monotonizing_scale(lambda), 1).unwrap();
        assert!((g.t_max - monotonizing_horizon(lambda, 1.0)).abs() < 1e-9);
        assert!(g.lambda_f.abs() < 1e-12);
        assert!(g.increasing_margin(None) >= -1e-12);
    }

    #[test]
    fn klt_density_basics() {
        let grid = make_grid(1, 16).unwrap();
        let none = make_klt_density(&grid, &[], &[]).unwrap();
        assert!(none.g.values.iter().all(|&v| v == 1.0));
        assert!(matches!(
            make_klt_density(&grid, &[[0.5, 0.5, 0.0, 0.0]], &[-1.0]),
            Err(Error::NotKlt(_))
        ));
        let sq = make_klt_density(&grid, &[[0.5, 0.5, 0.0, 0.0]], &[1.0]).unwrap();
        let h = grid.h();
        // exact: mean of x² + y² over [−h/2, h/2]² is h²/6
        let c = grid.index_of(&[8, 8]);
        assert!((sq.g.values[c] - h * h / 6.0).abs() < 1e-15);
        let other = grid.index_of(&[10, 7]);
        assert!((sq.g.values[other] - 5.0 * h * h).abs() < 1e-14);
        let sing = make_klt_density(&grid, &[[0.0, 0.0, 0.0, 0.0]], &[-0.5]).unwrap();
        assert!((sing.critical_exponent(1) - 2.0).abs() < 1e-15);
        assert!(sing.p > 1.0 && sing.p < 2.0);
        assert!(sing.g.values.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn cell_average_matches_polar_closed_form() {
        // the disc of radius R contains the same mass density: compare against a fine Riemann
        // sum for a singular exponent, and against the exact polynomial value for a = 1
        let h = 0.1;
        for d in [2usize, 4] {
            let exact = d as f64 * h * h / 12.0;
            assert!((cell_average_power(d, h, 1.0) - exact).abs() < 1e-14);
        }
        let a = -0.5;
        let m = 2000;
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                let x = -h / 2.0 + (i as f64 + 0.5) * h / m as f64;
                let y = -h / 2.0 + (j as f64 + 0.5) * h / m as f64;
                s += (x * x + y * y).powf(a);
            }
        }
        let riemann = s / (m * m) as f64;
        let q = cell_average_power(2, h, a);
        assert!((q - riemann).abs() / q < 1e-3, "{q} vs {riemann}");
    }

    #[test]
    fn regularization() {
        let grid = make_grid(1, 16).unwrap();
        let one = Density::uniform(&grid);
        let (same, dist) = regularize_density(&grid, &one, 0.1).unwrap();
        assert_eq!(same.g, one.g);
        assert_eq!(dist, 0.0);
        let mut z = ScalarField::constant(&grid, 1.0);
        z.values[3] = 0.0;
        let zd = Density::tabulated(&grid, z, 2.0).unwrap();
        assert_eq!(zd.zero_count(), 1);
        let (lifted, _) = regularize_density(&grid, &zd, 1e-3).unwrap();
        assert_eq!(lifted.g.values[3], 1e-3);
        assert!(lifted.is_positive());

        let klt = make_klt_density(&grid, &[[0.5, 0.5, 0.0, 0.0]], &[1.0]).unwrap();
        let dists: Vec<f64> = (1..8)
            .map(|j| regularize_density(&grid, &klt, 2f64.powi(-j)).unwrap().1)
            .collect();
        assert!(dists.windows(2).all(|w| w[1] <= w[0]));
        assert!(dists[6] < dists[0]);
    }
}
