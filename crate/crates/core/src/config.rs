//! Line-oriented run configuration.
//!
//! One `section.key = value` per line, `#` starts a comment. Values are numbers, bare
//! words, or bracketed lists (`[1, 0.5]`, `[[0.5, 0.5], [0.25, 0.75]]`).
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `grid.n` | 1 | complex dimension, 1 or 2 |
//! | `grid.N` | 64 | points per real axis, a power of two ≥ 8 |
//! | `family.kind` | constant | `constant`, `affine`, `nkrf` or `tabulated` |
//! | `family.omega0` | identity | `ω₀` for `constant` and `affine` |
//! | `family.chi` | identity | `χ` for `affine` and `nkrf` |
//! | `family.chi0` | 2 · identity | `χ₀` for `nkrf` |
//! | `family.times`, `family.matrices` | | nodes and matrices of `tabulated` |
//! | `family.A` | estimated | override of the structural constant `A` |
//! | `F.kind` | zero | `zero`, `linear` or `tabulated` |
//! | `F.slope`, `F.offset` | 0 | `F = slope·r + offset` |
//! | `F.t_nodes`, `F.r_nodes`, `F.values` | | table of `tabulated` |
//! | `F.lambda`, `F.kappa`, `F.cf` | certified | overrides of `λ_F`, `κ`, `C_F` |
//! | `density.kind` | uniform | `uniform`, `klt` or `tabulated` |
//! | `density.centers`, `density.exponents` | | klt model `Π dist(x, p_k)^{2a_k}` |
//! | `density.file` | | field file for `tabulated` |
//! | `density.p` | model | integrability exponent |
//! | `density.delta` | none | floor `max(g, δ)` |
//! | `phi0.kind` | zero | `zero`, `constant`, `sin`, `cos` or `file` |
//! | `phi0.value` | 0 | value for `constant` |
//! | `phi0.amplitude`, `phi0.axis`, `phi0.frequency` | 0.1, 0, 1 | `a·sin(2πk x_axis)` |
//! | `phi0.file` | | field file |
//! | `flow.T`, `flow.K`, `flow.gamma_mesh` | 10, 256, 2 | horizon, steps, grading |
//! | `tol.newton`, `tol.max_newton`, `tol.max_linear`, `tol.min_eig` | 1e-10, 40, 800, 1e-10 | step solver |
//! | `tol.elliptic` | 1e-9 | elliptic solver |
//! | `tol.estimates` | 1e-6 | slack of the estimate rows |
//! | `tol.class`, `tol.order` | derived | classification and ordering slack |
//! | `scenario.window` | `[2, 0.8·T]` | tail window of rate fits |
//! | `scenario.restart_times` | `[1, 2, 4]` | semigroup restarts |
//! | `scenario.floors` | `[1, …, 6]` | stability indices `j` |
//! | `scenario.variant` | floor | `floor` (`max(g, 2^{−j})`) or `initial` (`φ₀ + 2^{−j}·bump`) |
//! | `scenario.bump` | 0.05 | bump amplitude of the `initial` variant |
//! | `scenario.eps` | 0.1 | `ε` of the stability bound |
//! | `scenario.deltas` | `[]` | floors of a δ-sweep |

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::comparison::{class_tolerance, CompareOptions};
use crate::data::{make_klt_density, Density, Nonlinearity};
use crate::error::{Error, Result};
use crate::forms::KahlerFamily;
use crate::grid::{make_grid, Herm, ScalarField};
use crate::parabolic::{FlowConfig, StepTolerances, Trajectory};
use crate::report::read_field;
use crate::scenarios::{CyOptions, GeneralTypeOptions};

#[derive(Clone, Debug, PartialEq)]
enum Value {
    Num(f64),
    Word(String),
    List(Vec<Value>),
}

fn parse_value(src: &str) -> std::result::Result<Value, String> {
    let (v, rest) = parse_value_at(src.trim())?;
    if !rest.trim().is_empty() {
        return Err(format!("trailing text `{}`", rest.trim()));
    }
    Ok(v)
}

fn parse_value_at(s: &str) -> std::result::Result<(Value, &str), String> {
    let s = s.trim_start();
    if let Some(mut rest) = s.strip_prefix('[') {
        let mut items = Vec::new();
        loop {
            rest = rest.trim_start();
            if let Some(r) = rest.strip_prefix(']') {
                return Ok((Value::List(items), r));
            }
            if !items.is_empty() {
                rest = rest
                    .strip_prefix(',')
                    .ok_or_else(|| "expected `,` or `]` in list".to_string())?;
            }
            let (v, r) = parse_value_at(rest)?;
            items.push(v);
            rest = r;
        }
    }
    let end = s.find([',', ']']).unwrap_or(s.len());
    let tok = s[..end].trim();
    if tok.is_empty() {
        return Err("missing value".into());
    }
    let v = match tok.parse::<f64>() {
        Ok(x) => Value::Num(x),
        Err(_) => Value::Word(tok.trim_matches('"').to_string()),
    };
    Ok((v, &s[end..]))
}

fn render(v: &Value) -> String {
    match v {
        Value::Num(x) => format!("{x:?}"),
        Value::Word(w) => w.clone(),
        Value::List(items) => format!("[{}]", items.iter().map(render).collect::<Vec<_>>().join(", ")),
    }
}

fn num(x: f64) -> Value {
    Value::Num(x)
}

fn list(xs: &[f64]) -> Value {
    Value::List(xs.iter().map(|&x| Value::Num(x)).collect())
}

fn nested(rows: &[Vec<f64>]) -> Value {
    Value::List(rows.iter().map(|r| list(r)).collect())
}

/// Keys still to be consumed, with their source lines.
struct Entries {
    map: BTreeMap<String, (Value, usize)>,
}

impl Entries {
    fn key_err(key: &str, msg: impl Into<String>) -> Error {
        Error::ConfigKey {
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.map.remove(key).map(|(v, _)| v)
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn f64_opt(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Num(x)) => Ok(Some(x)),
            Some(v) => Err(Self::key_err(key, format!("expected a number, got `{}`", render(&v)))),
        }
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.f64_opt(key)? {
            None => Ok(default),
            Some(x) if x >= 0.0 && x.fract() == 0.0 && x < 1e15 => Ok(x as usize),
            Some(x) => Err(Self::key_err(key, format!("expected a nonnegative integer, got {x}"))),
        }
    }

    fn word_or(&mut self, key: &str, default: &str) -> Result<String> {
        match self.take(key) {
            None => Ok(default.to_string()),
            Some(Value::Word(w)) => Ok(w),
            Some(v) => Err(Self::key_err(key, format!("expected a word, got `{}`", render(&v)))),
        }
    }

    fn list_opt(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Num(x)) => Ok(Some(vec![x])),
            Some(Value::List(items)) => items
                .into_iter()
                .map(|v| match v {
                    Value::Num(x) => Ok(x),
                    other => Err(Self::key_err(key, format!("expected numbers, got `{}`", render(&other)))),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(v) => Err(Self::key_err(key, format!("expected a list, got `{}`", render(&v)))),
        }
    }

    fn nested_opt(&mut self, key: &str) -> Result<Option<Vec<Vec<f64>>>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::List(rows)) => {
                let flat = rows.iter().all(|r| matches!(r, Value::Num(_)));
                if flat && !rows.is_empty() {
                    // a single row written without the outer brackets
                    return Ok(Some(vec![rows
                        .into_iter()
                        .map(|v| if let Value::Num(x) = v { x } else { unreachable!() })
                        .collect()]));
                }
                rows.into_iter()
                    .map(|r| match r {
                        Value::List(items) => items
                            .into_iter()
                            .map(|v| match v {
                                Value::Num(x) => Ok(x),
                                other => Err(Self::key_err(key, format!("expected numbers, got `{}`", render(&other)))),
                            })
                            .collect::<Result<Vec<_>>>(),
                        other => Err(Self::key_err(key, format!("expected a list of lists, got `{}`", render(&other)))),
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Some)
            }
            Some(v) => Err(Self::key_err(key, format!("expected a list of lists, got `{}`", render(&v)))),
        }
    }

    fn required<T>(key: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| Self::key_err(key, "required"))
    }

    fn finish(self) -> Result<()> {
        match self.map.into_iter().min_by_key(|(_, (_, line))| *line) {
            None => Ok(()),
            Some((key, (_, 0))) => Err(Self::key_err(&key, "unknown key")),
            Some((key, (_, line))) => Err(Error::ConfigParse {
                line,
                msg: format!("unknown key `{key}`"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FamilySpec {
    Constant { omega0: Vec<f64> },
    Affine { omega0: Vec<f64>, chi: Vec<f64> },
    Nkrf { chi0: Vec<f64>, chi: Vec<f64> },
    Tabulated { times: Vec<f64>, matrices: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum FSpec {
    Zero,
    Linear { slope: f64, offset: f64 },
    Tabulated { t_nodes: Vec<f64>, r_nodes: Vec<f64>, values: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum DensitySpec {
    Uniform,
    Klt { centers: Vec<Vec<f64>>, exponents: Vec<f64> },
    Tabulated { file: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Phi0Spec {
    Zero,
    Constant(f64),
    Wave { cosine: bool, amplitude: f64, axis: usize, frequency: f64 },
    File(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StabilityVariant {
    Floor,
    Initial,
}

/// A parsed and validated run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub res: usize,
    pub family: FamilySpec,
    pub family_a: Option<f64>,
    pub f: FSpec,
    pub f_lambda: Option<f64>,
    pub f_kappa: Option<f64>,
    pub f_cf: Option<f64>,
    pub density: DensitySpec,
    pub density_p: Option<f64>,
    pub density_delta: Option<f64>,
    pub phi0: Phi0Spec,
    pub horizon: f64,
    pub steps: usize,
    pub gamma_mesh: f64,
    pub step_tol: StepTolerances,
    pub elliptic_tol: f64,
    pub estimates_tol: f64,
    pub class_tol: Option<f64>,
    pub order_tol: Option<f64>,
    pub window: Option<(f64, f64)>,
    pub restart_times: Vec<f64>,
    pub floors: Vec<u32>,
    pub variant: StabilityVariant,
    pub bump: f64,
    pub eps: f64,
    pub deltas: Vec<f64>,
}

fn read_lines(text: &str) -> Result<BTreeMap<String, (Value, usize)>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| Error::ConfigParse {
            line,
            msg: format!("expected `section.key = value`, got `{body}`"),
        })?;
        let key = key.trim();
        if !key.contains('.') || key.split('.').any(|p| p.is_empty()) {
            return Err(Error::ConfigParse {
                line,
                msg: format!("key `{key}` is not of the form section.key"),
            });
        }
        let value = parse_value(value).map_err(|msg| Error::ConfigParse { line, msg })?;
        if map.insert(key.to_string(), (value, line)).is_some() {
            return Err(Error::ConfigParse {
                line,
                msg: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(map)
}

fn identity(n: usize) -> Vec<f64> {
    Herm::identity(n).entries()
}

fn scaled_identity(n: usize, s: f64) -> Vec<f64> {
    Herm::scalar(n, s).entries()
}

fn matrix(n: usize, key: &str, e: &[f64]) -> Result<Herm> {
    Herm::from_entries(n, e).map_err(|err| Entries::key_err(key, err.to_string()))
}

impl RunConfig {
    /// Parse configuration text; `base` resolves relative file paths.
    pub fn parse_str(text: &str) -> Result<Self> {
        Self::parse_with(text, &[], None)
    }

    /// Parse, then apply `key=value` overrides. A key without a section means `tol.<key>`.
    pub fn parse_with(text: &str, overrides: &[String], base: Option<&Path>) -> Result<Self> {
        let mut map = read_lines(text)?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Entries::key_err(o, "override must be key=value"))?;
            let k = k.trim();
            let key = if k.contains('.') { k.to_string() } else { format!("tol.{k}") };
            let value = parse_value(v).map_err(|msg| Entries::key_err(&key, msg))?;
            map.insert(key, (value, 0));
        }
        let mut e = Entries { map };
        let cfg = Self::from_entries(&mut e, base)?;
        e.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_with(&text, overrides, path.parent())
    }

    /// Return a copy with `key=value` overrides applied.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        Self::parse_with(&self.emit(), overrides, None)
    }

    fn from_entries(e: &mut Entries, base: Option<&Path>) -> Result<Self> {
        let resolve = |p: String| -> PathBuf {
            let p = PathBuf::from(p);
            match base {
                Some(b) if p.is_relative() && !b.as_os_str().is_empty() => b.join(p),
                _ => p,
            }
        };
        let n = e.usize_or("grid.n", 1)?;
        let res = e.usize_or("grid.N", 64)?;
        let family = match e.word_or("family.kind", "constant")?.as_str() {
            "constant" => FamilySpec::Constant {
                omega0: e.list_opt("family.omega0")?.unwrap_or_else(|| identity(n)),
            },
            "affine" => FamilySpec::Affine {
                omega0: e.list_opt("family.omega0")?.unwrap_or_else(|| identity(n)),
                chi: e.list_opt("family.chi")?.unwrap_or_else(|| identity(n)),
            },
            "nkrf" => FamilySpec::Nkrf {
                chi0: e.list_opt("family.chi0")?.unwrap_or_else(|| scaled_identity(n, 2.0)),
                chi: e.list_opt("family.chi")?.unwrap_or_else(|| identity(n)),
            },
            "tabulated" => {
                let times = e.list_opt("family.times")?;
                let matrices = e.nested_opt("family.matrices")?;
                FamilySpec::Tabulated {
                    times: Entries::required("family.times", times)?,
                    matrices: Entries::required("family.matrices", matrices)?,
                }
            }
            other => return Err(Entries::key_err("family.kind", format!("unknown family `{other}`"))),
        };
        let family_a = e.f64_opt("family.A")?;
        let f = match e.word_or("F.kind", "zero")?.as_str() {
            "zero" => FSpec::Zero,
            "linear" => FSpec::Linear {
                slope: e.f64_or("F.slope", 0.0)?,
                offset: e.f64_or("F.offset", 0.0)?,
            },
            "tabulated" => {
                let t = e.list_opt("F.t_nodes")?;
                let r = e.list_opt("F.r_nodes")?;
                let v = e.nested_opt("F.values")?;
                FSpec::Tabulated {
                    t_nodes: Entries::required("F.t_nodes", t)?,
                    r_nodes: Entries::required("F.r_nodes", r)?,
                    values: Entries::required("F.values", v)?,
                }
            }
            other => return Err(Entries::key_err("F.kind", format!("unknown nonlinearity `{other}`"))),
        };
        let f_lambda = e.f64_opt("F.lambda")?;
        let f_kappa = e.f64_opt("F.kappa")?;
        let f_cf = e.f64_opt("F.cf")?;
        let density = match e.word_or("density.kind", "uniform")?.as_str() {
            "uniform" => DensitySpec::Uniform,
            "klt" => {
                let c = e.nested_opt("density.centers")?;
                let x = e.list_opt("density.exponents")?;
                DensitySpec::Klt {
                    centers: Entries::required("density.centers", c)?,
                    exponents: Entries::required("density.exponents", x)?,
                }
            }
            "tabulated" => {
                let file = e.word_or("density.file", "")?;
                if file.is_empty() {
                    return Err(Entries::key_err("density.file", "required"));
                }
                DensitySpec::Tabulated { file: resolve(file) }
            }
            other => return Err(Entries::key_err("density.kind", format!("unknown density `{other}`"))),
        };
        let density_p = e.f64_opt("density.p")?;
        let density_delta = e.f64_opt("density.delta")?;
        let phi0 = match e.word_or("phi0.kind", "zero")?.as_str() {
            "zero" => Phi0Spec::Zero,
            "constant" => Phi0Spec::Constant(e.f64_or("phi0.value", 0.0)?),
            w @ ("sin" | "cos") => Phi0Spec::Wave {
                cosine: w == "cos",
                amplitude: e.f64_or("phi0.amplitude", 0.1)?,
                axis: e.usize_or("phi0.axis", 0)?,
                frequency: e.f64_or("phi0.frequency", 1.0)?,
            },
            "file" => {
                let file = e.word_or("phi0.file", "")?;
                if file.is_empty() {
                    return Err(Entries::key_err("phi0.file", "required"));
                }
                Phi0Spec::File(resolve(file))
            }
            other => return Err(Entries::key_err("phi0.kind", format!("unknown initial potential `{other}`"))),
        };
        let horizon = e.f64_or("flow.T", 10.0)?;
        let steps = e.usize_or("flow.K", 256)?;
        let gamma_mesh = e.f64_or("flow.gamma_mesh", 2.0)?;
        let d = StepTolerances::default();
        let step_tol = StepTolerances {
            newton_tol: e.f64_or("tol.newton", d.newton_tol)?,
            max_newton: e.usize_or("tol.max_newton", d.max_newton)?,
            max_linear: e.usize_or("tol.max_linear", d.max_linear)?,
            min_eig_floor: e.f64_or("tol.min_eig", d.min_eig_floor)?,
        };
        let elliptic_tol = e.f64_or("tol.elliptic", 1e-9)?;
        let estimates_tol = e.f64_or("tol.estimates", 1e-6)?;
        let class_tol = e.f64_opt("tol.class")?;
        let order_tol = e.f64_opt("tol.order")?;
        let window = match e.list_opt("scenario.window")? {
            None => None,
            Some(w) if w.len() == 2 => Some((w[0], w[1])),
            Some(_) => return Err(Entries::key_err("scenario.window", "expected [start, end]")),
        };
        let restart_times = e.list_opt("scenario.restart_times")?.unwrap_or_else(|| vec![1.0, 2.0, 4.0]);
        let floors = match e.list_opt("scenario.floors")? {
            None => (1..=6).collect(),
            Some(v) => v
                .into_iter()
                .map(|x| {
                    if x >= 0.0 && x.fract() == 0.0 && x < 64.0 {
                        Ok(x as u32)
                    } else {
                        Err(Entries::key_err("scenario.floors", format!("{x} is not an index in 0..64")))
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let variant = match e.word_or("scenario.variant", "floor")?.as_str() {
            "floor" => StabilityVariant::Floor,
            "initial" => StabilityVariant::Initial,
            other => return Err(Entries::key_err("scenario.variant", format!("unknown variant `{other}`"))),
        };
        let bump = e.f64_or("scenario.bump", 0.05)?;
        let eps = e.f64_or("scenario.eps", 0.1)?;
        let deltas = e.list_opt("scenario.deltas")?.unwrap_or_default();
        Ok(RunConfig {
            n,
            res,
            family,
            family_a,
            f,
            f_lambda,
            f_kappa,
            f_cf,
            density,
            density_p,
            density_delta,
            phi0,
            horizon,
            steps,
            gamma_mesh,
            step_tol,
            elliptic_tol,
            estimates_tol,
            class_tol,
            order_tol,
            window,
            restart_times,
            floors,
            variant,
            bump,
            eps,
            deltas,
        })
    }

    /// Semantic checks that do not need to build any field.
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: String| Entries::key_err(k, m);
        if !matches!(self.n, 1 | 2) {
            return Err(bad("grid.n", format!("unsupported dimension {}", self.n)));
        }
        if self.res < 8 || !self.res.is_power_of_two() {
            return Err(bad("grid.N", format!("power of two required (N >= 8), got {}", self.res)));
        }
        let n = self.n;
        match &self.family {
            FamilySpec::Constant { omega0 } => {
                matrix(n, "family.omega0", omega0)?;
            }
            FamilySpec::Affine { omega0, chi } => {
                matrix(n, "family.omega0", omega0)?;
                matrix(n, "family.chi", chi)?;
            }
            FamilySpec::Nkrf { chi0, chi } => {
                matrix(n, "family.chi0", chi0)?;
                matrix(n, "family.chi", chi)?;
            }
            FamilySpec::Tabulated { times, matrices } => {
                if times.len() != matrices.len() || times.len() < 2 {
                    return Err(bad("family.matrices", "need one matrix per time node, at least two nodes".into()));
                }
                if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(bad("family.times", "must start at 0 and increase".into()));
                }
                if *times.last().unwrap() < self.horizon {
                    return Err(bad("family.times", "table ends before flow.T".into()));
                }
                for m in matrices {
                    matrix(n, "family.matrices", m)?;
                }
            }
        }
        if let FSpec::Tabulated { t_nodes, r_nodes, values } = &self.f {
            if values.len() != t_nodes.len() || values.iter().any(|r| r.len() != r_nodes.len()) {
                return Err(bad("F.values", "table shape must be |t_nodes| rows of |r_nodes| values".into()));
            }
            if t_nodes.len() < 2 || r_nodes.len() < 2 {
                return Err(bad("F.t_nodes", "need at least two nodes per axis".into()));
            }
        }
        if let DensitySpec::Klt { centers, exponents } = &self.density {
            if centers.len() != exponents.len() || centers.is_empty() {
                return Err(bad("density.exponents", "need one exponent per center".into()));
            }
            if let Some(c) = centers.iter().find(|c| c.len() != 2 * n) {
                return Err(bad("density.centers", format!("center {c:?} needs {} coordinates", 2 * n)));
            }
            if let Some(a) = exponents.iter().find(|&&a| !(a > -1.0)) {
                return Err(bad("density.exponents", format!("not klt: exponent {a} <= -1")));
            }
        }
        if let Some(p) = self.density_p {
            if !(p > 1.0) {
                return Err(bad("density.p", format!("{p} must exceed 1")));
            }
        }
        if let Some(d) = self.density_delta {
            if !(d > 0.0) {
                return Err(bad("density.delta", format!("{d} must be positive")));
            }
        }
        if let Phi0Spec::Wave { axis, .. } = self.phi0 {
            if axis >= 2 * n {
                return Err(bad("phi0.axis", format!("axis {axis} out of range for n = {n}")));
            }
        }
        if !(self.horizon > 0.0) {
            return Err(bad("flow.T", "must be positive".into()));
        }
        if self.steps == 0 {
            return Err(bad("flow.K", "must be at least 1".into()));
        }
        if !(self.gamma_mesh >= 1.0) {
            return Err(bad("flow.gamma_mesh", "must be at least 1".into()));
        }
        for (key, v) in [
            ("tol.newton", self.step_tol.newton_tol),
            ("tol.elliptic", self.elliptic_tol),
            ("tol.estimates", self.estimates_tol),
            ("tol.min_eig", self.step_tol.min_eig_floor),
        ] {
            if !(v > 0.0) {
                return Err(bad(key, "must be positive".into()));
            }
        }
        if let Some((a, b)) = self.window {
            if !(b > a) {
                return Err(bad("scenario.window", "end must exceed start".into()));
            }
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(bad("scenario.eps", "must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Serialize every key, defaults included.
    pub fn emit(&self) -> String {
        let mut kv: Vec<(&str, Value)> = vec![("grid.n", num(self.n as f64)), ("grid.N", num(self.res as f64))];
        let w = |s: &str| Value::Word(s.to_string());
        match &self.family {
            FamilySpec::Constant { omega0 } => {
                kv.push(("family.kind", w("constant")));
                kv.push(("family.omega0", list(omega0)));
            }
            FamilySpec::Affine { omega0, chi } => {
                kv.push(("family.kind", w("affine")));
                kv.push(("family.omega0", list(omega0)));
                kv.push(("family.chi", list(chi)));
            }
            FamilySpec::Nkrf { chi0, chi } => {
                kv.push(("family.kind", w("nkrf")));
                kv.push(("family.chi0", list(chi0)));
                kv.push(("family.chi", list(chi)));
            }
            FamilySpec::Tabulated { times, matrices } => {
                kv.push(("family.kind", w("tabulated")));
                kv.push(("family.times", list(times)));
                kv.push(("family.matrices", nested(matrices)));
            }
        }
        if let Some(a) = self.family_a {
            kv.push(("family.A", num(a)));
        }
        match &self.f {
            FSpec::Zero => kv.push(("F.kind", w("zero"))),
            FSpec::Linear { slope, offset } => {
                kv.push(("F.kind", w("linear")));
                kv.push(("F.slope", num(*slope)));
                kv.push(("F.offset", num(*offset)));
            }
            FSpec::Tabulated { t_nodes, r_nodes, values } => {
                kv.push(("F.kind", w("tabulated")));
                kv.push(("F.t_nodes", list(t_nodes)));
                kv.push(("F.r_nodes", list(r_nodes)));
                kv.push(("F.values", nested(values)));
            }
        }
        for (k, v) in [("F.lambda", self.f_lambda), ("F.kappa", self.f_kappa), ("F.cf", self.f_cf)] {
            if let Some(v) = v {
                kv.push((k, num(v)));
            }
        }
        match &self.density {
            DensitySpec::Uniform => kv.push(("density.kind", w("uniform"))),
            DensitySpec::Klt { centers, exponents } => {
                kv.push(("density.kind", w("klt")));
                kv.push(("density.centers", nested(centers)));
                kv.push(("density.exponents", list(exponents)));
            }
            DensitySpec::Tabulated { file } => {
                kv.push(("density.kind", w("tabulated")));
                kv.push(("density.file", Value::Word(file.display().to_string())));
            }
        }
        if let Some(p) = self.density_p {
            kv.push(("density.p", num(p)));
        }
        if let Some(d) = self.density_delta {
            kv.push(("density.delta", num(d)));
        }
        match &self.phi0 {
            Phi0Spec::Zero => kv.push(("phi0.kind", w("zero"))),
            Phi0Spec::Constant(c) => {
                kv.push(("phi0.kind", w("constant")));
                kv.push(("phi0.value", num(*c)));
            }
            Phi0Spec::Wave { cosine, amplitude, axis, frequency } => {
                kv.push(("phi0.kind", w(if *cosine { "cos" } else { "sin" })));
                kv.push(("phi0.amplitude", num(*amplitude)));
                kv.push(("phi0.axis", num(*axis as f64)));
                kv.push(("phi0.frequency", num(*frequency)));
            }
            Phi0Spec::File(p) => {
                kv.push(("phi0.kind", w("file")));
                kv.push(("phi0.file", Value::Word(p.display().to_string())));
            }
        }
        kv.push(("flow.T", num(self.horizon)));
        kv.push(("flow.K", num(self.steps as f64)));
        kv.push(("flow.gamma_mesh", num(self.gamma_mesh)));
        kv.push(("tol.newton", num(self.step_tol.newton_tol)));
        kv.push(("tol.max_newton", num(self.step_tol.max_newton as f64)));
        kv.push(("tol.max_linear", num(self.step_tol.max_linear as f64)));
        kv.push(("tol.min_eig", num(self.step_tol.min_eig_floor)));
        kv.push(("tol.elliptic", num(self.elliptic_tol)));
        kv.push(("tol.estimates", num(self.estimates_tol)));
        if let Some(c) = self.class_tol {
            kv.push(("tol.class", num(c)));
        }
        if let Some(o) = self.order_tol {
            kv.push(("tol.order", num(o)));
        }
        if let Some((a, b)) = self.window {
            kv.push(("scenario.window", list(&[a, b])));
        }
        kv.push(("scenario.restart_times", list(&self.restart_times)));
        kv.push((
            "scenario.floors",
            list(&self.floors.iter().map(|&j| j as f64).collect::<Vec<_>>()),
        ));
        kv.push((
            "scenario.variant",
            w(match self.variant {
                StabilityVariant::Floor => "floor",
                StabilityVariant::Initial => "initial",
            }),
        ));
        kv.push(("scenario.bump", num(self.bump)));
        kv.push(("scenario.eps", num(self.eps)));
        kv.push(("scenario.deltas", list(&self.deltas)));
        let mut out = String::new();
        for (k, v) in kv {
            let _ = writeln!(out, "{k} = {}", render(&v));
        }
        out
    }

    /// Build the solver configuration.
    pub fn build(&self) -> Result<FlowConfig> {
        let n = self.n;
        let grid = make_grid(n, self.res)?;
        let t = self.horizon;
        let mut family = match &self.family {
            FamilySpec::Constant { omega0 } => KahlerFamily::constant(matrix(n, "family.omega0", omega0)?, t)?,
            FamilySpec::Affine { omega0, chi } => {
                KahlerFamily::affine(matrix(n, "family.omega0", omega0)?, matrix(n, "family.chi", chi)?, t)?
            }
            FamilySpec::Nkrf { chi0, chi } => {
                KahlerFamily::nkrf(matrix(n, "family.chi0", chi0)?, matrix(n, "family.chi", chi)?, t)?
            }
            FamilySpec::Tabulated { times, matrices } => {
                let mats = matrices
                    .iter()
                    .map(|m| matrix(n, "family.matrices", m))
                    .collect::<Result<Vec<_>>>()?;
                KahlerFamily::tabulated(times, &mats)?
            }
        };
        if let Some(a) = self.family_a {
            family = family.with_a(a);
        }
        let mut f = match &self.f {
            FSpec::Zero => Nonlinearity::zero(t),
            FSpec::Linear { slope, offset } => Nonlinearity::linear(*slope, *offset, t),
            FSpec::Tabulated { t_nodes, r_nodes, values } => {
                Nonlinearity::tabulated(t_nodes.clone(), r_nodes.clone(), values.clone())?
            }
        };
        if let Some(l) = self.f_lambda {
            f.lambda_f = l;
        }
        if let Some(k) = self.f_kappa {
            f.kappa = k;
        }
        if let Some(c) = self.f_cf {
            f.c_f = c;
        }
        let mut density = match &self.density {
            DensitySpec::Uniform => Density::uniform(&grid),
            DensitySpec::Klt { centers, exponents } => {
                let cs: Vec<[f64; 4]> = centers
                    .iter()
                    .map(|c| {
                        let mut p = [0.0; 4];
                        p[..c.len()].copy_from_slice(c);
                        p
                    })
                    .collect();
                make_klt_density(&grid, &cs, exponents)?
            }
            DensitySpec::Tabulated { file } => Density::tabulated(&grid, read_field(file, &grid)?, self.density_p.unwrap_or(2.0))?,
        };
        if let Some(p) = self.density_p {
            density.p = p;
        }
        let phi0 = match &self.phi0 {
            Phi0Spec::Zero => ScalarField::zeros(&grid),
            Phi0Spec::Constant(c) => ScalarField::constant(&grid, *c),
            &Phi0Spec::Wave { cosine, amplitude, axis, frequency } => ScalarField::from_fn(&grid, |x| {
                let a = 2.0 * PI * frequency * x[axis];
                amplitude * if cosine { a.cos() } else { a.sin() }
            }),
            Phi0Spec::File(p) => read_field(p, &grid)?,
        };
        let mut cfg = FlowConfig::new(grid, family, f, density, phi0, t, self.steps)
            .with_gamma(self.gamma_mesh)
            .with_tol(self.step_tol);
        cfg.delta = self.density_delta;
        Ok(cfg)
    }

    pub fn cy_options(&self) -> CyOptions {
        CyOptions {
            restart_times: self.restart_times.clone(),
            window: self.window,
            monotone_tol: 1e-8,
        }
    }

    pub fn general_type_options(&self) -> GeneralTypeOptions {
        let d = GeneralTypeOptions::default();
        GeneralTypeOptions {
            window: self.window.unwrap_or(d.window),
            tol: self.class_tol.unwrap_or(d.tol),
        }
    }

    /// Comparison slack: the configured values, or those derived from the run.
    pub fn compare_options(&self, cfg: &FlowConfig, traj: &Trajectory) -> CompareOptions {
        let d = CompareOptions::for_run(cfg, traj);
        CompareOptions {
            tol_class: self.class_tol.unwrap_or(d.tol_class),
            tol_order: self.order_tol.unwrap_or(d.tol_order),
        }
    }

    /// `(name, value)` of every tolerance in force, for the manifest.
    pub fn tolerances(&self, cfg: &FlowConfig) -> Vec<(String, f64)> {
        vec![
            ("tol.newton".into(), self.step_tol.newton_tol),
            ("tol.max_newton".into(), self.step_tol.max_newton as f64),
            ("tol.max_linear".into(), self.step_tol.max_linear as f64),
            ("tol.min_eig".into(), self.step_tol.min_eig_floor),
            ("tol.elliptic".into(), self.elliptic_tol),
            ("tol.estimates".into(), self.estimates_tol),
            ("tol.class".into(), self.class_tol.unwrap_or_else(|| class_tolerance(cfg))),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL_CY: &str = "grid.n = 1\ngrid.N = 64\ndensity.kind = uniform\nF.kind = zero\nflow.T = 10\nflow.K = 256\n";

    #[test]
    fn minimal_cy_config_takes_defaults() {
        let c = RunConfig::parse_str(MINIMAL_CY).unwrap();
        assert_eq!(c.family, FamilySpec::Constant { omega0: vec![1.0] });
        assert_eq!(c.gamma_mesh, 2.0);
        let fc = c.build().unwrap();
        assert_eq!(fc.mesh().len(), 257);
        fc.validate().unwrap();
    }

    #[test]
    fn rejects_non_klt_exponent() {
        let text = "density.kind = klt\ndensity.centers = [[0.5, 0.5]]\ndensity.exponents = -1\n";
        let err = RunConfig::parse_str(text).unwrap_err().to_string();
        assert!(err.contains("not klt"), "{err}");
    }

    #[test]
    fn rejects_non_power_of_two() {
        let err = RunConfig::parse_str("grid.N = 48\n").unwrap_err().to_string();
        assert!(err.contains("power of two required"), "{err}");
    }

    #[test]
    fn unknown_keys_and_syntax_errors_carry_lines() {
        match RunConfig::parse_str("grid.n = 1\n\nflow.Q = 3\n").unwrap_err() {
            Error::ConfigParse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("flow.Q"));
            }
            e => panic!("{e}"),
        }
        match RunConfig::parse_str("# c\ngrid.n 1\n").unwrap_err() {
            Error::ConfigParse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
        assert!(matches!(
            RunConfig::parse_str("flow.T = [1, 2\n").unwrap_err(),
            Error::ConfigParse { line: 1, .. }
        ));
    }

    #[test]
    fn overrides_replace_tolerances() {
        let c = RunConfig::parse_with(MINIMAL_CY, &["newton=1e-8".into(), "flow.K=32".into()], None).unwrap();
        assert_eq!(c.step_tol.newton_tol, 1e-8);
        assert_eq!(c.steps, 32);
        assert!(RunConfig::parse_with(MINIMAL_CY, &["bogus=1".into()], None).is_err());
    }

    #[test]
    fn emit_parse_round_trip() {
        let text = "grid.n = 2\ngrid.N = 16\nfamily.kind = tabulated\nfamily.times = [0, 0.5, 2]\n\
                    family.matrices = [[1, 1, 0, 0], [1.5, 1, 0.1, -0.2], [2, 2, 0, 0]]\nF.kind = linear\nF.slope = 1\n\
                    density.kind = klt\ndensity.centers = [[0.5, 0.5, 0.25, 0.75]]\ndensity.exponents = [-0.3]\n\
                    density.delta = 0.001\nphi0.kind = cos\nphi0.axis = 3\nflow.T = 1.5\nscenario.window = [0.2, 1.2]\n";
        let c = RunConfig::parse_str(text).unwrap();
        let again = RunConfig::parse_str(&c.emit()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.emit(), again.emit());
    }
}
