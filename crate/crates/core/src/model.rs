//! Game definition: controlled dynamics, finite control sets, terminal and
//! running cost families indexed by the type pair `(i, j)`, and the preset
//! catalog.
//!
//! A model is built from a JSON document of the form
//!
//! ```json
//! {"preset": "drift-sum-1d", "params": {"sigma": 1.0},
//!  "I": 1, "J": 1, "T": 1.0,
//!  "g": [[{"type": "linear", "coef": 1.0}]],
//!  "l": [[{"type": "zero"}]]}
//! ```
//!
//! Unknown keys are rejected at every level. See [`TerminalCost`] and
//! [`RunningCost`] for the cost references accepted in `g` and `l`.

use crate::error::{GameError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Dense row-major matrix, used for diffusion coefficients and Hessians.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged matrix rows");
            data.extend_from_slice(row);
        }
        Matrix {
            rows: r,
            cols: c,
            data,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `M Mᵀ`.
    pub fn outer_self(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.rows);
        for a in 0..self.rows {
            for b in 0..self.rows {
                let mut s = 0.0;
                for k in 0..self.cols {
                    s += self.get(a, k) * self.get(b, k);
                }
                out.set(a, b, s);
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `(M + Mᵀ) / 2`; requires a square matrix.
    pub fn symmetrized(&self) -> Matrix {
        assert_eq!(self.rows, self.cols);
        let mut out = self.clone();
        for a in 0..self.rows {
            for b in 0..self.cols {
                out.set(a, b, 0.5 * (self.get(a, b) + self.get(b, a)));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlSet {
    label: String,
    values: Vec<Vec<f64>>,
    bound: f64,
}

impl ControlSet {
    /// Points must be non-empty, share a dimension, be pairwise distinct and
    /// lie in the box `[-bound, bound]^k`.
    pub fn new(label: impl Into<String>, values: Vec<Vec<f64>>, bound: f64) -> Result<Self> {
        let label = label.into();
        let dim = values
            .first()
            .map(|v| v.len())
            .ok_or_else(|| GameError::invalid(format!("control set {label} is empty")))?;
        for (k, v) in values.iter().enumerate() {
            if v.len() != dim {
                return Err(GameError::invalid(format!(
                    "control {k} of {label} has wrong dimension"
                )));
            }
            if v.iter().any(|c| !c.is_finite() || c.abs() > bound) {
                return Err(GameError::invalid(format!(
                    "control {v:?} of {label} outside box ±{bound}"
                )));
            }
            if values[..k].iter().any(|w| w == v) {
                return Err(GameError::invalid(format!(
                    "duplicate control {v:?} in {label}"
                )));
            }
        }
        Ok(ControlSet {
            label,
            values,
            bound,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn get(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn index_of(&self, point: &[f64]) -> Option<usize> {
        self.values.iter().position(|v| v.as_slice() == point)
    }

    /// Index of the control nearest (Euclidean) to `point`; ties go to the lower index.
    pub fn nearest(&self, point: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, v) in self.values.iter().enumerate() {
            let d: f64 = v.iter().zip(point).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }
}

/// Linear coefficient on the state: a scalar applies to every coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coef {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Coef {
    fn project(&self, x: &[f64]) -> f64 {
        match self {
            Coef::Scalar(c) => c * x.iter().sum::<f64>(),
            Coef::Vector(c) => c.iter().zip(x).map(|(a, b)| a * b).sum(),
        }
    }

    fn norm(&self, n: usize) -> f64 {
        match self {
            Coef::Scalar(c) => c.abs() * (n as f64).sqrt(),
            Coef::Vector(c) => c.iter().map(|a| a * a).sum::<f64>().sqrt(),
        }
    }

    fn abs_sum(&self, n: usize) -> f64 {
        match self {
            Coef::Scalar(c) => c.abs() * n as f64,
            Coef::Vector(c) => c.iter().map(|a| a.abs()).sum(),
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        match self {
            Coef::Vector(c) if c.len() != n => Err(GameError::config(format!(
                "coefficient vector has length {}, state dimension is {n}",
                c.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// Terminal cost reference `g_ij(x)`; every variant is a function of
/// `s = <coef, x> + offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerminalCost {
    Zero,
    Const {
        value: f64,
    },
    Linear {
        coef: Coef,
        #[serde(default)]
        offset: f64,
    },
    Clamp {
        coef: Coef,
        #[serde(default)]
        offset: f64,
        lo: f64,
        hi: f64,
    },
    Tanh {
        coef: Coef,
        #[serde(default)]
        offset: f64,
        amplitude: f64,
    },
}

impl TerminalCost {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TerminalCost::Zero => 0.0,
            TerminalCost::Const { value } => *value,
            TerminalCost::Linear { coef, offset } => coef.project(x) + offset,
            TerminalCost::Clamp {
                coef,
                offset,
                lo,
                hi,
            } => (coef.project(x) + offset).clamp(*lo, *hi),
            TerminalCost::Tanh {
                coef,
                offset,
                amplitude,
            } => amplitude * (coef.project(x) + offset).tanh(),
        }
    }

    pub fn lipschitz(&self, n: usize) -> f64 {
        match self {
            TerminalCost::Zero | TerminalCost::Const { .. } => 0.0,
            TerminalCost::Linear { coef, .. } | TerminalCost::Clamp { coef, .. } => coef.norm(n),
            TerminalCost::Tanh {
                coef, amplitude, ..
            } => amplitude.abs() * coef.norm(n),
        }
    }

    /// Bound of `|g|` over the box `[-radius, radius]^n`.
    pub fn sup_bound(&self, n: usize, radius: f64) -> f64 {
        match self {
            TerminalCost::Zero => 0.0,
            TerminalCost::Const { value } => value.abs(),
            TerminalCost::Linear { coef, offset } => offset.abs() + coef.abs_sum(n) * radius,
            TerminalCost::Clamp {
                coef,
                offset,
                lo,
                hi,
            } => (offset.abs() + coef.abs_sum(n) * radius).min(lo.abs().max(hi.abs())),
            TerminalCost::Tanh { amplitude, .. } => amplitude.abs(),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            TerminalCost::Zero | TerminalCost::Const { .. } => Ok(()),
            TerminalCost::Linear { coef, .. } | TerminalCost::Tanh { coef, .. } => {
                coef.check_dim(n)
            }
            TerminalCost::Clamp { coef, lo, hi, .. } => {
                if lo > hi {
                    return Err(GameError::config("clamp requires lo <= hi"));
                }
                coef.check_dim(n)
            }
        }
    }
}

/// Running cost reference `ℓ_ij(t, x, u, v)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RunningCost {
    #[default]
    Zero,
    Const {
        value: f64,
    },
    /// `coef · <u, v>`; couples the players.
    Bilinear {
        coef: f64,
    },
    /// `u_coef · Σu + v_coef · Σv + state(x)`.
    Separable {
        #[serde(default)]
        u_coef: f64,
        #[serde(default)]
        v_coef: f64,
        #[serde(default)]
        state: Option<TerminalCost>,
    },
}

impl RunningCost {
    pub fn eval(&self, _t: f64, x: &[f64], u: &[f64], v: &[f64]) -> f64 {
        match self {
            RunningCost::Zero => 0.0,
            RunningCost::Const { value } => *value,
            RunningCost::Bilinear { coef } => {
                coef * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
            }
            RunningCost::Separable {
                u_coef,
                v_coef,
                state,
            } => {
                u_coef * u.iter().sum::<f64>()
                    + v_coef * v.iter().sum::<f64>()
                    + state.as_ref().map_or(0.0, |s| s.eval(x))
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            RunningCost::Zero => true,
            RunningCost::Const { value } => *value == 0.0,
            RunningCost::Bilinear { coef } => *coef == 0.0,
            RunningCost::Separable {
                u_coef,
                v_coef,
                state,
            } => {
                *u_coef == 0.0
                    && *v_coef == 0.0
                    && state
                        .as_ref()
                        .is_none_or(|s| matches!(s, TerminalCost::Zero))
            }
        }
    }

    pub fn is_separable(&self) -> bool {
        !matches!(self, RunningCost::Bilinear { coef } if *coef != 0.0)
    }

    pub fn lipschitz(&self, n: usize) -> f64 {
        match self {
            RunningCost::Separable { state: Some(s), .. } => s.lipschitz(n),
            _ => 0.0,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            RunningCost::Separable { state: Some(s), .. } => s.validate(n),
            _ => Ok(()),
        }
    }
}

/// The top-level model document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: String,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(rename = "I")]
    pub i_count: usize,
    #[serde(rename = "J")]
    pub j_count: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub g: Vec<Vec<TerminalCost>>,
    #[serde(default)]
    pub l: Option<Vec<Vec<RunningCost>>>,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GameError::config(format!("model config: {e}")))
    }

    pub fn build(&self) -> Result<GameModel> {
        GameModel::from_config(self)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StaticParams {
    #[serde(default = "one")]
    dim: usize,
    #[serde(default)]
    domain: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DriftSumParams {
    #[serde(default = "onef")]
    sigma: f64,
    #[serde(default)]
    rho: f64,
    #[serde(default = "unit_controls")]
    u_values: Vec<f64>,
    #[serde(default = "unit_controls")]
    v_values: Vec<f64>,
    #[serde(default)]
    domain: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CoupledParams {
    #[serde(default = "four")]
    gain: f64,
    #[serde(default)]
    sigma: f64,
    #[serde(default)]
    domain: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlOnlyParams {
    #[serde(default)]
    u_values: Option<Vec<f64>>,
    #[serde(default)]
    v_values: Option<Vec<f64>>,
    #[serde(default)]
    domain: Option<f64>,
}

fn one() -> usize {
    1
}
fn onef() -> f64 {
    1.0
}
fn four() -> f64 {
    4.0
}
fn unit_controls() -> Vec<f64> {
    vec![-1.0, 0.0, 1.0]
}

const DEFAULT_DOMAIN: f64 = 4.0;

/// Shipped dynamics. All coefficients are state- and time-independent, hence
/// trivially bounded and Lipschitz.
#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics {
    /// `b ≡ 0`, `σ ≡ 0`.
    Static { dim: usize },
    /// `b = u + v`, `σ = sigma · L` with `L L^T = [[1, rho], [rho, 1]]` in 2-D.
    DriftSum { dim: usize, sigma: f64, rho: f64 },
    /// `b = gain · u · v`, `σ ≡ sigma`; violates Isaacs' condition.
    Coupled { gain: f64, sigma: f64 },
}

impl Dynamics {
    pub fn state_dim(&self) -> usize {
        match self {
            Dynamics::Static { dim } | Dynamics::DriftSum { dim, .. } => *dim,
            Dynamics::Coupled { .. } => 1,
        }
    }

    pub fn noise_dim(&self) -> usize {
        self.state_dim()
    }

    /// `b = b1(u) + b2(v)` and σ free of the controls.
    pub fn decoupled(&self) -> bool {
        !matches!(self, Dynamics::Coupled { gain, .. } if *gain != 0.0)
    }

    fn drift_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        match self {
            Dynamics::Static { .. } => out.iter_mut().for_each(|b| *b = 0.0),
            Dynamics::DriftSum { .. } => {
                for (k, b) in out.iter_mut().enumerate() {
                    *b = u[k] + v[k];
                }
            }
            Dynamics::Coupled { gain, .. } => out[0] = gain * u[0] * v[0],
        }
    }

    fn diffusion(&self) -> Matrix {
        match self {
            Dynamics::Static { dim } => Matrix::zeros(*dim, *dim),
            Dynamics::DriftSum { dim: 1, sigma, .. } => Matrix::from_rows(&[vec![*sigma]]),
            Dynamics::DriftSum { sigma, rho, .. } => Matrix::from_rows(&[
                vec![*sigma, 0.0],
                vec![sigma * rho, sigma * (1.0 - rho * rho).sqrt()],
            ]),
            Dynamics::Coupled { sigma, .. } => Matrix::from_rows(&[vec![*sigma]]),
        }
    }
}

/// A fully resolved game.
#[derive(Clone, Debug)]
pub struct GameModel {
    config: ModelConfig,
    dynamics: Dynamics,
    sigma: Matrix,
    cov: Matrix,
    u_set: ControlSet,
    v_set: ControlSet,
    g: Vec<Vec<TerminalCost>>,
    l: Vec<Vec<RunningCost>>,
    horizon: f64,
    domain: f64,
    lipschitz_bound: f64,
    sup_bound: f64,
    drift_bound: Vec<f64>,
    diffusion_bound: f64,
}

fn parse_params<T: for<'de> Deserialize<'de>>(
    preset: &str,
    params: &Map<String, Value>,
) -> Result<T> {
    serde_json::from_value(Value::Object(params.clone()))
        .map_err(|e| GameError::config(format!("params of preset {preset}: {e}")))
}

fn scalar_set(label: &str, values: &[f64]) -> Result<ControlSet> {
    let bound = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ControlSet::new(label, values.iter().map(|v| vec![*v]).collect(), bound)
}

fn product_set(label: &str, axis: &[f64]) -> Result<ControlSet> {
    let bound = axis.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut pts = Vec::new();
    for a in axis {
        for b in axis {
            pts.push(vec![*a, *b]);
        }
    }
    ControlSet::new(label, pts, bound)
}

impl GameModel {
    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        if cfg.i_count == 0 || cfg.j_count == 0 {
            return Err(GameError::config("I and J must be positive"));
        }
        if !(cfg.horizon.is_finite() && cfg.horizon > 0.0) {
            return Err(GameError::config("T must be positive and finite"));
        }
        let (dynamics, u_set, v_set, domain) = match cfg.preset.as_str() {
            "static" => {
                let p: StaticParams = parse_params(&cfg.preset, &cfg.params)?;
                if p.dim == 0 || p.dim > 2 {
                    return Err(GameError::config("static preset supports dim 1 or 2"));
                }
                let zero = vec![vec![0.0; p.dim]];
                (
                    Dynamics::Static { dim: p.dim },
                    ControlSet::new("U", zero.clone(), 0.0)?,
                    ControlSet::new("V", zero, 0.0)?,
                    p.domain,
                )
            }
            "drift-sum-1d" | "drift-sum-2d" => {
                let p: DriftSumParams = parse_params(&cfg.preset, &cfg.params)?;
                let dim = if cfg.preset == "drift-sum-1d" { 1 } else { 2 };
                if !(p.sigma.is_finite() && p.sigma >= 0.0) || p.rho.abs() > 1.0 {
                    return Err(GameError::config(
                        "drift-sum requires sigma >= 0 and |rho| <= 1",
                    ));
                }
                if dim == 1 && p.rho != 0.0 {
                    return Err(GameError::config("rho is only meaningful for drift-sum-2d"));
                }
                let (u, v) = if dim == 1 {
                    (scalar_set("U", &p.u_values)?, scalar_set("V", &p.v_values)?)
                } else {
                    (
                        product_set("U", &p.u_values)?,
                        product_set("V", &p.v_values)?,
                    )
                };
                (
                    Dynamics::DriftSum {
                        dim,
                        sigma: p.sigma,
                        rho: p.rho,
                    },
                    u,
                    v,
                    p.domain,
                )
            }
            "coupled-1d" => {
                let p: CoupledParams = parse_params(&cfg.preset, &cfg.params)?;
                (
                    Dynamics::Coupled {
                        gain: p.gain,
                        sigma: p.sigma,
                    },
                    scalar_set("U", &[-1.0, 1.0])?,
                    scalar_set("V", &[-1.0, 1.0])?,
                    p.domain,
                )
            }
            "running-matrix" | "running-matrix-informed" => {
                let p: ControlOnlyParams = parse_params(&cfg.preset, &cfg.params)?;
                let default: &[f64] = if cfg.preset == "running-matrix" {
                    &[-1.0, 1.0]
                } else {
                    &[-1.0, 0.0, 1.0]
                };
                let u = p.u_values.unwrap_or_else(|| default.to_vec());
                let v = p.v_values.unwrap_or_else(|| default.to_vec());
                (
                    Dynamics::Static { dim: 1 },
                    scalar_set("U", &u)?,
                    scalar_set("V", &v)?,
                    p.domain,
                )
            }
            other => return Err(GameError::config(format!("unknown preset {other:?}"))),
        };
        let domain = domain.unwrap_or(DEFAULT_DOMAIN);
        if !(domain.is_finite() && domain > 0.0) {
            return Err(GameError::config("domain must be positive"));
        }
        let n = dynamics.state_dim();
        if u_set.dim() != n || v_set.dim() != n {
            return Err(GameError::config(
                "control dimension must match state dimension",
            ));
        }

        let check_shape = |lens: Vec<usize>, what: &str| -> Result<()> {
            if lens.len() != cfg.i_count || lens.iter().any(|&len| len != cfg.j_count) {
                return Err(GameError::config(format!(
                    "{what} must be an I×J = {}×{} matrix",
                    cfg.i_count, cfg.j_count
                )));
            }
            Ok(())
        };
        check_shape(cfg.g.iter().map(Vec::len).collect(), "g")?;
        for c in cfg.g.iter().flatten() {
            c.validate(n)?;
        }
        let l = match &cfg.l {
            Some(l) => {
                check_shape(l.iter().map(Vec::len).collect(), "l")?;
                for c in l.iter().flatten() {
                    c.validate(n)?;
                }
                l.clone()
            }
            None => vec![vec![RunningCost::Zero; cfg.j_count]; cfg.i_count],
        };

        let sigma = dynamics.diffusion();
        let cov = sigma.outer_self();
        let mut model = GameModel {
            config: cfg.clone(),
            dynamics,
            sigma,
            cov,
            u_set,
            v_set,
            g: cfg.g.clone(),
            l,
            horizon: cfg.horizon,
            domain,
            lipschitz_bound: 0.0,
            sup_bound: 0.0,
            drift_bound: vec![0.0; n],
            diffusion_bound: 0.0,
        };
        model.compute_bounds();
        Ok(model)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        ModelConfig::from_json(text)?.build()
    }

    fn compute_bounds(&mut self) {
        let n = self.state_dim();
        let mut drift_bound = vec![0.0f64; n];
        let mut b = vec![0.0; n];
        let mut running_sup = 0.0f64;
        for u in self.u_set.values() {
            for v in self.v_set.values() {
                self.dynamics.drift_into(u, v, &mut b);
                for (m, bk) in drift_bound.iter_mut().zip(&b) {
                    *m = m.max(bk.abs());
                }
                for c in self.l.iter().flatten() {
                    let control_part = match c {
                        RunningCost::Separable {
                            u_coef,
                            v_coef,
                            state,
                        } => {
                            (u_coef * u.iter().sum::<f64>() + v_coef * v.iter().sum::<f64>()).abs()
                                + state.as_ref().map_or(0.0, |s| s.sup_bound(n, self.domain))
                        }
                        other => other.eval(0.0, &vec![0.0; n], u, v).abs(),
                    };
                    running_sup = running_sup.max(control_part);
                }
            }
        }
        let diffusion_bound = (0..n)
            .map(|d| self.cov.get(d, d))
            .fold(0.0f64, f64::max)
            .sqrt();
        let g_sup = self
            .g
            .iter()
            .flatten()
            .map(|c| c.sup_bound(n, self.domain))
            .fold(0.0, f64::max);
        let lip = self
            .g
            .iter()
            .flatten()
            .map(|c| c.lipschitz(n))
            .chain(self.l.iter().flatten().map(|c| c.lipschitz(n)))
            .fold(0.0, f64::max);
        let b_sup = drift_bound.iter().map(|b| b * b).sum::<f64>().sqrt();
        self.drift_bound = drift_bound;
        self.diffusion_bound = diffusion_bound;
        self.lipschitz_bound = lip;
        self.sup_bound = [b_sup, self.sigma.frobenius(), g_sup, running_sup]
            .into_iter()
            .fold(0.0, f64::max);
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.sigma.cols
    }

    pub fn i_count(&self) -> usize {
        self.g.len()
    }

    pub fn j_count(&self) -> usize {
        self.g[0].len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn u_set(&self) -> &ControlSet {
        &self.u_set
    }

    pub fn v_set(&self) -> &ControlSet {
        &self.v_set
    }

    /// Half-width of the box `[-domain, domain]^n` on which bounds are declared.
    pub fn domain(&self) -> f64 {
        self.domain
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn drift_bound(&self) -> &[f64] {
        &self.drift_bound
    }

    /// `sqrt(max_d (σσᵀ)_dd)` over all controls.
    pub fn diffusion_bound(&self) -> f64 {
        self.diffusion_bound
    }

    /// Bound on `|g_ij|` over the declared box.
    pub fn terminal_bound(&self) -> f64 {
        let n = self.state_dim();
        self.g
            .iter()
            .flatten()
            .map(|c| c.sup_bound(n, self.domain))
            .fold(0.0, f64::max)
    }

    /// Bound on `|ℓ_ij|` over the declared box and all controls.
    pub fn running_bound(&self) -> f64 {
        let n = self.state_dim();
        let zero = vec![0.0; n];
        let mut m = 0.0f64;
        for u in self.u_set.values() {
            for v in self.v_set.values() {
                for c in self.l.iter().flatten() {
                    let val = match c {
                        RunningCost::Separable {
                            u_coef,
                            v_coef,
                            state,
                        } => {
                            (u_coef * u.iter().sum::<f64>() + v_coef * v.iter().sum::<f64>()).abs()
                                + state.as_ref().map_or(0.0, |s| s.sup_bound(n, self.domain))
                        }
                        other => other.eval(0.0, &zero, u, v).abs(),
                    };
                    m = m.max(val);
                }
            }
        }
        m
    }

    /// Isaacs' condition holds analytically: separated drift, control-free
    /// diffusion and separable running costs.
    pub fn decoupled(&self) -> bool {
        self.dynamics.decoupled() && self.l.iter().flatten().all(RunningCost::is_separable)
    }

    pub fn has_running_cost(&self) -> bool {
        self.l.iter().flatten().any(|c| !c.is_zero())
    }

    #[inline]
    pub fn drift_into(&self, _t: f64, _x: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) {
        self.dynamics.drift_into(u, v, out);
    }

    pub fn drift(&self, t: f64, x: &[f64], u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.drift_into(t, x, u, v, &mut out);
        out
    }

    pub fn diffusion(&self, _t: f64, _x: &[f64], _u: &[f64], _v: &[f64]) -> &Matrix {
        &self.sigma
    }

    /// `σσᵀ` at the given arguments.
    pub fn covariance(&self, _t: f64, _x: &[f64], _u: &[f64], _v: &[f64]) -> &Matrix {
        &self.cov
    }

    pub fn terminal(&self, i: usize, j: usize, x: &[f64]) -> f64 {
        self.g[i][j].eval(x)
    }

    pub fn running(&self, i: usize, j: usize, t: f64, x: &[f64], u: &[f64], v: &[f64]) -> f64 {
        self.l[i][j].eval(t, x, u, v)
    }

    pub fn terminal_cost(&self, i: usize, j: usize) -> &TerminalCost {
        &self.g[i][j]
    }

    pub fn running_cost(&self, i: usize, j: usize) -> &RunningCost {
        &self.l[i][j]
    }

    /// `Σ_ij p_i q_j ℓ_ij(t, x, u, v)`.
    pub fn running_mix(
        &self,
        p: &[f64],
        q: &[f64],
        t: f64,
        x: &[f64],
        u: &[f64],
        v: &[f64],
    ) -> f64 {
        let mut s = 0.0;
        for (i, pi) in p.iter().enumerate() {
            if *pi == 0.0 {
                continue;
            }
            for (j, qj) in q.iter().enumerate() {
                if *qj == 0.0 {
                    continue;
                }
                s += pi * qj * self.l[i][j].eval(t, x, u, v);
            }
        }
        s
    }

    /// Checked evaluation of `(b, σ)`.
    pub fn evaluate_dynamics(
        &self,
        t: f64,
        x: &[f64],
        u: &[f64],
        v: &[f64],
    ) -> Result<(Vec<f64>, Matrix)> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(GameError::invalid(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        if x.len() != self.state_dim() {
            return Err(GameError::invalid(format!(
                "state has dimension {}, expected {}",
                x.len(),
                self.state_dim()
            )));
        }
        if self.u_set.index_of(u).is_none() {
            return Err(GameError::invalid(format!("control {u:?} is not in U")));
        }
        if self.v_set.index_of(v).is_none() {
            return Err(GameError::invalid(format!("control {v:?} is not in V")));
        }
        Ok((self.drift(t, x, u, v), self.diffusion(t, x, u, v).clone()))
    }

    /// The single-payoff game `(g_ij, ℓ_ij)` with `I = J = 1`.
    pub fn restrict(&self, i: usize, j: usize) -> Result<GameModel> {
        if i >= self.i_count() || j >= self.j_count() {
            return Err(GameError::invalid(format!(
                "type pair ({i}, {j}) out of range"
            )));
        }
        let mut cfg = self.config.clone();
        cfg.i_count = 1;
        cfg.j_count = 1;
        cfg.g = vec![vec![self.g[i][j].clone()]];
        cfg.l = Some(vec![vec![self.l[i][j].clone()]]);
        cfg.build()
    }

    /// Same dynamics and horizon with replaced cost tables.
    pub fn with_costs(
        &self,
        g: Vec<Vec<TerminalCost>>,
        l: Option<Vec<Vec<RunningCost>>>,
    ) -> Result<GameModel> {
        let mut cfg = self.config.clone();
        cfg.i_count = g.len();
        cfg.j_count = g.first().map_or(0, |r| r.len());
        cfg.g = g;
        cfg.l = l;
        cfg.build()
    }

    pub fn extend_with_running_cost(&self) -> ExtendedModel {
        ExtendedModel { base: self.clone() }
    }

    /// Samples `pairs` random state pairs in the declared box and returns the
    /// largest ratio `|f(x) - f(y)| / (L |x - y|)` over drift, diffusion and
    /// costs (≤ 1 when the declared `L` holds), together with the largest
    /// ratio `|f| / M` over the same points.
    pub fn sampled_regularity<R: Rng>(&self, pairs: usize, rng: &mut R) -> RegularityReport {
        let n = self.state_dim();
        let mut worst_lip = 0.0f64;
        let mut worst_sup = 0.0f64;
        let lip = self.lipschitz_bound.max(f64::MIN_POSITIVE);
        let sup = self.sup_bound.max(f64::MIN_POSITIVE);
        let t = 0.5 * self.horizon;
        for _ in 0..pairs {
            let x: Vec<f64> = (0..n)
                .map(|_| rng.random_range(-self.domain..=self.domain))
                .collect();
            let y: Vec<f64> = (0..n)
                .map(|_| rng.random_range(-self.domain..=self.domain))
                .collect();
            let dist = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist == 0.0 {
                continue;
            }
            let mut diffs = Vec::new();
            let mut values = Vec::new();
            for u in self.u_set.values() {
                for v in self.v_set.values() {
                    let bx = self.drift(t, &x, u, v);
                    let by = self.drift(t, &y, u, v);
                    diffs.push(
                        bx.iter()
                            .zip(&by)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt(),
                    );
                    values.push(bx.iter().map(|a| a * a).sum::<f64>().sqrt());
                    let sx = self.diffusion(t, &x, u, v);
                    let sy = self.diffusion(t, &y, u, v);
                    diffs.push(
                        sx.data
                            .iter()
                            .zip(&sy.data)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt(),
                    );
                    values.push(sx.frobenius());
                    for (i, row) in self.l.iter().enumerate() {
                        for (j, c) in row.iter().enumerate() {
                            let lx = c.eval(t, &x, u, v);
                            diffs.push((lx - self.running(i, j, t, &y, u, v)).abs());
                            values.push(lx.abs());
                        }
                    }
                }
            }
            for c in self.g.iter().flatten() {
                diffs.push((c.eval(&x) - c.eval(&y)).abs());
                values.push(c.eval(&x).abs());
            }
            for d in diffs {
                worst_lip = worst_lip.max(d / (lip * dist));
            }
            for v in values {
                worst_sup = worst_sup.max(v / sup);
            }
        }
        RegularityReport {
            lipschitz_ratio: worst_lip,
            sup_ratio: worst_sup,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularityReport {
    pub lipschitz_ratio: f64,
    pub sup_ratio: f64,
}

/// The terminal-payoff game on `(x, z) ∈ ℝ^{n + I·J}` with
/// `dZ_ij = ℓ_ij ds` and payoff `z_ij + g_ij(x)`.
#[derive(Clone, Debug)]
pub struct ExtendedModel {
    base: GameModel,
}

impl ExtendedModel {
    pub fn base(&self) -> &GameModel {
        &self.base
    }

    pub fn state_dim(&self) -> usize {
        self.base.state_dim() + self.base.i_count() * self.base.j_count()
    }

    pub fn z_index(&self, i: usize, j: usize) -> usize {
        self.base.state_dim() + i * self.base.j_count() + j
    }

    pub fn drift(&self, t: f64, xz: &[f64], u: &[f64], v: &[f64]) -> Vec<f64> {
        let n = self.base.state_dim();
        let x = &xz[..n];
        let mut out = self.base.drift(t, x, u, v);
        for i in 0..self.base.i_count() {
            for j in 0..self.base.j_count() {
                out.push(self.base.running(i, j, t, x, u, v));
            }
        }
        out
    }

    pub fn diffusion(&self, t: f64, xz: &[f64], u: &[f64], v: &[f64]) -> Matrix {
        let n = self.base.state_dim();
        let s = self.base.diffusion(t, &xz[..n], u, v);
        let mut out = Matrix::zeros(self.state_dim(), s.cols);
        for r in 0..n {
            for c in 0..s.cols {
                out.set(r, c, s.get(r, c));
            }
        }
        out
    }

    pub fn terminal(&self, i: usize, j: usize, xz: &[f64]) -> f64 {
        let n = self.base.state_dim();
        xz[self.z_index(i, j)] + self.base.terminal(i, j, &xz[..n])
    }
}
