//! Coupled root-finding problems `F(x*, y*) = 0`, `G(x*, y*) = 0`.
//!
//! A [`ProblemSpec`] bundles the fast operator `F`, the slow operator `G`,
//! the fast-equilibrium map `H` (the root of `F(·, y)` for frozen `y`), the
//! known solution and the declared regularity constants. Three built-in
//! instances with closed-form constants are provided by [`make_builtin`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dist_sq, dot, matvec_into, norm};
use crate::noise::RngState;

/// The operator triple `(F, G, H)` evaluated into caller-provided buffers.
pub trait CoupledOperator: Send + Sync + fmt::Debug {
    /// `out = F(x, y)`
    fn fast(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    /// `out = G(x, y)`
    fn slow(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    /// `out = H(y)`
    fn equilibrium(&self, y: &[f64], out: &mut [f64]);
}

/// Declared Lipschitz constants and strong-monotonicity moduli.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub l_f: f64,
    pub l_g: f64,
    pub l_h: f64,
    pub mu_f: f64,
    pub mu_g: f64,
}

impl ProblemConstants {
    pub fn new(l_f: f64, l_g: f64, l_h: f64, mu_f: f64, mu_g: f64) -> Result<Self> {
        let pc = Self {
            l_f,
            l_g,
            l_h,
            mu_f,
            mu_g,
        };
        pc.validate()?;
        Ok(pc)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("L_F", self.l_f), ("L_G", self.l_g), ("L_H", self.l_h)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("mu_F", self.mu_f), ("mu_G", self.mu_g)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.mu_f > self.l_f {
            return Err(Error::param("mu_F", "exceeds L_F"));
        }
        if self.mu_g > self.l_g {
            return Err(Error::param("mu_G", "exceeds L_G"));
        }
        Ok(())
    }

    /// `L = max{L_H, L_G, L_F}`
    pub fn l_max(&self) -> f64 {
        self.l_h.max(self.l_g).max(self.l_f)
    }
}

/// An immutable, cheaply clonable problem instance.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub dim: usize,
    op: Arc<dyn CoupledOperator>,
    pub x_star: Vec<f64>,
    pub y_star: Vec<f64>,
    pub constants: ProblemConstants,
}

impl ProblemSpec {
    pub fn new(
        name: impl Into<String>,
        op: Arc<dyn CoupledOperator>,
        x_star: Vec<f64>,
        y_star: Vec<f64>,
        constants: ProblemConstants,
    ) -> Result<Self> {
        let dim = y_star.len();
        if dim == 0 {
            return Err(Error::param("dim", "must be >= 1"));
        }
        check_len(&x_star, dim)?;
        Ok(Self {
            name: name.into(),
            dim,
            op,
            x_star,
            y_star,
            constants,
        })
    }

    /// Same operators, different declared constants. Used by fixtures that
    /// deliberately misdeclare a modulus.
    pub fn with_constants(&self, constants: ProblemConstants) -> Self {
        Self {
            constants,
            ..self.clone()
        }
    }

    pub fn operator(&self) -> &dyn CoupledOperator {
        self.op.as_ref()
    }

    pub fn eval_f(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.op.fast(x, y, &mut out);
        out
    }

    pub fn eval_g(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.op.slow(x, y, &mut out);
        out
    }

    pub fn eval_h(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.op.equilibrium(y, &mut out);
        out
    }
}

/// `x̂ = x − H(y)`, `ŷ = y − y*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub x_hat: Vec<f64>,
    pub y_hat: Vec<f64>,
}

impl Residuals {
    pub fn x_hat_sq(&self) -> f64 {
        linalg::norm_sq(&self.x_hat)
    }

    pub fn y_hat_sq(&self) -> f64 {
        linalg::norm_sq(&self.y_hat)
    }
}

pub fn residuals(problem: &ProblemSpec, x: &[f64], y: &[f64]) -> Result<Residuals> {
    check_len(x, problem.dim)?;
    check_len(y, problem.dim)?;
    let h = problem.eval_h(y);
    Ok(Residuals {
        x_hat: linalg::sub(x, &h),
        y_hat: linalg::sub(y, &problem.y_star),
    })
}

pub(crate) fn check_len(v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Builtins

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    LinearCoupled,
    NonlinearTanh,
    PolyakRuppert,
}

impl Builtin {
    pub const ALL: [Builtin; 3] = [
        Builtin::LinearCoupled,
        Builtin::NonlinearTanh,
        Builtin::PolyakRuppert,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Builtin::LinearCoupled => "linear-coupled",
            Builtin::NonlinearTanh => "nonlinear-tanh",
            Builtin::PolyakRuppert => "polyak-ruppert",
        }
    }

    /// Step offset that keeps the fast iterate's initial overshoot bounded
    /// under the theorem schedule.
    pub fn recommended_offset(&self) -> u64 {
        match self {
            Builtin::PolyakRuppert => 50,
            _ => 1,
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Builtin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Builtin::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::UnknownBuiltin(s.to_string()))
    }
}

/// A builtin parameter: scalars expand to `s·I` (matrices) or a constant
/// vector, vectors to a diagonal matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

pub type Params = BTreeMap<String, ParamValue>;

struct ParamReader<'a> {
    params: &'a Params,
    dim: usize,
    allowed: &'static [&'static str],
}

impl<'a> ParamReader<'a> {
    fn new(params: &'a Params, dim: usize, allowed: &'static [&'static str]) -> Result<Self> {
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::param(k, format!("unknown parameter; expected one of {allowed:?}")));
        }
        Ok(Self {
            params,
            dim,
            allowed,
        })
    }

    fn scalar(&self, name: &str, default: f64) -> Result<f64> {
        debug_assert!(self.allowed.contains(&name));
        match self.params.get(name) {
            None => Ok(default),
            Some(ParamValue::Scalar(v)) if v.is_finite() => Ok(*v),
            Some(_) => Err(Error::param(name, "expected a finite scalar")),
        }
    }

    fn vector(&self, name: &str, default: f64) -> Result<Vec<f64>> {
        match self.params.get(name) {
            None => Ok(vec![default; self.dim]),
            Some(ParamValue::Scalar(v)) => Ok(vec![*v; self.dim]),
            Some(ParamValue::Vector(v)) if v.len() == self.dim => Ok(v.clone()),
            Some(_) => Err(Error::param(name, format!("expected a scalar or a vector of length {}", self.dim))),
        }
    }

    fn matrix(&self, name: &str, default_scale: f64) -> Result<DMatrix<f64>> {
        let d = self.dim;
        match self.params.get(name) {
            None => Ok(DMatrix::identity(d, d) * default_scale),
            Some(ParamValue::Scalar(s)) => Ok(DMatrix::identity(d, d) * *s),
            Some(ParamValue::Vector(v)) if v.len() == d => {
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(v)))
            }
            Some(ParamValue::Matrix(rows)) if rows.len() == d && rows.iter().all(|r| r.len() == d) => {
                Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            }
            Some(_) => Err(Error::param(name, format!("expected a scalar, a length-{d} diagonal, or a {d}x{d} matrix"))),
        }
    }

    fn spd_matrix(&self, name: &str, default_scale: f64) -> Result<(DMatrix<f64>, f64, f64)> {
        let m = self.matrix(name, default_scale)?;
        if m.iter().any(|v| !v.is_finite()) || linalg::max_asymmetry(&m) > 1e-12 {
            return Err(Error::NotPositiveDefinite(name.to_string()));
        }
        let (lo, hi) = linalg::sym_eig_extremes(&m);
        if lo <= 0.0 {
            return Err(Error::NotPositiveDefinite(name.to_string()));
        }
        Ok((m, lo, hi))
    }
}

/// `F = A_f(x − P y)`, `G = A_g(y − y_targ) + C_c(x − P y)`, `H(y) = P y`.
#[derive(Debug, Clone)]
pub struct LinearCoupled {
    pub a_f: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub a_g: DMatrix<f64>,
    pub c_c: DMatrix<f64>,
    pub y_targ: Vec<f64>,
}

impl LinearCoupled {
    fn x_minus_py(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        matvec_into(&self.p, y, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi - *o;
        }
    }
}

impl CoupledOperator for LinearCoupled {
    fn fast(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let mut r = vec![0.0; x.len()];
        self.x_minus_py(x, y, &mut r);
        matvec_into(&self.a_f, &r, out);
    }

    fn slow(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let d = x.len();
        let mut r = vec![0.0; d];
        self.x_minus_py(x, y, &mut r);
        let mut coupling = vec![0.0; d];
        matvec_into(&self.c_c, &r, &mut coupling);
        let dy: Vec<f64> = y.iter().zip(&self.y_targ).map(|(a, b)| a - b).collect();
        matvec_into(&self.a_g, &dy, out);
        for (o, c) in out.iter_mut().zip(&coupling) {
            *o += c;
        }
    }

    fn equilibrium(&self, y: &[f64], out: &mut [f64]) {
        matvec_into(&self.p, y, out);
    }
}

/// `F = x − γ tanh(y)`, `G = μ(y − y_targ) + ρ(x − γ tanh(y))`.
#[derive(Debug, Clone)]
pub struct NonlinearTanh {
    pub gamma: f64,
    pub mu: f64,
    pub rho: f64,
    pub y_targ: Vec<f64>,
}

impl CoupledOperator for NonlinearTanh {
    fn fast(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
            *o = xi - self.gamma * yi.tanh();
        }
    }

    fn slow(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for (((o, xi), yi), ti) in out.iter_mut().zip(x).zip(y).zip(&self.y_targ) {
            *o = self.mu * (yi - ti) + self.rho * (xi - self.gamma * yi.tanh());
        }
    }

    fn equilibrium(&self, y: &[f64], out: &mut [f64]) {
        for (o, yi) in out.iter_mut().zip(y) {
            *o = self.gamma * yi.tanh();
        }
    }
}

/// SGD on `½ yᵀQy` with an averaging iterate: `F = gain·(x − y)`, `G = Q y`.
#[derive(Debug, Clone)]
pub struct PolyakRuppert {
    pub gain: f64,
    pub q: DMatrix<f64>,
}

impl CoupledOperator for PolyakRuppert {
    fn fast(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
            *o = self.gain * (xi - yi);
        }
    }

    fn slow(&self, _x: &[f64], y: &[f64], out: &mut [f64]) {
        matvec_into(&self.q, y, out);
    }

    fn equilibrium(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
}

/// Builds one of the named test problems with exact constants.
///
/// Parameters (all optional):
/// - `linear-coupled`: `a_f` (SPD, default `I`), `p` (default `0.1·I`),
///   `a_g` (SPD, default `7·I`), `c_c` (default `0.5·I`), `y_targ` (default ones).
/// - `nonlinear-tanh`: `gamma` (> 0, default 0.1), `mu` (> 0, default 7),
///   `rho` (default 0.5), `y_targ` (default ones).
/// - `polyak-ruppert`: `gain` (> 0, default 150), `q` (SPD, default `110·I`).
pub fn make_builtin(kind: Builtin, params: &Params, dim: usize) -> Result<ProblemSpec> {
    if dim == 0 {
        return Err(Error::param("dim", "must be >= 1"));
    }
    match kind {
        Builtin::LinearCoupled => {
            let r = ParamReader::new(params, dim, &["a_f", "p", "a_g", "c_c", "y_targ"])?;
            let (a_f, mu_f, l_f) = r.spd_matrix("a_f", 1.0)?;
            let (a_g, mu_g, norm_ag) = r.spd_matrix("a_g", 7.0)?;
            let p = r.matrix("p", 0.1)?;
            let c_c = r.matrix("c_c", 0.5)?;
            let y_targ = r.vector("y_targ", 1.0)?;
            let l_h = linalg::spectral_norm(&p);
            let norm_c = linalg::spectral_norm(&c_c);
            // ‖ΔG‖ ≤ ‖A_g‖‖Δy‖ + ‖C‖(‖Δx‖ + ‖P‖‖Δy‖)
            let l_g = norm_c.max(norm_ag + norm_c * l_h);
            let mut x_star = vec![0.0; dim];
            matvec_into(&p, &y_targ, &mut x_star);
            let op = LinearCoupled {
                a_f,
                p,
                a_g,
                c_c,
                y_targ: y_targ.clone(),
            };
            let pc = ProblemConstants::new(l_f, l_g, l_h, mu_f, mu_g)?;
            ProblemSpec::new(kind.as_str(), Arc::new(op), x_star, y_targ, pc)
        }
        Builtin::NonlinearTanh => {
            let r = ParamReader::new(params, dim, &["gamma", "mu", "rho", "y_targ"])?;
            let gamma = r.scalar("gamma", 0.1)?;
            let mu = r.scalar("mu", 7.0)?;
            let rho = r.scalar("rho", 0.5)?;
            let y_targ = r.vector("y_targ", 1.0)?;
            if gamma <= 0.0 {
                return Err(Error::param("gamma", "must be > 0"));
            }
            if mu <= 0.0 {
                return Err(Error::param("mu", "must be > 0"));
            }
            let x_star = y_targ.iter().map(|t| gamma * t.tanh()).collect();
            // ‖ΔG‖ ≤ |ρ|‖Δx‖ + (μ + |ρ|γ)‖Δy‖
            let l_g = rho.abs().max(mu + rho.abs() * gamma);
            let op = NonlinearTanh {
                gamma,
                mu,
                rho,
                y_targ: y_targ.clone(),
            };
            let pc = ProblemConstants::new(1.0, l_g, gamma, 1.0, mu)?;
            ProblemSpec::new(kind.as_str(), Arc::new(op), x_star, y_targ, pc)
        }
        Builtin::PolyakRuppert => {
            let r = ParamReader::new(params, dim, &["gain", "q"])?;
            let gain = r.scalar("gain", 150.0)?;
            if gain <= 0.0 {
                return Err(Error::param("gain", "must be > 0"));
            }
            let (q, mu_g, l_g) = r.spd_matrix("q", 110.0)?;
            let op = PolyakRuppert { gain, q };
            let pc = ProblemConstants::new(gain, l_g, 1.0, gain, mu_g)?;
            ProblemSpec::new(kind.as_str(), Arc::new(op), vec![0.0; dim], vec![0.0; dim], pc)
        }
    }
}

// ---------------------------------------------------------------------------
// Empirical assumption check

/// Sampled evidence for the Lipschitz and strong-monotonicity assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub max_lipschitz_ratio_f: f64,
    pub max_lipschitz_ratio_g: f64,
    pub max_lipschitz_ratio_h: f64,
    pub min_monotone_quotient_f: f64,
    pub min_monotone_quotient_g: f64,
    pub max_root_residual: f64,
    pub sample_count: usize,
    pub declared: ProblemConstants,
    pub pass: bool,
}

const RATIO_SLACK: f64 = 1e-9;

/// Uniform point in the ball of radius `radius` around `center`.
fn sample_ball(rng: &mut RngState, center: &[f64], radius: f64) -> Vec<f64> {
    let n = center.len();
    let dir = rng.standard_normal_vec(n);
    let len = norm(&dir).max(f64::MIN_POSITIVE);
    let r = radius * rng.inner().random::<f64>().powf(1.0 / n as f64);
    center.iter().zip(&dir).map(|(c, u)| c + r * u / len).collect()
}

pub fn verify_assumptions(
    problem: &ProblemSpec,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<AssumptionReport> {
    if samples < 2 {
        return Err(Error::param("samples", "must be >= 2"));
    }
    if !(radius > 0.0) {
        return Err(Error::param("radius", "must be > 0"));
    }
    let d = problem.dim;
    let pc = problem.constants;
    let center: Vec<f64> = problem.x_star.iter().chain(&problem.y_star).cloned().collect();
    let mut rng = RngState::from_seed(seed);

    let mut rep = AssumptionReport {
        max_lipschitz_ratio_f: 0.0,
        max_lipschitz_ratio_g: 0.0,
        max_lipschitz_ratio_h: 0.0,
        min_monotone_quotient_f: f64::INFINITY,
        min_monotone_quotient_g: f64::INFINITY,
        max_root_residual: 0.0,
        sample_count: samples,
        declared: pc,
        pass: true,
    };
    let (mut f1, mut f2, mut g1, mut g2, mut h1, mut h2) = (
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
    );
    let op = problem.operator();
    for _ in 0..samples {
        let p1 = sample_ball(&mut rng, &center, radius);
        let p2 = sample_ball(&mut rng, &center, radius);
        let (x1, y1) = p1.split_at(d);
        let (x2, y2) = p2.split_at(d);
        let dx = dist_sq(x1, x2).sqrt();
        let dy = dist_sq(y1, y2).sqrt();

        op.equilibrium(y1, &mut h1);
        op.equilibrium(y2, &mut h2);
        if dy > 0.0 {
            rep.max_lipschitz_ratio_h = rep.max_lipschitz_ratio_h.max(dist_sq(&h1, &h2).sqrt() / dy);
        }

        op.fast(x1, y1, &mut f1);
        op.fast(x2, y1, &mut f2);
        if dx > 0.0 {
            let df: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a - b).collect();
            let ddx: Vec<f64> = x1.iter().zip(x2).map(|(a, b)| a - b).collect();
            rep.max_lipschitz_ratio_f = rep.max_lipschitz_ratio_f.max(norm(&df) / dx);
            rep.min_monotone_quotient_f = rep.min_monotone_quotient_f.min(dot(&ddx, &df) / (dx * dx));
        }

        op.slow(x1, y1, &mut g1);
        op.slow(x2, y2, &mut g2);
        if dx + dy > 0.0 {
            rep.max_lipschitz_ratio_g = rep.max_lipschitz_ratio_g.max(dist_sq(&g1, &g2).sqrt() / (dx + dy));
        }

        // one-point monotonicity of G along (H(y), y)
        op.slow(&h1, y1, &mut g1);
        let yh: Vec<f64> = y1.iter().zip(&problem.y_star).map(|(a, b)| a - b).collect();
        let yn2 = linalg::norm_sq(&yh);
        if yn2 > 0.0 {
            rep.min_monotone_quotient_g = rep.min_monotone_quotient_g.min(dot(&yh, &g1) / yn2);
        }

        op.fast(&h1, y1, &mut f1);
        let root = norm(&f1);
        rep.max_root_residual = rep.max_root_residual.max(root);
        if root > 1e-8 * (1.0 + norm(y1)) {
            rep.pass = false;
        }
    }
    let upper = |v: f64, l: f64| v <= l * (1.0 + RATIO_SLACK);
    let lower = |v: f64, m: f64| v >= m * (1.0 - RATIO_SLACK);
    rep.pass = rep.pass
        && upper(rep.max_lipschitz_ratio_f, pc.l_f)
        && upper(rep.max_lipschitz_ratio_g, pc.l_g)
        && upper(rep.max_lipschitz_ratio_h, pc.l_h)
        && lower(rep.min_monotone_quotient_f, pc.mu_f)
        && lower(rep.min_monotone_quotient_g, pc.mu_g);
    Ok(rep)
}
