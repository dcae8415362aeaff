//! Explicit Euler integration of the singularly perturbed limit
//!
//! ```text
//! dx/dt = −F(x, y)
//! dy/dt = −ε G(x, y)
//! ```
//!
//! `ε = 0` freezes `y` and integrates the fast system alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dist_sq;
use crate::operators::{check_len, ProblemSpec};
use crate::solver::DEFAULT_DIVERGENCE_THRESHOLD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeConfig {
    pub epsilon: f64,
    pub h: f64,
    pub horizon: f64,
    /// Defaults to `x* + 1`.
    pub x0: Option<Vec<f64>>,
    /// Defaults to `y* + 1`.
    pub y0: Option<Vec<f64>>,
    /// Record every `stride` Euler steps.
    pub stride: usize,
}

impl OdeConfig {
    pub fn new(epsilon: f64, h: f64, horizon: f64) -> Self {
        Self {
            epsilon,
            h,
            horizon,
            x0: None,
            y0: None,
            stride: 1,
        }
    }

    /// Largest admissible step for this problem.
    pub fn max_step(&self, problem: &ProblemSpec) -> f64 {
        let pc = &problem.constants;
        0.1 / pc.l_f.max(self.epsilon * pc.l_g)
    }

    pub fn validate(&self, problem: &ProblemSpec) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::param("epsilon", "must lie in [0, 1]"));
        }
        if !(self.h > 0.0 && self.horizon > 0.0 && self.h <= self.horizon) {
            return Err(Error::param("h", "need 0 < h <= horizon"));
        }
        let hmax = self.max_step(problem);
        if self.h > hmax {
            return Err(Error::param(
                "h",
                format!("{} exceeds the stability limit {hmax}", self.h),
            ));
        }
        if self.stride == 0 {
            return Err(Error::param("stride", "must be >= 1"));
        }
        if let Some(x0) = &self.x0 {
            check_len(x0, problem.dim)?;
        }
        if let Some(y0) = &self.y0 {
            check_len(y0, problem.dim)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    /// `‖x(t) − H(y(t))‖`
    pub fast_residual: Vec<f64>,
    /// `‖y(t) − y*‖`
    pub slow_error: Vec<f64>,
}

impl OdeTrajectory {
    pub fn fast_halving_time(&self) -> Option<f64> {
        halving_time(&self.times, &self.fast_residual)
    }

    pub fn slow_halving_time(&self) -> Option<f64> {
        halving_time(&self.times, &self.slow_error)
    }
}

/// First recorded time at which `values` has dropped to half its initial value.
pub fn halving_time(times: &[f64], values: &[f64]) -> Option<f64> {
    let target = values.first()? / 2.0;
    times
        .iter()
        .zip(values)
        .find(|(_, v)| **v <= target)
        .map(|(t, _)| *t)
}

pub fn integrate(problem: &ProblemSpec, cfg: &OdeConfig) -> Result<OdeTrajectory> {
    cfg.validate(problem)?;
    let d = problem.dim;
    let op = problem.operator();
    let mut x = cfg
        .x0
        .clone()
        .unwrap_or_else(|| problem.x_star.iter().map(|v| v + 1.0).collect());
    let mut y = cfg
        .y0
        .clone()
        .unwrap_or_else(|| problem.y_star.iter().map(|v| v + 1.0).collect());
    let (mut f, mut g, mut h) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let steps = (cfg.horizon / cfg.h).round() as usize;
    let cap = steps / cfg.stride + 2;
    let mut out = OdeTrajectory {
        times: Vec::with_capacity(cap),
        fast_residual: Vec::with_capacity(cap),
        slow_error: Vec::with_capacity(cap),
    };
    let record = |n: usize, x: &[f64], y: &[f64], h: &mut [f64], out: &mut OdeTrajectory| {
        op.equilibrium(y, h);
        out.times.push(n as f64 * cfg.h);
        out.fast_residual.push(dist_sq(x, h).sqrt());
        out.slow_error.push(dist_sq(y, &problem.y_star).sqrt());
    };
    record(0, &x, &y, &mut h, &mut out);
    for n in 1..=steps {
        op.fast(&x, &y, &mut f);
        if cfg.epsilon > 0.0 {
            op.slow(&x, &y, &mut g);
            for (yi, gi) in y.iter_mut().zip(&g) {
                *yi -= cfg.h * cfg.epsilon * gi;
            }
        }
        for (xi, fi) in x.iter_mut().zip(&f) {
            *xi -= cfg.h * fi;
        }
        if x.iter().chain(&y).any(|v| !(v.abs() <= DEFAULT_DIVERGENCE_THRESHOLD)) {
            return Err(Error::Diverged {
                k: n as u64,
                replication: None,
                partial: None,
            });
        }
        if n % cfg.stride == 0 || n == steps {
            record(n, &x, &y, &mut h, &mut out);
        }
    }
    Ok(out)
}
