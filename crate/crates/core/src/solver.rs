//! The two-time-scale iteration
//!
//! ```text
//! x_{k+1} = x_k − α_k (F(x_k, y_k) + ξ_k)
//! y_{k+1} = y_k − β_k (G(x_k, y_k) + ψ_k)
//! ```
//!
//! with trajectory recording, Monte Carlo replication and power-law fitting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, norm_sq};
use crate::noise::{NoiseModel, RngState};
use crate::operators::{check_len, ProblemSpec};
use crate::schedules::{derive_constants, DeriveOptions, StepSchedule};

pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateState {
    pub k: u64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl IterateState {
    pub fn new(k: u64, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { k, x, y }
    }

    /// `(x* + 1, y* + 1)`
    pub fn default_start(problem: &ProblemSpec) -> Self {
        Self {
            k: 0,
            x: problem.x_star.iter().map(|v| v + 1.0).collect(),
            y: problem.y_star.iter().map(|v| v + 1.0).collect(),
        }
    }

    pub fn at_solution(problem: &ProblemSpec) -> Self {
        Self::new(0, problem.x_star.clone(), problem.y_star.clone())
    }

    fn within(&self, threshold: f64) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite() && v.abs() <= threshold)
    }
}

/// `‖ŷ‖² + η (β_k/α_k) ‖x̂‖²`
pub fn lyapunov(x_hat_sq: f64, y_hat_sq: f64, k: u64, schedule: &StepSchedule, eta: f64) -> f64 {
    let (a, b) = schedule.step_sizes(k);
    y_hat_sq + eta * (b / a) * x_hat_sq
}

/// Reusable buffers for stepping one problem.
pub struct Stepper<'a> {
    problem: &'a ProblemSpec,
    noise: &'a NoiseModel,
    schedule: &'a StepSchedule,
    f: Vec<f64>,
    g: Vec<f64>,
    h: Vec<f64>,
    z: Vec<f64>,
    xi: Vec<f64>,
    psi: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(problem: &'a ProblemSpec, noise: &'a NoiseModel, schedule: &'a StepSchedule) -> Result<Self> {
        if noise.dim() != problem.dim {
            return Err(Error::DimensionMismatch {
                expected: problem.dim,
                got: noise.dim(),
            });
        }
        let d = problem.dim;
        Ok(Self {
            problem,
            noise,
            schedule,
            f: vec![0.0; d],
            g: vec![0.0; d],
            h: vec![0.0; d],
            z: vec![0.0; 2 * d],
            xi: vec![0.0; d],
            psi: vec![0.0; d],
        })
    }

    /// Advances `state` in place by one synchronous step.
    pub fn advance(&mut self, state: &mut IterateState, rng: &mut RngState) {
        let op = self.problem.operator();
        op.fast(&state.x, &state.y, &mut self.f);
        op.slow(&state.x, &state.y, &mut self.g);
        self.noise.sample_into(rng, &mut self.z, &mut self.xi, &mut self.psi);
        let (a, b) = self.schedule.step_sizes(state.k);
        for i in 0..state.x.len() {
            state.x[i] -= a * (self.f[i] + self.xi[i]);
            state.y[i] -= b * (self.g[i] + self.psi[i]);
        }
        state.k += 1;
    }

    /// `(‖x − H(y)‖², ‖y − y*‖², ‖x − x*‖²)`
    pub fn residuals_sq(&mut self, state: &IterateState) -> (f64, f64, f64) {
        self.problem.operator().equilibrium(&state.y, &mut self.h);
        (
            dist_sq(&state.x, &self.h),
            dist_sq(&state.y, &self.problem.y_star),
            dist_sq(&state.x, &self.problem.x_star),
        )
    }
}

/// One synchronous step with the default divergence threshold.
pub fn step(
    state: &IterateState,
    problem: &ProblemSpec,
    noise: &NoiseModel,
    schedule: &StepSchedule,
    rng: &mut RngState,
) -> Result<IterateState> {
    check_len(&state.x, problem.dim)?;
    check_len(&state.y, problem.dim)?;
    if !state.within(DEFAULT_DIVERGENCE_THRESHOLD) {
        return Err(diverged(state.k, None));
    }
    let mut next = state.clone();
    Stepper::new(problem, noise, schedule)?.advance(&mut next, rng);
    if !next.within(DEFAULT_DIVERGENCE_THRESHOLD) {
        return Err(diverged(next.k, None));
    }
    Ok(next)
}

fn diverged(k: u64, partial: Option<Trajectory>) -> Error {
    Error::Diverged {
        k,
        replication: None,
        partial: partial.map(Box::new),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recording {
    /// Every `n`-th iteration.
    Stride(u64),
    /// Roughly `n` points per decade of `k`.
    LogSpaced(u32),
}

impl Default for Recording {
    fn default() -> Self {
        Recording::LogSpaced(60)
    }
}

impl Recording {
    /// Record indices in `[0, iterations]`, always including both ends.
    pub fn ks(&self, iterations: u64) -> Result<Vec<u64>> {
        let mut ks = match *self {
            Recording::Stride(0) | Recording::LogSpaced(0) => {
                return Err(Error::Config("record stride must be >= 1".into()))
            }
            Recording::Stride(s) => (0..=iterations).step_by(s as usize).collect::<Vec<_>>(),
            Recording::LogSpaced(n) => {
                let mut v = vec![0u64];
                let top = (iterations.max(1) as f64).log10() * n as f64;
                let mut j = 0u32;
                while (j as f64) <= top.ceil() {
                    let k = 10f64.powf(j as f64 / n as f64).round() as u64;
                    if k <= iterations {
                        v.push(k);
                    }
                    j += 1;
                }
                v
            }
        };
        ks.push(iterations);
        ks.sort_unstable();
        ks.dedup();
        Ok(ks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub iterations: u64,
    pub recording: Recording,
    pub seed: u64,
    pub x0: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    pub divergence_threshold: f64,
    /// Lyapunov weight. `None` uses the theorem value for the schedule.
    pub eta: Option<f64>,
    /// Keep the iterates themselves in each record.
    pub keep_iterates: bool,
}

impl RunConfig {
    pub fn new(iterations: u64, seed: u64) -> Self {
        Self {
            iterations,
            recording: Recording::default(),
            seed,
            x0: None,
            y0: None,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            eta: None,
            keep_iterates: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::Config("divergence_threshold must be > 0".into()));
        }
        if let Some(e) = self.eta {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::Config("eta must be finite and >= 0".into()));
            }
        }
        self.recording.ks(self.iterations).map(|_| ())
    }

    pub fn initial_state(&self, problem: &ProblemSpec) -> Result<IterateState> {
        let mut s = IterateState::default_start(problem);
        if let Some(x0) = &self.x0 {
            check_len(x0, problem.dim)?;
            s.x = x0.clone();
        }
        if let Some(y0) = &self.y0 {
            check_len(y0, problem.dim)?;
            s.y = y0.clone();
        }
        Ok(s)
    }

    pub fn resolve_eta(&self, problem: &ProblemSpec, schedule: &StepSchedule) -> Result<f64> {
        match self.eta {
            Some(e) => Ok(e),
            None => Ok(derive_constants(&problem.constants, schedule, &DeriveOptions::default())?.eta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub k: u64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub x_hat_sq: f64,
    pub y_hat_sq: f64,
    /// `‖x − x*‖²`
    pub x_err_sq: f64,
    pub v: f64,
    pub alpha_k: f64,
    pub beta_k: f64,
}

impl Record {
    pub fn z(&self) -> f64 {
        self.x_hat_sq + self.y_hat_sq
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub eta: f64,
    pub records: Vec<Record>,
}

impl Trajectory {
    pub fn last(&self) -> &Record {
        self.records.last().expect("trajectory has at least the initial record")
    }

    pub fn ks(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.k).collect()
    }
}

pub fn run(
    problem: &ProblemSpec,
    noise: &NoiseModel,
    schedule: &StepSchedule,
    config: &RunConfig,
) -> Result<Trajectory> {
    config.validate()?;
    let eta = config.resolve_eta(problem, schedule)?;
    let state = config.initial_state(problem)?;
    run_from(problem, noise, schedule, config, eta, state, RngState::from_seed(config.seed))
}

fn run_from(
    problem: &ProblemSpec,
    noise: &NoiseModel,
    schedule: &StepSchedule,
    config: &RunConfig,
    eta: f64,
    mut state: IterateState,
    mut rng: RngState,
) -> Result<Trajectory> {
    let ks = config.recording.ks(config.iterations)?;
    let mut stepper = Stepper::new(problem, noise, schedule)?;
    let mut traj = Trajectory {
        eta,
        records: Vec::with_capacity(ks.len()),
    };
    let threshold = config.divergence_threshold;
    let record = |state: &IterateState, stepper: &mut Stepper, traj: &mut Trajectory| {
        let (xh, yh, xe) = stepper.residuals_sq(state);
        let (a, b) = schedule.step_sizes(state.k);
        let (x, y) = if config.keep_iterates {
            (state.x.clone(), state.y.clone())
        } else {
            (Vec::new(), Vec::new())
        };
        traj.records.push(Record {
            k: state.k,
            x,
            y,
            x_hat_sq: xh,
            y_hat_sq: yh,
            x_err_sq: xe,
            v: yh + eta * (b / a) * xh,
            alpha_k: a,
            beta_k: b,
        });
    };
    if !state.within(threshold) {
        return Err(diverged(state.k, Some(traj)));
    }
    let mut next = ks.iter().peekable();
    while let Some(&&k) = next.peek() {
        if state.k == k {
            record(&state, &mut stepper, &mut traj);
            next.next();
            continue;
        }
        stepper.advance(&mut state, &mut rng);
        if !state.within(threshold) {
            return Err(diverged(state.k, Some(traj)));
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub ks: Vec<u64>,
    pub mean_v: Vec<f64>,
    pub se_v: Vec<f64>,
    pub mean_xhat_sq: Vec<f64>,
    pub se_xhat_sq: Vec<f64>,
    pub mean_yhat_sq: Vec<f64>,
    pub se_yhat_sq: Vec<f64>,
    pub mean_z: Vec<f64>,
    pub se_z: Vec<f64>,
    pub mean_xerr_sq: Vec<f64>,
    pub se_xerr_sq: Vec<f64>,
    pub alpha_k: Vec<f64>,
    pub beta_k: Vec<f64>,
    pub replications: usize,
    pub schedule: StepSchedule,
    pub eta: f64,
}

/// Mean and standard error (sample std / √n) in the given order.
fn mean_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

/// Runs `replications` independent trajectories, replication `i` seeded
/// with `mix64(config.seed, i)`, and averages them record by record.
pub fn monte_carlo(
    problem: &ProblemSpec,
    noise: &NoiseModel,
    schedule: &StepSchedule,
    config: &RunConfig,
    replications: usize,
) -> Result<ReplicationSummary> {
    let trajs = replicate(problem, noise, schedule, config, replications)?;
    Ok(summarize(&trajs, schedule))
}

/// The individual trajectories behind [`monte_carlo`], in replication order.
pub fn replicate(
    problem: &ProblemSpec,
    noise: &NoiseModel,
    schedule: &StepSchedule,
    config: &RunConfig,
    replications: usize,
) -> Result<Vec<Trajectory>> {
    if replications < 2 {
        return Err(Error::Config("replications must be >= 2".into()));
    }
    config.validate()?;
    let eta = config.resolve_eta(problem, schedule)?;
    let start = config.initial_state(problem)?;
    let results: Vec<Result<Trajectory>> = (0..replications)
        .into_par_iter()
        .map(|i| {
            let rng = RngState::child(config.seed, i as u64);
            run_from(problem, noise, schedule, config, eta, start.clone(), rng).map_err(|e| match e {
                Error::Diverged { k, partial, .. } => Error::Diverged {
                    k,
                    replication: Some(i),
                    partial,
                },
                other => other,
            })
        })
        .collect();
    results.into_iter().collect()
}

pub fn summarize(trajs: &[Trajectory], schedule: &StepSchedule) -> ReplicationSummary {
    let n = trajs.len();
    let first = &trajs[0];
    let m = first.records.len();
    let mut s = ReplicationSummary {
        ks: first.ks(),
        mean_v: Vec::with_capacity(m),
        se_v: Vec::with_capacity(m),
        mean_xhat_sq: Vec::with_capacity(m),
        se_xhat_sq: Vec::with_capacity(m),
        mean_yhat_sq: Vec::with_capacity(m),
        se_yhat_sq: Vec::with_capacity(m),
        mean_z: Vec::with_capacity(m),
        se_z: Vec::with_capacity(m),
        mean_xerr_sq: Vec::with_capacity(m),
        se_xerr_sq: Vec::with_capacity(m),
        alpha_k: first.records.iter().map(|r| r.alpha_k).collect(),
        beta_k: first.records.iter().map(|r| r.beta_k).collect(),
        replications: n,
        schedule: *schedule,
        eta: first.eta,
    };
    for j in 0..m {
        let col = |f: fn(&Record) -> f64| mean_se(trajs.iter().map(move |t| f(&t.records[j])), n);
        let push = |(mu, se): (f64, f64), means: &mut Vec<f64>, ses: &mut Vec<f64>| {
            means.push(mu);
            ses.push(se);
        };
        push(col(|r| r.v), &mut s.mean_v, &mut s.se_v);
        push(col(|r| r.x_hat_sq), &mut s.mean_xhat_sq, &mut s.se_xhat_sq);
        push(col(|r| r.y_hat_sq), &mut s.mean_yhat_sq, &mut s.se_yhat_sq);
        push(col(|r| r.z()), &mut s.mean_z, &mut s.se_z);
        push(col(|r| r.x_err_sq), &mut s.mean_xerr_sq, &mut s.se_xerr_sq);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

pub const MIN_FIT_POINTS: usize = 8;

/// Least-squares fit of `ln(value)` on `ln(k + 1)` over the records with
/// `k ∈ [lo·k_max, hi·k_max]`.
pub fn fit_rate(ks: &[u64], values: &[f64], window: (f64, f64)) -> Result<RateFit> {
    if ks.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: ks.len(),
            got: values.len(),
        });
    }
    let (lo, hi) = window;
    if !(0.0 <= lo && lo <= hi) {
        return Err(Error::param("window", "expected 0 <= lo <= hi"));
    }
    let k_max = ks.iter().copied().max().unwrap_or(0) as f64;
    let (k_lo, k_hi) = (lo * k_max, hi * k_max);
    let mut pts = Vec::new();
    for (&k, &v) in ks.iter().zip(values) {
        let kf = k as f64;
        if kf < k_lo || kf > k_hi {
            continue;
        }
        if !(v > 0.0) {
            return Err(Error::InsufficientData(format!("nonpositive value {v} at k = {k}")));
        }
        pts.push(((kf + 1.0).ln(), v.ln()));
    }
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points in window, need at least {MIN_FIT_POINTS}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all ks in window coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        points: pts.len(),
    })
}

/// `‖x̂‖² + ‖ŷ‖²` for a state, a convenience for tests and examples.
pub fn residual_sum(problem: &ProblemSpec, state: &IterateState) -> f64 {
    let h = problem.eval_h(&state.y);
    dist_sq(&state.x, &h) + norm_sq(&crate::linalg::sub(&state.y, &problem.y_star))
}
