//! Empirical checks of the one-step expectation bounds, the uniform bound
//! `C` on `E[‖x̂_k‖² + ‖ŷ_k‖²]`, and the rate envelope.
//!
//! Every comparison uses a one-sided statistical slack: an estimated mean
//! passes when `mean ≤ rhs + slack·se`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dist_sq;
use crate::noise::{mix64, Gammas, NoiseModel, RngState};
use crate::operators::{check_len, ProblemConstants, ProblemSpec};
use crate::schedules::{
    check_conditions, derive_constants, theorem_bound_terms, BoundVariant, DeriveOptions,
    DerivedConstants, StepSchedule,
};
use crate::solver::{replicate, summarize, IterateState, Recording, ReplicationSummary, RunConfig};

pub const MIN_ONESTEP_DRAWS: usize = 1000;
pub const DEFAULT_SLACK: f64 = 3.0;

/// Conditional means of the next-step residuals given a fixed state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneStepEstimate {
    pub mean_xhat_sq_next: f64,
    pub se_xhat_sq_next: f64,
    pub mean_yhat_sq_next: f64,
    pub se_yhat_sq_next: f64,
    pub mean_z_next: f64,
    pub se_z_next: f64,
    pub draws: usize,
}

#[derive(Default)]
struct Moments {
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn mean_se(&self, n: usize) -> (f64, f64) {
        let nf = n as f64;
        let mean = self.sum / nf;
        let var = ((self.sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
        (mean, (var / nf).sqrt())
    }
}

/// `M` independent single steps from `state` (at its own `k`).
pub fn empirical_onestep(
    problem: &ProblemSpec,
    noise: &NoiseModel,
    schedule: &StepSchedule,
    state: &IterateState,
    m: usize,
    seed: u64,
) -> Result<OneStepEstimate> {
    if m < MIN_ONESTEP_DRAWS {
        return Err(Error::param("M", format!("must be >= {MIN_ONESTEP_DRAWS}")));
    }
    check_len(&state.x, problem.dim)?;
    check_len(&state.y, problem.dim)?;
    let d = problem.dim;
    let op = problem.operator();
    let (mut f, mut g) = (vec![0.0; d], vec![0.0; d]);
    op.fast(&state.x, &state.y, &mut f);
    op.slow(&state.x, &state.y, &mut g);
    let (a, b) = schedule.step_sizes(state.k);
    let mut rng = RngState::from_seed(seed);
    let (mut z, mut xi, mut psi) = (vec![0.0; 2 * d], vec![0.0; d], vec![0.0; d]);
    let (mut x1, mut y1, mut h) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let (mut mx, mut my, mut mz) = (Moments::default(), Moments::default(), Moments::default());

    if noise.is_zero() {
        // every draw is identical
        for i in 0..d {
            x1[i] = state.x[i] - a * f[i];
            y1[i] = state.y[i] - b * g[i];
        }
        op.equilibrium(&y1, &mut h);
        let xs = dist_sq(&x1, &h);
        let ys = dist_sq(&y1, &problem.y_star);
        return Ok(OneStepEstimate {
            mean_xhat_sq_next: xs,
            se_xhat_sq_next: 0.0,
            mean_yhat_sq_next: ys,
            se_yhat_sq_next: 0.0,
            mean_z_next: xs + ys,
            se_z_next: 0.0,
            draws: m,
        });
    }

    for _ in 0..m {
        noise.sample_into(&mut rng, &mut z, &mut xi, &mut psi);
        for i in 0..d {
            x1[i] = state.x[i] - a * (f[i] + xi[i]);
            y1[i] = state.y[i] - b * (g[i] + psi[i]);
        }
        if x1.iter().chain(&y1).any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                k: state.k + 1,
                replication: None,
                partial: None,
            });
        }
        op.equilibrium(&y1, &mut h);
        let xs = dist_sq(&x1, &h);
        let ys = dist_sq(&y1, &problem.y_star);
        mx.push(xs);
        my.push(ys);
        mz.push(xs + ys);
    }
    let (mxv, sx) = mx.mean_se(m);
    let (myv, sy) = my.mean_se(m);
    let (mzv, sz) = mz.mean_se(m);
    Ok(OneStepEstimate {
        mean_xhat_sq_next: mxv,
        se_xhat_sq_next: sx,
        mean_yhat_sq_next: myv,
        se_yhat_sq_next: sy,
        mean_z_next: mzv,
        se_z_next: sz,
        draws: m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LemmaId {
    /// Fast residual one-step bound.
    #[serde(rename = "1")]
    FastResidual,
    /// Slow residual one-step bound.
    #[serde(rename = "2")]
    SlowResidual,
    /// Combined one-step bound on `z = ‖x̂‖² + ‖ŷ‖²`.
    #[serde(rename = "3a")]
    Combined,
    /// Uniform bound `E[z_k] ≤ C`.
    #[serde(rename = "3b")]
    Uniform,
}

impl LemmaId {
    pub fn as_str(&self) -> &'static str {
        match self {
            LemmaId::FastResidual => "1",
            LemmaId::SlowResidual => "2",
            LemmaId::Combined => "3a",
            LemmaId::Uniform => "3b",
        }
    }
}

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LemmaId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(LemmaId::FastResidual),
            "2" => Ok(LemmaId::SlowResidual),
            "3a" => Ok(LemmaId::Combined),
            "3b" => Ok(LemmaId::Uniform),
            _ => Err(Error::param("lemma_id", format!("unknown lemma `{s}`"))),
        }
    }
}

/// The current-state quantities a right-hand side depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateQuantities {
    pub xhat_sq: f64,
    pub yhat_sq: f64,
}

impl StateQuantities {
    pub fn z(&self) -> f64 {
        self.xhat_sq + self.yhat_sq
    }

    pub fn of(problem: &ProblemSpec, state: &IterateState) -> Self {
        let h = problem.eval_h(&state.y);
        Self {
            xhat_sq: dist_sq(&state.x, &h),
            yhat_sq: dist_sq(&state.y, &problem.y_star),
        }
    }
}

/// Right-hand side of the selected bound, term by term as displayed.
/// For [`LemmaId::Uniform`] this is the constant `C`, which may be `+∞`.
pub fn lemma_rhs(
    id: LemmaId,
    q: StateQuantities,
    k: u64,
    schedule: &StepSchedule,
    dc: &DerivedConstants,
    pc: &ProblemConstants,
    gammas: &Gammas,
) -> f64 {
    let (a, b) = schedule.step_sizes(k);
    let (lh, lg) = (pc.l_h, pc.l_g);
    let (l1, l2, ex) = (dc.l1, dc.l2, dc.eta_x);
    let (g11, g22) = (gammas.g11, gammas.g22);
    let (xs, ys) = (q.xhat_sq, q.yhat_sq);
    match id {
        LemmaId::FastResidual => {
            (1.0 - 2.0 * pc.mu_f * a) * xs
                + g22 * b * b
                + g11 * a * a
                + (l1 * g22 / ex) * b * b / a
                + 2.0 * lh * lh * lg * lg * (lh + 1.0).powi(2) * b * b * ys
                + lh * lh * (2.0 * lg * lg + 1.0) * a * a * xs
                + l1 * (lh + 1.0).powi(2) * b * b / (ex * a) * ys
                + 2.0 * l1 * (b + ex * a) * xs
        }
        LemmaId::SlowResidual => {
            (1.0 - pc.mu_g * b) * ys
                + g22 * b * b
                + (l2 * l2 / pc.mu_g) * b * xs
                + lg * lg * (1.0 + 2.0 * lh * lh) * b * b * (xs + ys)
        }
        LemmaId::Combined => {
            (1.0 - dc.mu * b + 4.0 * lg * lg * (lh + 1.0).powi(4) * a * a) * q.z()
                + 2.0 * b * b * g22
                + a * a * g11
                + (l1 / ex) * (b * b / a) * g22
        }
        LemmaId::Uniform => dc.c,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub lemma: LemmaId,
    pub state_id: usize,
    pub k: u64,
    pub lhs_mean: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub checks: Vec<LemmaCheck>,
    pub slack: f64,
    pub pass: bool,
}

impl LemmaReport {
    pub fn failures(&self) -> impl Iterator<Item = &LemmaCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn count(&self, lemma: LemmaId) -> (usize, usize) {
        let of = self.checks.iter().filter(|c| c.lemma == lemma);
        (of.clone().filter(|c| c.pass).count(), of.count())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaOptions {
    pub state_count: usize,
    pub radii: Vec<f64>,
    pub ks: Vec<u64>,
    pub m: usize,
    pub seed: u64,
    pub slack: f64,
    /// Use these constants on the right-hand sides instead of the
    /// problem's declared ones.
    pub constants: Option<ProblemConstants>,
    pub eta_x: Option<f64>,
    /// Replications behind the uniform-bound check; 0 skips it.
    pub trajectory_replications: usize,
    pub trajectory_iterations: u64,
}

impl Default for LemmaOptions {
    fn default() -> Self {
        Self {
            state_count: 20,
            radii: vec![0.1, 1.0, 10.0],
            ks: vec![0, 10, 100, 1_000, 10_000],
            m: 100_000,
            seed: 0,
            slack: DEFAULT_SLACK,
            constants: None,
            eta_x: None,
            trajectory_replications: 20,
            trajectory_iterations: 10_000,
        }
    }
}

/// `count` states at exact distance `radii[i % radii.len()]` from the
/// solution, directions uniform on the sphere in `R^{2d}`.
pub fn lemma_states(problem: &ProblemSpec, count: usize, radii: &[f64], seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let d = problem.dim;
    let mut rng = RngState::from_seed(seed);
    (0..count)
        .map(|i| {
            let r = radii[i % radii.len()];
            let u = rng.standard_normal_vec(2 * d);
            let n = crate::linalg::norm(&u);
            let x = (0..d).map(|j| problem.x_star[j] + r * u[j] / n).collect();
            let y = (0..d).map(|j| problem.y_star[j] + r * u[d + j] / n).collect();
            (x, y)
        })
        .collect()
}

/// Derived constants for the lemma checks, failing when the schedule does
/// not satisfy the step-size conditions.
pub fn feasible_constants(
    pc: &ProblemConstants,
    schedule: &StepSchedule,
    opts: &DeriveOptions,
) -> Result<DerivedConstants> {
    let dc = derive_constants(pc, schedule, opts)?;
    let rep = check_conditions(pc, schedule, &dc);
    if !rep.pass {
        let names: Vec<&str> = rep.failing().map(|c| c.name.as_str()).collect();
        return Err(Error::Infeasible(format!("schedule violates {}", names.join(", "))));
    }
    Ok(dc)
}

pub fn check_lemmas(
    problem: &ProblemSpec,
    noise: &NoiseModel,
    schedule: &StepSchedule,
    opts: &LemmaOptions,
) -> Result<LemmaReport> {
    if opts.radii.is_empty() || opts.radii.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::param("radii", "need at least one nonnegative radius"));
    }
    let states = lemma_states(problem, opts.state_count, &opts.radii, opts.seed);
    check_lemmas_at(problem, noise, schedule, &states, opts)
}

/// As [`check_lemmas`] on caller-supplied `(x, y)` states.
pub fn check_lemmas_at(
    problem: &ProblemSpec,
    noise: &NoiseModel,
    schedule: &StepSchedule,
    states: &[(Vec<f64>, Vec<f64>)],
    opts: &LemmaOptions,
) -> Result<LemmaReport> {
    let pc = opts.constants.unwrap_or(problem.constants);
    let gammas = noise.gammas();
    let start = RunConfig::new(1, 0).initial_state(problem)?;
    let z0 = StateQuantities::of(problem, &start).z();
    let dc = feasible_constants(
        &pc,
        schedule,
        &DeriveOptions {
            eta_x: opts.eta_x,
            gammas,
            initial_z: z0,
            ..Default::default()
        },
    )?;

    let jobs: Vec<(usize, usize)> = (0..states.len())
        .flat_map(|s| (0..opts.ks.len()).map(move |j| (s, j)))
        .collect();
    let per_job: Vec<Result<Vec<LemmaCheck>>> = jobs
        .par_iter()
        .map(|&(s, j)| {
            let k = opts.ks[j];
            let (x, y) = &states[s];
            let state = IterateState::new(k, x.clone(), y.clone());
            let est = empirical_onestep(problem, noise, schedule, &state, opts.m, mix64(opts.seed, (s * opts.ks.len() + j) as u64))?;
            let q = StateQuantities::of(problem, &state);
            let mk = |lemma, mean: f64, se: f64| {
                let rhs = lemma_rhs(lemma, q, k, schedule, &dc, &pc, &gammas);
                LemmaCheck {
                    lemma,
                    state_id: s,
                    k,
                    lhs_mean: mean,
                    lhs_se: se,
                    rhs,
                    pass: mean <= rhs + opts.slack * se,
                }
            };
            Ok(vec![
                mk(LemmaId::FastResidual, est.mean_xhat_sq_next, est.se_xhat_sq_next),
                mk(LemmaId::SlowResidual, est.mean_yhat_sq_next, est.se_yhat_sq_next),
                mk(LemmaId::Combined, est.mean_z_next, est.se_z_next),
            ])
        })
        .collect();
    let mut checks = Vec::with_capacity(jobs.len() * 3 + 1);
    for r in per_job {
        checks.extend(r?);
    }

    if opts.trajectory_replications >= 2 {
        let mut cfg = RunConfig::new(opts.trajectory_iterations, mix64(opts.seed, u64::MAX));
        cfg.keep_iterates = false;
        cfg.recording = Recording::LogSpaced(20);
        cfg.eta = Some(dc.eta);
        let trajs = replicate(problem, noise, schedule, &cfg, opts.trajectory_replications)?;
        let summary = summarize(&trajs, schedule);
        let c = lemma_rhs(LemmaId::Uniform, StateQuantities { xhat_sq: 0.0, yhat_sq: 0.0 }, 0, schedule, &dc, &pc, &gammas);
        for (i, &k) in summary.ks.iter().enumerate() {
            let (mean, se) = (summary.mean_z[i], summary.se_z[i]);
            checks.push(LemmaCheck {
                lemma: LemmaId::Uniform,
                state_id: 0,
                k,
                lhs_mean: mean,
                lhs_se: se,
                rhs: c,
                pass: mean <= c + opts.slack * se,
            });
        }
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(LemmaReport {
        checks,
        slack: opts.slack,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub ks: Vec<u64>,
    pub measured: Vec<f64>,
    pub se: Vec<f64>,
    /// Natural logs of the bounds; the bounds themselves usually overflow.
    pub ln_bound_literal: Vec<f64>,
    pub ln_bound_corrected: Vec<f64>,
    /// `ln(bound) − ln(measured + slack·se)`
    pub ln_margin: Vec<f64>,
    pub variant: BoundVariant,
    pub pass: bool,
}

/// Compares the measured `mean_V` with the rate bound. The bound at index
/// `k` covers `E[V_{k+1}]`, so record `k ≥ 1` is checked against the bound
/// evaluated at `k − 1`; record 0 is checked against `V0`.
pub fn envelope_check(
    summary: &ReplicationSummary,
    dc: &DerivedConstants,
    pc: &ProblemConstants,
    gammas: &Gammas,
    v0: f64,
    variant: BoundVariant,
) -> Result<EnvelopeReport> {
    let s = &summary.schedule;
    if !s.is_theorem_form() {
        return Err(Error::ScheduleMismatch(format!(
            "envelope needs a = 2/3, b = 1; got a = {}, b = {}",
            s.a, s.b
        )));
    }
    if ((s.beta0 * pc.mu_g) - 1.0).abs() > 1e-9 {
        return Err(Error::ScheduleMismatch(format!(
            "envelope needs beta0 = 1/mu_G = {}; got {}",
            1.0 / pc.mu_g,
            s.beta0
        )));
    }
    if (dc.alpha0 - s.alpha0).abs() > 1e-12 * s.alpha0 || (dc.beta0 - s.beta0).abs() > 1e-12 * s.beta0 {
        return Err(Error::ScheduleMismatch("derived constants belong to a different schedule".into()));
    }
    let n = summary.ks.len();
    let mut rep = EnvelopeReport {
        ks: summary.ks.clone(),
        measured: summary.mean_v.clone(),
        se: summary.se_v.clone(),
        ln_bound_literal: Vec::with_capacity(n),
        ln_bound_corrected: Vec::with_capacity(n),
        ln_margin: Vec::with_capacity(n),
        variant,
        pass: true,
    };
    for i in 0..n {
        let k = summary.ks[i];
        let (lit, cor) = if k == 0 {
            (v0.ln(), v0.ln())
        } else {
            let t = |v| theorem_bound_terms(k - 1, dc, pc, gammas, v0, v).ln_total();
            (t(BoundVariant::Literal), t(BoundVariant::Corrected))
        };
        let chosen = match variant {
            BoundVariant::Literal => lit,
            BoundVariant::Corrected => cor,
        };
        let upper = summary.mean_v[i] + DEFAULT_SLACK * summary.se_v[i];
        let margin = if upper > 0.0 { chosen - upper.ln() } else { f64::INFINITY };
        let ok = if k == 0 { summary.mean_v[i] <= v0 * (1.0 + 1e-12) } else { margin >= 0.0 };
        rep.pass &= ok;
        rep.ln_bound_literal.push(lit);
        rep.ln_bound_corrected.push(cor);
        rep.ln_margin.push(margin);
    }
    Ok(rep)
}
