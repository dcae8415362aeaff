//! Config-driven experiment runner behind the `ttsa` binary.
//!
//! A TOML document selects the problem, noise, schedule and per-command
//! settings. Unknown keys are rejected. [`ExperimentConfig::resolve`] fills
//! every default so the resolved document can be echoed and re-parsed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{check_lemmas, envelope_check, LemmaOptions};
use crate::error::{Error, Result};
use crate::noise::{build_noise, NoiseModel};
use crate::ode::{integrate, OdeConfig};
use crate::operators::{make_builtin, verify_assumptions, Builtin, ParamValue, Params, ProblemSpec};
use crate::schedules::{
    auto_tune_with_offset, check_conditions, derive_constants, theorem_bound_terms, BoundVariant,
    DeriveOptions, DerivedConstants, EtaVariant, StepSchedule,
};
use crate::solver::{fit_rate, monte_carlo, run, Recording, ReplicationSummary, RunConfig};

pub const SEED_ENV: &str = "TTSA_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Mc,
    Rate,
    Verify,
    Lemmas,
    Envelope,
    Ode,
    Constants,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Run,
        Command::Mc,
        Command::Rate,
        Command::Verify,
        Command::Lemmas,
        Command::Envelope,
        Command::Ode,
        Command::Constants,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Mc => "mc",
            Command::Rate => "rate",
            Command::Verify => "verify",
            Command::Lemmas => "lemmas",
            Command::Envelope => "envelope",
            Command::Ode => "ode",
            Command::Constants => "constants",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    pub params: Params,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// `isotropic`, `matrices` or `zero`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Standard deviation (isotropic) or covariance (matrices).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_xi: Option<ParamValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_psi: Option<ParamValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_cross: Option<ParamValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_cross: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoTuneSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub safety: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_variant: Option<EtaVariant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_variant: Option<BoundVariant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auto_tune: Option<AutoTuneSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_per_decade: Option<u32>,
    /// `offset-ones` (`x* + 1`, `y* + 1`) or `solution`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initializer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub json_path: Option<PathBuf>,
    /// Where to write the resolved config.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmasSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub states: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory_replications: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory_iterations: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSection {
    /// Fractions of the final `k`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    /// `V`, `xhat` or `yhat`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_slope: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_r2: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub noise: NoiseSection,
    pub schedule: ScheduleSection,
    pub run: RunSection,
    pub outputs: OutputSection,
    pub verify: VerifySection,
    pub lemmas: LemmasSection,
    pub ode: OdeSection,
    pub rate: RateSection,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| cfg_err(e.to_string()))
    }

    /// Fills every default. `seed` is the command-line seed, which beats
    /// the config, which beats `env_seed`.
    pub fn resolve(&self, seed: Option<u64>, env_seed: Option<u64>) -> Result<ExperimentConfig> {
        let mut r = self.clone();

        let kind: Builtin = r.problem.name.get_or_insert_with(|| Builtin::NonlinearTanh.to_string()).parse()?;
        let dim = *r.problem.dim.get_or_insert(4);
        let problem = make_builtin(kind, &r.problem.params, dim)?;

        let n = &mut r.noise;
        n.seed = Some(seed.or(n.seed).or(env_seed).unwrap_or(0));
        match n.kind.get_or_insert_with(|| "isotropic".into()).as_str() {
            "isotropic" => {
                n.sigma_xi.get_or_insert(ParamValue::Scalar(0.1));
                n.sigma_psi.get_or_insert(ParamValue::Scalar(0.1));
                n.rho_cross.get_or_insert(0.0);
                if n.sigma_cross.is_some() {
                    return Err(cfg_err("noise.sigma_cross is only valid with kind = \"matrices\""));
                }
            }
            "matrices" => {
                if n.sigma_xi.is_none() || n.sigma_psi.is_none() {
                    return Err(cfg_err("noise kind `matrices` needs sigma_xi and sigma_psi"));
                }
                n.sigma_cross.get_or_insert(ParamValue::Scalar(0.0));
                if n.rho_cross.is_some() {
                    return Err(cfg_err("noise.rho_cross is only valid with kind = \"isotropic\""));
                }
            }
            "zero" => {
                if n.sigma_xi.is_some() || n.sigma_psi.is_some() || n.sigma_cross.is_some() || n.rho_cross.is_some() {
                    return Err(cfg_err("noise kind `zero` takes no covariance keys"));
                }
            }
            other => return Err(cfg_err(format!("unknown noise kind `{other}`"))),
        }

        let s = &mut r.schedule;
        s.offset.get_or_insert(kind.recommended_offset());
        s.eta_variant.get_or_insert(EtaVariant::Theorem);
        s.bound_variant.get_or_insert(BoundVariant::Corrected);
        if s.alpha0.is_some() {
            if s.auto_tune.is_some() {
                return Err(cfg_err("schedule.alpha0 and schedule.auto_tune are exclusive"));
            }
            s.beta0.get_or_insert(1.0 / problem.constants.mu_g);
            s.a.get_or_insert(2.0 / 3.0);
            s.b.get_or_insert(1.0);
        } else {
            if s.beta0.is_some() || s.a.is_some() || s.b.is_some() {
                return Err(cfg_err("schedule.beta0/a/b need an explicit alpha0; use schedule.auto_tune.beta0"));
            }
            let at = s.auto_tune.get_or_insert_with(Default::default);
            at.beta0.get_or_insert(1.0 / problem.constants.mu_g);
            at.safety.get_or_insert(1.0);
        }

        let run = &mut r.run;
        run.iterations.get_or_insert(100_000);
        run.replications.get_or_insert(200);
        if run.record_stride.is_some() && run.record_per_decade.is_some() {
            return Err(cfg_err("run.record_stride and run.record_per_decade are exclusive"));
        }
        if run.record_stride.is_none() {
            run.record_per_decade.get_or_insert(60);
        }
        run.divergence_threshold.get_or_insert(crate::solver::DEFAULT_DIVERGENCE_THRESHOLD);
        if run.x0.is_some() || run.y0.is_some() {
            if run.initializer.is_some() {
                return Err(cfg_err("run.initializer and run.x0/y0 are exclusive"));
            }
        } else {
            match run.initializer.get_or_insert_with(|| "offset-ones".into()).as_str() {
                "offset-ones" | "solution" => {}
                other => return Err(cfg_err(format!("unknown initializer `{other}`"))),
            }
        }

        r.verify.samples.get_or_insert(10_000);
        r.verify.radius.get_or_insert(10.0);

        let defaults = LemmaOptions::default();
        let l = &mut r.lemmas;
        l.states.get_or_insert(defaults.state_count);
        l.radii.get_or_insert(defaults.radii);
        l.ks.get_or_insert(defaults.ks);
        l.draws.get_or_insert(defaults.m);
        l.slack.get_or_insert(defaults.slack);
        l.trajectory_replications.get_or_insert(defaults.trajectory_replications);
        l.trajectory_iterations.get_or_insert(defaults.trajectory_iterations);

        let o = &mut r.ode;
        let eps = *o.epsilon.get_or_insert(0.01);
        let hmax = OdeConfig::new(eps, 1.0, 1.0).max_step(&problem);
        o.h.get_or_insert(1e-3f64.min(hmax));
        o.horizon.get_or_insert(40.0);
        o.stride.get_or_insert(10);

        let rt = &mut r.rate;
        rt.window.get_or_insert([0.01, 1.0]);
        match rt.target.get_or_insert_with(|| "V".into()).as_str() {
            "V" | "xhat" | "yhat" => {}
            other => return Err(cfg_err(format!("unknown rate target `{other}`"))),
        }
        rt.expected_slope.get_or_insert([-0.85, -0.55]);
        rt.min_r2.get_or_insert(0.95);

        Ok(r)
    }
}

/// Objects built from a resolved config.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: ProblemSpec,
    pub noise: NoiseModel,
    pub schedule: StepSchedule,
    pub seed: u64,
}

fn to_matrix(v: &ParamValue, d: usize, name: &str) -> Result<DMatrix<f64>> {
    match v {
        ParamValue::Scalar(s) => Ok(DMatrix::identity(d, d) * *s),
        ParamValue::Vector(x) if x.len() == d => Ok(DMatrix::from_diagonal(&DVector::from_column_slice(x))),
        ParamValue::Matrix(rows) if rows.len() == d && rows.iter().all(|r| r.len() == d) => {
            Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
        }
        _ => Err(cfg_err(format!("noise.{name} must be a scalar, a length-{d} diagonal or a {d}x{d} matrix"))),
    }
}

fn scalar(v: &Option<ParamValue>, name: &str) -> Result<f64> {
    match v {
        Some(ParamValue::Scalar(s)) => Ok(*s),
        _ => Err(cfg_err(format!("noise.{name} must be a scalar for kind = \"isotropic\""))),
    }
}

impl Experiment {
    /// Builds everything from a resolved config.
    pub fn build(config: ExperimentConfig) -> Result<Self> {
        let kind: Builtin = config.problem.name.as_deref().unwrap_or_default().parse()?;
        let d = config.problem.dim.ok_or_else(|| cfg_err("config is not resolved"))?;
        let problem = make_builtin(kind, &config.problem.params, d)?;
        let n = &config.noise;
        let noise = match n.kind.as_deref() {
            Some("isotropic") => NoiseModel::isotropic(
                d,
                scalar(&n.sigma_xi, "sigma_xi")?,
                scalar(&n.sigma_psi, "sigma_psi")?,
                n.rho_cross.unwrap_or(0.0),
            )?,
            Some("matrices") => build_noise(
                to_matrix(n.sigma_xi.as_ref().unwrap(), d, "sigma_xi")?,
                to_matrix(n.sigma_psi.as_ref().unwrap(), d, "sigma_psi")?,
                to_matrix(n.sigma_cross.as_ref().unwrap(), d, "sigma_cross")?,
            )?,
            _ => NoiseModel::zero(d),
        };
        let s = &config.schedule;
        let offset = s.offset.unwrap_or(1);
        let schedule = match (&s.auto_tune, s.alpha0) {
            (Some(at), _) => auto_tune_with_offset(
                &problem.constants,
                at.beta0.unwrap_or(1.0 / problem.constants.mu_g),
                at.safety.unwrap_or(1.0),
                offset,
            )?,
            (None, Some(a0)) => StepSchedule::new(
                a0,
                s.beta0.unwrap_or(1.0 / problem.constants.mu_g),
                s.a.unwrap_or(2.0 / 3.0),
                s.b.unwrap_or(1.0),
                offset,
            )?,
            (None, None) => return Err(cfg_err("config is not resolved")),
        };
        let seed = n.seed.unwrap_or(0);
        Ok(Self {
            config,
            problem,
            noise,
            schedule,
            seed,
        })
    }

    pub fn derive_options(&self) -> Result<DeriveOptions> {
        let start = self.run_config()?.initial_state(&self.problem)?;
        let r = crate::operators::residuals(&self.problem, &start.x, &start.y)?;
        Ok(DeriveOptions {
            eta_x: self.config.schedule.eta_x,
            eta_variant: self.config.schedule.eta_variant.unwrap_or_default(),
            gammas: self.noise.gammas(),
            initial_z: r.x_hat_sq() + r.y_hat_sq(),
        })
    }

    pub fn derived(&self) -> Result<DerivedConstants> {
        derive_constants(&self.problem.constants, &self.schedule, &self.derive_options()?)
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let r = &self.config.run;
        let mut rc = RunConfig::new(r.iterations.unwrap_or(1), self.seed);
        rc.recording = match (r.record_stride, r.record_per_decade) {
            (Some(s), _) => Recording::Stride(s),
            (None, Some(n)) => Recording::LogSpaced(n),
            (None, None) => Recording::default(),
        };
        rc.divergence_threshold = r.divergence_threshold.unwrap_or(crate::solver::DEFAULT_DIVERGENCE_THRESHOLD);
        rc.x0 = r.x0.clone();
        rc.y0 = r.y0.clone();
        if r.initializer.as_deref() == Some("solution") {
            rc.x0 = Some(self.problem.x_star.clone());
            rc.y0 = Some(self.problem.y_star.clone());
        }
        Ok(rc)
    }

    fn run_config_with_eta(&self, dc: &DerivedConstants) -> Result<RunConfig> {
        let mut rc = self.run_config()?;
        rc.eta = Some(dc.eta);
        Ok(rc)
    }

    fn bound_variant(&self) -> BoundVariant {
        self.config.schedule.bound_variant.unwrap_or_default()
    }

    fn lemma_options(&self) -> LemmaOptions {
        let l = &self.config.lemmas;
        let d = LemmaOptions::default();
        LemmaOptions {
            state_count: l.states.unwrap_or(d.state_count),
            radii: l.radii.clone().unwrap_or(d.radii),
            ks: l.ks.clone().unwrap_or(d.ks),
            m: l.draws.unwrap_or(d.m),
            seed: self.seed,
            slack: l.slack.unwrap_or(d.slack),
            constants: None,
            eta_x: self.config.schedule.eta_x,
            trajectory_replications: l.trajectory_replications.unwrap_or(d.trajectory_replications),
            trajectory_iterations: l.trajectory_iterations.unwrap_or(d.trajectory_iterations),
        }
    }
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub csv: Option<String>,
    pub json: Option<serde_json::Value>,
    pub pass: bool,
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_table(header: &[&str], rows: impl Iterator<Item = Vec<f64>>, first_is_int: bool) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            if i == 0 && first_is_int {
                let _ = write!(out, "{}", *v as u64);
            } else {
                out.push_str(&num(*v));
            }
        }
        out.push('\n');
    }
    out
}

/// `(literal, corrected)` bound on `E[V]` at each record.
fn bound_columns(exp: &Experiment, summary: &ReplicationSummary, dc: &DerivedConstants) -> (Vec<f64>, Vec<f64>) {
    let v0 = summary.mean_v[0];
    let g = exp.noise.gammas();
    let pc = &exp.problem.constants;
    let at = |k: u64, v| {
        if k == 0 {
            v0
        } else {
            theorem_bound_terms(k - 1, dc, pc, &g, v0, v).total()
        }
    };
    summary
        .ks
        .iter()
        .map(|&k| (at(k, BoundVariant::Literal), at(k, BoundVariant::Corrected)))
        .unzip()
}

pub fn mc_csv(exp: &Experiment, summary: &ReplicationSummary, dc: &DerivedConstants) -> String {
    let (lit, cor) = bound_columns(exp, summary, dc);
    let header = [
        "k", "mean_V", "se_V", "mean_xhat_sq", "se_xhat_sq", "mean_yhat_sq", "se_yhat_sq", "alpha_k",
        "beta_k", "bound_literal", "bound_corrected",
    ];
    let rows = (0..summary.ks.len()).map(|i| {
        vec![
            summary.ks[i] as f64,
            summary.mean_v[i],
            summary.se_v[i],
            summary.mean_xhat_sq[i],
            summary.se_xhat_sq[i],
            summary.mean_yhat_sq[i],
            summary.se_yhat_sq[i],
            summary.alpha_k[i],
            summary.beta_k[i],
            lit[i],
            cor[i],
        ]
    });
    csv_table(&header, rows, true)
}

fn with_config(exp: &Experiment, mut v: serde_json::Value) -> serde_json::Value {
    if let Some(obj) = v.as_object_mut() {
        obj.insert("config".into(), serde_json::to_value(&exp.config).unwrap_or_default());
    }
    v
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report types serialize")
}

/// Runs one command on a resolved config. Writes nothing.
pub fn execute(command: Command, config: &ExperimentConfig) -> Result<Artifacts> {
    let exp = Experiment::build(config.clone())?;
    let dc = exp.derived()?;
    match command {
        Command::Run => {
            let t = run(&exp.problem, &exp.noise, &exp.schedule, &exp.run_config_with_eta(&dc)?)?;
            let rows = t.records.iter().map(|r| vec![r.k as f64, r.x_hat_sq, r.y_hat_sq, r.v, r.alpha_k, r.beta_k]);
            Ok(Artifacts {
                csv: Some(csv_table(&["k", "x_hat_sq", "y_hat_sq", "V", "alpha_k", "beta_k"], rows, true)),
                json: None,
                pass: true,
            })
        }
        Command::Mc => {
            let summary = mc(&exp, &dc)?;
            Ok(Artifacts {
                csv: Some(mc_csv(&exp, &summary, &dc)),
                json: None,
                pass: true,
            })
        }
        Command::Rate => {
            let summary = mc(&exp, &dc)?;
            let rt = &exp.config.rate;
            let [lo, hi] = rt.window.unwrap_or([0.01, 1.0]);
            let target = rt.target.clone().unwrap_or_else(|| "V".into());
            let series = |t: &str| match t {
                "xhat" => &summary.mean_xhat_sq,
                "yhat" => &summary.mean_yhat_sq,
                _ => &summary.mean_v,
            };
            let fit = fit_rate(&summary.ks, series(&target), (lo, hi))?;
            let [smin, smax] = rt.expected_slope.unwrap_or([-0.85, -0.55]);
            let min_r2 = rt.min_r2.unwrap_or(0.95);
            let pass = fit.slope >= smin && fit.slope <= smax && fit.r2 >= min_r2;
            let mut others = serde_json::Map::new();
            for t in ["V", "xhat", "yhat"] {
                if t != target {
                    others.insert(t.into(), to_json(&fit_rate(&summary.ks, series(t), (lo, hi))?));
                }
            }
            let v = json!({
                "target": target,
                "window": [lo, hi],
                "fit": fit,
                "expected_slope": [smin, smax],
                "min_r2": min_r2,
                "other_fits": others,
                "replications": summary.replications,
                "schedule": exp.schedule,
                "pass": pass,
            });
            Ok(Artifacts {
                csv: None,
                json: Some(with_config(&exp, v)),
                pass,
            })
        }
        Command::Verify => {
            let v = &exp.config.verify;
            let rep = verify_assumptions(&exp.problem, v.samples.unwrap_or(10_000), v.radius.unwrap_or(10.0), exp.seed)?;
            let feas = check_conditions(&exp.problem.constants, &exp.schedule, &dc);
            let pass = rep.pass && feas.pass;
            let v = json!({ "assumptions": rep, "feasibility": feas, "schedule": exp.schedule, "pass": pass });
            Ok(Artifacts {
                csv: None,
                json: Some(with_config(&exp, v)),
                pass,
            })
        }
        Command::Lemmas => {
            let rep = check_lemmas(&exp.problem, &exp.noise, &exp.schedule, &exp.lemma_options())?;
            let pass = rep.pass;
            let mut v = to_json(&rep);
            v["schedule"] = to_json(&exp.schedule);
            Ok(Artifacts {
                csv: None,
                json: Some(with_config(&exp, v)),
                pass,
            })
        }
        Command::Envelope => {
            let summary = mc(&exp, &dc)?;
            let v0 = summary.mean_v[0];
            let rep = envelope_check(&summary, &dc, &exp.problem.constants, &exp.noise.gammas(), v0, exp.bound_variant())?;
            let pass = rep.pass;
            let mut v = to_json(&rep);
            v["ln_c"] = json!(dc.ln_c);
            v["schedule"] = to_json(&exp.schedule);
            Ok(Artifacts {
                csv: None,
                json: Some(with_config(&exp, v)),
                pass,
            })
        }
        Command::Ode => {
            let o = &exp.config.ode;
            let mut cfg = OdeConfig::new(o.epsilon.unwrap_or(0.01), o.h.unwrap_or(1e-3), o.horizon.unwrap_or(40.0));
            cfg.stride = o.stride.unwrap_or(10);
            let rc = exp.run_config()?;
            cfg.x0 = rc.x0;
            cfg.y0 = rc.y0;
            let t = integrate(&exp.problem, &cfg)?;
            let rows = (0..t.times.len()).map(|i| vec![t.times[i], t.fast_residual[i], t.slow_error[i]]);
            Ok(Artifacts {
                csv: Some(csv_table(&["t", "fast_residual", "slow_error"], rows, false)),
                json: None,
                pass: true,
            })
        }
        Command::Constants => {
            let feas = check_conditions(&exp.problem.constants, &exp.schedule, &dc);
            let v = json!({
                "problem_constants": exp.problem.constants,
                "schedule": exp.schedule,
                "derived": dc,
                "feasibility": feas,
            });
            Ok(Artifacts {
                csv: None,
                json: Some(with_config(&exp, v)),
                pass: true,
            })
        }
    }
}

fn mc(exp: &Experiment, dc: &DerivedConstants) -> Result<ReplicationSummary> {
    let mut rc = exp.run_config_with_eta(dc)?;
    rc.keep_iterates = false;
    monte_carlo(&exp.problem, &exp.noise, &exp.schedule, &rc, exp.config.run.replications.unwrap_or(200))
}

/// Process exit code for a command outcome.
pub fn exit_code(result: &Result<Artifacts>) -> i32 {
    match result {
        Ok(a) if a.pass => 0,
        Ok(_) => 1,
        Err(Error::Diverged { .. }) => 3,
        Err(_) => 2,
    }
}

pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| cfg_err(format!("{SEED_ENV} is not an unsigned integer: `{s}`"))),
        Err(_) => Ok(None),
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(Error::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Everything the binary does after argument parsing.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub csv_path: Option<PathBuf>,
    pub json_path: Option<PathBuf>,
    pub print_config: bool,
}

pub fn main_with(command: Command, inv: &Invocation) -> i32 {
    let resolved = (|| {
        let raw = match &inv.config_path {
            Some(p) => ExperimentConfig::from_path(p)?,
            None => ExperimentConfig::default(),
        };
        let mut r = raw.resolve(inv.seed, seed_from_env()?)?;
        if inv.csv_path.is_some() {
            r.outputs.csv_path = inv.csv_path.clone();
        }
        if inv.json_path.is_some() {
            r.outputs.json_path = inv.json_path.clone();
        }
        Ok::<_, Error>(r)
    })();
    let resolved = match resolved {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if inv.print_config {
        return match resolved.to_toml_string() {
            Ok(s) => {
                print!("{s}");
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                2
            }
        };
    }
    if let Some(p) = &resolved.outputs.config_path {
        if let Err(e) = resolved.to_toml_string().and_then(|s| std::fs::write(p, s).map_err(Error::from)) {
            eprintln!("error: {e}");
            return 2;
        }
    }
    let result = execute(command, &resolved);
    let code = exit_code(&result);
    match &result {
        Ok(a) => {
            let out = &resolved.outputs;
            let written = (|| {
                if let Some(csv) = &a.csv {
                    write_or_print(out.csv_path.as_deref(), csv)?;
                }
                if let Some(j) = &a.json {
                    let mut s = serde_json::to_string_pretty(j).expect("json values serialize");
                    s.push('\n');
                    write_or_print(out.json_path.as_deref(), &s)?;
                }
                Ok::<_, Error>(())
            })();
            if let Err(e) = written {
                eprintln!("error: {e}");
                return 2;
            }
            if !a.pass {
                eprintln!("{}: report did not pass", command.as_str());
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    code
}
