//! Plugging a user-defined operator pair into the solver.

use std::sync::Arc;

use ttsa::noise::NoiseModel;
use ttsa::operators::{verify_assumptions, CoupledOperator};
use ttsa::schedules::auto_tune;
use ttsa::solver::{run, RunConfig};
use ttsa::{ProblemConstants, ProblemSpec};

/// `F = 1.5(x − y/10)`, `G = 6(y − 2) + (x − y/10)/2`, so `H(y) = y/10`.
#[derive(Debug)]
struct Scalarish;

impl CoupledOperator for Scalarish {
    fn fast(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for i in 0..out.len() {
            out[i] = 1.5 * (x[i] - 0.1 * y[i]);
        }
    }
    fn slow(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for i in 0..out.len() {
            out[i] = 6.0 * (y[i] - 2.0) + 0.5 * (x[i] - 0.1 * y[i]);
        }
    }
    fn equilibrium(&self, y: &[f64], out: &mut [f64]) {
        for i in 0..out.len() {
            out[i] = 0.1 * y[i];
        }
    }
}

fn main() -> ttsa::Result<()> {
    let dim = 3;
    // L_G = max(0.5, 6 + 0.5·0.1)
    let pc = ProblemConstants::new(1.5, 6.05, 0.1, 1.5, 6.0)?;
    let problem = ProblemSpec::new("custom", Arc::new(Scalarish), vec![0.2; dim], vec![2.0; dim], pc)?;
    println!("assumptions hold: {}", verify_assumptions(&problem, 2_000, 5.0, 0)?.pass);

    let schedule = auto_tune(&pc, 1.0 / pc.mu_g, 1.0)?;
    let noise = NoiseModel::isotropic(dim, 0.1, 0.1, 0.0)?;
    let traj = run(&problem, &noise, &schedule, &RunConfig::new(50_000, 5))?;
    let last = traj.records.last().unwrap();
    println!("k = {}: |xhat|^2 = {:.3e}, |yhat|^2 = {:.3e}", last.k, last.x_hat_sq, last.y_hat_sq);
    Ok(())
}
