//! Measured mean V against the closed-form rate bound, in log space.

use ttsa::analysis::envelope_check;
use ttsa::noise::NoiseModel;
use ttsa::operators::{make_builtin, Builtin, Params};
use ttsa::schedules::{auto_tune, derive_constants, BoundVariant, DeriveOptions};
use ttsa::solver::{monte_carlo, RunConfig};

fn main() -> ttsa::Result<()> {
    let problem = make_builtin(Builtin::LinearCoupled, &Params::new(), 2)?;
    let pc = problem.constants;
    let schedule = auto_tune(&pc, 1.0 / pc.mu_g, 1.0)?;
    let noise = NoiseModel::isotropic(2, 0.1, 0.1, 0.0)?;

    let mut cfg = RunConfig::new(20_000, 3);
    let start = cfg.initial_state(&problem)?;
    let r = ttsa::residuals(&problem, &start.x, &start.y)?;
    let opts = DeriveOptions {
        gammas: noise.gammas(),
        initial_z: r.x_hat_sq() + r.y_hat_sq(),
        ..Default::default()
    };
    let dc = derive_constants(&pc, &schedule, &opts)?;
    cfg.eta = Some(dc.eta);
    let mc = monte_carlo(&problem, &noise, &schedule, &cfg, 32)?;

    let rep = envelope_check(&mc, &dc, &pc, &noise.gammas(), mc.mean_v[0], BoundVariant::Corrected)?;
    println!("{:>8} {:>12} {:>14}", "k", "mean V", "ln bound");
    for i in 0..rep.ks.len() {
        println!("{:>8} {:>12.4e} {:>14.4e}", rep.ks[i], rep.measured[i], rep.ln_bound_corrected[i]);
    }
    println!("envelope holds: {}", rep.pass);
    Ok(())
}
