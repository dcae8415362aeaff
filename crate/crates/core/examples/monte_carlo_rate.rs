//! Replicated runs and a log-log fit of the mean Lyapunov value.

use ttsa::noise::NoiseModel;
use ttsa::operators::{make_builtin, Builtin, Params};
use ttsa::schedules::auto_tune;
use ttsa::solver::{fit_rate, monte_carlo, RunConfig};

fn main() -> ttsa::Result<()> {
    let problem = make_builtin(Builtin::LinearCoupled, &Params::new(), 3)?;
    let pc = problem.constants;
    let schedule = auto_tune(&pc, 1.0 / pc.mu_g, 1.0)?;
    let noise = NoiseModel::isotropic(3, 0.1, 0.1, 0.0)?;

    let mut cfg = RunConfig::new(100_000, 1);
    cfg.keep_iterates = false;
    let mc = monte_carlo(&problem, &noise, &schedule, &cfg, 64)?;

    for (label, series) in [("V", &mc.mean_v), ("|xhat|^2", &mc.mean_xhat_sq), ("|yhat|^2", &mc.mean_yhat_sq)] {
        let fit = fit_rate(&mc.ks, series, (0.01, 1.0))?;
        println!("{label:>9}: slope {:+.3}  r2 {:.4}  ({} points)", fit.slope, fit.r2, fit.points);
    }
    Ok(())
}
