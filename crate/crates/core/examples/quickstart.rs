//! Single noisy run on the tanh-coupled problem.

use ttsa::noise::NoiseModel;
use ttsa::operators::{make_builtin, Builtin, Params};
use ttsa::schedules::auto_tune;
use ttsa::solver::{run, RunConfig};

fn main() -> ttsa::Result<()> {
    let problem = make_builtin(Builtin::NonlinearTanh, &Params::new(), 4)?;
    let pc = problem.constants;
    let schedule = auto_tune(&pc, 1.0 / pc.mu_g, 1.0)?;
    println!("alpha0 = {:.4}, beta0 = {:.4}", schedule.alpha0, schedule.beta0);

    let noise = NoiseModel::isotropic(4, 0.1, 0.1, 0.0)?;
    let traj = run(&problem, &noise, &schedule, &RunConfig::new(100_000, 7))?;
    println!("{:>8} {:>12} {:>12} {:>12}", "k", "|xhat|^2", "|yhat|^2", "V");
    for r in &traj.records {
        println!("{:>8} {:>12.4e} {:>12.4e} {:>12.4e}", r.k, r.x_hat_sq, r.y_hat_sq, r.v);
    }
    Ok(())
}
