//! Singularly perturbed ODE: fast residual settles long before the slow error.

use ttsa::ode::{integrate, OdeConfig};
use ttsa::operators::{make_builtin, Builtin, Params};

fn main() -> ttsa::Result<()> {
    let problem = make_builtin(Builtin::NonlinearTanh, &Params::new(), 4)?;
    for eps in [0.1, 0.03, 0.01] {
        let t = integrate(&problem, &OdeConfig::new(eps, 1e-3, 40.0))?;
        let fast = t.fast_halving_time().unwrap_or(f64::NAN);
        let slow = t.slow_halving_time().unwrap_or(f64::NAN);
        println!("eps {eps:<5} fast halving {fast:.3}  slow halving {slow:.3}  ratio {:.1}", slow / fast);
    }
    Ok(())
}
