//! One-step bounds checked by Monte Carlo at sampled states.

use ttsa::analysis::{check_lemmas, LemmaId, LemmaOptions};
use ttsa::noise::NoiseModel;
use ttsa::operators::{make_builtin, Builtin, Params};
use ttsa::schedules::auto_tune;

fn main() -> ttsa::Result<()> {
    let problem = make_builtin(Builtin::NonlinearTanh, &Params::new(), 2)?;
    let pc = problem.constants;
    let schedule = auto_tune(&pc, 1.0 / pc.mu_g, 1.0)?;
    let noise = NoiseModel::isotropic(2, 0.1, 0.1, 0.0)?;
    let opts = LemmaOptions {
        state_count: 5,
        m: 10_000,
        trajectory_replications: 4,
        trajectory_iterations: 2_000,
        ..Default::default()
    };
    let rep = check_lemmas(&problem, &noise, &schedule, &opts)?;
    for id in [LemmaId::FastResidual, LemmaId::SlowResidual, LemmaId::Combined, LemmaId::Uniform] {
        let (ok, n) = rep.count(id);
        let worst = rep
            .checks
            .iter()
            .filter(|c| c.lemma == id && c.rhs > 0.0)
            .map(|c| c.lhs_mean / c.rhs)
            .fold(0.0, f64::max);
        println!("{id:>3}: {ok}/{n} hold, worst lhs/rhs {worst:.3}");
    }
    Ok(())
}
