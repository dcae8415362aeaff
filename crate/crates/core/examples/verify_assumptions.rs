//! Sampled check of the declared Lipschitz and monotonicity constants.

use ttsa::operators::{make_builtin, verify_assumptions, Builtin, Params};

fn main() -> ttsa::Result<()> {
    for kind in Builtin::ALL {
        let problem = make_builtin(kind, &Params::new(), 4)?;
        let rep = verify_assumptions(&problem, 10_000, 10.0, 0)?;
        println!(
            "{kind:<16} lip F/G/H {:.3}/{:.3}/{:.3}  mono F/G {:.3}/{:.3}  root {:.1e}  {}",
            rep.max_lipschitz_ratio_f,
            rep.max_lipschitz_ratio_g,
            rep.max_lipschitz_ratio_h,
            rep.min_monotone_quotient_f,
            rep.min_monotone_quotient_g,
            rep.max_root_residual,
            if rep.pass { "ok" } else { "VIOLATED" },
        );
    }
    Ok(())
}
