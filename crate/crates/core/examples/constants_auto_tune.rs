//! Derived constants and the feasibility clauses for a tuned schedule.

use ttsa::operators::{make_builtin, Builtin, Params};
use ttsa::schedules::{auto_tune_with_offset, check_conditions, derive_constants, DeriveOptions};

fn main() -> ttsa::Result<()> {
    for kind in Builtin::ALL {
        let problem = make_builtin(kind, &Params::new(), 2)?;
        let pc = problem.constants;
        let s = auto_tune_with_offset(&pc, 1.0 / pc.mu_g, 1.0, kind.recommended_offset())?;
        let dc = derive_constants(&pc, &s, &DeriveOptions::default())?;
        println!("{kind}: alpha0 {:.4} beta0 {:.4} offset {}", s.alpha0, s.beta0, s.offset);
        println!("  L1 {:.4}  L2 {:.4}  eta {:.4}  ln C {:.4e}", dc.l1, dc.l2, dc.eta, dc.ln_c);
        for c in check_conditions(&pc, &s, &dc).clauses {
            let mark = if c.pass { "ok" } else if c.extra { "--" } else { "NO" };
            println!("  [{mark}] {:<28} {:.4e} vs {:.4e}", c.name, c.lhs, c.rhs);
        }
    }
    Ok(())
}
