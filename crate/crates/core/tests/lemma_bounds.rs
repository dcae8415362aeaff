use ttsa::analysis::{check_lemmas, check_lemmas_at, empirical_onestep, lemma_rhs, LemmaId, LemmaOptions, StateQuantities};
use ttsa::noise::NoiseModel;
use ttsa::operators::{make_builtin, Builtin, ParamValue, Params};
use ttsa::schedules::{auto_tune, auto_tune_with_offset, derive_constants, DeriveOptions};
use ttsa::solver::IterateState;

fn params(kv: &[(&str, f64)]) -> Params {
    kv.iter().map(|(k, v)| (k.to_string(), ParamValue::Scalar(*v))).collect()
}

#[test]
fn doubled_mu_f_breaks_fast_residual_bound() {
    let p = make_builtin(Builtin::NonlinearTanh, &Params::new(), 4).unwrap();
    let s = auto_tune(&p.constants, 1.0 / p.constants.mu_g, 1.0).unwrap();
    let mut pc = p.constants;
    pc.mu_f *= 2.0;
    let opts = LemmaOptions {
        m: 5_000,
        constants: Some(pc),
        trajectory_replications: 0,
        ..Default::default()
    };
    let rep = check_lemmas(&p, &NoiseModel::isotropic(4, 0.1, 0.1, 0.0).unwrap(), &s, &opts).unwrap();
    assert!(rep.failures().any(|c| c.lemma == LemmaId::FastResidual));
}

#[test]
fn halved_l_g_breaks_a_bound() {
    let p = make_builtin(Builtin::LinearCoupled, &Params::new(), 4).unwrap();
    let s = auto_tune(&p.constants, 1.0 / p.constants.mu_g, 1.0).unwrap();
    let mut pc = p.constants;
    pc.l_g *= 0.5;
    let opts = LemmaOptions {
        m: 5_000,
        constants: Some(pc),
        trajectory_replications: 0,
        ..Default::default()
    };
    let rep = check_lemmas(&p, &NoiseModel::isotropic(4, 0.1, 0.1, 0.0).unwrap(), &s, &opts).unwrap();
    assert!(!rep.pass);
}

#[test]
fn builtins_pass_with_fewer_draws() {
    for kind in Builtin::ALL {
        let p = make_builtin(kind, &Params::new(), 2).unwrap();
        let pc = p.constants;
        let s = auto_tune_with_offset(&pc, 1.0 / pc.mu_g, 1.0, kind.recommended_offset()).unwrap();
        let opts = LemmaOptions {
            m: 10_000,
            seed: 77,
            trajectory_replications: 4,
            trajectory_iterations: 2_000,
            ..Default::default()
        };
        let rep = check_lemmas(&p, &NoiseModel::isotropic(2, 0.1, 0.1, 0.0).unwrap(), &s, &opts).unwrap();
        assert!(rep.pass, "{kind}: {:?}", rep.failures().next());
    }
}

// The displayed fast-residual bound charges α²‖F(x,y) − F(H(y),y)‖² at
// L_H² where the operator's own constant L_F² belongs. With α0·L_F large and
// L_H small the bound is violated at k = 0 even without noise.
#[test]
fn fast_residual_bound_fails_when_l_f_dominates() {
    let p = make_builtin(
        Builtin::LinearCoupled,
        &params(&[("a_f", 2.0), ("p", 0.1), ("a_g", 7.0), ("c_c", 0.5)]),
        2,
    )
    .unwrap();
    let pc = p.constants;
    let s = auto_tune(&pc, 1.0 / pc.mu_g, 1.0).unwrap();
    assert!(s.alpha0 * pc.l_f > 10.0);

    let noise = NoiseModel::zero(2);
    let dc = derive_constants(&pc, &s, &DeriveOptions::default()).unwrap();
    // x̂ ≠ 0, ŷ = 0
    let x: Vec<f64> = p.x_star.iter().map(|v| v + 1.0).collect();
    let state = IterateState::new(0, x, p.y_star.clone());
    let est = empirical_onestep(&p, &noise, &s, &state, 1000, 0).unwrap();
    let q = StateQuantities::of(&p, &state);
    let rhs = lemma_rhs(LemmaId::FastResidual, q, 0, &s, &dc, &pc, &noise.gammas());
    // x̂' = (1 − α·2 + β·P·C) x̂ when ŷ = 0
    let (a0, b0) = s.step_sizes(0);
    let contraction = (1.0 - 2.0 * a0 + 0.05 * b0).powi(2);
    assert!((est.mean_xhat_sq_next / q.xhat_sq / contraction - 1.0).abs() < 1e-9);
    assert!(est.mean_xhat_sq_next > rhs);

    // later iterations are fine
    let opts = LemmaOptions {
        m: 1000,
        ks: vec![1_000, 10_000],
        trajectory_replications: 0,
        ..Default::default()
    };
    let states = vec![(state.x.clone(), state.y.clone())];
    let rep = check_lemmas_at(&p, &noise, &s, &states, &opts).unwrap();
    assert!(rep.pass);
}
