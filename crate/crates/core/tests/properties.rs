use proptest::prelude::*;

use ttsa::analysis::{lemma_rhs, LemmaId, StateQuantities};
use ttsa::noise::{mix64, Gammas, NoiseModel};
use ttsa::operators::{make_builtin, residuals, Builtin, ParamValue, Params};
use ttsa::schedules::{
    check_conditions, derive_constants, theorem_bound_terms, BoundVariant, DeriveOptions, StepSchedule,
};
use ttsa::solver::{fit_rate, lyapunov};
use ttsa::ProblemConstants;

fn schedule() -> impl Strategy<Value = StepSchedule> {
    (0.01f64..100.0, 0.001f64..1.0, 0.51f64..0.99, 1u64..100).prop_flat_map(|(a0, frac, a, off)| {
        (Just(a0), Just(a0 * frac), Just(a), a..=1.0f64, Just(off))
            .prop_map(|(a0, b0, a, b, off)| StepSchedule::new(a0, b0, a, b, off).unwrap())
    })
}

fn constants() -> impl Strategy<Value = ProblemConstants> {
    (0.1f64..10.0, 0.1f64..10.0, 0.01f64..3.0, 0.05f64..1.0, 0.05f64..1.0).prop_map(|(lf, lg, lh, rf, rg)| {
        ProblemConstants::new(lf, lg, lh, lf * rf, lg * rg).unwrap()
    })
}

proptest! {
    #[test]
    fn step_sizes_monotone(s in schedule(), k in 0u64..1_000_000) {
        let (a0, b0) = s.step_sizes(k);
        let (a1, b1) = s.step_sizes(k + 1);
        prop_assert!(a1 <= a0);
        prop_assert!(b1 <= b0);
        prop_assert!(b1 / a1 <= b0 / a0 * (1.0 + 1e-12));
    }

    #[test]
    fn balancing_ratio_is_constant(a0 in 0.1f64..100.0, frac in 0.001f64..1.0, k in 0u64..1_000_000) {
        let s = StepSchedule::theorem(a0, a0 * frac).unwrap();
        let q = |k| {
            let (a, b) = s.step_sizes(k);
            (a * b) / (b.powi(3) / (a * a))
        };
        prop_assert!((q(k) / q(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_is_affine_in_eta(xs in 0.0f64..100.0, ys in 0.0f64..100.0, eta in 0.0f64..50.0, s in schedule(), k in 0u64..10_000) {
        let v = lyapunov(xs, ys, k, &s, eta);
        prop_assert!(v >= ys);
        let v2 = lyapunov(xs, ys, k, &s, 2.0 * eta);
        prop_assert!((v2 - ys - 2.0 * (v - ys)).abs() <= 1e-9 * v2.max(1.0));
    }

    #[test]
    fn residuals_shift_with_y(dy in prop::collection::vec(-5.0f64..5.0, 3), dx in prop::collection::vec(-5.0f64..5.0, 3)) {
        // H(y) = P y is linear, so shifting x by P·dy leaves x̂ unchanged
        let p = make_builtin(Builtin::LinearCoupled, &Params::new(), 3).unwrap();
        let y: Vec<f64> = p.y_star.iter().zip(&dy).map(|(a, b)| a + b).collect();
        let x: Vec<f64> = p.x_star.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let r = residuals(&p, &x, &y).unwrap();
        let hy = p.eval_h(&dy);
        let x2: Vec<f64> = x.iter().zip(&hy).map(|(a, b)| a + b).collect();
        let y2: Vec<f64> = y.iter().zip(&dy).map(|(a, b)| a + b).collect();
        let r2 = residuals(&p, &x2, &y2).unwrap();
        for i in 0..3 {
            prop_assert!((r.x_hat[i] - r2.x_hat[i]).abs() < 1e-12);
            prop_assert!((r2.y_hat[i] - r.y_hat[i] - dy[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn tanh_equilibrium_root(y in prop::collection::vec(-20.0f64..20.0, 4), gamma in 0.01f64..2.0) {
        let mut params = Params::new();
        params.insert("gamma".into(), ParamValue::Scalar(gamma));
        let p = make_builtin(Builtin::NonlinearTanh, &params, 4).unwrap();
        let h = p.eval_h(&y);
        prop_assert!(p.eval_f(&h, &y).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn l1_l2_scale_exactly(pc in constants(), s in schedule()) {
        let dc = derive_constants(&pc, &s, &DeriveOptions::default()).unwrap();
        let mut doubled = pc;
        doubled.l_g *= 2.0;
        let dd = derive_constants(&doubled, &s, &DeriveOptions::default()).unwrap();
        prop_assert!((dd.l2 / dc.l2 - 4.0).abs() < 1e-12);
        prop_assert!((dd.l1 / dc.l1 - 2.0).abs() < 1e-12);
        prop_assert!(dc.eta_x <= pc.mu_f / (3.0 * dc.l1) * (1.0 + 1e-15));
    }

    #[test]
    fn overall_feasibility_is_conjunction(pc in constants(), s in schedule()) {
        let dc = derive_constants(&pc, &s, &DeriveOptions::default()).unwrap();
        let rep = check_conditions(&pc, &s, &dc);
        prop_assert_eq!(rep.pass, rep.clauses.iter().filter(|c| !c.extra).all(|c| c.pass));
    }

    #[test]
    fn literal_bound_not_above_corrected(pc in constants(), k in 0u64..10_000_000, g11 in 0.0f64..1.0, g22 in 0.0f64..1.0, v0 in 0.0f64..100.0) {
        let s = StepSchedule::theorem(10.0, 1.0 / pc.mu_g).unwrap();
        let g = Gammas { g11, g12: 0.0, g22 };
        let opts = DeriveOptions { gammas: g, initial_z: 1.0, ..Default::default() };
        let dc = derive_constants(&pc, &s, &opts).unwrap();
        let lit = theorem_bound_terms(k, &dc, &pc, &g, v0, BoundVariant::Literal);
        let cor = theorem_bound_terms(k, &dc, &pc, &g, v0, BoundVariant::Corrected);
        prop_assert!(lit.gamma11 <= cor.gamma11);
        prop_assert!(lit.ln_total() <= cor.ln_total());
    }

    #[test]
    fn lemma_rhs_monotone_in_noise(pc in constants(), xs in 0.0f64..10.0, ys in 0.0f64..10.0, k in 0u64..10_000, g in 0.0f64..1.0) {
        let s = StepSchedule::theorem(10.0, 1.0 / pc.mu_g).unwrap();
        let dc = derive_constants(&pc, &s, &DeriveOptions::default()).unwrap();
        let q = StateQuantities { xhat_sq: xs, yhat_sq: ys };
        let zero = Gammas::default();
        let some = Gammas { g11: g, g12: 0.0, g22: g };
        for id in [LemmaId::FastResidual, LemmaId::SlowResidual, LemmaId::Combined] {
            prop_assert!(lemma_rhs(id, q, k, &s, &dc, &pc, &some) >= lemma_rhs(id, q, k, &s, &dc, &pc, &zero));
        }
    }

    #[test]
    fn fit_recovers_power_law(slope in -2.0f64..0.0, c in 0.01f64..100.0) {
        let ks: Vec<u64> = (0..=50).map(|i| (10f64.powf(i as f64 / 10.0)).round() as u64).collect();
        let v: Vec<f64> = ks.iter().map(|k| c * ((k + 1) as f64).powf(slope)).collect();
        let f = fit_rate(&ks, &v, (0.0, 1.0)).unwrap();
        prop_assert!((f.slope - slope).abs() < 1e-9);
    }

    #[test]
    fn child_seeds_distinct(seed in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        prop_assume!(i != j);
        prop_assert_ne!(mix64(seed, i), mix64(seed, j));
    }

    #[test]
    fn isotropic_gammas_are_traces(d in 1usize..8, sx in 0.0f64..2.0, sp in 0.0f64..2.0, rho in -1.0f64..1.0) {
        let g = NoiseModel::isotropic(d, sx, sp, rho).unwrap().gammas();
        prop_assert!((g.g11 - d as f64 * sx * sx).abs() < 1e-12);
        prop_assert!((g.g22 - d as f64 * sp * sp).abs() < 1e-12);
        prop_assert!((g.g12 - d as f64 * sx * sp * rho).abs() < 1e-12);
    }
}
