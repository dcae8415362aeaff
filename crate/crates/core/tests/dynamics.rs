use ttsa::noise::{mix64, NoiseModel, RngState};
use ttsa::ode::{integrate, OdeConfig};
use ttsa::operators::{make_builtin, Builtin, Params, ProblemSpec};
use ttsa::schedules::auto_tune_with_offset;
use ttsa::solver::{fit_rate, monte_carlo, replicate, run, Recording, RunConfig};
use ttsa::StepSchedule;

fn tuned(kind: Builtin, dim: usize) -> (ProblemSpec, StepSchedule) {
    let p = make_builtin(kind, &Params::new(), dim).unwrap();
    let pc = p.constants;
    let s = auto_tune_with_offset(&pc, 1.0 / pc.mu_g, 1.0, kind.recommended_offset()).unwrap();
    (p, s)
}

#[test]
fn noise_free_residual_eventually_decreasing() {
    for kind in Builtin::ALL {
        let (p, s) = tuned(kind, 3);
        let mut cfg = RunConfig::new(100_000, 0);
        cfg.recording = Recording::Stride(1);
        cfg.keep_iterates = false;
        let t = run(&p, &NoiseModel::zero(3), &s, &cfg).unwrap();
        let z: Vec<f64> = t.records.iter().map(|r| r.z()).collect();
        for k in 100..z.len() - 1 {
            assert!(z[k + 1] <= z[k], "{kind}: z rose at k = {k}");
        }
        assert!(z[z.len() - 1] <= 1e-6, "{kind}: {}", z[z.len() - 1]);
    }
}

#[test]
fn mean_v_decreases_across_decades() {
    for kind in Builtin::ALL {
        let (p, s) = tuned(kind, 2);
        let noise = NoiseModel::isotropic(2, 0.1, 0.1, 0.0).unwrap();
        let mut cfg = RunConfig::new(100_000, 8);
        cfg.keep_iterates = false;
        let mc = monte_carlo(&p, &noise, &s, &cfg, 100).unwrap();
        let at = |k: u64| mc.ks.iter().position(|&x| x == k).unwrap();
        let checkpoints: Vec<usize> = [100, 1_000, 10_000, 100_000].iter().map(|&k| at(k)).collect();
        for w in checkpoints.windows(2) {
            let (i, j) = (w[0], w[1]);
            assert!(mc.mean_v[j] <= mc.mean_v[i] + mc.se_v[i] + mc.se_v[j], "{kind}");
        }
    }
}

#[test]
fn linear_scale_equivariance() {
    let (p, s) = tuned(Builtin::LinearCoupled, 3);
    let start = |c: f64| {
        let mut cfg = RunConfig::new(5_000, 0);
        cfg.recording = Recording::Stride(1);
        cfg.x0 = Some(p.x_star.iter().map(|v| v + c * 0.7).collect());
        cfg.y0 = Some(p.y_star.iter().enumerate().map(|(i, v)| v - c * (i as f64 + 1.0)).collect());
        cfg.eta = Some(1.0);
        run(&p, &NoiseModel::zero(3), &s, &cfg).unwrap()
    };
    let (one, scaled) = (start(1.0), start(3.0));
    // rounding is relative to the transient peak, not the current value
    let (mut px, mut py) = (0.0f64, 0.0f64);
    for (a, b) in one.records.iter().zip(&scaled.records) {
        px = px.max(b.x_hat_sq);
        py = py.max(b.y_hat_sq);
        assert!((b.x_hat_sq - 9.0 * a.x_hat_sq).abs() <= 1e-12 * px, "k = {}", a.k);
        assert!((b.y_hat_sq - 9.0 * a.y_hat_sq).abs() <= 1e-12 * py, "k = {}", a.k);
    }
}

#[test]
fn doubling_replications_keeps_prefix() {
    let (p, s) = tuned(Builtin::NonlinearTanh, 2);
    let noise = NoiseModel::isotropic(2, 0.2, 0.2, 0.5).unwrap();
    let cfg = RunConfig::new(2_000, 31);
    let four = replicate(&p, &noise, &s, &cfg, 4).unwrap();
    let eight = replicate(&p, &noise, &s, &cfg, 8).unwrap();
    assert_eq!(four[..], eight[..4]);
    let mut single = cfg.clone();
    single.seed = mix64(31, 5);
    assert_eq!(run(&p, &noise, &s, &single).unwrap(), eight[5]);
}

#[test]
fn monte_carlo_is_reproducible() {
    let (p, s) = tuned(Builtin::PolyakRuppert, 3);
    let noise = NoiseModel::isotropic(3, 0.1, 0.1, 0.0).unwrap();
    let cfg = RunConfig::new(3_000, 4);
    let a = monte_carlo(&p, &noise, &s, &cfg, 16).unwrap();
    let b = monte_carlo(&p, &noise, &s, &cfg, 16).unwrap();
    assert_eq!(a, b);
}

#[test]
fn divergence_reports_replication() {
    let p = make_builtin(Builtin::PolyakRuppert, &Params::new(), 2).unwrap();
    let s = auto_tune_with_offset(&p.constants, 1.0 / p.constants.mu_g, 1.0, 1).unwrap();
    let noise = NoiseModel::isotropic(2, 0.1, 0.1, 0.0).unwrap();
    let err = monte_carlo(&p, &noise, &s, &RunConfig::new(1_000, 0), 3).unwrap_err();
    match err {
        ttsa::Error::Diverged { replication, partial, .. } => {
            assert_eq!(replication, Some(0));
            assert!(partial.is_some_and(|t| !t.records.is_empty()));
        }
        other => panic!("expected divergence, got {other}"),
    }
}

#[test]
fn log_over_linear_fit_is_near_minus_one() {
    let ks: Vec<u64> = (0..=120).map(|i| (1e3 * 10f64.powf(i as f64 / 60.0)).round() as u64).collect();
    let v: Vec<f64> = ks
        .iter()
        .map(|&k| 2.0 * (1.0 + ((k + 1) as f64).ln()) / (k as f64 + 2.0))
        .collect();
    let f = fit_rate(&ks, &v, (0.0, 1.0)).unwrap();
    assert!((-1.0..=-0.85).contains(&f.slope), "{}", f.slope);
}

#[test]
fn noise_second_moment_within_one_percent() {
    let noise = NoiseModel::isotropic(4, 0.1, 0.1, 0.0).unwrap();
    let mut rng = RngState::from_seed(12);
    let n = 1_000_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let (xi, _) = noise.sample_pair(&mut rng);
        acc += xi.iter().map(|v| v * v).sum::<f64>();
    }
    let g11 = noise.gammas().g11;
    assert!((acc / n as f64 - g11).abs() <= 0.01 * g11);
}

#[test]
fn ode_boundary_layer_and_slow_convergence() {
    for kind in Builtin::ALL {
        let p = make_builtin(kind, &Params::new(), 2).unwrap();
        let pc = p.constants;
        let eps = 0.1;
        let mut probe = OdeConfig::new(eps, 1.0, 1.0);
        let h = probe.max_step(&p).min(1e-3);
        let horizon = 50.0 / (eps * pc.mu_g);
        probe = OdeConfig::new(eps, h, horizon);
        probe.stride = 10;
        let t = integrate(&p, &probe).unwrap();
        assert!(*t.slow_error.last().unwrap() < 1e-6, "{kind}: {}", t.slow_error.last().unwrap());
        let layer = 5.0 / pc.mu_f;
        let tail: Vec<f64> = t
            .times
            .iter()
            .zip(&t.fast_residual)
            .filter(|(s, _)| **s >= layer)
            .map(|(_, r)| *r)
            .collect();
        assert!(tail.windows(2).all(|w| w[1] <= w[0] || w[1] < 1e-12), "{kind}");
    }
}
