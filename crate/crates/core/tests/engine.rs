use proptest::prelude::*;
use rand::SeedableRng;

use twoscale::engine::{
    FixedPointOracle, InitialState, LinearProblem, RunOptions, SimRng, StepSchedule, TtsProblem, fit_rate, log_checkpoints,
    lyapunov_trace, run_replications, run_replications_with_seeds, solve_x_star, tts_run, verify_contraction,
    verify_xstar_lipschitz,
};
use twoscale::geometry::{MoreauEnvelope, NormSpec};
use twoscale::markov_chain::FiniteMarkovChain;
use twoscale::mdp::{SspConfig, avgcost_oracle, garnet, make_polyak_problem, make_ssp_problem};

/// `f(x, y, z) = fx·x`, `g(x, y, z) = gy·y`, no noise, no chain.
struct Scaling {
    fx: f64,
    gy: f64,
    norm: NormSpec,
}

impl Scaling {
    fn new(fx: f64, gy: f64) -> Self {
        Self { fx, gy, norm: NormSpec::Euclidean }
    }
}

impl TtsProblem for Scaling {
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_y(&self) -> usize {
        1
    }
    fn fast(&self, x: &[f64], _y: &[f64], _z: usize, out: &mut [f64]) {
        out[0] = self.fx * x[0];
    }
    fn slow(&self, _x: &[f64], y: &[f64], _z: usize, out: &mut [f64]) {
        out[0] = self.gy * y[0];
    }
    fn norm_x(&self) -> &NormSpec {
        &self.norm
    }
    fn norm_y(&self) -> &NormSpec {
        &self.norm
    }
}

fn snapshots_opts() -> RunOptions<'static> {
    RunOptions { keep_snapshots: true, ..Default::default() }
}

fn two_state_chain() -> FiniteMarkovChain {
    FiniteMarkovChain::new(2, vec![0.7, 0.3, 0.4, 0.6]).unwrap()
}

#[test]
fn identity_maps_leave_the_iterates_fixed() {
    let p = Scaling::new(1.0, 1.0);
    let sched = StepSchedule::new(0.9, 0.5, 0.75).unwrap();
    let init = InitialState { x0: vec![2.5], y0: vec![-1.25], z0: 0 };
    let cps: Vec<usize> = (0..=50).collect();
    let r = tts_run(&p, &sched, &init, 50, &cps, &snapshots_opts(), &mut SimRng::seed_from_u64(1)).unwrap();
    for (x, y) in r.snapshots.unwrap() {
        assert_eq!((x[0], y[0]), (2.5, -1.25));
    }
}

#[test]
fn linear_recursion_matches_the_product_formula() {
    let p = Scaling::new(0.5, 0.5);
    let sched = StepSchedule::new(1.0, 1.0, 1.0).unwrap();
    let init = InitialState { x0: vec![3.0], y0: vec![-2.0], z0: 0 };
    let cps: Vec<usize> = (0..=30).collect();
    let r = tts_run(&p, &sched, &init, 30, &cps, &snapshots_opts(), &mut SimRng::seed_from_u64(1)).unwrap();
    let snaps = r.snapshots.unwrap();
    let (mut x, mut y) = (3.0, -2.0);
    for (n, (sx, sy)) in snaps.iter().enumerate() {
        assert!((sx[0] - x).abs() <= 1e-14 * x.abs().max(1e-300), "n={n}: {} vs {x}", sx[0]);
        assert!((sy[0] - y).abs() <= 1e-14 * y.abs().max(1e-300));
        x *= 1.0 - 0.5 * sched.alpha(n);
        y *= 1.0 - 0.5 * sched.beta(n);
    }
    // α_0 = 1 halves the iterate in the first step
    assert_eq!(snaps[1].0[0], 1.5);
}

#[test]
fn tracking_error_shrinks_on_a_markov_driven_scalar_problem() {
    let chain = two_state_chain();
    let pi = chain.stationary_distribution().to_vec();
    // c(z) centered under π
    let c = vec![pi[1], -pi[0]];
    let p = LinearProblem::new((0.2, 0.1), (0.5, 0.1), c, vec![0.3, -0.1], Some(chain)).unwrap();
    let oracle = p.oracle();
    assert!((p.x_star_of(1.0) - 0.125).abs() < 1e-15);
    // small α0 keeps the n = 100 error dominated by the deterministic transient
    let sched = StepSchedule::new(0.1, 0.05, 2.0 / 3.0).unwrap();
    let opts = RunOptions { oracle: Some(&oracle), track: true, ..Default::default() };
    let init = InitialState { x0: vec![5.0], y0: vec![-5.0], z0: 0 };
    let summary = run_replications(&p, &sched, &init, 10_000, &[100, 10_000], 100, 1, &opts).unwrap();
    let better = summary
        .runs
        .iter()
        .filter(|(_, r)| {
            let t = r.err_track_sq.as_ref().unwrap();
            t[1] < t[0]
        })
        .count();
    assert!(better >= 95, "{better}/100");
}

#[test]
fn noise_free_replications_have_zero_standard_error() {
    let p = LinearProblem::new((0.5, 0.1), (0.5, 0.0), vec![1.0], vec![0.5], None).unwrap();
    let oracle = p.oracle();
    let sched = StepSchedule::new(0.5, 0.25, 0.75).unwrap();
    let opts = RunOptions { oracle: Some(&oracle), ..Default::default() };
    let cps = log_checkpoints(1, 1000, 10);
    let s = run_replications(&p, &sched, &InitialState::zeros(&p), 1000, &cps, 2, 9, &opts).unwrap();
    for series in &s.series {
        assert!(series.se.iter().all(|&v| v == 0.0), "{}", series.name);
    }
}

#[test]
fn replication_order_does_not_change_the_means() {
    let p = LinearProblem::new((0.5, 0.1), (0.5, 0.0), vec![1.0], vec![0.5], None).unwrap().with_noise(1.0, 1.0);
    let oracle = p.oracle();
    let sched = StepSchedule::new(0.5, 0.25, 0.75).unwrap();
    let opts = RunOptions { oracle: Some(&oracle), ..Default::default() };
    let cps = log_checkpoints(10, 2000, 12);
    let init = InitialState::zeros(&p);
    let fwd = run_replications_with_seeds(&p, &sched, &init, 2000, &cps, &[3, 4, 5, 6, 7], &opts).unwrap();
    let rev = run_replications_with_seeds(&p, &sched, &init, 2000, &cps, &[7, 5, 3, 6, 4], &opts).unwrap();
    for (a, b) in fwd.series.iter().zip(&rev.series) {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.mean), bits(&b.mean));
        assert_eq!(bits(&a.se), bits(&b.se));
    }
}

#[test]
fn noisy_scalar_contraction_error_decreases() {
    let p = LinearProblem::new((0.5, 0.0), (0.0, 0.0), vec![1.0], vec![0.0], None).unwrap().with_noise(1.0, 0.0);
    let oracle = p.oracle();
    let sched = StepSchedule::new(0.5, 0.25, 2.0 / 3.0).unwrap();
    let opts = RunOptions { oracle: Some(&oracle), ..Default::default() };
    let s = run_replications(&p, &sched, &InitialState::zeros(&p), 100_000, &[1000, 100_000], 200, 1, &opts).unwrap();
    let m = &s.series("err_x_sq").unwrap().mean;
    assert!(m[1] < m[0], "{m:?}");
}

#[test]
fn identical_seeds_give_identical_results() {
    let chain = two_state_chain();
    let p = LinearProblem::new((0.3, 0.2), (0.4, 0.2), vec![0.6, -0.9], vec![1.0, 2.0], Some(chain)).unwrap().with_noise(0.7, 0.3);
    let sched = StepSchedule::new(0.8, 0.4, 0.7).unwrap();
    let cps = log_checkpoints(1, 5000, 15);
    let opts = snapshots_opts();
    let a = tts_run(&p, &sched, &InitialState::zeros(&p), 5000, &cps, &opts, &mut SimRng::seed_from_u64(42)).unwrap();
    let b = tts_run(&p, &sched, &InitialState::zeros(&p), 5000, &cps, &opts, &mut SimRng::seed_from_u64(42)).unwrap();
    assert_eq!(a, b);
    let c = tts_run(&p, &sched, &InitialState::zeros(&p), 5000, &cps, &opts, &mut SimRng::seed_from_u64(43)).unwrap();
    assert_ne!(a.final_x, c.final_x);
}

#[test]
fn noiseless_slow_flag_matches_general_driver_with_mean_slow_map() {
    let chain = two_state_chain();
    let special = LinearProblem::new((0.4, 0.2), (0.2, 0.3), vec![1.0, -1.0], vec![0.5, 2.0], Some(chain.clone()))
        .unwrap()
        .with_noise(0.8, 0.0)
        .noiseless_slow();
    let general = LinearProblem::new((0.4, 0.2), (0.2, 0.3), vec![1.0, -1.0], vec![special.mean_d(); 2], Some(chain))
        .unwrap()
        .with_noise(0.8, 0.0);
    let sched = StepSchedule::new(0.6, 0.3, 0.8).unwrap();
    let cps = log_checkpoints(1, 3000, 12);
    for seed in 0..3 {
        let a = tts_run(&special, &sched, &InitialState::zeros(&special), 3000, &cps, &snapshots_opts(), &mut SimRng::seed_from_u64(seed)).unwrap();
        let b = tts_run(&general, &sched, &InitialState::zeros(&general), 3000, &cps, &snapshots_opts(), &mut SimRng::seed_from_u64(seed)).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
    }
}

#[test]
fn solve_x_star_closed_forms() {
    let p = LinearProblem::new((0.5, 1.0), (0.0, 0.0), vec![0.0], vec![0.0], None).unwrap();
    let x = solve_x_star(&p, &[1.5], 1e-12, None).unwrap();
    assert!((x[0] - 3.0).abs() <= 1e-11);

    let constant = LinearProblem::new((0.0, 0.0), (0.0, 0.0), vec![4.25], vec![0.0], None).unwrap();
    assert_eq!(solve_x_star(&constant, &[7.0], 1e-12, None).unwrap(), vec![4.25]);
}

#[test]
fn solve_x_star_reports_a_non_contraction() {
    struct Expanding(NormSpec);
    impl TtsProblem for Expanding {
        fn dim_x(&self) -> usize {
            1
        }
        fn dim_y(&self) -> usize {
            1
        }
        fn fast(&self, x: &[f64], _y: &[f64], _z: usize, out: &mut [f64]) {
            out[0] = 1.5 * x[0] + 1.0;
        }
        fn slow(&self, _x: &[f64], y: &[f64], _z: usize, out: &mut [f64]) {
            out[0] = y[0];
        }
        fn norm_x(&self) -> &NormSpec {
            &self.0
        }
        fn norm_y(&self) -> &NormSpec {
            &self.0
        }
    }
    let err = solve_x_star(&Expanding(NormSpec::Euclidean), &[0.0], 1e-10, None).unwrap_err();
    assert!(matches!(err, twoscale::Error::NotContracting { .. }), "{err:?}");
}

#[test]
fn solve_x_star_recovers_the_ssp_oracle() {
    let mdp = garnet(4, 2, 3, 0, &mut SimRng::seed_from_u64(17)).unwrap();
    let p = make_ssp_problem(&mdp, &SspConfig::default()).unwrap();
    let sol = avgcost_oracle(&mdp, 0).unwrap();
    let q = solve_x_star(&p, &[sol.rho_star], 1e-10, None).unwrap();
    assert!(p.norm_x().dist(&q, &sol.q_star) <= 1e-6);
}

#[test]
fn lipschitz_verifier_closed_form() {
    let p = LinearProblem::new((0.5, 0.25), (0.0, 0.0), vec![0.0], vec![0.0], None).unwrap();
    let same = verify_xstar_lipschitz(&p, &[(vec![1.0], vec![1.0])], 0.25, 0.5, 1e-12).unwrap();
    assert_eq!(same.max_ratio, 0.0);
    let pairs = vec![(vec![0.0], vec![1.0]), (vec![-3.0], vec![2.0])];
    let rep = verify_xstar_lipschitz(&p, &pairs, 0.25, 0.5, 1e-12).unwrap();
    assert!((rep.max_ratio - 0.5).abs() < 1e-9);
    assert_eq!(rep.bound, 0.5);

    // a claimed constant that is too small is caught with a witness
    let err = verify_xstar_lipschitz(&p, &pairs, 0.1, 0.5, 1e-12).unwrap_err();
    assert!(matches!(err, twoscale::Error::PropertyViolated { .. }));
}

#[test]
fn contraction_estimates_of_linear_maps() {
    let mut rng = SimRng::seed_from_u64(3);
    let id = verify_contraction(&|x: &[f64]| x.to_vec(), &NormSpec::MaxAbs, 4, 200, 1.0, &mut rng);
    assert!((id.factor - 1.0).abs() < 1e-12);
    let scaled = verify_contraction(&|x: &[f64]| x.iter().map(|v| 0.3 * v).collect(), &NormSpec::Euclidean, 4, 200, 1.0, &mut rng);
    assert!((scaled.factor - 0.3).abs() < 1e-12);
}

#[test]
fn polyak_fast_map_contracts_in_sup_norm() {
    let mdp = garnet(5, 2, 3, 0, &mut SimRng::seed_from_u64(5)).unwrap();
    let p = make_polyak_problem(&mdp, 0.8).unwrap();
    let map = |q: &[f64]| {
        let mut out = vec![0.0; q.len()];
        p.fast_mean(q, q, &mut out);
        out
    };
    let est = verify_contraction(&map, &NormSpec::MaxAbs, mdp.n_pairs(), 1000, 10.0, &mut SimRng::seed_from_u64(6));
    assert!(est.factor <= 1.0 - mdp.pi_min() * 0.2 + 1e-9);
}

#[test]
fn lyapunov_trace_at_the_fixed_point_is_zero() {
    let p = LinearProblem::new((0.5, 0.1), (0.5, 0.2), vec![1.0], vec![0.5], None).unwrap();
    let o = p.oracle();
    let env = MoreauEnvelope::new(NormSpec::Euclidean, 0.1, 1).unwrap();
    let traj = vec![(o.x_star.clone(), o.y_star.clone()); 5];
    assert!(lyapunov_trace(&o, &env, &env, &traj).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn lyapunov_trace_decreases_on_a_noise_free_contraction() {
    let p = LinearProblem::new((0.5, 0.1), (0.5, 0.2), vec![1.0], vec![0.5], None).unwrap();
    let o: FixedPointOracle = p.oracle();
    let env = MoreauEnvelope::new(NormSpec::MaxAbs, 0.1, 1).unwrap();
    let sched = StepSchedule::new(0.5, 0.1, 2.0 / 3.0).unwrap();
    let init = InitialState { x0: vec![4.0], y0: vec![-3.0], z0: 0 };
    let cps: Vec<usize> = (0..400).step_by(20).collect();
    let r = tts_run(&p, &sched, &init, 400, &cps, &snapshots_opts(), &mut SimRng::seed_from_u64(0)).unwrap();
    let trace = lyapunov_trace(&o, &env, &env, r.snapshots.as_ref().unwrap()).unwrap();
    assert!(trace.windows(2).all(|w| w[1] < w[0]), "{trace:?}");
}

#[test]
fn ssp_lyapunov_average_decreases() {
    let mdp = garnet(3, 2, 3, 0, &mut SimRng::seed_from_u64(132)).unwrap();
    let p = make_ssp_problem(&mdp, &SspConfig { beta_prime: Some(0.03), ..Default::default() }).unwrap();
    let oracle = p.oracle().unwrap();
    let env_x = MoreauEnvelope::new(p.norm_x().clone(), 0.1, mdp.n_pairs()).unwrap();
    let env_y = MoreauEnvelope::new(NormSpec::Euclidean, 0.1, 1).unwrap();
    let sched = StepSchedule::new(11.0, 5.5, 1.0).unwrap();
    let opts = RunOptions { oracle: Some(&oracle), lyapunov: Some((&env_x, &env_y)), ..Default::default() };
    let s = run_replications(&p, &sched, &InitialState::zeros(&p), 10_000, &[100, 10_000], 100, 1, &opts).unwrap();
    let l = &s.series("lyapunov").unwrap().mean;
    assert!(l[1] < l[0], "{l:?}");
}

#[test]
fn divergence_names_the_step() {
    let p = Scaling::new(3.0, 1.0);
    let sched = StepSchedule::new(0.9, 0.5, 0.6).unwrap();
    let init = InitialState { x0: vec![1.0], y0: vec![0.0], z0: 0 };
    let err = tts_run(&p, &sched, &init, 10_000, &[10_000], &RunOptions::default(), &mut SimRng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, twoscale::Error::NonFiniteIterate { .. }), "{err:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_inequalities(alpha0 in 0.01f64..20.0, beta0 in 0.01f64..20.0, a in 0.5001f64..=1.0, n in 0usize..1_000_000) {
        let s = StepSchedule::new(alpha0, beta0, a).unwrap();
        let c2 = 2.0 / alpha0.min(beta0);
        let (an, an1) = (s.alpha(n), s.alpha(n + 1));
        let (bn, bn1) = (s.beta(n), s.beta(n + 1));
        prop_assert!(an1 <= an && bn1 <= bn);
        prop_assert!(an <= 2.0 * an1 && bn <= 2.0 * bn1);
        prop_assert!(an - an1 <= c2 * an1 * an1 * (1.0 + 1e-12));
        prop_assert!(bn - bn1 <= c2 * bn1 * bn1 * (1.0 + 1e-12));
        prop_assert!(s.gamma(n + 1) <= s.gamma(n) * (1.0 + 1e-12));
    }

    #[test]
    fn fit_rate_recovers_power_laws(p in -2.0f64..0.5, c in 0.01f64..100.0) {
        let ns = log_checkpoints(10, 100_000, 25);
        let vals: Vec<f64> = ns.iter().map(|&n| c * (n as f64).powf(p)).collect();
        let fit = fit_rate(&ns, &vals, (10, 100_000)).unwrap();
        prop_assert!((fit.slope - p).abs() <= 1e-9);
        prop_assert!((fit.intercept - c.ln()).abs() <= 1e-8);
        prop_assert!((0.0..=1.0).contains(&fit.r_squared));
    }

    #[test]
    fn recorded_errors_are_finite_and_nonnegative(seed in any::<u64>(), nx in 0.0f64..2.0, ny in 0.0f64..2.0) {
        let p = LinearProblem::new((0.3, 0.2), (0.4, 0.2), vec![0.6, -0.9], vec![1.0, 2.0], Some(two_state_chain()))
            .unwrap()
            .with_noise(nx, ny);
        let oracle = p.oracle();
        let sched = StepSchedule::new(0.8, 0.4, 0.7).unwrap();
        let opts = RunOptions { oracle: Some(&oracle), track: true, ..Default::default() };
        let r = tts_run(&p, &sched, &InitialState::zeros(&p), 2000, &log_checkpoints(1, 2000, 10), &opts, &mut SimRng::seed_from_u64(seed)).unwrap();
        for v in [&r.err_x_sq, &r.err_y_sq, &r.err_track_sq] {
            prop_assert!(v.as_ref().unwrap().iter().all(|e| e.is_finite() && *e >= 0.0));
        }
    }
}
