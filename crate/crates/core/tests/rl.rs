//! SSP Q-learning and Polyak-averaged Q-learning driven through the engine.

use rand::SeedableRng;

use twoscale::engine::{InitialState, RunOptions, SimRng, StepSchedule, TtsProblem, log_checkpoints, run_replications, tts_run};
use twoscale::mdp::{MdpModel, SspConfig, avgcost_oracle, discounted_oracle, garnet, make_polyak_problem, make_ssp_problem};

fn single_state(cost: f64) -> MdpModel {
    MdpModel::new(1, 1, vec![1.0], vec![cost], vec![1.0], 0).unwrap()
}

fn seeded_garnet(seed: u64) -> MdpModel {
    garnet(3, 2, 3, 0, &mut SimRng::seed_from_u64(seed)).unwrap()
}

#[test]
fn ssp_oracle_is_a_fixed_point_of_the_mean_maps() {
    for seed in [1, 2, 3] {
        let mdp = seeded_garnet(seed);
        let p = make_ssp_problem(&mdp, &SspConfig::default()).unwrap();
        let sol = avgcost_oracle(&mdp, 0).unwrap();
        let mut fq = vec![0.0; mdp.n_pairs()];
        p.fast_mean(&sol.q_star, &[sol.rho_star], &mut fq);
        let res = fq.iter().zip(&sol.q_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(res <= 1e-8, "seed {seed}: {res:e}");
        let mut g = [0.0];
        p.slow_mean(&sol.q_star, &[sol.rho_star], &mut g);
        assert!((g[0] - sol.rho_star).abs() <= 1e-8);
    }
}

#[test]
fn single_state_ssp_learns_the_cost() {
    let mdp = single_state(3.0);
    let p = make_ssp_problem(&mdp, &SspConfig { beta_prime: Some(1.0), ..Default::default() }).unwrap();
    let sched = StepSchedule::new(1.0, 2.0, 0.6).unwrap();
    let s = run_replications(&p, &sched, &InitialState::zeros(&p), 10_000, &[10_000], 100, 1, &RunOptions::default()).unwrap();
    let close = s.runs.iter().filter(|(_, r)| (r.final_y[0] - 3.0).abs() < 0.1).count();
    assert!(close >= 95, "{close}/100");
}

#[test]
fn ssp_update_touches_only_the_visited_pair() {
    let mdp = garnet(4, 3, 2, 1, &mut SimRng::seed_from_u64(8)).unwrap();
    let p = make_ssp_problem(&mdp, &SspConfig::default()).unwrap();
    let n = mdp.n_pairs();
    let q: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).sin()).collect();
    let mut out = vec![0.0; n];
    for z in 0..n {
        p.fast(&q, &[0.4], z, &mut out);
        for k in 0..n {
            if k != z {
                assert_eq!(out[k].to_bits(), q[k].to_bits(), "pair {k} changed while visiting {z}");
            }
        }
        let mut noise = vec![0.0; n];
        for z_next in 0..n {
            p.fast_noise(&q, &[0.4], z, z_next, &mut SimRng::seed_from_u64(0), &mut noise);
            assert!(noise.iter().enumerate().all(|(k, v)| k == z || *v == 0.0));
        }
    }
}

#[test]
fn ssp_run_updates_one_coordinate_per_step() {
    let mdp = seeded_garnet(4);
    let p = make_ssp_problem(&mdp, &SspConfig::default()).unwrap();
    let sched = StepSchedule::new(0.9, 0.45, 1.0).unwrap();
    let cps: Vec<usize> = (0..=200).collect();
    let opts = RunOptions { keep_snapshots: true, ..Default::default() };
    let init = InitialState { x0: vec![1.0; mdp.n_pairs()], y0: vec![0.5], z0: 0 };
    let r = tts_run(&p, &sched, &init, 200, &cps, &opts, &mut SimRng::seed_from_u64(3)).unwrap();
    for w in r.snapshots.unwrap().windows(2) {
        let changed = w[0].0.iter().zip(&w[1].0).filter(|(a, b)| a != b).count();
        assert!(changed <= 1, "{changed} coordinates moved in one step");
    }
}

#[test]
fn polyak_without_discount_targets_the_cost() {
    let mdp = seeded_garnet(5);
    let p = make_polyak_problem(&mdp, 0.0).unwrap();
    let o = p.oracle().unwrap();
    assert_eq!(o.x_star, mdp.cost().to_vec());
    let sched = StepSchedule::new(0.9, 0.45, 0.8).unwrap();
    let opts = RunOptions { oracle: Some(&o), ..Default::default() };
    let cps = log_checkpoints(100, 100_000, 8);
    let r = tts_run(&p, &sched, &InitialState::zeros(&p), 100_000, &cps, &opts, &mut SimRng::seed_from_u64(1)).unwrap();
    let e = r.err_x_sq.unwrap();
    assert!(e.last().unwrap() < &(e[0] * 0.1), "{e:?}");
}

#[test]
fn single_state_polyak_average_tends_to_ten() {
    let mdp = single_state(1.0);
    assert!((discounted_oracle(&mdp, 0.9).unwrap().q_star[0] - 10.0).abs() < 1e-9);
    let p = make_polyak_problem(&mdp, 0.9).unwrap();
    let sched = StepSchedule::new(1.0, 8.0, 0.6).unwrap();
    let r = tts_run(&p, &sched, &InitialState::zeros(&p), 200_000, &[200_000], &RunOptions::default(), &mut SimRng::seed_from_u64(0))
        .unwrap();
    assert!((r.final_y[0] - 10.0).abs() < 1e-3, "{}", r.final_y[0]);
}

#[test]
fn polyak_slow_map_is_the_fast_iterate() {
    let mdp = seeded_garnet(6);
    let p = make_polyak_problem(&mdp, 0.8).unwrap();
    let q: Vec<f64> = (0..mdp.n_pairs()).map(|k| k as f64).collect();
    let qbar = vec![-3.0; mdp.n_pairs()];
    let mut out = vec![0.0; mdp.n_pairs()];
    p.slow_mean(&q, &qbar, &mut out);
    assert_eq!(out, q);
    assert!(p.slow_noiseless());
}

#[test]
fn ssp_rejects_a_slow_gain_that_does_not_contract() {
    let mdp = seeded_garnet(7);
    let err = make_ssp_problem(&mdp, &SspConfig { beta_prime: Some(1e3), ..Default::default() }).unwrap_err();
    assert!(err.to_string().contains("beta_prime"), "{err}");
}
