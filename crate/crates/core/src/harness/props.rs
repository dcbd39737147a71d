//! The property suite: every module's invariants checked on fixed-seed random instances.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{
    LinearProblem, RunOptions, StepSchedule, TtsProblem, fit_rate, log_checkpoints, run_replications,
    verify_contraction, verify_xstar_lipschitz,
};
use crate::engine::run::InitialState;
use crate::error::{Error, Result};
use crate::game::{GneConstants, kkt_oracle, make_gne_problem, random_game};
use crate::geometry::{CheckReport, MoreauEnvelope, NormSpec};
use crate::markov_chain::{FiniteMarkovChain, random_irreducible_chain};
use crate::mdp::oracle::{reference_min, ssp_q_star};
use crate::mdp::{MdpModel, SspConfig, avgcost_oracle, discounted_oracle, garnet, make_polyak_problem, make_ssp_problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    Geometry,
    MarkovChain,
    Engine,
    Mdp,
    Game,
}

impl Scope {
    pub const NAMES: [&'static str; 6] = ["all", "geometry", "markov_chain", "tts_engine", "mdp_suite", "game_suite"];

    fn includes(self, other: Scope) -> bool {
        self == Scope::All || self == other
    }
}

impl FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Scope::All,
            "geometry" => Scope::Geometry,
            "markov_chain" => Scope::MarkovChain,
            "tts_engine" | "engine" => Scope::Engine,
            "mdp_suite" | "mdp" => Scope::Mdp,
            "game_suite" | "game" => Scope::Game,
            other => {
                return Err(Error::config("scope", format!("`{other}` is not one of {}", Scope::NAMES.join(", "))));
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub scope: &'static str,
    pub name: String,
    pub passed: bool,
    /// Worst observed value, or the witness on failure.
    pub detail: String,
}

impl fmt::Display for PropertyOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.scope, self.name, self.detail)
    }
}

struct Sink {
    scope: &'static str,
    out: Vec<PropertyOutcome>,
}

impl Sink {
    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.out.push(PropertyOutcome { scope: self.scope, name: name.into(), passed, detail: detail.into() });
    }

    /// Records a result, turning an error into a failed outcome.
    fn check(&mut self, name: impl Into<String>, r: Result<(bool, String)>) {
        match r {
            Ok((ok, detail)) => self.push(name, ok, detail),
            Err(e) => self.push(name, false, format!("error: {e}")),
        }
    }

    fn reports(&mut self, prefix: &str, r: Result<Vec<CheckReport>>) {
        match r {
            Ok(reports) => {
                for rep in reports {
                    let detail = if rep.passed() {
                        format!("{} samples, worst slack {:.3e}", rep.samples, rep.worst_slack)
                    } else {
                        format!("worst slack {:.3e} at witness {:?}", rep.worst_slack, rep.witness)
                    };
                    self.push(format!("{prefix}/{}", rep.property), rep.passed(), detail);
                }
            }
            Err(e) => self.push(prefix, false, format!("error: {e}")),
        }
    }
}

/// Runs every property check within `scope`. When `chain_file` is given, the kernel is loaded
/// first and its construction errors (reducible chain, bad rows) are reported as failures; on
/// success its Poisson and decomposition checks join the `markov_chain` scope.
pub fn run_property_suite(scope: Scope, chain_file: Option<&Path>) -> Vec<PropertyOutcome> {
    let mut out = Vec::new();
    let mut user_chain = None;
    if let Some(path) = chain_file {
        let mut sink = Sink { scope: "markov_chain", out: Vec::new() };
        match FiniteMarkovChain::load(path) {
            Ok(c) => {
                sink.push(format!("load {}", path.display()), true, format!("{} states", c.n_states()));
                user_chain = Some(c);
            }
            Err(e) => sink.push(format!("load {}", path.display()), false, format!("construction failed: {e}")),
        }
        out.extend(sink.out);
    }
    if scope.includes(Scope::Geometry) {
        out.extend(geometry_props());
    }
    if scope.includes(Scope::MarkovChain) {
        out.extend(chain_props(user_chain.as_ref()));
    }
    if scope.includes(Scope::Engine) {
        out.extend(engine_props());
    }
    if scope.includes(Scope::Mdp) {
        out.extend(mdp_props());
    }
    if scope.includes(Scope::Game) {
        out.extend(game_props());
    }
    out
}

pub fn geometry_props() -> Vec<PropertyOutcome> {
    let mut s = Sink { scope: "geometry", out: Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e0);
    for dim in [1usize, 2, 5, 10] {
        let weights: Vec<f64> = (0..dim).map(|_| rng.random_range(0.2..3.0)).collect();
        let norms = [NormSpec::Euclidean, NormSpec::MaxAbs, NormSpec::WeightedMax(weights)];
        for norm in norms {
            for q in [0.01, 0.1, 1.0] {
                let tag = format!("{} d={dim} q={q}", norm.name());
                match MoreauEnvelope::new(norm.clone(), q, dim) {
                    Ok(env) => {
                        s.reports(&tag, env.sandwich_check(1000, &mut rng));
                        s.reports(&tag, env.smoothness_check(1000, &mut rng));
                        s.reports(&tag, env.norm_property_check(1000, &mut rng));
                    }
                    Err(e) => s.push(tag, false, format!("error: {e}")),
                }
            }
        }
    }
    s.out
}

fn chain_check(s: &mut Sink, name: String, chain: &FiniteMarkovChain, rng: &mut ChaCha8Rng) {
    let n = chain.n_states();
    let d = 2;
    let mut h: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    chain.center(&mut h, d);
    let poisson = chain.poisson_solve(&h, d, 0).map(|sol| {
        let r = sol.residual(chain, &h);
        (r <= 1e-8, format!("residual {r:.3e}"))
    });
    s.check(format!("{name}/poisson_residual"), poisson);
    let decomposition = chain.markov_noise_decomposition_check(&h, d, 0, 0, 2000, rng).map(|rep| {
        (rep.identity_residual <= 1e-10, format!("identity residual {:.3e}", rep.identity_residual))
    });
    s.check(format!("{name}/decomposition_identity"), decomposition);
}

pub fn chain_props(user_chain: Option<&FiniteMarkovChain>) -> Vec<PropertyOutcome> {
    let mut s = Sink { scope: "markov_chain", out: Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(0xc4a1);
    let mut worst_pi = 0.0_f64;
    for k in 0..100 {
        let n = rng.random_range(2..=20);
        let density = rng.random_range(0.1..0.9);
        let chain = random_irreducible_chain(n, density, &mut rng);
        let pi = chain.stationary_distribution();
        for j in 0..n {
            let back: f64 = (0..n).map(|i| pi[i] * chain.prob(i, j)).sum();
            worst_pi = worst_pi.max((back - pi[j]).abs());
        }
        chain_check(&mut s, format!("random chain {k} (n={n})"), &chain, &mut rng);
    }
    s.push("stationary_invariance", worst_pi <= 1e-12, format!("max |πP − π| = {worst_pi:.3e}"));
    if let Some(c) = user_chain {
        chain_check(&mut s, "chain file".into(), c, &mut rng);
    }
    s.out
}

pub fn engine_props() -> Vec<PropertyOutcome> {
    let mut s = Sink { scope: "tts_engine", out: Vec::new() };
    for (a0, b0, a) in [(0.5, 0.1, 2.0 / 3.0), (0.9, 0.9, 1.0), (0.2, 0.05, 0.75), (11.0, 5.5, 1.0)] {
        let r = StepSchedule::new(a0, b0, a).map(|sch| match sch.check_bounds(1_000_000) {
            Ok(()) => (true, "holds for n ≤ 1e6".to_string()),
            Err((n, what)) => (false, format!("{what} fails at n = {n}")),
        });
        s.check(format!("schedule_bounds α0={a0} β0={b0} a={a:.4}"), r);
    }

    let ns = log_checkpoints(10, 10_000, 30);
    for p in [-1.0, -2.0 / 3.0, -0.5] {
        let vals: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powf(p)).collect();
        let r = fit_rate(&ns, &vals, (10, 10_000)).map(|f| ((f.slope - p).abs() <= 1e-9, format!("slope {:.12}", f.slope)));
        s.check(format!("fit_rate_exact_power {p:.4}"), r);
    }

    // the noiseless-slow driver equals the general driver fed g := ḡ and no slow noise
    let r = (|| -> Result<(bool, String)> {
        let chain = random_irreducible_chain(4, 0.5, &mut ChaCha8Rng::seed_from_u64(4));
        let c = vec![1.0, -0.5, 0.25, 2.0];
        let d = vec![0.3, 0.1, -0.7, 1.1];
        let special = LinearProblem::new((0.2, 0.1), (0.3, 0.4), c.clone(), d, Some(chain.clone()))?
            .with_noise(0.5, 0.0)
            .noiseless_slow();
        let general = LinearProblem::new((0.2, 0.1), (0.3, 0.4), c, vec![special.mean_d(); 4], Some(chain))?
            .with_noise(0.5, 0.0);
        let sched = StepSchedule::new(0.5, 0.25, 2.0 / 3.0)?;
        let cps = log_checkpoints(1, 5000, 20);
        let opts = RunOptions { keep_snapshots: true, ..Default::default() };
        let init = InitialState { x0: vec![1.0], y0: vec![-1.0], z0: 0 };
        let a = run_replications(&special, &sched, &init, 5000, &cps, 3, 7, &opts)?;
        let b = run_replications(&general, &sched, &init, 5000, &cps, 3, 7, &opts)?;
        let same = a.runs.iter().zip(&b.runs).all(|((_, ra), (_, rb))| ra.snapshots == rb.snapshots);
        Ok((same, "3 seeds × 5000 steps, bitwise comparison of snapshots".into()))
    })();
    s.check("noiseless_slow_consistency", r);

    let r = (|| -> Result<(bool, String)> {
        let p = LinearProblem::new((0.5, 0.25), (0.5, 0.0), vec![0.0], vec![0.0], None)?;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> =
            (0..50).map(|_| (vec![rng.random_range(-5.0..5.0)], vec![rng.random_range(-5.0..5.0)])).collect();
        let rep = verify_xstar_lipschitz(&p, &pairs, 0.25, 0.5, 1e-12)?;
        Ok(((rep.max_ratio - 0.5).abs() < 1e-9, format!("max ratio {:.12} ≤ bound {}", rep.max_ratio, rep.bound)))
    })();
    s.check("xstar_lipschitz_linear", r);
    s.out
}

fn mdp_family(count: usize, seed: u64) -> Vec<MdpModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).filter_map(|_| garnet(3, 2, 3, 0, &mut rng).ok()).collect()
}

pub fn mdp_props() -> Vec<PropertyOutcome> {
    let mut s = Sink { scope: "mdp_suite", out: Vec::new() };
    for (k, mdp) in mdp_family(10, 0x3d9).iter().enumerate() {
        let r = avgcost_oracle(mdp, 0).map(|sol| {
            let res = sol.bellman_residual(mdp);
            (res <= 1e-8, format!("rho* = {:.10}, residual {res:.3e}", sol.rho_star))
        });
        s.check(format!("mdp {k}/avgcost_fixed_point"), r);
        let r = discounted_oracle(mdp, 0.8).map(|sol| {
            let res = sol.bellman_residual(mdp);
            (res <= 1e-10, format!("residual {res:.3e}"))
        });
        s.check(format!("mdp {k}/discounted_fixed_point"), r);

        let r = (|| -> Result<(bool, String)> {
            let p = make_ssp_problem(mdp, &SspConfig::default())?;
            let sol = p.avgcost()?;
            let map = |q: &[f64]| {
                let mut out = vec![0.0; q.len()];
                p.fast_mean(q, &[sol.rho_star], &mut out);
                out
            };
            let est = verify_contraction(&map, p.norm_x(), mdp.n_pairs(), 1000, 10.0, &mut ChaCha8Rng::seed_from_u64(k as u64));
            let bound = p.lambda() + 1e-9;
            Ok((est.factor <= bound, format!("estimate {:.9} ≤ {:.9}", est.factor, p.lambda())))
        })();
        s.check(format!("mdp {k}/ssp_contraction"), r);

        let r = (|| -> Result<(bool, String)> {
            let p = make_polyak_problem(mdp, 0.8)?;
            let map = |q: &[f64]| {
                let mut out = vec![0.0; q.len()];
                p.fast_mean(q, q, &mut out);
                out
            };
            let est = verify_contraction(&map, p.norm_x(), mdp.n_pairs(), 1000, 10.0, &mut ChaCha8Rng::seed_from_u64(k as u64));
            Ok((est.factor <= p.lambda() + 1e-9, format!("estimate {:.9} ≤ {:.9}", est.factor, p.lambda())))
        })();
        s.check(format!("mdp {k}/polyak_contraction"), r);

        let r = (|| -> Result<(bool, String)> {
            let p = make_ssp_problem(mdp, &SspConfig::default())?;
            let rhos = &p.secants().rhos;
            let pairs: Vec<(Vec<f64>, Vec<f64>)> = rhos.windows(2).map(|w| (vec![w[0]], vec![w[1]])).collect();
            let rep = verify_xstar_lipschitz(&p, &pairs, p.lipschitz_y(), p.lambda(), 1e-10)?;
            Ok((rep.max_ratio <= rep.bound, format!("max ratio {:.6} ≤ {:.6}", rep.max_ratio, rep.bound)))
        })();
        s.check(format!("mdp {k}/ssp_xstar_lipschitz"), r);

        let r = (|| -> Result<(bool, String)> {
            let sol = avgcost_oracle(mdp, 0)?;
            let q = ssp_q_star(mdp, 0, sol.rho_star, None)?;
            let m = reference_min(mdp, 0, &q);
            Ok((m.abs() <= 1e-8, format!("min_v Q*(i0, v) = {m:.3e}")))
        })();
        s.check(format!("mdp {k}/reference_pinned"), r);
    }
    s.out
}

pub fn game_props() -> Vec<PropertyOutcome> {
    let mut s = Sink { scope: "game_suite", out: Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a3e);
    for k in 0..50 {
        let r = (|| -> Result<(bool, String)> {
            let game = random_game(3, 2, 2, &mut rng)?;
            let sol = kkt_oracle(&game)?;
            let (rd, rp) = sol.residuals(&game);
            Ok((rd <= 1e-10 && rp <= 1e-10, format!("stationarity {rd:.3e}, feasibility {rp:.3e}")))
        })();
        s.check(format!("game {k}/kkt_residuals"), r);
    }
    for k in 0..10 {
        let r = (|| -> Result<(bool, String)> {
            let game = random_game(3, 2, 2, &mut rng)?;
            let p = make_gne_problem(&game, None, None, 1.0)?;
            let kc: GneConstants = *p.constants();
            let n = game.dim();
            let y0 = vec![0.3; game.n_constraints()];
            let fast = |x: &[f64]| {
                let mut out = vec![0.0; n];
                p.fast(x, &y0, 0, &mut out);
                out
            };
            let ef = verify_contraction(&fast, &NormSpec::Euclidean, n, 500, 5.0, &mut rng);
            let oracle = p.oracle()?;
            let slow = |y: &[f64]| {
                let xs = oracle.x_star_of_y(y).unwrap_or_else(|_| vec![f64::NAN; n]);
                let mut out = vec![0.0; y.len()];
                p.slow(&xs, y, 0, &mut out);
                out
            };
            let es = verify_contraction(&slow, &NormSpec::Euclidean, game.n_constraints(), 500, 5.0, &mut rng);
            let ok = ef.factor <= kc.lambda + 1e-9 && es.factor <= kc.mu + 1e-9 && es.factor <= kc.mu_exact + 1e-9;
            Ok((ok, format!("fast {:.6} ≤ {:.6}, slow {:.9} ≤ {:.9}", ef.factor, kc.lambda, es.factor, kc.mu_exact)))
        })();
        s.check(format!("game {k}/contraction"), r);
    }
    let r = (|| -> Result<(bool, String)> {
        let game = random_game(3, 2, 2, &mut rng)?;
        let p = make_gne_problem(&game, None, None, 1.0)?;
        let n = game.dim();
        let mut identical = true;
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let noise: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let stacked = p.stacked_step(&x, &y, &noise, 0.1);
            let joined: Vec<f64> = (0..game.n_players()).flat_map(|k| p.player_step(k, &x, &y, &noise, 0.1)).collect();
            identical &= stacked.iter().zip(&joined).all(|(a, b)| a.to_bits() == b.to_bits());
        }
        Ok((identical, "100 random (x, y, noise) triples, bitwise".into()))
    })();
    s.check("player_wise_equals_stacked", r);
    let r = (|| -> Result<(bool, String)> {
        let game = random_game(3, 2, 2, &mut rng)?;
        let mut worst = f64::INFINITY;
        for _ in 0..200 {
            let x1: Vec<f64> = (0..game.dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x2: Vec<f64> = (0..game.dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (g1, g2) = (game.gradient(&x1), game.gradient(&x2));
            let inner: f64 = x1.iter().zip(&x2).zip(g1.iter().zip(&g2)).map(|((a, b), (ga, gb))| (b - a) * (gb - ga)).sum();
            let sq: f64 = x1.iter().zip(&x2).map(|(a, b)| (a - b) * (a - b)).sum();
            worst = worst.min(-inner - game.lambda0() * sq);
        }
        Ok((worst >= -1e-9, format!("min of −⟨Δx, ΔF⟩ − λ0‖Δx‖² = {worst:.3e}")))
    })();
    s.check("strong_monotonicity", r);
    s.out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_names_parse() {
        for name in Scope::NAMES {
            assert!(name.parse::<Scope>().is_ok());
        }
        assert!(matches!("physics".parse::<Scope>(), Err(Error::Config { .. })));
    }

    #[test]
    fn engine_scope_passes() {
        let out = run_property_suite(Scope::Engine, None);
        assert!(out.iter().all(|o| o.passed), "{out:#?}");
    }

    #[test]
    fn corrupted_kernel_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "3\n1 0 0\n0 1 0\n0 0 1\n").unwrap();
        let out = run_property_suite(Scope::Engine, Some(&path));
        let load = &out[0];
        assert!(!load.passed);
        assert!(load.detail.contains("reducible"), "{}", load.detail);
    }
}
