use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, GameSource, GenericSpec, MdpSource, ProblemSpec};
use super::output::{summary_csv, trajectory_csv};
use crate::engine::{
    FixedPointOracle, LinearProblem, RateFit, ReplicationSummary, RunOptions, StepSchedule, TtsProblem, fit_rate,
    last_decade, log_checkpoints, log_window, run_replications,
};
use crate::engine::run::InitialState;
use crate::error::{Error, Result};
use crate::game::{GameSpec, make_gne_problem, random_game};
use crate::geometry::{MoreauEnvelope, default_q};
use crate::markov_chain::FiniteMarkovChain;
use crate::mdp::{MdpModel, SspConfig, garnet, make_polyak_problem, make_ssp_problem};

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "TWOSCALE_OUTPUT_DIR";

/// First checkpoint of every run.
pub const FIRST_CHECKPOINT: usize = 100;

/// A problem assembled from a config, with everything needed to score a run.
pub struct BuiltProblem {
    pub problem: Box<dyn TtsProblem + Send>,
    pub oracle: FixedPointOracle,
    /// Extra per-checkpoint error functional, e.g. the GNE constraint-plus-distance error.
    pub metric: Option<Box<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>>,
    /// Contraction factors `(λ, μ)` of the fast map and of the slow map along `x*(y)`.
    pub contraction: (f64, f64),
    /// Human-readable constants for the report.
    pub notes: Vec<String>,
}

fn load_mdp(src: &MdpSource) -> Result<MdpModel> {
    match src {
        MdpSource::File(p) => MdpModel::load(p),
        MdpSource::Garnet { seed, states, actions, branching, reference_state } => {
            garnet(*states, *actions, *branching, *reference_state, &mut ChaCha8Rng::seed_from_u64(*seed))
        }
    }
}

fn load_game(src: &GameSource) -> Result<GameSpec> {
    match src {
        GameSource::File(p) => GameSpec::load(p),
        GameSource::Random { seed, players, action_dim, constraints } => {
            random_game(*players, *action_dim, *constraints, &mut ChaCha8Rng::seed_from_u64(*seed))
        }
    }
}

fn build_generic(g: &GenericSpec) -> Result<BuiltProblem> {
    let chain = g.chain.as_ref().map(FiniteMarkovChain::load).transpose()?;
    let mut p = LinearProblem::new((g.a_x, g.b_x), (g.a_y, g.b_y), g.c.clone(), g.d.clone(), chain)?
        .with_noise(g.noise_x, g.noise_y);
    if g.slow_noiseless {
        p = p.noiseless_slow();
    }
    let oracle = p.oracle();
    let contraction = (p.fast_contraction(), p.slow_contraction());
    Ok(BuiltProblem {
        notes: vec![format!("x* = {:?}, y* = {:?}", oracle.x_star, oracle.y_star)],
        problem: Box::new(p),
        oracle,
        metric: None,
        contraction,
    })
}

/// Builds the problem, oracle and metric described by `spec`.
pub fn build_problem(spec: &ProblemSpec) -> Result<BuiltProblem> {
    match spec {
        ProblemSpec::Generic(g) => build_generic(g),
        ProblemSpec::Ssp { source, beta_prime } => {
            let mdp = load_mdp(source)?;
            let p = make_ssp_problem(&mdp, &SspConfig { beta_prime: *beta_prime, ..Default::default() })?;
            let oracle = p.oracle()?;
            let notes = vec![
                format!("rho* = {:?}", oracle.y_star[0]),
                format!("pi_min = {:?}, lambda0 = {:?}, lambda = {:?}", mdp.pi_min(), p.weights().lambda0, p.lambda()),
                format!("beta' = {:?}, L'1 = {:?}, L'2 = {:?}, mu = {:?}", p.beta_prime(), p.secants().l1(), p.secants().l2(), p.mu()),
            ];
            let contraction = (p.lambda(), p.mu());
            Ok(BuiltProblem { problem: Box::new(p), oracle, metric: None, contraction, notes })
        }
        ProblemSpec::Polyak { source, gamma } => {
            let mdp = load_mdp(source)?;
            let p = make_polyak_problem(&mdp, *gamma)?;
            let oracle = p.oracle()?;
            let notes = vec![format!("gamma = {gamma:?}, pi_min = {:?}, lambda = {:?}", mdp.pi_min(), p.lambda())];
            let contraction = (p.lambda(), 0.0);
            Ok(BuiltProblem { problem: Box::new(p), oracle, metric: None, contraction, notes })
        }
        ProblemSpec::Gne { source, alpha_prime, beta_prime, noise_scale } => {
            let game = load_game(source)?;
            let p = Arc::new(make_gne_problem(&game, *alpha_prime, *beta_prime, *noise_scale)?);
            let oracle = p.oracle()?;
            let k = *p.constants();
            let notes = vec![
                format!("lambda0 = {:?}, ell = {:?}, |A| = {:?}", game.lambda0(), game.ell(), game.a_norm()),
                format!("alpha' = {:?}, lambda = {:?}", k.alpha_prime, k.lambda),
                format!("beta' = {:?}, mu0 = {:?}, ell0 = {:?}, mu (bound) = {:?}, mu (exact) = {:?}", k.beta_prime, k.mu0, k.ell0, k.mu, k.mu_exact),
            ];
            let x_star = oracle.x_star.clone();
            let scorer = Arc::clone(&p);
            let metric = Box::new(move |x: &[f64], _y: &[f64]| scorer.combined_error(x, &x_star));
            let problem = Arc::try_unwrap(p).unwrap_or_else(|arc| (*arc).clone());
            Ok(BuiltProblem { problem: Box::new(problem), oracle, metric: Some(metric), contraction: (k.lambda, k.mu_exact), notes })
        }
    }
}

/// Outcome of one sanity check performed alongside a run.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub summary: ReplicationSummary,
    /// Rate fit per error series, in summary column order.
    pub rates: Vec<(String, RateFit)>,
    pub checks: Vec<CheckOutcome>,
    pub notes: Vec<String>,
    pub wall_seconds: f64,
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn rate(&self, series: &str) -> Option<&RateFit> {
        self.rates.iter().find(|(s, _)| s == series).map(|(_, r)| r)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.config.header_line());
        s.push_str("\n== config\n");
        s.push_str(&self.config.to_text());
        s.push_str("\n== problem\n");
        for n in &self.notes {
            s.push_str(n);
            s.push('\n');
        }
        s.push_str("\n== checks\n");
        for c in &self.checks {
            s.push_str(&format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
        }
        s.push_str("\n== rates (least squares on ln n, ln mean; window is a stand-in for the unknown burn-in)\n");
        s.push_str(RateFit::CSV_HEADER);
        s.push('\n');
        for (name, r) in &self.rates {
            s.push_str(&r.csv_row(name));
            s.push('\n');
        }
        s.push_str(&format!("\nwall_clock_seconds = {:.3}\n", self.wall_seconds));
        s
    }
}

/// Checkpoint grid of a config.
pub fn checkpoints_for(cfg: &ExperimentConfig) -> Vec<usize> {
    log_checkpoints(FIRST_CHECKPOINT, cfg.horizon, cfg.checkpoints)
}

/// Rate-fit window of a config.
pub fn rate_window_for(cfg: &ExperimentConfig) -> (usize, usize) {
    match cfg.rate_window {
        Some(f) => log_window(FIRST_CHECKPOINT, cfg.horizon, f),
        None => last_decade(cfg.horizon),
    }
}

fn resolve_output_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cfg.output_dir.clone(),
    }
}

/// Runs the replications described by `cfg` without touching the filesystem.
pub fn simulate(cfg: &ExperimentConfig) -> Result<(BuiltProblem, ReplicationSummary, Vec<CheckOutcome>)> {
    let built = build_problem(&cfg.problem)?;
    let schedule = StepSchedule::new(cfg.alpha0, cfg.beta0, cfg.exponent_a)
        .map_err(|e| Error::config("schedule", e.to_string()))?;
    let cps = checkpoints_for(cfg);
    let problem: &dyn TtsProblem = built.problem.as_ref();

    let mut checks = Vec::new();
    let (res_x, res_y) = built.oracle.residuals(problem, std::slice::from_ref(&built.oracle.y_star))?;
    checks.push(CheckOutcome {
        name: "oracle_fixed_point".into(),
        passed: res_x <= 1e-8 && res_y <= 1e-8,
        detail: format!("|f(x*(y*), y*) - x*| = {res_x:.3e}, |g(x*, y*) - y*| = {res_y:.3e}"),
    });
    let bounds = schedule.check_bounds(cfg.horizon);
    checks.push(CheckOutcome {
        name: "schedule_bounds".into(),
        passed: bounds.is_ok(),
        detail: match bounds {
            Ok(()) => format!("c1 = 2 and c2 = {:?} hold for n <= {}", schedule.c2(), cfg.horizon),
            Err((n, what)) => format!("{what} fails at n = {n}"),
        },
    });

    let envelopes = if cfg.lyapunov {
        let env = |norm: &crate::geometry::NormSpec, dim: usize, factor: f64| {
            let (ell, _) = norm.equivalence_constants(dim);
            MoreauEnvelope::new(norm.clone(), default_q(ell, Some(factor)), dim)
        };
        Some((
            env(problem.norm_x(), problem.dim_x(), built.contraction.0)?,
            env(problem.norm_y(), problem.dim_y(), built.contraction.1)?,
        ))
    } else {
        None
    };
    let opts = RunOptions {
        oracle: Some(&built.oracle),
        lyapunov: envelopes.as_ref().map(|(a, b)| (a, b)),
        metric: built.metric.as_deref().map(|m| m as &crate::engine::run::Metric),
        track: cfg.track,
        keep_snapshots: false,
    };
    let init = InitialState::zeros(problem);
    let summary = run_replications(problem, &schedule, &init, cfg.horizon, &cps, cfg.n_reps, cfg.base_seed, &opts)?;
    Ok((built, summary, checks))
}

/// Builds the problem, runs the replications and writes `trajectory.csv` (unless disabled),
/// `summary.csv`, `rates.csv` and `report.txt` into the output directory (the
/// `TWOSCALE_OUTPUT_DIR` environment variable takes precedence over the config).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let (built, summary, checks) = simulate(cfg)?;
    let window = rate_window_for(cfg);
    let mut rates = Vec::new();
    for s in &summary.series {
        // an exact zero (e.g. a run started at the fixed point) has no log-slope
        if let Ok(fit) = fit_rate(&summary.checkpoints, &s.mean, window) {
            rates.push((s.name.to_string(), fit));
        }
    }
    let output_dir = resolve_output_dir(cfg);
    fs::create_dir_all(&output_dir)?;
    let header = cfg.header_line();
    let mut files = Vec::new();
    let mut write = |name: &str, body: String| -> Result<()> {
        let path = output_dir.join(name);
        fs::write(&path, body)?;
        files.push(path);
        Ok(())
    };
    if cfg.trajectory {
        write("trajectory.csv", format!("{header}\n{}", trajectory_csv(&summary)))?;
    }
    write("summary.csv", format!("{header}\n{}", summary_csv(&summary)))?;
    let mut rates_body = format!("{header}\n{}\n", RateFit::CSV_HEADER);
    for (name, r) in &rates {
        rates_body.push_str(&r.csv_row(name));
        rates_body.push('\n');
    }
    write("rates.csv", rates_body)?;
    let mut report = RunReport {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        summary,
        rates,
        checks,
        notes: built.notes,
        wall_seconds: 0.0,
        output_dir: output_dir.clone(),
        files: Vec::new(),
    };
    report.wall_seconds = start.elapsed().as_secs_f64();
    write("report.txt", report.to_text())?;
    report.files = files;
    Ok(report)
}

/// Loads a config file and runs it.
pub fn run_experiment_file(path: impl AsRef<Path>) -> Result<RunReport> {
    run_experiment(&ExperimentConfig::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn generic(extra: &str) -> ExperimentConfig {
        let text = format!(
            "[problem]\nkind = generic\na_x = 0.5\nc = 1\nd = 1\n{extra}\n[schedule]\nalpha0 = 1\nbeta0 = 0.5\nexponent_a = 0.6\n[run]\nhorizon = 1000\nn_reps = 1\n"
        );
        ExperimentConfig::parse(&text, None).unwrap()
    }

    #[test]
    fn noise_free_generic_run_is_super_polynomial() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = generic("");
        cfg.output_dir = dir.path().to_path_buf();
        let report = run_experiment(&cfg).unwrap();
        let fit = report.rate("err_x_sq").unwrap();
        assert!(fit.slope <= -2.0, "{fit:?}");
        assert_eq!(fit.flag(), "super-polynomial");
        assert!(report.checks.iter().all(|c| c.passed), "{:?}", report.checks);
        for f in ["trajectory.csv", "summary.csv", "rates.csv", "report.txt"] {
            let body = fs::read_to_string(dir.path().join(f)).unwrap();
            assert!(body.starts_with(&format!("# config_hash={} seed=1\n", cfg.hash())), "{f}");
        }
    }

    #[test]
    fn divergence_is_reported_with_the_seed() {
        let mut cfg = generic("");
        cfg.alpha0 = 1e9;
        cfg.exponent_a = 1.0;
        cfg.problem = match cfg.problem {
            ProblemSpec::Generic(mut g) => {
                g.a_x = -0.9;
                ProblemSpec::Generic(g)
            }
            p => p,
        };
        match simulate(&cfg) {
            Err(Error::Replication { seed: 1, source }) => assert!(matches!(*source, Error::NonFiniteIterate { .. })),
            other => panic!("{:?}", other.map(|_| ())),
        }
    }
}
