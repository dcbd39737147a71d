use rand::SeedableRng;
use rayon::prelude::*;

use super::problem::{FixedPointOracle, SimRng, TtsProblem};
use super::schedule::StepSchedule;
use crate::error::{Error, Result};
use crate::geometry::MoreauEnvelope;

/// Any iterate coordinate beyond this magnitude aborts the run.
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// Extra per-checkpoint error functional of `(x_n, y_n)`.
pub type Metric = dyn Fn(&[f64], &[f64]) -> f64 + Sync;

#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub z0: usize,
}

impl InitialState {
    pub fn zeros(problem: &dyn TtsProblem) -> Self {
        Self { x0: vec![0.0; problem.dim_x()], y0: vec![0.0; problem.dim_y()], z0: 0 }
    }
}

#[derive(Default, Clone, Copy)]
pub struct RunOptions<'a> {
    pub oracle: Option<&'a FixedPointOracle>,
    /// Envelopes `(A, B)` for the composite value `A(x_n − x*(y_n)) + B(y_n − y*)`.
    pub lyapunov: Option<(&'a MoreauEnvelope, &'a MoreauEnvelope)>,
    pub metric: Option<&'a Metric>,
    /// Record `‖x_n − x*(y_n)‖²` (needs one `x*(y)` solve per checkpoint).
    pub track: bool,
    pub keep_snapshots: bool,
}

/// Per-checkpoint errors of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub checkpoints: Vec<usize>,
    pub err_x_sq: Option<Vec<f64>>,
    pub err_y_sq: Option<Vec<f64>>,
    pub err_track_sq: Option<Vec<f64>>,
    pub lyapunov: Option<Vec<f64>>,
    pub metric: Option<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// `(x_n, y_n)` at each checkpoint when requested.
    pub snapshots: Option<Vec<(Vec<f64>, Vec<f64>)>>,
    pub final_x: Vec<f64>,
    pub final_y: Vec<f64>,
}

/// Runs one trajectory of the coupled iteration for `horizon` steps.
///
/// Checkpoint `n` records the iterate `(x_n, y_n)` after `n` updates, so `0` is the initial point.
pub fn tts_run(
    problem: &dyn TtsProblem,
    schedule: &StepSchedule,
    init: &InitialState,
    horizon: usize,
    checkpoints: &[usize],
    opts: &RunOptions<'_>,
    rng: &mut SimRng,
) -> Result<ReplicationResult> {
    let dx = problem.dim_x();
    let dy = problem.dim_y();
    if init.x0.len() != dx {
        return Err(Error::DimensionMismatch { expected: dx, got: init.x0.len() });
    }
    if init.y0.len() != dy {
        return Err(Error::DimensionMismatch { expected: dy, got: init.y0.len() });
    }
    let n_states = problem.chain().map_or(1, |c| c.n_states());
    if init.z0 >= n_states {
        return Err(Error::IndexOutOfRange { index: init.z0, size: n_states });
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("checkpoints", "must be strictly increasing"));
    }
    if let Some(&last) = checkpoints.last()
        && last > horizon {
            return Err(Error::param("horizon", format!("{horizon} is below checkpoint {last}")));
        }
    if (opts.track || opts.lyapunov.is_some()) && opts.oracle.is_none() {
        return Err(Error::param("oracle", "tracking error and Lyapunov trace need an oracle"));
    }

    let mut rec = Recorder::new(checkpoints.len(), opts);
    let mut x = init.x0.clone();
    let mut y = init.y0.clone();
    let mut z = init.z0;
    let mut f = vec![0.0; dx];
    let mut m = vec![0.0; dx];
    let mut g = vec![0.0; dy];
    let mut mp = vec![0.0; dy];
    let noiseless = problem.slow_noiseless();
    let chain = problem.chain();

    let mut next_cp = 0;
    for n in 0..=horizon {
        if next_cp < checkpoints.len() && checkpoints[next_cp] == n {
            rec.record(problem, schedule, n, &x, &y)?;
            next_cp += 1;
        }
        if n == horizon {
            break;
        }
        let z_next = match chain {
            Some(c) => c.sample_step(z, rng),
            None => 0,
        };
        problem.fast(&x, &y, z, &mut f);
        problem.fast_noise(&x, &y, z, z_next, rng, &mut m);
        if noiseless {
            problem.slow_mean(&x, &y, &mut g);
        } else {
            problem.slow(&x, &y, z, &mut g);
            problem.slow_noise(&x, &y, z, z_next, rng, &mut mp);
        }
        let a = schedule.alpha(n);
        let b = schedule.beta(n);
        let mut bad = false;
        for i in 0..dx {
            let v = x[i] + a * (f[i] - x[i] + m[i]);
            bad |= !(v.abs() <= DIVERGENCE_BOUND);
            x[i] = v;
        }
        for i in 0..dy {
            let noise = if noiseless { 0.0 } else { mp[i] };
            let v = y[i] + b * (g[i] - y[i] + noise);
            bad |= !(v.abs() <= DIVERGENCE_BOUND);
            y[i] = v;
        }
        if bad {
            return Err(Error::NonFiniteIterate { step: n + 1 });
        }
        z = z_next;
    }
    Ok(rec.finish(checkpoints.to_vec(), x, y))
}

struct Recorder<'a> {
    opts: RunOptions<'a>,
    err_x: Vec<f64>,
    err_y: Vec<f64>,
    track: Vec<f64>,
    lyap: Vec<f64>,
    metric: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    snapshots: Vec<(Vec<f64>, Vec<f64>)>,
}

impl<'a> Recorder<'a> {
    fn new(cap: usize, opts: &RunOptions<'a>) -> Self {
        Self {
            opts: *opts,
            err_x: Vec::with_capacity(cap),
            err_y: Vec::with_capacity(cap),
            track: Vec::with_capacity(cap),
            lyap: Vec::with_capacity(cap),
            metric: Vec::with_capacity(cap),
            alpha: Vec::with_capacity(cap),
            beta: Vec::with_capacity(cap),
            snapshots: Vec::new(),
        }
    }

    fn record(&mut self, problem: &dyn TtsProblem, s: &StepSchedule, n: usize, x: &[f64], y: &[f64]) -> Result<()> {
        self.alpha.push(s.alpha(n));
        self.beta.push(s.beta(n));
        if let Some(oracle) = self.opts.oracle {
            let ex = problem.norm_x().dist(x, &oracle.x_star);
            let ey = problem.norm_y().dist(y, &oracle.y_star);
            self.err_x.push(ex * ex);
            self.err_y.push(ey * ey);
            if self.opts.track || self.opts.lyapunov.is_some() {
                let xs = oracle.x_star_of_y(y)?;
                if self.opts.track {
                    let et = problem.norm_x().dist(x, &xs);
                    self.track.push(et * et);
                }
                if let Some((ea, eb)) = self.opts.lyapunov {
                    self.lyap.push(lyapunov_value(ea, eb, x, &xs, y, &oracle.y_star)?);
                }
            }
        }
        if let Some(metric) = self.opts.metric {
            self.metric.push(metric(x, y));
        }
        if self.opts.keep_snapshots {
            self.snapshots.push((x.to_vec(), y.to_vec()));
        }
        Ok(())
    }

    fn finish(self, checkpoints: Vec<usize>, final_x: Vec<f64>, final_y: Vec<f64>) -> ReplicationResult {
        let has_oracle = self.opts.oracle.is_some();
        ReplicationResult {
            checkpoints,
            err_x_sq: has_oracle.then_some(self.err_x),
            err_y_sq: has_oracle.then_some(self.err_y),
            err_track_sq: (has_oracle && self.opts.track).then_some(self.track),
            lyapunov: self.opts.lyapunov.map(|_| self.lyap),
            metric: self.opts.metric.map(|_| self.metric),
            alpha: self.alpha,
            beta: self.beta,
            snapshots: self.opts.keep_snapshots.then_some(self.snapshots),
            final_x,
            final_y,
        }
    }
}

/// `A(x − x*(y)) + B(y − y*)`.
pub fn lyapunov_value(
    env_x: &MoreauEnvelope,
    env_y: &MoreauEnvelope,
    x: &[f64],
    x_star_y: &[f64],
    y: &[f64],
    y_star: &[f64],
) -> Result<f64> {
    let dx: Vec<f64> = x.iter().zip(x_star_y).map(|(a, b)| a - b).collect();
    let dy: Vec<f64> = y.iter().zip(y_star).map(|(a, b)| a - b).collect();
    Ok(env_x.value(&dx)? + env_y.value(&dy)?)
}

/// Composite Lyapunov value at each recorded `(x_n, y_n)` snapshot.
pub fn lyapunov_trace(
    oracle: &FixedPointOracle,
    env_x: &MoreauEnvelope,
    env_y: &MoreauEnvelope,
    trajectory: &[(Vec<f64>, Vec<f64>)],
) -> Result<Vec<f64>> {
    trajectory
        .iter()
        .map(|(x, y)| {
            let xs = oracle.x_star_of_y(y)?;
            lyapunov_value(env_x, env_y, x, &xs, y, &oracle.y_star)
        })
        .collect()
}

/// Mean and standard error of one error series across replications.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSummary {
    pub name: &'static str,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationSummary {
    pub checkpoints: Vec<usize>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub series: Vec<SeriesSummary>,
    /// Individual runs as `(seed, result)`, sorted by seed.
    pub runs: Vec<(u64, ReplicationResult)>,
}

impl ReplicationSummary {
    pub fn series(&self, name: &str) -> Option<&SeriesSummary> {
        self.series.iter().find(|s| s.name == name)
    }
}

/// Runs `n_reps` replications with seeds `base_seed + r`.
pub fn run_replications(
    problem: &dyn TtsProblem,
    schedule: &StepSchedule,
    init: &InitialState,
    horizon: usize,
    checkpoints: &[usize],
    n_reps: usize,
    base_seed: u64,
    opts: &RunOptions<'_>,
) -> Result<ReplicationSummary> {
    let seeds: Vec<u64> = (0..n_reps as u64).map(|r| base_seed.wrapping_add(r)).collect();
    run_replications_with_seeds(problem, schedule, init, horizon, checkpoints, &seeds, opts)
}

/// Runs one replication per seed in parallel. Aggregation walks the runs in ascending seed order,
/// so any permutation of `seeds` yields bitwise-identical summaries.
pub fn run_replications_with_seeds(
    problem: &dyn TtsProblem,
    schedule: &StepSchedule,
    init: &InitialState,
    horizon: usize,
    checkpoints: &[usize],
    seeds: &[u64],
    opts: &RunOptions<'_>,
) -> Result<ReplicationSummary> {
    if seeds.is_empty() {
        return Err(Error::param("n_reps", "need at least one replication"));
    }
    let mut runs: Vec<(u64, ReplicationResult)> = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = SimRng::seed_from_u64(seed);
            tts_run(problem, schedule, init, horizon, checkpoints, opts, &mut rng)
                .map(|r| (seed, r))
                .map_err(|e| Error::Replication { seed, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|(seed, _)| *seed);

    let pick: [(&'static str, fn(&ReplicationResult) -> Option<&Vec<f64>>); 5] = [
        ("err_x_sq", |r| r.err_x_sq.as_ref()),
        ("err_y_sq", |r| r.err_y_sq.as_ref()),
        ("err_track_sq", |r| r.err_track_sq.as_ref()),
        ("lyapunov", |r| r.lyapunov.as_ref()),
        ("metric", |r| r.metric.as_ref()),
    ];
    let mut series = Vec::new();
    for (name, get) in pick {
        let columns: Option<Vec<&Vec<f64>>> = runs.iter().map(|(_, r)| get(r)).collect();
        if let Some(cols) = columns {
            let (mean, se) = mean_and_se(&cols, checkpoints.len());
            series.push(SeriesSummary { name, mean, se });
        }
    }
    let first = &runs[0].1;
    Ok(ReplicationSummary {
        checkpoints: checkpoints.to_vec(),
        alpha: first.alpha.clone(),
        beta: first.beta.clone(),
        series,
        runs,
    })
}

/// Arithmetic mean and standard error (sample sd / √n) per checkpoint; a single run gets `se = 0`.
fn mean_and_se(cols: &[&Vec<f64>], len: usize) -> (Vec<f64>, Vec<f64>) {
    let k = cols.len() as f64;
    let mut mean = vec![0.0; len];
    let mut se = vec![0.0; len];
    for c in 0..len {
        let m = cols.iter().map(|v| v[c]).sum::<f64>() / k;
        mean[c] = m;
        if cols.len() > 1 {
            let var = cols.iter().map(|v| (v[c] - m) * (v[c] - m)).sum::<f64>() / (k - 1.0);
            se[c] = (var / k).sqrt();
        }
    }
    (mean, se)
}
