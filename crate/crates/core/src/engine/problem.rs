use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::NormSpec;
use crate::markov_chain::FiniteMarkovChain;

/// Random stream used by every simulation in the crate.
pub type SimRng = ChaCha8Rng;

/// A coupled iteration
///
/// ```text
/// x_{n+1} = x_n + α_n (f(x_n, y_n, Z_n) − x_n + M_{n+1})
/// y_{n+1} = y_n + β_n (g(x_n, y_n, Z_n) − y_n + M'_{n+1})
/// ```
///
/// driven by a finite Markov chain `Z_n` (or a single dummy state when [`chain`](Self::chain)
/// returns `None`). All randomness lives in the chain and the two noise generators; `fast` and
/// `slow` are deterministic.
pub trait TtsProblem: Sync {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;

    fn chain(&self) -> Option<&FiniteMarkovChain> {
        None
    }

    /// `f(x, y, z)` into `out`.
    fn fast(&self, x: &[f64], y: &[f64], z: usize, out: &mut [f64]);

    /// `g(x, y, z)` into `out`.
    fn slow(&self, x: &[f64], y: &[f64], z: usize, out: &mut [f64]);

    /// Martingale noise `M_{n+1}`. Must be zero-mean conditionally on the past; `z_next` is the
    /// already-sampled `Z_{n+1}`.
    fn fast_noise(&self, _x: &[f64], _y: &[f64], _z: usize, _z_next: usize, _rng: &mut SimRng, out: &mut [f64]) {
        out.fill(0.0);
    }

    /// Martingale noise `M'_{n+1}`.
    fn slow_noise(&self, _x: &[f64], _y: &[f64], _z: usize, _z_next: usize, _rng: &mut SimRng, out: &mut [f64]) {
        out.fill(0.0);
    }

    /// When set, the slow iterate uses `ḡ(x, y)` with no noise.
    fn slow_noiseless(&self) -> bool {
        false
    }

    fn norm_x(&self) -> &NormSpec;
    fn norm_y(&self) -> &NormSpec;

    /// `f̄(x, y) = Σ_i π(i) f(x, y, i)`.
    fn fast_mean(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        stationary_average(self.chain(), out, |z, buf| self.fast(x, y, z, buf));
    }

    /// `ḡ(x, y) = Σ_i π(i) g(x, y, i)`.
    fn slow_mean(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        stationary_average(self.chain(), out, |z, buf| self.slow(x, y, z, buf));
    }
}

/// π-weighted sum of `eval(z, ·)` over the chain's states, or `eval(0, ·)` without a chain.
pub fn stationary_average(
    chain: Option<&FiniteMarkovChain>,
    out: &mut [f64],
    mut eval: impl FnMut(usize, &mut [f64]),
) {
    match chain {
        None => eval(0, out),
        Some(c) => {
            let mut buf = vec![0.0; out.len()];
            out.fill(0.0);
            for (z, &p) in c.stationary_distribution().iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                eval(z, &mut buf);
                for (o, b) in out.iter_mut().zip(&buf) {
                    *o += p * b;
                }
            }
        }
    }
}

type XStarFn = dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync;

/// Exact fixed points: `x*(y)` with `f̄(x*(y), y) = x*(y)`, and `(x*, y*)`.
pub struct FixedPointOracle {
    x_star_of_y: Box<XStarFn>,
    pub y_star: Vec<f64>,
    pub x_star: Vec<f64>,
}

impl std::fmt::Debug for FixedPointOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FixedPointOracle")
            .field("y_star", &self.y_star)
            .field("x_star", &self.x_star)
            .finish_non_exhaustive()
    }
}

impl FixedPointOracle {
    pub fn new(
        x_star_of_y: impl Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
        y_star: Vec<f64>,
        x_star: Vec<f64>,
    ) -> Self {
        Self { x_star_of_y: Box::new(x_star_of_y), y_star, x_star }
    }

    pub fn x_star_of_y(&self, y: &[f64]) -> Result<Vec<f64>> {
        (self.x_star_of_y)(y)
    }

    /// `(max_y ‖f̄(x*(y), y) − x*(y)‖, ‖ḡ(x*, y*) − y*‖)` over the given `ys`.
    pub fn residuals(&self, problem: &dyn TtsProblem, ys: &[Vec<f64>]) -> Result<(f64, f64)> {
        let mut fx = vec![0.0; problem.dim_x()];
        let mut worst = 0.0_f64;
        for y in ys {
            let xs = self.x_star_of_y(y)?;
            problem.fast_mean(&xs, y, &mut fx);
            worst = worst.max(problem.norm_x().dist(&fx, &xs));
        }
        let mut gy = vec![0.0; problem.dim_y()];
        problem.slow_mean(&self.x_star, &self.y_star, &mut gy);
        Ok((worst, problem.norm_y().dist(&gy, &self.y_star)))
    }
}
