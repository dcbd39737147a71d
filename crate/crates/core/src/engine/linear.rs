//! A scalar affine two-time-scale problem with closed-form fixed points, used as the `generic`
//! experiment and as a test bed for the engine.
//!
//! ```text
//! f(x, y, z) = a_x x + b_x y + c(z)        g(x, y, z) = a_y y + b_y x + d(z)
//! ```
//!
//! with additive uniform noise of the given standard deviations on each time scale.

use rand::Rng;

use super::problem::{FixedPointOracle, SimRng, TtsProblem};
use crate::error::{Error, Result};
use crate::geometry::NormSpec;
use crate::markov_chain::FiniteMarkovChain;

#[derive(Debug, Clone)]
pub struct LinearProblem {
    pub a_x: f64,
    pub b_x: f64,
    pub a_y: f64,
    pub b_y: f64,
    /// Per-state offsets `c(z)`; length 1 without a chain.
    pub c: Vec<f64>,
    /// Per-state offsets `d(z)`.
    pub d: Vec<f64>,
    pub noise_x: f64,
    pub noise_y: f64,
    pub slow_noiseless: bool,
    chain: Option<FiniteMarkovChain>,
    norm: NormSpec,
}

impl LinearProblem {
    pub fn new(
        (a_x, b_x): (f64, f64),
        (a_y, b_y): (f64, f64),
        c: Vec<f64>,
        d: Vec<f64>,
        chain: Option<FiniteMarkovChain>,
    ) -> Result<Self> {
        let n = chain.as_ref().map_or(1, FiniteMarkovChain::n_states);
        if c.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: c.len() });
        }
        if d.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: d.len() });
        }
        if a_x.abs() >= 1.0 {
            return Err(Error::param("a_x", "f̄ must contract in x (|a_x| < 1)"));
        }
        let p = Self {
            a_x,
            b_x,
            a_y,
            b_y,
            c,
            d,
            noise_x: 0.0,
            noise_y: 0.0,
            slow_noiseless: false,
            chain,
            norm: NormSpec::Euclidean,
        };
        if p.slow_contraction() >= 1.0 {
            return Err(Error::param("a_y", "ḡ(x*(y), y) must contract in y"));
        }
        Ok(p)
    }

    pub fn with_noise(mut self, noise_x: f64, noise_y: f64) -> Self {
        self.noise_x = noise_x;
        self.noise_y = noise_y;
        self
    }

    /// Switches to the noiseless slow iteration; `d` is replaced by its stationary mean so that
    /// `g` no longer depends on `z`.
    pub fn noiseless_slow(mut self) -> Self {
        let mean = self.mean_d();
        self.d.iter_mut().for_each(|v| *v = mean);
        self.noise_y = 0.0;
        self.slow_noiseless = true;
        self
    }

    fn weights(&self) -> Vec<f64> {
        self.chain
            .as_ref()
            .map_or_else(|| vec![1.0], |c| c.stationary_distribution().to_vec())
    }

    pub fn mean_c(&self) -> f64 {
        self.weights().iter().zip(&self.c).map(|(p, v)| p * v).sum()
    }

    pub fn mean_d(&self) -> f64 {
        self.weights().iter().zip(&self.d).map(|(p, v)| p * v).sum()
    }

    /// `|a_x|`, the contraction factor of `f̄(·, y)`.
    pub fn fast_contraction(&self) -> f64 {
        self.a_x.abs()
    }

    /// Contraction factor of `y ↦ ḡ(x*(y), y)`.
    pub fn slow_contraction(&self) -> f64 {
        (self.a_y + self.b_y * self.b_x / (1.0 - self.a_x)).abs()
    }

    /// Lipschitz constant of `f̄` in `y`.
    pub fn lipschitz_y(&self) -> f64 {
        self.b_x.abs()
    }

    pub fn x_star_of(&self, y: f64) -> f64 {
        (self.b_x * y + self.mean_c()) / (1.0 - self.a_x)
    }

    pub fn oracle(&self) -> FixedPointOracle {
        let (ax, bx, ay, by) = (self.a_x, self.b_x, self.a_y, self.b_y);
        let (cm, dm) = (self.mean_c(), self.mean_d());
        let y_star = (by * cm / (1.0 - ax) + dm) / (1.0 - ay - by * bx / (1.0 - ax));
        let x_star = (bx * y_star + cm) / (1.0 - ax);
        FixedPointOracle::new(
            move |y: &[f64]| Ok(vec![(bx * y[0] + cm) / (1.0 - ax)]),
            vec![y_star],
            vec![x_star],
        )
    }
}

/// Uniform on `[-√3 σ, √3 σ]`, which has standard deviation `σ`.
fn uniform_noise(sd: f64, rng: &mut SimRng) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    let half = 3f64.sqrt() * sd;
    rng.random_range(-half..half)
}

impl TtsProblem for LinearProblem {
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_y(&self) -> usize {
        1
    }
    fn chain(&self) -> Option<&FiniteMarkovChain> {
        self.chain.as_ref()
    }
    fn fast(&self, x: &[f64], y: &[f64], z: usize, out: &mut [f64]) {
        out[0] = self.a_x * x[0] + self.b_x * y[0] + self.c[z];
    }
    fn slow(&self, x: &[f64], y: &[f64], z: usize, out: &mut [f64]) {
        out[0] = self.a_y * y[0] + self.b_y * x[0] + self.d[z];
    }
    fn fast_noise(&self, _x: &[f64], _y: &[f64], _z: usize, _zn: usize, rng: &mut SimRng, out: &mut [f64]) {
        out[0] = uniform_noise(self.noise_x, rng);
    }
    fn slow_noise(&self, _x: &[f64], _y: &[f64], _z: usize, _zn: usize, rng: &mut SimRng, out: &mut [f64]) {
        out[0] = uniform_noise(self.noise_y, rng);
    }
    fn slow_noiseless(&self) -> bool {
        self.slow_noiseless
    }
    fn norm_x(&self) -> &NormSpec {
        &self.norm
    }
    fn norm_y(&self) -> &NormSpec {
        &self.norm
    }
    fn fast_mean(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = self.a_x * x[0] + self.b_x * y[0] + self.mean_c();
    }
    fn slow_mean(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = self.a_y * y[0] + self.b_y * x[0] + self.mean_d();
    }
}
